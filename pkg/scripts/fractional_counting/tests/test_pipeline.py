"""
Tests for the replicate pipeline and Monte-Carlo runs.
"""

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from ..config import PipelineConfig
from ..persistence import read_manifest, read_model, read_table
from ..pipeline import (
    TABLES, CountingPipeline, PipelineStep, merge_tables, run_replicate, run_replicates, write_outputs
)

COUNT_METHODS = {"classifier", "fractional", "fractional_cluster", "theta", "dbe", "residency", "weights",
                 "tree", "social_total"}


def small_config(**sections) -> PipelineConfig:
    overrides = {
        "scenario": {"population_size": 300, "epochs": 2, "n_localities": 3, "addresses_per_locality": 20,
                     "seed": 11},
        "tree": {"grace_period": 50, "min_leaf": 10},
        "audit": {"sample_size": 30},
        "output": {"write_snapshots": False},
    }
    for section, values in sections.items():
        overrides.setdefault(section, {}).update(values)
    return PipelineConfig().with_overrides(**overrides)


class TestExecutionOrder(unittest.TestCase):
    """Test step dependencies."""

    def setUp(self):
        self.pipeline = CountingPipeline(small_config())

    def test_dependencies_are_added(self):
        order = self.pipeline._calculate_execution_order([PipelineStep.COUNT])
        self.assertEqual(order, [PipelineStep.SIMULATE, PipelineStep.INITIATE, PipelineStep.ROLL,
                                 PipelineStep.COUNT])

    def test_declaration_order(self):
        order = self.pipeline._calculate_execution_order([PipelineStep.AUDIT, PipelineStep.SIMULATE])
        self.assertEqual(order[0], PipelineStep.SIMULATE)
        self.assertEqual(order[-1], PipelineStep.AUDIT)
        self.assertNotIn(PipelineStep.COUNT, order)


class TestCountingPipeline:
    """Test a full replicate on a small world."""

    @classmethod
    def setup_class(cls):
        cls.config = small_config()
        cls.state = CountingPipeline(cls.config).run()

    def test_all_tables(self):
        assert set(self.state.tables) == set(TABLES)
        assert not self.state.failed_steps

    def test_world_table(self):
        world = self.state.tables["world"]
        assert world["epoch"].tolist() == [0, 1, 2]
        assert world.loc[0, "population_size"] == 300

    def test_initiation_table(self):
        row = self.state.tables["initiation"].iloc[0]
        assert row["theta_method"] == "subset"
        assert abs(row["national_residual"]) < 1e-6

    def test_counts_table(self):
        counts = self.state.tables["counts"]
        assert list(counts.columns) == ["epoch", "method", "locality_id", "estimate", "variance", "truth"]
        assert set(counts["method"]) == COUNT_METHODS
        assert set(counts["epoch"]) == {0, 1, 2}
        # the classifier puts every record at exactly one address
        classifier = counts[(counts["method"] == "classifier") & (counts["epoch"] == 0)]
        assert classifier["estimate"].sum() == self.state.tables["world"].loc[0, "n_records"]
        truth = counts[(counts["method"] == "fractional") & (counts["epoch"] == 0)]["truth"]
        assert truth.sum() == 300

    def test_fractional_counts_have_variance(self):
        counts = self.state.tables["counts"]
        fractional = counts[counts["method"] == "fractional"]
        assert (fractional["variance"] >= 0).all()
        classifier = counts[counts["method"] == "classifier"]
        assert (classifier["variance"] == 0).all()

    def test_rolling_table(self):
        rolling = self.state.tables["rolling"]
        assert set(rolling["epoch"]) == {1, 2}
        assert set(rolling["model"]) <= {"placement", "erroneous"}
        assert (rolling["S"] >= 0).all()

    def test_audit_table(self):
        audit = self.state.tables["audit"]
        assert len(audit) == 3
        assert (audit["sample_size"] == 30).all()
        assert set(audit["estimator"]) == {"erroneous_rate"}


class TestPipelineVariants:
    """Test determinism, partial runs and configuration switches."""

    def test_deterministic(self):
        first = run_replicate(small_config(), 0)
        second = run_replicate(small_config(), 0)
        for name in TABLES:
            pd.testing.assert_frame_equal(first.tables[name], second.tables[name])

    def test_replicates_differ(self):
        first = run_replicate(small_config(), 0, [PipelineStep.SIMULATE])
        second = run_replicate(small_config(), 1, [PipelineStep.SIMULATE])
        assert not first.tables["world"].equals(second.tables["world"])

    def test_partial_run(self):
        state = CountingPipeline(small_config()).run([PipelineStep.INITIATE])
        assert set(state.tables) == {"world", "initiation"}
        assert state.completed_steps == {PipelineStep.SIMULATE, PipelineStep.INITIATE}

    def test_without_tree(self):
        state = CountingPipeline(small_config(tree={"enabled": False})).run([PipelineStep.COUNT])
        assert "tree" not in set(state.tables["counts"]["method"])

    def test_locality_audit(self):
        config = small_config(audit={"target": "locality_total", "locality": 1, "design": "stratified"})
        state = CountingPipeline(config).run([PipelineStep.AUDIT])
        audit = state.tables["audit"]
        assert set(audit["design"]) == {"stratified"}
        assert np.isfinite(audit["theta_hat"]).all()

    def test_post_census_benchmarking(self):
        state = CountingPipeline(small_config(rolling={"benchmark_every": 1})).run([PipelineStep.COUNT])
        assert "counts" in state.tables

    def test_failed_step_is_recorded(self):
        pipeline = CountingPipeline(small_config(initiation={"theta_method": "oracle"}))
        with pytest.raises(ValueError):
            pipeline.run([PipelineStep.INITIATE])
        assert PipelineStep.INITIATE in pipeline.state.failed_steps
        assert PipelineStep.SIMULATE in pipeline.state.completed_steps
        assert not pipeline.state.step_results[PipelineStep.INITIATE].success


class TestOutputs(unittest.TestCase):
    """Test merged tables, artifacts and the manifest."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_merge_in_replicate_order(self):
        config = small_config()
        results = run_replicates(config, [PipelineStep.SIMULATE], replicates=2, jobs=1, progress=False)
        merged = merge_tables(list(reversed(results)))
        self.assertEqual(merged["world"]["replicate"].tolist(), [0, 0, 0, 1, 1, 1])

    def test_write_outputs(self):
        config = small_config(output={"write_snapshots": True})
        steps = [PipelineStep.INITIATE]
        results = run_replicates(config, steps, replicates=1, jobs=1, progress=False)
        manifest = write_outputs(config, results, self.temp_dir, steps, "0.1.0")

        self.assertEqual(read_manifest(self.temp_dir), manifest)
        self.assertIn("world.csv", manifest.outputs)
        self.assertIn("models/placement_epoch0.toml", manifest.outputs)
        frame, config_hash = read_table(self.temp_dir / "world.csv")
        self.assertEqual(config_hash, config.config_hash())
        self.assertEqual(frame["replicate"].unique().tolist(), [0])
        placement = read_model(self.temp_dir / "models" / "placement_epoch0.toml")
        self.assertEqual(placement.kind, "placement")
        self.assertTrue((self.temp_dir / "snapshots" / "pd_epoch0.csv").exists())
