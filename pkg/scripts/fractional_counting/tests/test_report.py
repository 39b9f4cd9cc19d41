"""
Tests for run summaries and run comparisons.
"""

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from ..persistence import RunManifest, write_manifest, write_table
from ..reporting.report import COMPARE_COLUMNS, REPORT_COLUMNS, ReportError, compare_methods, load_run, summarise


def counts_frame() -> pd.DataFrame:
    """Two replicates of two methods counting one locality at one epoch."""
    return pd.DataFrame({
        "replicate": [0, 1, 0, 1],
        "epoch": [0, 0, 0, 0],
        "method": ["fractional", "fractional", "classifier", "classifier"],
        "locality_id": [0, 0, 0, 0],
        "estimate": [11.0, 9.0, 14.0, 12.0],
        "variance": [4.0, 4.0, 0.0, 0.0],
        "truth": [10.0, 10.0, 10.0, 10.0],
    })


class TestSummarise:
    """Test bias, Monte-Carlo error and coverage."""

    def setup_method(self):
        self.summary = summarise(counts_frame()).set_index("method")

    def test_columns(self):
        assert list(self.summary.reset_index().columns) == REPORT_COLUMNS

    def test_bias_and_rmse(self):
        fractional = self.summary.loc["fractional"]
        assert fractional["bias"] == 0.0
        assert fractional["rmse"] == pytest.approx(1.0)
        assert fractional["mc_se"] == pytest.approx(np.sqrt(2.0) / np.sqrt(2))
        classifier = self.summary.loc["classifier"]
        assert classifier["bias"] == pytest.approx(3.0)
        assert classifier["rmse"] == pytest.approx(np.sqrt((16 + 4) / 2))

    def test_coverage(self):
        # both fractional errors lie within 1.96 * 2
        assert self.summary.loc["fractional", "coverage"] == 1.0
        assert np.isnan(self.summary.loc["classifier", "coverage"])

    def test_narrow_level(self):
        summary = summarise(counts_frame(), level=0.1).set_index("method")
        assert summary.loc["fractional", "coverage"] == 0.0

    def test_single_replicate(self):
        summary = summarise(counts_frame().iloc[[0, 2]])
        assert summary["mc_se"].isna().all()
        assert (summary["replicates"] == 1).all()

    def test_rows_without_truth_are_dropped(self):
        frame = counts_frame()
        frame.loc[0, "truth"] = np.nan
        summary = summarise(frame).set_index("method")
        assert summary.loc["fractional", "replicates"] == 1

    def test_invalid_input(self):
        with pytest.raises(ReportError):
            summarise(counts_frame().drop(columns=["truth"]))
        with pytest.raises(ReportError):
            summarise(counts_frame(), level=1.0)


class TestCompare(unittest.TestCase):
    """Test loading and comparing run directories."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def make_run(self, name: str, scenario: str = "latvia", config_hash: str = "h1",
                 table_hash: str = None) -> Path:
        directory = self.temp_dir / name
        write_table(counts_frame(), directory / "counts.csv", table_hash or config_hash)
        write_manifest(RunManifest(scenario, config_hash, 1, 2, outputs=["counts.csv"], steps=["count"]),
                       directory)
        return directory

    def test_load_run(self):
        run = load_run(self.make_run("ebp"))
        self.assertEqual(run["label"], "ebp")
        self.assertEqual(len(run["counts"]), 4)

    def test_hash_mismatch(self):
        with self.assertRaises(ReportError):
            load_run(self.make_run("stale", config_hash="h1", table_hash="h2"))

    def test_not_a_run(self):
        with self.assertRaises(ReportError) as ctx:
            load_run(self.temp_dir / "absent")
        self.assertEqual(len(ctx.exception.paths), 1)

    def test_compare(self):
        table = compare_methods([self.make_run("ebp"), self.make_run("refit", config_hash="h2")])
        self.assertEqual(list(table.columns), COMPARE_COLUMNS)
        self.assertEqual(len(table), 4)
        self.assertEqual(set(table["runs"]), {"ebp", "refit"})
        self.assertEqual(table.iloc[0]["method"], "classifier")

    def test_compare_needs_two_runs(self):
        with self.assertRaises(ReportError):
            compare_methods([self.make_run("ebp")])

    def test_compare_needs_one_scenario(self):
        with self.assertRaises(ReportError):
            compare_methods([self.make_run("a"), self.make_run("b", scenario="estonia")])
