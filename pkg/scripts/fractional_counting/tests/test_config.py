"""
Tests for configuration loading, presets and validation.
"""

import json
import shutil
import tempfile
import unittest
from pathlib import Path

import pytest

from ..config import ConfigurationError, PipelineConfig
from ..presets import available_presets, preset_overrides


class TestPipelineConfig(unittest.TestCase):
    """Test loading and resolving configurations."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def write(self, name: str, text: str) -> Path:
        path = self.temp_dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_default_is_valid(self):
        config = PipelineConfig.default()
        self.assertEqual(config.validate(), [])
        self.assertEqual(config.scenario.seed, 20240101)
        self.assertEqual(config.rolling.method, "ebp")

    def test_toml_sections(self):
        path = self.write("run.toml", """
[scenario]
name = "small"
population_size = 300
epochs = 2

[rolling]
method = "refit"

[tree]
half_life = 4.0
""")
        config = PipelineConfig.from_file(path)
        self.assertEqual(config.scenario.name, "small")
        self.assertEqual(config.scenario.population_size, 300)
        self.assertEqual(config.rolling.method, "refit")
        self.assertEqual(config.tree.half_life, 4.0)
        # untouched sections keep their defaults
        self.assertEqual(config.audit.sample_size, 100)

    def test_json_sections(self):
        path = self.write("run.json", json.dumps({"audit": {"design": "stratified", "sample_size": 40}}))
        config = PipelineConfig.from_file(path)
        self.assertEqual(config.audit.design, "stratified")
        self.assertEqual(config.audit.sample_size, 40)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            PipelineConfig.from_file(self.temp_dir / "absent.toml")

    def test_unsupported_format(self):
        path = self.write("run.yaml", "scenario: {}")
        with self.assertRaises(ConfigurationError):
            PipelineConfig.from_file(path)

    def test_invalid_toml(self):
        path = self.write("broken.toml", "[scenario\nseed = 1")
        with self.assertRaises(ConfigurationError):
            PipelineConfig.from_file(path)

    def test_unknown_section_and_key(self):
        with self.assertRaises(ConfigurationError):
            PipelineConfig._from_dict({"plotting": {}})
        with self.assertRaises(ConfigurationError) as ctx:
            PipelineConfig._from_dict({"scenario": {"populaton_size": 10}})
        self.assertIn("populaton_size", str(ctx.exception))


class TestPresets:
    """Test named presets and their interaction with explicit keys."""

    def test_available(self):
        assert available_presets() == ["classifier-bias", "estonia", "latvia", "unbiased"]

    def test_preset_values(self):
        config = PipelineConfig.from_preset("latvia")
        assert config.scenario.name == "latvia-like"
        assert config.scenario.erroneous_rate == pytest.approx(0.0654)
        assert config.initiation.theta_method == "subset"

    def test_like_suffix(self):
        assert preset_overrides("estonia-like") == preset_overrides("estonia")

    def test_explicit_keys_override_preset(self):
        config = PipelineConfig._from_dict({"scenario": {"preset": "estonia", "n_sources": 9}})
        assert config.scenario.n_sources == 9
        assert config.scenario.sol_in_scope_prob == pytest.approx(0.6)

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError, match="Unknown preset"):
            PipelineConfig.from_preset("narnia")

    def test_presets_validate(self):
        for name in available_presets():
            assert PipelineConfig.from_preset(name).validate() == [], name

    def test_shipped_files_validate(self):
        scripts_dir = Path(__file__).parent.parent.parent
        paths = [scripts_dir / "fractional_counting.toml", *sorted((scripts_dir.parent / "scenarios").glob("*.toml"))]
        assert len(paths) == 5
        for path in paths:
            assert PipelineConfig.from_file(path).validate() == [], path.name


class TestValidation:
    """Test validation error reporting."""

    def test_collects_all_errors(self):
        config = PipelineConfig.default().with_overrides(
            scenario={"n_localities": 0},
            rolling={"residency_decay": 0.8, "residency_gain": 0.3},
            tree={"mode": "greedy"},
        )
        errors = config.validate()
        assert any("n_localities" in e for e in errors)
        assert any("residency_decay" in e for e in errors)
        assert any("tree.mode" in e for e in errors)

    def test_rates_out_of_range(self):
        config = PipelineConfig.default().with_overrides(
            scenario={"erroneous_rate": 1.0},
            dynamics={"death_rate": 0.6, "emigration_rate": 0.3, "move_rate": 0.2},
        )
        errors = config.validate()
        assert "scenario.erroneous_rate must be in [0, 1)" in errors
        assert "dynamics.death_rate + emigration_rate + move_rate must not exceed 1" in errors

    def test_stratum_rate_keys(self):
        config = PipelineConfig.default().with_overrides(audit={"stratum_rates": {"north": 0.5, "1": 1.5}})
        errors = config.validate()
        assert any("stratum numbers" in e for e in errors)
        assert "audit.stratum_rates[1] must be in (0, 1]" in errors

    def test_audit_locality_must_exist(self):
        config = PipelineConfig.default().with_overrides(audit={"locality": 4})
        assert "audit.locality must index an existing locality" in config.validate()


class TestConfigHash:
    """Test the configuration hash written into every result file."""

    def test_stable(self):
        assert PipelineConfig.default().config_hash() == PipelineConfig.default().config_hash()
        assert len(PipelineConfig.default().config_hash()) == 64

    def test_changes_with_any_key(self):
        base = PipelineConfig.default()
        assert base.with_overrides(scenario={"seed": 1}).config_hash() != base.config_hash()
        assert base.with_overrides(tree={"change_bound": 0.1}).config_hash() != base.config_hash()

    def test_overrides_leave_original(self):
        base = PipelineConfig.default()
        changed = base.with_overrides(output={"replicates": 7})
        assert changed.output.replicates == 7
        assert base.output.replicates == 1

    def test_preset_resolved_before_hashing(self):
        preset = PipelineConfig.from_preset("latvia")
        explicit = PipelineConfig.default().with_overrides(**preset_overrides("latvia"))
        assert preset.scenario.erroneous_rate == explicit.scenario.erroneous_rate
        assert preset.to_dict()["scenario"]["erroneous_rate"] == explicit.to_dict()["scenario"]["erroneous_rate"]
