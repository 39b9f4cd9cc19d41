"""
Configuration management for the fractional counting simulator.
Supports TOML and JSON configuration files with one section per module,
named presets and validation.
"""

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

# Handle tomllib import for different Python versions
try:
    import tomllib  # Python 3.11+
except ImportError:
    try:
        import tomli as tomllib  # Python < 3.11 with tomli package
    except ImportError:
        tomllib = None  # Fallback if no TOML support

from .presets import preset_overrides


class ConfigurationError(Exception):
    """Exception raised when a configuration cannot be loaded or is invalid."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors or []


@dataclass
class ScenarioConfig:
    """Synthetic world and population dataset settings."""

    name: str = "default"
    preset: Optional[str] = None
    seed: int = 20240101
    epochs: int = 5

    # World
    population_size: int = 1000
    n_localities: int = 4
    addresses_per_locality: int = 50
    n_covariates: int = 2
    n_strata: int = 4
    family_mean_size: float = 1.5
    attribute_mean: float = 1.0
    attribute_sd: float = 0.5

    # Population dataset
    erroneous_rate: float = 0.05
    missing_rate: float = 0.0
    displacement_rate: float = 0.02
    mean_sol_multiplicity: float = 1.5
    max_sol_multiplicity: int = 5
    same_locality_prob: float = 0.5
    neighbour_prob: float = 0.7
    erroneous_shift: float = 1.0
    n_sources: int = 3
    sol_in_scope_prob: float = 0.7
    sol_erroneous_prob: float = 0.2
    attribute_noise_sd: float = 0.1
    placement_coefficients: List[float] = field(default_factory=lambda: [1.5, 1.0, 2.0])
    displacement_slopes: List[float] = field(default_factory=list)

    # Census
    census_link_rate: float = 0.9
    census_noise_cv: float = 0.0
    hypercube_noise_cv: float = 0.0


@dataclass
class DynamicsConfig:
    """Per-epoch demographic and register dynamics."""

    move_rate: float = 0.05
    local_move_prob: float = 0.5
    birth_rate: float = 0.01
    death_rate: float = 0.01
    immigration_rate: float = 0.005
    emigration_rate: float = 0.005
    register_update_rate: float = 0.8
    deregistration_rate: float = 0.7
    beta_drift_sd: float = 0.05


@dataclass
class SurveyConfig:
    """Coverage survey design run every epoch."""

    coverage_fraction: float = 0.05
    stratum_rates: Dict[str, float] = field(default_factory=dict)


@dataclass
class InitiationConfig:
    """Census-year initiation and benchmarking."""

    theta_method: str = "subset"  # subset, hypercube, sample
    ridge: float = 1e-4
    sample_size: int = 200
    benchmark: bool = True
    benchmark_tolerance: float = 1e-10
    benchmark_max_iter: int = 500
    displacement_rule: str = "proportional"  # proportional, unplaced
    tie_rule: str = "lowest"  # lowest, highest
    core_counters: str = "observed"  # observed, model


@dataclass
class RollingConfig:
    """Post-census rolling of the parametric models and the baselines."""

    method: str = "ebp"  # ebp, refit, none
    benchmark_every: int = 0  # 0 disables post-census benchmarking
    propagate_draws: int = 0
    newton_tolerance: float = 1e-8
    newton_max_iter: int = 100
    residency_decay: float = 0.7
    residency_gain: float = 0.3
    residency_threshold: float = 0.5
    residency_initial: float = 0.5


@dataclass
class TreeConfig:
    """Hoeffding tree rolling."""

    enabled: bool = True
    target: str = "erroneous"  # erroneous, placement
    hoeffding_delta: float = 1e-6
    grace_period: int = 200
    max_depth: int = 6
    min_leaf: int = 20
    smoothing: float = 0.5
    half_life: float = math.inf
    change_bound: float = 0.05
    change_threshold: float = 0.05
    mode: str = "max_improvement"  # max_improvement, min_change
    min_improvement: float = 0.005
    error_lower_bound: float = 0.01


@dataclass
class AuditConfig:
    """Audit sampling and testing."""

    design: str = "srs"  # srs, stratified
    sample_size: int = 100
    alpha: float = 0.05
    target: str = "erroneous_rate"  # erroneous_rate, locality_total
    locality: int = 0
    stratum_rates: Dict[str, float] = field(default_factory=dict)


@dataclass
class OutputConfig:
    """Output and execution settings."""

    directory: str = "runs"
    replicates: int = 1
    jobs: int = 1
    write_snapshots: bool = True


SECTIONS = {
    "scenario": ScenarioConfig,
    "dynamics": DynamicsConfig,
    "survey": SurveyConfig,
    "initiation": InitiationConfig,
    "rolling": RollingConfig,
    "tree": TreeConfig,
    "audit": AuditConfig,
    "output": OutputConfig,
}


@dataclass
class PipelineConfig:
    """Main configuration class for the simulator, one attribute per file section."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    survey: SurveyConfig = field(default_factory=SurveyConfig)
    initiation: InitiationConfig = field(default_factory=InitiationConfig)
    rolling: RollingConfig = field(default_factory=RollingConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_file(cls, config_path: Union[str, Path]) -> "PipelineConfig":
        """Load configuration from TOML or JSON file."""
        config_path = Path(config_path)

        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        if config_path.suffix.lower() == '.toml':
            return cls._from_toml(config_path)
        elif config_path.suffix.lower() == '.json':
            return cls._from_json(config_path)
        else:
            raise ConfigurationError(f"Unsupported configuration format: {config_path.suffix}")

    @classmethod
    def _from_toml(cls, config_path: Path) -> "PipelineConfig":
        """Load configuration from TOML file."""
        if tomllib is None:
            raise ImportError("TOML support not available. Install tomli package for Python < 3.11")

        try:
            with open(config_path, 'rb') as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"Invalid TOML in {config_path}: {e}")
        return cls._from_dict(data)

    @classmethod
    def _from_json(cls, config_path: Path) -> "PipelineConfig":
        """Load configuration from JSON file."""
        try:
            with open(config_path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in {config_path}: {e}")
        return cls._from_dict(data)

    @classmethod
    def _from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        """
        Create configuration from a sectioned dictionary.

        A ``preset`` key in the scenario section is resolved first; the
        remaining keys override the preset.

        Raises:
            ConfigurationError: On unknown sections, unknown keys or an unknown preset
        """
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigurationError(f"Unknown configuration sections: {unknown}")

        merged: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
        preset = data.get("scenario", {}).get("preset")
        if preset:
            try:
                overrides = preset_overrides(preset)
            except KeyError as e:
                raise ConfigurationError(str(e.args[0]))
            for section, values in overrides.items():
                merged[section].update(values)

        for section, values in data.items():
            if not isinstance(values, dict):
                raise ConfigurationError(f"Section [{section}] must be a table")
            merged[section].update(values)

        sections = {name: _build_section(SECTIONS[name], name, merged[name]) for name in SECTIONS}
        return cls(**sections)

    @classmethod
    def default(cls) -> "PipelineConfig":
        """Create the default configuration."""
        return cls()

    @classmethod
    def from_preset(cls, name: str) -> "PipelineConfig":
        """Create a configuration from a named preset."""
        return cls._from_dict({"scenario": {"preset": name}})

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        """Sectioned dictionary of the resolved configuration."""
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def with_overrides(self, **sections: Dict[str, Any]) -> "PipelineConfig":
        """Copy of this configuration with some section keys replaced."""
        data = copy.deepcopy(self.to_dict())
        data["scenario"].pop("preset", None)
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        return self._from_dict(data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate(self) -> List[str]:
        """Validate configuration and return list of errors."""
        errors = []
        s = self.scenario

        if s.population_size < 0:
            errors.append("scenario.population_size must be non-negative")
        if s.n_localities < 1:
            errors.append("scenario.n_localities must be at least 1")
        if s.addresses_per_locality < 2:
            errors.append("scenario.addresses_per_locality must be at least 2")
        if s.n_covariates < 0:
            errors.append("scenario.n_covariates must be non-negative")
        if s.n_strata < 1:
            errors.append("scenario.n_strata must be at least 1")
        if s.epochs < 0:
            errors.append("scenario.epochs must be non-negative")
        if s.family_mean_size < 1:
            errors.append("scenario.family_mean_size must be at least 1")
        if s.n_sources < 1:
            errors.append("scenario.n_sources must be at least 1")
        if s.seed < 0:
            errors.append("scenario.seed must be non-negative")

        for name in ("missing_rate", "displacement_rate", "same_locality_prob", "neighbour_prob",
                     "sol_in_scope_prob", "sol_erroneous_prob", "census_link_rate"):
            if not 0 <= getattr(s, name) <= 1:
                errors.append(f"scenario.{name} must be between 0 and 1")
        if not 0 <= s.erroneous_rate < 1:
            errors.append("scenario.erroneous_rate must be in [0, 1)")
        if s.mean_sol_multiplicity < 1:
            errors.append("scenario.mean_sol_multiplicity must be at least 1")
        if not 1 <= s.max_sol_multiplicity <= s.addresses_per_locality:
            errors.append("scenario.max_sol_multiplicity must be between 1 and addresses_per_locality")
        if len(s.placement_coefficients) != 3:
            errors.append("scenario.placement_coefficients must have 3 entries")
        if s.displacement_slopes and len(s.displacement_slopes) != s.n_covariates:
            errors.append("scenario.displacement_slopes must have n_covariates entries")
        for name in ("attribute_sd", "attribute_noise_sd", "census_noise_cv", "hypercube_noise_cv"):
            if getattr(s, name) < 0:
                errors.append(f"scenario.{name} must be non-negative")

        for name, value in asdict(self.dynamics).items():
            if name == "beta_drift_sd":
                if value < 0:
                    errors.append("dynamics.beta_drift_sd must be non-negative")
            elif not 0 <= value <= 1:
                errors.append(f"dynamics.{name} must be between 0 and 1")
        d = self.dynamics
        if d.death_rate + d.emigration_rate + d.move_rate > 1:
            errors.append("dynamics.death_rate + emigration_rate + move_rate must not exceed 1")

        if not 0 <= self.survey.coverage_fraction <= 1:
            errors.append("survey.coverage_fraction must be between 0 and 1")
        errors.extend(_validate_rates("survey.stratum_rates", self.survey.stratum_rates))

        i = self.initiation
        if i.theta_method not in ("subset", "hypercube", "sample"):
            errors.append("initiation.theta_method must be subset, hypercube or sample")
        if i.ridge < 0:
            errors.append("initiation.ridge must be non-negative")
        if i.sample_size < 0:
            errors.append("initiation.sample_size must be non-negative")
        if i.benchmark_tolerance <= 0:
            errors.append("initiation.benchmark_tolerance must be positive")
        if i.benchmark_max_iter < 1:
            errors.append("initiation.benchmark_max_iter must be at least 1")
        if i.displacement_rule not in ("proportional", "unplaced"):
            errors.append("initiation.displacement_rule must be proportional or unplaced")
        if i.tie_rule not in ("lowest", "highest"):
            errors.append("initiation.tie_rule must be lowest or highest")
        if i.core_counters not in ("observed", "model"):
            errors.append("initiation.core_counters must be observed or model")

        r = self.rolling
        if r.method not in ("ebp", "refit", "none"):
            errors.append("rolling.method must be ebp, refit or none")
        if r.benchmark_every < 0:
            errors.append("rolling.benchmark_every must be non-negative")
        if r.propagate_draws < 0:
            errors.append("rolling.propagate_draws must be non-negative")
        if r.newton_tolerance <= 0 or r.newton_max_iter < 1:
            errors.append("rolling Newton settings must be positive")
        if r.residency_decay < 0 or r.residency_gain < 0 or r.residency_decay + r.residency_gain > 1:
            errors.append("rolling.residency_decay and residency_gain must be non-negative with sum at most 1")
        for name in ("residency_threshold", "residency_initial"):
            if not 0 <= getattr(r, name) <= 1:
                errors.append(f"rolling.{name} must be between 0 and 1")

        t = self.tree
        if t.target not in ("erroneous", "placement"):
            errors.append("tree.target must be erroneous or placement")
        if not 0 < t.hoeffding_delta < 1:
            errors.append("tree.hoeffding_delta must be in (0, 1)")
        if t.grace_period < 1 or t.min_leaf < 1 or t.max_depth < 0:
            errors.append("tree.grace_period, min_leaf and max_depth must be positive")
        if t.smoothing < 0:
            errors.append("tree.smoothing must be non-negative")
        if t.half_life <= 0:
            errors.append("tree.half_life must be positive")
        if not 0 <= t.change_bound <= 1:
            errors.append("tree.change_bound must be between 0 and 1")
        if t.change_threshold < 0:
            errors.append("tree.change_threshold must be non-negative")
        if t.mode not in ("max_improvement", "min_change"):
            errors.append("tree.mode must be max_improvement or min_change")

        a = self.audit
        if a.design not in ("srs", "stratified"):
            errors.append("audit.design must be srs or stratified")
        if a.sample_size < 2:
            errors.append("audit.sample_size must be at least 2")
        if not 0 < a.alpha < 1:
            errors.append("audit.alpha must be in (0, 1)")
        if a.target not in ("erroneous_rate", "locality_total"):
            errors.append("audit.target must be erroneous_rate or locality_total")
        if not 0 <= a.locality < max(s.n_localities, 1):
            errors.append("audit.locality must index an existing locality")
        errors.extend(_validate_rates("audit.stratum_rates", a.stratum_rates))

        o = self.output
        if o.replicates < 1:
            errors.append("output.replicates must be at least 1")
        if o.jobs < 1:
            errors.append("output.jobs must be at least 1")

        return errors


def _build_section(section_cls: type, name: str, values: Dict[str, Any]):
    """Build one section dataclass, rejecting unknown keys."""
    known = {f.name for f in fields(section_cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys in [{name}]: {unknown}")
    try:
        return section_cls(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid [{name}] section: {e}")


def _validate_rates(label: str, rates: Dict[str, float]) -> List[str]:
    errors = []
    for key, rate in rates.items():
        try:
            int(key)
        except (TypeError, ValueError):
            errors.append(f"{label} keys must be stratum numbers, got {key!r}")
        if not 0 < rate <= 1:
            errors.append(f"{label}[{key}] must be in (0, 1]")
    return errors
