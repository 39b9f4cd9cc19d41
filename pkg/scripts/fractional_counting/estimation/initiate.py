"""
Census-year initiation of the fractional counters.

The placement model is fitted on the census-linked core. Erroneous-record
counters θ come from one of three estimators, selected by name through a
registry: a ranked-subset labelling with a logistic fit, hypercube cell
ratios, or a weighted logistic fit on the core plus a probability sample of
the remaining records. Counters for the whole dataset are then benchmarked
to the census estimates.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..config import InitiationConfig
from ..simulation.base import Locality, PersonRecord, RecordLabel
from .audit import AuditSample, draw_audit_sample
from .base import (
    DualSystemError,
    EmptyCoreError,
    EstimationError,
    FractionalCounter,
    ModelError,
    ParamState,
    UnderIdentifiedError,
    counters_total,
)
from .benchmark import BenchmarkReport, BenchmarkTargets, benchmark
from .logistic import ChoiceModel, ErroneousModel, PlacementModel, find_posterior_mode

logger = logging.getLogger(__name__)

SEPARATION_LIMIT = 20.0

Score = Union[Sequence[float], Callable[[PersonRecord], float]]


def fit_choice_model(model: ChoiceModel, records: Sequence[PersonRecord], ridge: float = 1e-4,
                     weights: Optional[Sequence[float]] = None, epoch: int = 0,
                     operation: str = "fit") -> ParamState:
    """
    Ridge-penalised maximum likelihood fit of a choice model.

    The ridge is always applied; a fit whose coefficients run past
    SEPARATION_LIMIT is flagged as separated in the state metadata.

    Raises:
        EmptyCoreError: If no record informs the model
        UnderIdentifiedError: If there are fewer informative records than parameters
    """
    design = model.design(records, weights)
    if design.n_obs == 0:
        raise EmptyCoreError(operation)
    if design.n_obs < model.n_params:
        raise UnderIdentifiedError(design.n_obs, model.n_params, operation)
    p = model.n_params
    mode = find_posterior_mode(design, np.zeros(p), ridge * np.eye(p))
    separated = bool(np.max(np.abs(mode.beta)) > SEPARATION_LIMIT)
    if separated:
        logger.warning(f"{model.kind} fit shows separation; coefficients are ridge-bounded (ridge={ridge})")
    return ParamState(
        kind=model.kind,
        beta_hat=mode.beta,
        sigma_hat=mode.covariance,
        n_covariates=model.n_covariates,
        epoch=epoch,
        metadata={
            "ridge": ridge,
            "separation": separated,
            "n_obs": design.n_obs,
            "iterations": mode.iterations,
            "parameters": model.parameter_names(),
        },
    )


def fit_placement(core: Sequence[PersonRecord], ridge: float = 1e-4, epoch: int = 0) -> ParamState:
    """
    Fit the placement model over q+1 outcomes on labelled core records.

    Returns:
        ParamState with β̂₀ and its covariance Σ̂₀
    """
    core = list(core)
    if not core:
        raise EmptyCoreError("fit_placement")
    unlabelled = [r.id for r in core if r.label is None]
    if unlabelled:
        raise ModelError(f"{len(unlabelled)} core records carry no label", "placement")
    model = PlacementModel(core[0].covariates.shape[0])
    return fit_choice_model(model, core, ridge, epoch=epoch, operation="fit_placement")


def placement_counters(state: ParamState, records: Sequence[PersonRecord],
                       theta: Optional[Sequence[float]] = None) -> List[FractionalCounter]:
    """Counters (μ, ξ) from a fitted placement model, θ taken from ``theta``."""
    model = PlacementModel(state.n_covariates)
    probs = model.probabilities(state.beta_hat, records)
    thetas = np.zeros(len(records)) if theta is None else np.asarray(theta, dtype=float)
    return [FractionalCounter.from_probabilities(p, t) for p, t in zip(probs, thetas)]


@dataclass
class ThetaResult:
    """Erroneous-record counters for every record of the dataset."""
    method: str
    theta: np.ndarray
    model: Optional[ParamState] = None
    labels: Optional[np.ndarray] = None
    warnings: List[str] = field(default_factory=list)


def _scores(records: Sequence[PersonRecord], score: Optional[Score]) -> np.ndarray:
    if score is None:
        return np.array([r.sol_score for r in records], dtype=float)
    if callable(score):
        return np.array([score(r) for r in records], dtype=float)
    values = np.asarray(score, dtype=float)
    if values.shape != (len(records),):
        raise EstimationError(f"{values.size} scores for {len(records)} records", "estimate_theta_subset")
    return values


def estimate_theta_subset(pd: Sequence[PersonRecord], n_hat: float, score: Optional[Score] = None,
                          ridge: float = 1e-4) -> ThetaResult:
    """
    Label the round(N̂ − |P_c|) highest-scoring non-core records as in scope,
    the rest as erroneous, and fit the erroneous model on all records.

    Args:
        pd: All records; core records count as in scope
        n_hat: Census estimate of the population size
        score: Per-record plausibility scores (array or callable); defaults
            to the composite sign-of-life score
        ridge: Ridge penalty of the logistic fit

    Raises:
        EstimationError: If N̂ is below the core size
    """
    records = list(pd)
    scores = _scores(records, score)
    core_ids = {r.id for r in records if r.core}
    k = int(round(n_hat - len(core_ids)))
    if k < 0:
        raise EstimationError(f"N̂ = {n_hat:.6g} is smaller than the core size {len(core_ids)}",
                              "estimate_theta_subset")
    non_core = [i for i, r in enumerate(records) if r.id not in core_ids]
    warnings: List[str] = []
    if k > len(non_core):
        warnings.append(f"N̂ implies {k} in-scope non-core records but only {len(non_core)} exist")
        logger.warning(warnings[-1])
        k = len(non_core)

    ranked = sorted(non_core, key=lambda i: (-scores[i], records[i].id))
    in_scope = set(ranked[:k])
    erroneous = np.zeros(len(records), dtype=bool)
    labelled: List[PersonRecord] = []
    for i, r in enumerate(records):
        if r.id in core_ids or i in in_scope:
            labelled.append(_with_label(r, RecordLabel(True, 0)))
        else:
            erroneous[i] = True
            labelled.append(_with_label(r, RecordLabel(False, None)))

    state = fit_choice_model(ErroneousModel(records[0].covariates.shape[0]), labelled, ridge,
                             operation="estimate_theta_subset")
    theta = _predict_erroneous(state, records)
    return ThetaResult("subset", theta, state, erroneous, warnings)


def estimate_theta_hypercube(pd: Sequence[PersonRecord], hypercube: Mapping,
                             cell_of: Optional[Callable[[PersonRecord], int]] = None) -> ThetaResult:
    """
    θ_k = max(0, 1 − N̂_h / |P_h|) for the covariate cell h of record k.

    Cells without an estimate get θ = 0 with a warning.
    """
    records = list(pd)
    key = cell_of if cell_of is not None else (lambda r: r.stratum)
    estimates = {int(h): float(v) for h, v in hypercube.items()}
    cells = np.array([int(key(r)) for r in records], dtype=int)
    theta = np.zeros(len(records))
    warnings: List[str] = []
    for h in np.unique(cells):
        members = cells == h
        if h not in estimates:
            warnings.append(f"cell {h} has no population estimate; theta set to 0")
            logger.warning(warnings[-1])
            continue
        theta[members] = max(0.0, 1.0 - estimates[h] / members.sum())
    for h in sorted(set(estimates) - set(cells.tolist())):
        warnings.append(f"cell {h} has an estimate of {estimates[h]:.6g} but no records")
        logger.warning(warnings[-1])
    return ThetaResult("hypercube", theta, None, None, warnings)


def estimate_theta_sample(pd: Sequence[PersonRecord], sample: Optional[AuditSample],
                          observed_erroneous: Sequence[bool], ridge: float = 1e-4) -> ThetaResult:
    """
    Inclusion-probability-weighted logistic fit on the core plus a probability
    sample of the non-core records with observed erroneous status.

    Core records have weight 1 and count as in scope; sampled records have
    weight 1/π. An empty sample falls back to a core-only fit with a warning.

    Raises:
        EstimationError: On zero inclusion probabilities or misaligned observations
    """
    records = list(pd)
    core = [r for r in records if r.core]
    labelled: List[PersonRecord] = [_with_label(r, RecordLabel(True, 0)) for r in core]
    weights = [1.0] * len(core)
    warnings: List[str] = []

    if sample is None or len(sample) == 0:
        warnings.append("probability sample is empty; theta fitted on the core only")
        logger.warning(warnings[-1])
    else:
        flags = list(observed_erroneous)
        if len(flags) != len(sample):
            raise EstimationError(f"{len(flags)} observations for {len(sample)} sampled records",
                                  "estimate_theta_sample")
        if np.any(sample.inclusion_probabilities <= 0):
            raise EstimationError("inclusion probabilities must be positive", "estimate_theta_sample")
        for r, pi, bad in zip(sample.records, sample.inclusion_probabilities, flags):
            labelled.append(_with_label(r, RecordLabel(False, None) if bad else RecordLabel(True, 0)))
            weights.append(1.0 / float(pi))

    if not labelled:
        raise EmptyCoreError("estimate_theta_sample")
    state = fit_choice_model(ErroneousModel(records[0].covariates.shape[0]), labelled, ridge,
                             weights=weights, operation="estimate_theta_sample")
    return ThetaResult("sample", _predict_erroneous(state, records), state, None, warnings)


def _with_label(record: PersonRecord, label: RecordLabel) -> PersonRecord:
    return replace(record, label=label)


def _predict_erroneous(state: ParamState, records: Sequence[PersonRecord]) -> np.ndarray:
    model = ErroneousModel(state.n_covariates)
    return np.array([p[1] for p in model.probabilities(state.beta_hat, records)])


@dataclass
class ThetaContext:
    """Inputs the theta estimators draw on."""
    n_hat: float
    hypercube: Mapping = field(default_factory=dict)
    score: Optional[Score] = None
    observe: Optional[Callable[[PersonRecord], bool]] = None
    rng: Optional[np.random.Generator] = None


class ThetaEstimator(ABC):
    """Abstract base class for erroneous-record estimators."""

    name: str = ""

    def __init__(self, config: InitiationConfig):
        self.config = config

    @abstractmethod
    def estimate(self, pd: Sequence[PersonRecord], context: ThetaContext) -> ThetaResult:
        pass


class SubsetThetaEstimator(ThetaEstimator):
    name = "subset"

    def estimate(self, pd: Sequence[PersonRecord], context: ThetaContext) -> ThetaResult:
        return estimate_theta_subset(pd, context.n_hat, context.score, self.config.ridge)


class HypercubeThetaEstimator(ThetaEstimator):
    name = "hypercube"

    def estimate(self, pd: Sequence[PersonRecord], context: ThetaContext) -> ThetaResult:
        if not context.hypercube:
            raise EstimationError("hypercube estimator needs per-cell population estimates", "initiate")
        return estimate_theta_hypercube(pd, context.hypercube)


class SampleThetaEstimator(ThetaEstimator):
    name = "sample"

    def estimate(self, pd: Sequence[PersonRecord], context: ThetaContext) -> ThetaResult:
        if context.observe is None or context.rng is None:
            raise EstimationError("sample estimator needs an observer and a random stream", "initiate")
        candidates = [r for r in pd if not r.core]
        size = min(self.config.sample_size, len(candidates))
        sample = draw_audit_sample(candidates, "srs", size, context.rng) if size else None
        observed = [context.observe(r) for r in sample.records] if sample is not None else []
        return estimate_theta_sample(pd, sample, observed, self.config.ridge)


class ThetaEstimatorRegistry:
    """Registry of erroneous-record estimators by name."""

    def __init__(self):
        self._classes: Dict[str, type] = {}

    def register(self, name: str, estimator_class: type) -> None:
        """
        Register an estimator class.

        Raises:
            ValueError: If the class does not inherit from ThetaEstimator
        """
        if not issubclass(estimator_class, ThetaEstimator):
            raise ValueError(f"Estimator class {estimator_class} must inherit from ThetaEstimator")
        self._classes[name] = estimator_class

    def create(self, name: str, config: InitiationConfig) -> ThetaEstimator:
        if name not in self._classes:
            raise ValueError(f"Theta estimator '{name}' not registered. Available: {self.available()}")
        return self._classes[name](config)

    def available(self) -> List[str]:
        return sorted(self._classes)


# Global estimator registry instance
theta_registry = ThetaEstimatorRegistry()
for _cls in (SubsetThetaEstimator, HypercubeThetaEstimator, SampleThetaEstimator):
    theta_registry.register(_cls.name, _cls)


@dataclass
class DualSystemEstimate:
    """Capture–recapture population estimate."""
    n_hat: float
    variance: float
    method: str


def dual_system_estimate(n1: int, n2: int, n12: int, chapman: bool = False) -> DualSystemEstimate:
    """
    Dual-system estimate of a population size from two lists.

    Lincoln–Petersen N̂ = n1·n2/n12 with variance n1·n2(n1−n12)(n2−n12)/n12³;
    the Chapman variant (n1+1)(n2+1)/(n12+1) − 1 stays finite for n12 = 0.

    Raises:
        DualSystemError: If n12 is zero (Lincoln–Petersen) or exceeds min(n1, n2)
    """
    if min(n1, n2, n12) < 0:
        raise DualSystemError("list counts must be non-negative")
    if n12 > min(n1, n2):
        raise DualSystemError(f"overlap {n12} exceeds the smaller list ({min(n1, n2)})")
    if chapman:
        n_hat = (n1 + 1) * (n2 + 1) / (n12 + 1) - 1
        variance = (n1 + 1) * (n2 + 1) * (n1 - n12) * (n2 - n12) / ((n12 + 1) ** 2 * (n12 + 2))
        return DualSystemEstimate(float(n_hat), float(variance), "chapman")
    if n12 == 0:
        raise DualSystemError("no overlap between the lists; the estimate is undefined")
    n_hat = n1 * n2 / n12
    variance = n1 * n2 * (n1 - n12) * (n2 - n12) / n12 ** 3
    return DualSystemEstimate(float(n_hat), float(variance), "lincoln_petersen")


@dataclass
class InitiationResult:
    """Initiated counters and models for the census epoch."""
    counters: List[FractionalCounter]
    placement: ParamState
    theta: ThetaResult
    n_hat: float
    benchmark: Optional[BenchmarkReport] = None

    @property
    def erroneous(self) -> Optional[ParamState]:
        return self.theta.model


def initiate(pd: Sequence[PersonRecord], localities: Sequence[Locality], n_hat: float,
             locality_estimates: Optional[np.ndarray], config: InitiationConfig,
             context: Optional[ThetaContext] = None) -> InitiationResult:
    """
    Run the census-year initiation end to end.

    Core counters are the observed placements (or model-based with
    ``core_counters = "model"``); non-core counters come from the placement
    model and the configured θ estimator. With benchmarking enabled the
    non-core counters are adjusted so that N̂ + Σθ = N_p and the placed
    locality masses match the census estimates scaled by the placed share
    of the expected in-scope mass.
    """
    records = list(pd)
    placement = fit_placement([r for r in records if r.core], config.ridge)
    context = context or ThetaContext(n_hat=n_hat)
    theta_result = theta_registry.create(config.theta_method, config).estimate(records, context)

    theta = theta_result.theta.copy()
    model_counters = placement_counters(placement, records, theta)
    counters: List[FractionalCounter] = []
    frozen: List[bool] = []
    for record, counter in zip(records, model_counters):
        if record.core and config.core_counters == "observed":
            counters.append(FractionalCounter.placed(record.q, record.label.position, 0.0))
            frozen.append(True)
        elif record.core:
            counters.append(counter.with_theta(0.0))
            frozen.append(True)
        else:
            counters.append(counter)
            frozen.append(False)

    report = None
    if config.benchmark:
        targets = BenchmarkTargets(n_hat=n_hat)
        if locality_estimates is not None:
            placed = sum((1.0 - c.theta) * c.mu.sum() for c in counters)
            expected = counters_total(counters)
            share = placed / expected if expected > 0 else 1.0
            targets.locality = np.asarray(locality_estimates, dtype=float) * share
        result = benchmark(counters, records, localities, targets, config.benchmark_tolerance,
                           config.benchmark_max_iter, frozen=frozen)
        counters, report = result.counters, result.report

    logger.info(f"Initiated {len(counters)} counters: core {sum(frozen)}, "
                f"expected in scope {counters_total(counters):.1f}, N̂ {n_hat:.1f}")
    return InitiationResult(counters, placement, theta_result, float(n_hat), report)
