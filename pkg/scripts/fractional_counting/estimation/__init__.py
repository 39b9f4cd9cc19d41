"""
Estimation of fractional counters and locality counts.
Handles census-year initiation, counting, benchmarking and audit sampling.
"""

from .base import (
    FractionalCounter, CountEstimate, ParamState,
    EstimationError, CounterError, UnknownAddressError, EmptyCoreError,
    UnderIdentifiedError, ConvergenceError, InfeasibleTargetError,
    ModelError, AuditError, DualSystemError,
    counters_total, theta_total
)
from .logistic import (
    ChoiceDesign, ChoiceModel, PlacementModel, ErroneousModel,
    PosteriorMode, find_posterior_mode, log_posterior, model_for, precision_of
)
from .counting import (
    classify, count_classifier, count_fractional, count_with_theta,
    social_total, count_truth
)
from .benchmark import BenchmarkTargets, BenchmarkReport, BenchmarkResult, benchmark
from .audit import (
    AuditSample, AuditEstimate, AuditResult, H0Test,
    draw_audit_sample, audit_estimate, mse_estimate, test_h0, run_audit,
    erroneous_indicator, locality_indicator
)
from .initiate import (
    ThetaResult, ThetaContext, ThetaEstimator, ThetaEstimatorRegistry, theta_registry,
    DualSystemEstimate, InitiationResult,
    fit_choice_model, fit_placement, placement_counters,
    estimate_theta_subset, estimate_theta_hypercube, estimate_theta_sample,
    dual_system_estimate, initiate
)

__all__ = [
    # Counters and estimates
    "FractionalCounter",
    "CountEstimate",
    "ParamState",
    "counters_total",
    "theta_total",

    # Exceptions
    "EstimationError",
    "CounterError",
    "UnknownAddressError",
    "EmptyCoreError",
    "UnderIdentifiedError",
    "ConvergenceError",
    "InfeasibleTargetError",
    "ModelError",
    "AuditError",
    "DualSystemError",

    # Choice models
    "ChoiceDesign",
    "ChoiceModel",
    "PlacementModel",
    "ErroneousModel",
    "PosteriorMode",
    "find_posterior_mode",
    "log_posterior",
    "model_for",
    "precision_of",

    # Counting
    "classify",
    "count_classifier",
    "count_fractional",
    "count_with_theta",
    "social_total",
    "count_truth",

    # Benchmarking
    "BenchmarkTargets",
    "BenchmarkReport",
    "BenchmarkResult",
    "benchmark",

    # Audit
    "AuditSample",
    "AuditEstimate",
    "AuditResult",
    "H0Test",
    "draw_audit_sample",
    "audit_estimate",
    "mse_estimate",
    "test_h0",
    "run_audit",
    "erroneous_indicator",
    "locality_indicator",

    # Initiation
    "ThetaResult",
    "ThetaContext",
    "ThetaEstimator",
    "ThetaEstimatorRegistry",
    "theta_registry",
    "DualSystemEstimate",
    "InitiationResult",
    "fit_choice_model",
    "fit_placement",
    "placement_counters",
    "estimate_theta_subset",
    "estimate_theta_hypercube",
    "estimate_theta_sample",
    "dual_system_estimate",
    "initiate",
]
