"""
Core estimation types: fractional counters, count estimates, fitted model
state and the estimation error hierarchy.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

SIMPLEX_TOLERANCE = 1e-12


class EstimationError(Exception):
    """Base exception for estimation errors."""

    def __init__(self, message: str, operation: Optional[str] = None, recoverable: bool = False):
        super().__init__(message)
        self.operation = operation
        self.recoverable = recoverable


class CounterError(EstimationError):
    """Exception raised for counters off the simplex or misaligned with records."""

    def __init__(self, message: str):
        super().__init__(f"Counter error: {message}", "counting")


class UnknownAddressError(EstimationError):
    """Exception raised when a listed address belongs to no locality."""

    def __init__(self, address: int, record_id: int):
        super().__init__(f"Address {address} of record {record_id} is in no locality", "counting")
        self.address = address
        self.record_id = record_id


class EmptyCoreError(EstimationError):
    """Exception raised when a fit is requested on an empty core."""

    def __init__(self, operation: str):
        super().__init__("Core set is empty", operation)


class UnderIdentifiedError(EstimationError):
    """Exception raised when there are fewer observations than parameters."""

    def __init__(self, n_obs: int, n_params: int, operation: str):
        super().__init__(
            f"Model is under-identified: {n_obs} labelled records for {n_params} parameters", operation
        )
        self.n_obs = n_obs
        self.n_params = n_params


class ConvergenceError(EstimationError):
    """Exception raised when the Newton search fails to converge."""

    def __init__(self, message: str, gradient_norm: float):
        super().__init__(message, "posterior_mode", recoverable=False)
        self.gradient_norm = gradient_norm


class InfeasibleTargetError(EstimationError):
    """Exception raised when benchmark targets cannot be met; names the constraint."""

    def __init__(self, constraint: str, message: str):
        super().__init__(f"Infeasible benchmark constraint '{constraint}': {message}", "benchmark")
        self.constraint = constraint


class ModelError(EstimationError):
    """Exception raised for model/record mismatches."""

    def __init__(self, message: str, kind: Optional[str] = None):
        super().__init__(message, "model")
        self.kind = kind


class AuditError(EstimationError):
    """Exception raised for invalid audit designs or samples."""

    def __init__(self, message: str):
        super().__init__(f"Audit error: {message}", "audit")


class DualSystemError(EstimationError):
    """Exception raised for impossible capture-recapture counts."""

    def __init__(self, message: str):
        super().__init__(message, "dual_system_estimate")


@dataclass
class FractionalCounter:
    """
    Per-record fractional counters.

    ``mu[j]`` is the probability that the person lives at the j-th listed
    address given in scope, ``xi`` the probability of being displaced given
    in scope and ``theta`` the probability that the record is erroneous.
    """
    mu: np.ndarray
    xi: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.xi = float(self.xi)
        self.theta = float(self.theta)
        if self.mu.ndim != 1 or self.mu.size == 0:
            raise CounterError("mu must be a non-empty vector")
        values = np.append(self.mu, [self.xi, self.theta])
        if not np.all(np.isfinite(values)):
            raise CounterError("counters must be finite")
        if np.any(self.mu < 0) or self.xi < 0:
            raise CounterError("mu and xi must be non-negative")
        if not 0 <= self.theta <= 1:
            raise CounterError(f"theta must be in [0, 1], got {self.theta}")
        if abs(self.mu.sum() + self.xi - 1.0) > SIMPLEX_TOLERANCE:
            raise CounterError(f"mu and xi must sum to 1, got {self.mu.sum() + self.xi}")

    @classmethod
    def from_probabilities(cls, probabilities: Sequence[float], theta: float = 0.0) -> "FractionalCounter":
        """Counters from q+1 outcome probabilities, the last one displaced."""
        p = np.asarray(probabilities, dtype=float)
        total = p.sum()
        if p.size < 2 or total <= 0:
            raise CounterError("need at least one address and a positive total")
        mu = p[:-1] / total
        return cls(mu=mu, xi=max(0.0, 1.0 - mu.sum()), theta=theta)

    @classmethod
    def placed(cls, q: int, position: Optional[int], theta: float = 0.0) -> "FractionalCounter":
        """Degenerate counters for a known placement (None for displaced)."""
        mu = np.zeros(q)
        if position is None:
            return cls(mu=mu, xi=1.0, theta=theta)
        mu[position] = 1.0
        return cls(mu=mu, xi=0.0, theta=theta)

    @classmethod
    def uniform(cls, q: int) -> "FractionalCounter":
        return cls(mu=np.full(q, 1.0 / (q + 1)), xi=1.0 / (q + 1))

    def with_theta(self, theta: float) -> "FractionalCounter":
        return FractionalCounter(self.mu.copy(), self.xi, theta)

    @property
    def in_scope_mass(self) -> float:
        return 1.0 - self.theta


@dataclass
class CountEstimate:
    """Per-locality count estimates and prediction variances."""
    method: str
    estimates: np.ndarray
    variances: np.ndarray
    unplaced: float = 0.0
    unplaced_variance: float = 0.0

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if self.estimates.shape != self.variances.shape:
            raise EstimationError("estimates and variances must align", "count")

    @property
    def total(self) -> float:
        return float(self.estimates.sum() + self.unplaced)

    def to_frame(self) -> pd.DataFrame:
        """One row per locality (plus an ``unplaced`` row when used)."""
        frame = pd.DataFrame({
            "locality_id": np.arange(self.estimates.size),
            "method": self.method,
            "estimate": self.estimates,
            "variance": self.variances,
        })
        if self.unplaced:
            extra = pd.DataFrame({"locality_id": [-1], "method": [self.method],
                                  "estimate": [self.unplaced], "variance": [self.unplaced_variance]})
            frame = pd.concat([frame, extra], ignore_index=True)
        return frame


@dataclass
class ParamState:
    """
    Fitted parametric model at one epoch: coefficient estimate, covariance
    and the model kind and dimensions the coefficients belong to.
    """
    kind: str
    beta_hat: np.ndarray
    sigma_hat: np.ndarray
    n_covariates: int
    epoch: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.beta_hat = np.asarray(self.beta_hat, dtype=float)
        self.sigma_hat = np.asarray(self.sigma_hat, dtype=float)
        p = self.beta_hat.shape[0]
        if self.beta_hat.ndim != 1 or self.sigma_hat.shape != (p, p):
            raise ModelError(f"beta_hat {self.beta_hat.shape} and sigma_hat {self.sigma_hat.shape} do not match",
                             self.kind)

    @property
    def n_params(self) -> int:
        return int(self.beta_hat.shape[0])

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sigma_hat), 0.0, None))


def counters_total(counters: Sequence[FractionalCounter]) -> float:
    """Expected in-scope total Σ(1−θ)(1ᵀμ+ξ)."""
    return float(sum((1.0 - c.theta) * (c.mu.sum() + c.xi) for c in counters))


def theta_total(counters: Sequence[FractionalCounter]) -> float:
    return float(sum(c.theta for c in counters))
