"""
Choice models and the posterior-mode solver shared by initiation and rolling.

Both parametric models are conditional logits over a per-record set of
alternatives:

- placement: one alternative per listed address (utility from the address
  features) plus "displaced" (utility from the person covariates);
- erroneous: "in scope" (utility 0) against "erroneous" (utility from an
  intercept, the covariates and the sign-of-life score).

Records with different numbers of alternatives are stacked into padded
arrays with a mask, which keeps likelihood, gradient and Hessian vectorised.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .base import ConvergenceError, ModelError

if TYPE_CHECKING:
    from ..simulation.base import PersonRecord, RecordLabel

N_ADDRESS_FEATURES = 3


@dataclass
class ChoiceDesign:
    """Stacked design of a set of labelled records."""
    X: np.ndarray        # (n, A, p) alternative rows
    mask: np.ndarray     # (n, A) valid alternatives
    y: np.ndarray        # (n,) observed alternative
    weights: np.ndarray  # (n,)

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_params(self) -> int:
        return int(self.X.shape[2])


class ChoiceModel(ABC):
    """A conditional logit over per-record alternatives."""

    kind: str = ""

    def __init__(self, n_covariates: int):
        self.n_covariates = n_covariates

    @property
    @abstractmethod
    def n_params(self) -> int:
        pass

    @abstractmethod
    def alternatives(self, record: "PersonRecord") -> np.ndarray:
        """Alternative rows (A_k, p) of one record."""
        pass

    @abstractmethod
    def outcome(self, record: "PersonRecord", label: "RecordLabel") -> Optional[int]:
        """Observed alternative of a labelled record, or None if it does not inform this model."""
        pass

    @abstractmethod
    def parameter_names(self) -> List[str]:
        pass

    def check(self, record: "PersonRecord") -> None:
        if record.covariates.shape != (self.n_covariates,):
            raise ModelError(
                f"Record {record.id} has {record.covariates.shape[0]} covariates, "
                f"model expects {self.n_covariates}",
                self.kind,
            )

    def stack(self, records: Sequence["PersonRecord"]) -> tuple:
        """Padded alternative arrays (X, mask) for any records."""
        rows = []
        for r in records:
            self.check(r)
            rows.append(self.alternatives(r))
        n = len(rows)
        width = max((a.shape[0] for a in rows), default=1)
        X = np.zeros((n, width, self.n_params))
        mask = np.zeros((n, width), dtype=bool)
        for k, a in enumerate(rows):
            X[k, :a.shape[0]] = a
            mask[k, :a.shape[0]] = True
        return X, mask

    def design(self, records: Sequence["PersonRecord"], weights: Optional[Sequence[float]] = None) -> ChoiceDesign:
        """
        Design of the labelled records that inform this model.

        Records without a label, or whose label says nothing about this
        model (out-of-scope records for placement), are skipped.
        """
        keep, ys, ws = [], [], []
        for idx, r in enumerate(records):
            if r.label is None:
                continue
            y = self.outcome(r, r.label)
            if y is None:
                continue
            keep.append(r)
            ys.append(y)
            ws.append(1.0 if weights is None else float(weights[idx]))
        X, mask = self.stack(keep)
        return ChoiceDesign(X=X, mask=mask, y=np.asarray(ys, dtype=int), weights=np.asarray(ws, dtype=float))

    def probabilities(self, beta: np.ndarray, records: Sequence["PersonRecord"]) -> List[np.ndarray]:
        """Alternative probabilities of each record under coefficients beta."""
        if beta.shape != (self.n_params,):
            raise ModelError(f"Coefficient vector has shape {beta.shape}, expected ({self.n_params},)", self.kind)
        if not records:
            return []
        X, mask = self.stack(records)
        P = _softmax(X, mask, beta)
        return [P[k, mask[k]] for k in range(len(records))]


class PlacementModel(ChoiceModel):
    """Listed addresses plus displaced; the last alternative is displaced."""

    kind = "placement"

    @property
    def n_params(self) -> int:
        return N_ADDRESS_FEATURES + 1 + self.n_covariates

    def parameter_names(self) -> List[str]:
        return (["agreement", "recency", "primary_source", "displaced_intercept"]
                + [f"displaced_z{j}" for j in range(self.n_covariates)])

    def alternatives(self, record: "PersonRecord") -> np.ndarray:
        q = record.q
        rows = np.zeros((q + 1, self.n_params))
        rows[:q, :N_ADDRESS_FEATURES] = record.address_features
        rows[q, N_ADDRESS_FEATURES] = 1.0
        rows[q, N_ADDRESS_FEATURES + 1:] = record.covariates
        return rows

    def outcome(self, record: "PersonRecord", label: "RecordLabel") -> Optional[int]:
        y = label.outcome(record.q)
        if y is not None and y > record.q:
            raise ModelError(f"Record {record.id} label position outside its address list", self.kind)
        return y


class ErroneousModel(ChoiceModel):
    """In scope (alternative 0) against erroneous (alternative 1)."""

    kind = "erroneous"

    @property
    def n_params(self) -> int:
        return 2 + self.n_covariates

    def parameter_names(self) -> List[str]:
        return ["intercept"] + [f"z{j}" for j in range(self.n_covariates)] + ["sol_score"]

    def alternatives(self, record: "PersonRecord") -> np.ndarray:
        rows = np.zeros((2, self.n_params))
        rows[1, 0] = 1.0
        rows[1, 1:1 + self.n_covariates] = record.covariates
        rows[1, -1] = record.sol_score
        return rows

    def outcome(self, record: "PersonRecord", label: "RecordLabel") -> Optional[int]:
        return 0 if label.in_scope else 1


MODEL_KINDS: Dict[str, type] = {
    PlacementModel.kind: PlacementModel,
    ErroneousModel.kind: ErroneousModel,
}


def model_for(kind: str, n_covariates: int) -> ChoiceModel:
    """Instantiate a choice model by kind."""
    if kind not in MODEL_KINDS:
        raise ModelError(f"Unknown model kind '{kind}'. Available: {sorted(MODEL_KINDS)}", kind)
    return MODEL_KINDS[kind](n_covariates)


def _softmax(X: np.ndarray, mask: np.ndarray, beta: np.ndarray) -> np.ndarray:
    U = np.where(mask, X @ beta, -np.inf)
    P = np.exp(U - logsumexp(U, axis=1, keepdims=True))
    return np.where(mask, P, 0.0)


def log_posterior(beta: np.ndarray, design: ChoiceDesign, prior_mean: np.ndarray,
                  prior_precision: np.ndarray) -> tuple:
    """
    Weighted log-likelihood plus Gaussian log-prior (up to a constant).

    Returns:
        (value, gradient, negative Hessian)
    """
    X, mask, y, w = design.X, design.mask, design.y, design.weights
    diff = beta - prior_mean
    value = -0.5 * diff @ prior_precision @ diff
    grad = -prior_precision @ diff
    neg_hess = prior_precision.copy()
    if design.n_obs == 0:
        return value, grad, neg_hess

    U = np.where(mask, X @ beta, -np.inf)
    log_z = logsumexp(U, axis=1)
    rows = np.arange(design.n_obs)
    value += float(np.sum(w * (U[rows, y] - log_z)))

    P = np.where(mask, np.exp(U - log_z[:, None]), 0.0)
    resid = -P
    resid[rows, y] += 1.0
    grad += np.einsum('nap,na->p', X, w[:, None] * resid)

    x_bar = np.einsum('nap,na->np', X, P)
    neg_hess += np.einsum('nap,na,naq->pq', X, w[:, None] * P, X)
    neg_hess -= np.einsum('np,n,nq->pq', x_bar, w, x_bar)
    return value, grad, neg_hess


@dataclass
class PosteriorMode:
    """Result of a posterior-mode search."""
    beta: np.ndarray
    covariance: np.ndarray
    iterations: int
    gradient_norm: float
    log_posterior: float


def find_posterior_mode(design: ChoiceDesign, prior_mean: np.ndarray, prior_precision: np.ndarray,
                        start: Optional[np.ndarray] = None, tolerance: float = 1e-8,
                        max_iter: int = 100) -> PosteriorMode:
    """
    Damped Newton search for the mode of the log-posterior.

    Each Newton step is halved until the objective does not decrease.
    Convergence is declared when the largest gradient component is below
    ``tolerance`` times the total observation weight (at least 1).

    Raises:
        ConvergenceError: If the gradient tolerance is not met within max_iter
    """
    p = prior_mean.shape[0]
    beta = prior_mean.copy() if start is None else np.asarray(start, dtype=float).copy()
    scale = max(1.0, float(design.weights.sum()))
    value, grad, neg_hess = log_posterior(beta, design, prior_mean, prior_precision)

    for iteration in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) <= tolerance * scale:
            return PosteriorMode(beta, _invert(neg_hess), iteration - 1, float(np.max(np.abs(grad), initial=0.0)), value)

        step = _solve(neg_hess, grad)
        t = 1.0
        for _ in range(40):
            candidate = beta + t * step
            new_value, new_grad, new_hess = log_posterior(candidate, design, prior_mean, prior_precision)
            if np.isfinite(new_value) and new_value >= value - 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            break
        beta, value, grad, neg_hess = candidate, new_value, new_grad, new_hess

    gradient_norm = float(np.max(np.abs(grad), initial=0.0))
    if gradient_norm <= tolerance * scale:
        return PosteriorMode(beta, _invert(neg_hess), max_iter, gradient_norm, value)
    raise ConvergenceError(
        f"Newton search did not converge in {max_iter} iterations (gradient {gradient_norm:.3e})",
        gradient_norm,
    )


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(matrix), rhs)
    except linalg.LinAlgError:
        return np.linalg.lstsq(matrix, rhs, rcond=None)[0]


def _invert(matrix: np.ndarray) -> np.ndarray:
    try:
        inv = linalg.cho_solve(linalg.cho_factor(matrix), np.eye(matrix.shape[0]))
    except linalg.LinAlgError:
        inv = linalg.pinvh(matrix)
    return 0.5 * (inv + inv.T)


def precision_of(covariance: np.ndarray) -> np.ndarray:
    """Precision matrix of a covariance, zero for an unbounded covariance."""
    if not np.all(np.isfinite(covariance)):
        return np.zeros_like(covariance)
    return _invert(covariance)
