"""
Empirical best prediction rolling of the parametric counter models.

The fitted state of epoch t−1 is used as the prior N(β̂_{t−1}, Σ̂_{t−1})
for the fresh observations D_t. The new state is the mode of the prediction
function and the inverse curvature there.
"""

import logging
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from ..estimation.base import FractionalCounter, ModelError, ParamState
from ..estimation.logistic import ChoiceModel, find_posterior_mode, model_for, precision_of
from ..simulation.base import PersonRecord
from .base import RollingError

logger = logging.getLogger(__name__)


def _advance(state: ParamState, epoch: Optional[int], **metadata) -> ParamState:
    return replace(
        state,
        beta_hat=state.beta_hat.copy(),
        sigma_hat=state.sigma_hat.copy(),
        epoch=state.epoch + 1 if epoch is None else epoch,
        metadata={**state.metadata, **metadata},
    )


def ebp_update(state: ParamState, updated: Sequence[PersonRecord], tolerance: float = 1e-8,
               max_iter: int = 100, epoch: Optional[int] = None,
               weights: Optional[Sequence[float]] = None) -> ParamState:
    """
    Roll a fitted model forward with the fresh labels D_t.

    Args:
        state: Model state of the previous epoch, used as the prior
        updated: Records of D_t carrying fresh labels
        tolerance: Gradient tolerance of the Newton search
        max_iter: Maximum Newton iterations
        epoch: Epoch of the new state (default: state epoch + 1)
        weights: Optional observation weights aligned with ``updated``

    Returns:
        New ParamState; with no informative record the prior is carried forward

    Raises:
        ConvergenceError: If the mode search does not converge
    """
    model = model_for(state.kind, state.n_covariates)
    design = model.design(list(updated), weights)
    if design.n_obs == 0:
        logger.info(f"No fresh {state.kind} labels; carrying the prior forward")
        return _advance(state, epoch, n_obs=0, step_norm=0.0, trace=float(np.trace(state.sigma_hat)))

    mode = find_posterior_mode(design, state.beta_hat, precision_of(state.sigma_hat),
                               start=state.beta_hat, tolerance=tolerance, max_iter=max_iter)
    step = float(np.linalg.norm(mode.beta - state.beta_hat))
    new_state = ParamState(
        kind=state.kind,
        beta_hat=mode.beta,
        sigma_hat=mode.covariance,
        n_covariates=state.n_covariates,
        epoch=state.epoch + 1 if epoch is None else epoch,
        metadata={
            **state.metadata,
            "method": "ebp",
            "n_obs": design.n_obs,
            "iterations": mode.iterations,
            "step_norm": step,
            "trace": float(np.trace(mode.covariance)),
        },
    )
    logger.debug(f"EBP {state.kind} update: {design.n_obs} labels, step {step:.4g}")
    return new_state


def refit_update(state: ParamState, updated: Sequence[PersonRecord], ridge: float = 1e-4,
                 tolerance: float = 1e-8, max_iter: int = 100,
                 epoch: Optional[int] = None) -> ParamState:
    """
    Refit on D_t alone, ignoring the previous state (efficiency baseline).

    Too few fresh labels to identify the model keep the previous state.
    """
    model = model_for(state.kind, state.n_covariates)
    design = model.design(list(updated))
    if design.n_obs < model.n_params:
        logger.info(f"Only {design.n_obs} fresh {state.kind} labels; refit keeps the previous state")
        return _advance(state, epoch, n_obs=design.n_obs, step_norm=0.0)
    p = model.n_params
    mode = find_posterior_mode(design, np.zeros(p), ridge * np.eye(p), tolerance=tolerance, max_iter=max_iter)
    return ParamState(
        kind=state.kind,
        beta_hat=mode.beta,
        sigma_hat=mode.covariance,
        n_covariates=state.n_covariates,
        epoch=state.epoch + 1 if epoch is None else epoch,
        metadata={**state.metadata, "method": "refit", "n_obs": design.n_obs,
                  "step_norm": float(np.linalg.norm(mode.beta - state.beta_hat)),
                  "trace": float(np.trace(mode.covariance))},
    )


def prior_distance(prior: ParamState, beta: np.ndarray) -> float:
    """Mahalanobis distance of ``beta`` from the prior mean in the prior covariance metric."""
    offset = np.asarray(beta, dtype=float) - prior.beta_hat
    return float(np.sqrt(max(offset @ precision_of(prior.sigma_hat) @ offset, 0.0)))


def frozen_update(state: ParamState, updated: Sequence[PersonRecord] = (),
                  epoch: Optional[int] = None) -> ParamState:
    """Never-update baseline: the census-year model is kept for ever."""
    return _advance(state, epoch, method="none", step_norm=0.0)


ROLLING_METHODS = {
    "ebp": ebp_update,
    "refit": refit_update,
    "none": frozen_update,
}


def roll_state(method: str, state: ParamState, updated: Sequence[PersonRecord], **kwargs) -> ParamState:
    """Dispatch a rolling method by name."""
    if method not in ROLLING_METHODS:
        raise RollingError(f"Unknown rolling method '{method}'. Available: {sorted(ROLLING_METHODS)}", "roll")
    if method == "none":
        return frozen_update(state, updated, kwargs.get("epoch"))
    if method == "refit":
        kwargs.pop("weights", None)
    else:
        kwargs.pop("ridge", None)
    return ROLLING_METHODS[method](state, updated, **kwargs)


def _outcome_probabilities(model: ChoiceModel, state: ParamState, records: Sequence[PersonRecord],
                           n_draws: int, rng: Optional[np.random.Generator]) -> List[np.ndarray]:
    if n_draws <= 0:
        return model.probabilities(state.beta_hat, records)
    if rng is None:
        raise ModelError("propagating parameter uncertainty needs a random stream", state.kind)
    draws = rng.multivariate_normal(state.beta_hat, state.sigma_hat, size=n_draws, method="eigh")
    totals = [np.zeros(0)] * len(records)
    for beta in draws:
        for k, p in enumerate(model.probabilities(beta, records)):
            totals[k] = p if totals[k].size == 0 else totals[k] + p
    return [t / n_draws for t in totals]


def apply_model(state: ParamState, pd: Sequence[PersonRecord],
                base: Optional[Sequence[FractionalCounter]] = None, n_draws: int = 0,
                rng: Optional[np.random.Generator] = None) -> List[FractionalCounter]:
    """
    Counters for every record from a fitted model.

    A placement state sets (μ, ξ) and keeps θ from ``base`` (0 without one);
    an erroneous state sets θ and keeps (μ, ξ) from ``base`` (uniform over
    the q+1 outcomes without one). With ``n_draws > 0`` the outcome
    probabilities are averaged over β ~ N(β̂, Σ̂).

    Raises:
        ModelError: On a covariate dimension mismatch
    """
    records = list(pd)
    if base is not None and len(base) != len(records):
        raise ModelError(f"{len(base)} base counters for {len(records)} records", state.kind)
    model = model_for(state.kind, state.n_covariates)
    probs = _outcome_probabilities(model, state, records, n_draws, rng)

    counters: List[FractionalCounter] = []
    for k, (record, p) in enumerate(zip(records, probs)):
        if state.kind == "placement":
            theta = base[k].theta if base is not None else 0.0
            counters.append(FractionalCounter.from_probabilities(p, theta))
        else:
            previous = base[k] if base is not None else FractionalCounter.uniform(record.q)
            counters.append(previous.with_theta(float(np.clip(p[1], 0.0, 1.0))))
    return counters


def apply_models(placement: ParamState, erroneous: Optional[ParamState], pd: Sequence[PersonRecord],
                 n_draws: int = 0, rng: Optional[np.random.Generator] = None) -> List[FractionalCounter]:
    """Full counters (μ, ξ, θ) from a placement and an optional erroneous model."""
    counters = apply_model(placement, pd, n_draws=n_draws, rng=rng)
    if erroneous is None:
        return counters
    return apply_model(erroneous, pd, base=counters, n_draws=n_draws, rng=rng)
