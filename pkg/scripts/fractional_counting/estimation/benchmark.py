"""
Benchmarking fractional counters to census population estimates.

The national constraint Σθ = N_p − N̂ is met by scaling θ. Locality
constraints on the expected placed counts Σ_k (1−θ_k) μ_kᵀδ_{k,i} = T_i are
met by iterative proportional fitting on μ; after each sweep every person's
(μ, ξ) is put back on the simplex with ξ taking up the slack.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..simulation.base import Locality, PersonRecord, address_lookup
from .base import CounterError, FractionalCounter, InfeasibleTargetError, UnknownAddressError

logger = logging.getLogger(__name__)


@dataclass
class BenchmarkTargets:
    """Census targets: placed count per locality and the national total."""
    locality: Optional[np.ndarray] = None
    n_hat: Optional[float] = None


@dataclass
class BenchmarkReport:
    """Diagnostics of one benchmarking run."""
    iterations: int
    converged: bool
    max_violation: float
    national_residual: float
    theta_scale: float
    locality_residuals: List[float] = field(default_factory=list)


@dataclass
class BenchmarkResult:
    counters: List[FractionalCounter]
    report: BenchmarkReport


def benchmark(counters: Sequence[FractionalCounter], records: Sequence[PersonRecord],
              localities: Sequence[Locality], targets: BenchmarkTargets, tolerance: float = 1e-10,
              max_iter: int = 500, frozen: Optional[Sequence[bool]] = None) -> BenchmarkResult:
    """
    Adjust counters so that they reproduce the census targets.

    Args:
        counters: Counters aligned with records
        records: Population dataset records
        localities: Locality partition
        targets: Locality targets on placed mass and/or the national total N̂
        tolerance: Relative tolerance on constraint violations
        max_iter: Maximum IPF sweeps
        frozen: Records whose counters are known and must not change

    Returns:
        BenchmarkResult; targets already met leave the counters unchanged

    Raises:
        InfeasibleTargetError: If a target cannot be met, naming the constraint
    """
    records = list(records)
    if len(records) != len(counters):
        raise CounterError(f"{len(counters)} counters for {len(records)} records")
    n = len(records)
    fixed = np.zeros(n, dtype=bool) if frozen is None else np.asarray(frozen, dtype=bool)

    theta = np.array([c.theta for c in counters], dtype=float)
    theta_scale = 1.0
    national_residual = 0.0
    if targets.n_hat is not None:
        theta, theta_scale, national_residual = _scale_theta(theta, fixed, n, float(targets.n_hat), tolerance)

    mu_flat, owner, loc_flat = _flatten(counters, records, localities)
    m = len(localities)
    weights = 1.0 - theta
    iterations = 0
    max_violation = 0.0
    residuals = np.zeros(m)

    if targets.locality is not None:
        target = np.asarray(targets.locality, dtype=float)
        if target.shape != (m,) or np.any(target < 0) or not np.all(np.isfinite(target)):
            raise InfeasibleTargetError("locality", "targets must be finite, non-negative, one per locality")

        movable = ~fixed[owner]
        fixed_mass = np.bincount(loc_flat[~movable], weights=(weights[owner] * mu_flat)[~movable], minlength=m)
        goal = target - fixed_mass
        capacity = np.zeros(m)
        for i in range(m):
            holders = np.unique(owner[movable & (loc_flat == i)])
            capacity[i] = weights[holders].sum()
        scale = max(1.0, float(target.sum()))
        for i in range(m):
            if goal[i] < -tolerance * scale:
                raise InfeasibleTargetError(f"locality {i}", f"fixed records already exceed target {target[i]:.6g}")
            if goal[i] > capacity[i] * (1 + 1e-12) + tolerance * scale:
                raise InfeasibleTargetError(
                    f"locality {i}", f"target {target[i]:.6g} exceeds attainable mass {capacity[i] + fixed_mass[i]:.6g}"
                )
        goal = np.clip(goal, 0.0, None)

        for iterations in range(max_iter + 1):
            mass = np.bincount(loc_flat[movable], weights=(weights[owner] * mu_flat)[movable], minlength=m)
            residuals = mass - goal
            max_violation = float(np.max(np.abs(residuals), initial=0.0))
            if max_violation <= tolerance * scale:
                break
            if iterations == max_iter:
                worst = int(np.argmax(np.abs(residuals)))
                raise InfeasibleTargetError(
                    f"locality {worst}", f"no convergence after {max_iter} sweeps (violation {max_violation:.3e})"
                )
            factor = np.ones(m)
            positive = mass > 0
            factor[positive] = goal[positive] / mass[positive]
            mu_flat = np.where(movable, mu_flat * factor[loc_flat], mu_flat)
            sums = np.bincount(owner, weights=mu_flat, minlength=n)
            over = sums > 1.0
            mu_flat = np.where(movable & over[owner], mu_flat / np.where(over, sums, 1.0)[owner], mu_flat)

    adjusted = _rebuild(counters, mu_flat, owner, theta, fixed, changed=iterations > 0)
    report = BenchmarkReport(
        iterations=iterations,
        converged=True,
        max_violation=max_violation,
        national_residual=national_residual,
        theta_scale=theta_scale,
        locality_residuals=[float(r) for r in residuals],
    )
    logger.info(f"Benchmark converged in {iterations} sweeps (max violation {max_violation:.3e}, "
                f"national residual {national_residual:.3e})")
    return BenchmarkResult(adjusted, report)


def _scale_theta(theta: np.ndarray, fixed: np.ndarray, n: int, n_hat: float, tolerance: float):
    """Scale the free θ so that N̂ + Σθ = N_p; clipping leaves a reported residual."""
    if n_hat > n:
        raise InfeasibleTargetError("national", f"N̂ = {n_hat:.6g} exceeds the {n} records of the dataset")
    need = n - n_hat
    current = float(theta.sum())
    if abs(current - need) <= tolerance * max(1.0, n_hat):
        return theta, 1.0, current - need
    free = float(theta[~fixed].sum())
    budget = need - float(theta[fixed].sum())
    if free <= 0:
        residual = current - need
        logger.warning(f"Cannot rescale theta (no free erroneous mass); national residual {residual:.6g}")
        return theta, 1.0, residual
    scale = budget / free
    scaled = theta.copy()
    scaled[~fixed] = np.clip(theta[~fixed] * scale, 0.0, 1.0)
    residual = float(scaled.sum()) - need
    if abs(residual) > tolerance * max(1.0, n_hat):
        logger.warning(f"Theta scaling clipped at 1; national residual {residual:.6g} reported")
    return scaled, scale, residual


def _flatten(counters: Sequence[FractionalCounter], records: Sequence[PersonRecord],
             localities: Sequence[Locality]):
    lookup = address_lookup(localities)
    mu_parts, owner_parts, loc_parts = [], [], []
    for k, (record, counter) in enumerate(zip(records, counters)):
        if counter.mu.size != record.q:
            raise CounterError(f"record {record.id} lists {record.q} addresses but has {counter.mu.size} counters")
        for a in record.sol_addresses:
            if a not in lookup:
                raise UnknownAddressError(a, record.id)
        mu_parts.append(counter.mu)
        owner_parts.append(np.full(record.q, k))
        loc_parts.append([lookup[a] for a in record.sol_addresses])
    if not mu_parts:
        return np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return (np.concatenate(mu_parts), np.concatenate(owner_parts).astype(int),
            np.concatenate([np.asarray(p, dtype=int) for p in loc_parts]))


def _rebuild(counters: Sequence[FractionalCounter], mu_flat: np.ndarray, owner: np.ndarray,
             theta: np.ndarray, fixed: np.ndarray, changed: bool) -> List[FractionalCounter]:
    result: List[FractionalCounter] = []
    start = 0
    for k, counter in enumerate(counters):
        q = counter.mu.size
        if fixed[k] or not changed:
            result.append(counter if counter.theta == theta[k] else counter.with_theta(theta[k]))
        else:
            mu = mu_flat[start:start + q].copy()
            total = mu.sum()
            if total > 1.0:
                mu /= total
            result.append(FractionalCounter(mu, max(0.0, 1.0 - mu.sum()), float(theta[k])))
        start += q
    return result
