"""
Register side of the simulator: derive the population dataset from the
world and run the census that links a core of it.

Placements are generated from the same conditional logit the estimators
fit, with the displaced intercept calibrated so that the expected share
of displaced in-scope records equals the configured rate.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from ..config import ScenarioConfig
from ..estimation.logistic import N_ADDRESS_FEATURES, PlacementModel
from .base import (
    PersonRecord,
    PopulationDataset,
    RecordLabel,
    ScenarioError,
    TruePerson,
    WorldTruth,
    true_label,
)

logger = logging.getLogger(__name__)


@dataclass
class CensusResult:
    """Outcome of the census year."""
    pd: PopulationDataset
    enumerated: int
    linked: int
    locality_estimates: np.ndarray
    n_hat: float
    cell_estimates: Dict[int, float] = field(default_factory=dict)

    @property
    def unlinked(self) -> int:
        """Census persons without a PD record in the core (reported, not used)."""
        return self.enumerated - self.linked


def draw_multiplicity(rng: np.random.Generator, mean: float, max_q: int, size: int) -> np.ndarray:
    """Number of listed addresses per record: 1 + Poisson(mean − 1), capped."""
    return np.minimum(1 + rng.poisson(max(mean - 1.0, 0.0), size=size), max_q)


def draw_address_features(rng: np.random.Generator, q: int) -> np.ndarray:
    """Agreement share over three sources, recency and a primary-source flag."""
    return np.column_stack([
        rng.binomial(3, 0.5, size=q) / 3.0,
        rng.uniform(size=q),
        rng.binomial(1, 0.5, size=q).astype(float),
    ])


def draw_sign_of_life(rng: np.random.Generator, n_sources: int, prob: float) -> np.ndarray:
    return rng.binomial(1, prob, size=n_sources).astype(float)


def calibrate_displacement_intercept(address_logsums: np.ndarray, covariate_terms: np.ndarray,
                                     rate: float) -> float:
    """
    Displaced intercept whose mean displacement probability equals ``rate``.

    Returns -inf for rate 0 and +inf for rate 1.
    """
    if rate <= 0:
        return -np.inf
    if rate >= 1:
        return np.inf
    if address_logsums.size == 0:
        return float(np.log(rate / (1.0 - rate)))

    def gap(alpha0: float) -> float:
        return float(np.mean(expit(alpha0 + covariate_terms - address_logsums))) - rate

    return float(brentq(gap, -60.0, 60.0, xtol=1e-12))


def _distinct_decoys(rng: np.random.Generator, world_n_addresses: int, per_locality: int,
                     home_locality: int, exclude: set, count: int, same_locality_prob: float,
                     neighbour_prob: float, n_localities: int) -> List[int]:
    """Addresses that are not the person's true address."""
    decoys: List[int] = []
    taken = set(exclude)
    attempts = 0
    while len(decoys) < count:
        attempts += 1
        if attempts > 1000:
            raise ScenarioError("address universe too small to draw distinct decoy addresses", "derive_pd")
        u = rng.random()
        if u < same_locality_prob or n_localities == 1:
            locality = home_locality
        elif rng.random() < neighbour_prob:
            locality = (home_locality + (1 if rng.random() < 0.5 else -1)) % n_localities
        else:
            locality = int(rng.integers(n_localities))
        address = locality * per_locality + int(rng.integers(per_locality))
        if address not in taken and address < world_n_addresses:
            taken.add(address)
            decoys.append(address)
    return decoys


def _layout_addresses(rng: np.random.Generator, world: WorldTruth, cfg: ScenarioConfig,
                      true_address: Optional[int], q: int, position: Optional[int]) -> List[int]:
    """Sign-of-life list with the true address at ``position`` (absent when None)."""
    if true_address is None:
        home = int(rng.integers(world.n_localities))
        exclude: set = set()
    else:
        home = world.locality_of(true_address)
        exclude = {true_address}
    decoy_count = q if position is None else q - 1
    decoys = _distinct_decoys(rng, world.n_addresses, world.addresses_per_locality, home, exclude,
                              decoy_count, cfg.same_locality_prob, cfg.neighbour_prob, world.n_localities)
    if position is not None:
        decoys.insert(position, true_address)
    return decoys


def _draw_outcomes(rng: np.random.Generator, features: Sequence[np.ndarray], covariates: np.ndarray,
                   beta: np.ndarray) -> List[Optional[int]]:
    """Draw placement outcomes (None for displaced) from the conditional logit."""
    gamma = beta[:N_ADDRESS_FEATURES]
    alpha0 = beta[N_ADDRESS_FEATURES]
    slopes = beta[N_ADDRESS_FEATURES + 1:]
    outcomes: List[Optional[int]] = []
    for f, z in zip(features, covariates):
        u = np.append(f @ gamma, alpha0 + z @ slopes)
        if np.isposinf(u[-1]):
            outcomes.append(None)
            continue
        p = np.exp(u - logsumexp(u))
        choice = int(rng.choice(u.size, p=p / p.sum()))
        outcomes.append(None if choice == f.shape[0] else choice)
    return outcomes


def _displacement_slopes(cfg: ScenarioConfig) -> np.ndarray:
    if cfg.displacement_slopes:
        return np.asarray(cfg.displacement_slopes, dtype=float)
    return np.zeros(cfg.n_covariates)


def derive_pd(world: WorldTruth, cfg: ScenarioConfig, rng: np.random.Generator) -> PopulationDataset:
    """
    Derive the population dataset P from the world.

    In-scope persons are kept with probability 1 − missing_rate; every
    out-of-scope person the world holds contributes an erroneous record.
    Each record gets a sign-of-life address list, per-address features,
    register covariates and attribute, and source activity indicators.

    Args:
        world: Ground truth at the census epoch
        cfg: Scenario settings
        rng: Register random stream

    Returns:
        PopulationDataset ordered by record id, with the realised placement
        coefficients in ``placement_beta``
    """
    if not 0 <= cfg.missing_rate <= 1 or not 0 <= cfg.displacement_rate <= 1:
        raise ScenarioError("missing_rate and displacement_rate must be in [0, 1]", "derive_pd")

    included = [p for p in world.in_scope() if rng.random() >= cfg.missing_rate]
    q_in = draw_multiplicity(rng, cfg.mean_sol_multiplicity, cfg.max_sol_multiplicity, len(included))
    features = [draw_address_features(rng, int(q)) for q in q_in]
    z = np.array([p.covariates for p in included]).reshape(len(included), cfg.n_covariates)

    gamma = np.asarray(cfg.placement_coefficients, dtype=float)
    slopes = _displacement_slopes(cfg)
    logsums = np.array([logsumexp(f @ gamma) for f in features])
    alpha0 = calibrate_displacement_intercept(logsums, z @ slopes, cfg.displacement_rate)
    beta = np.concatenate([gamma, [alpha0], slopes])
    outcomes = _draw_outcomes(rng, features, z, beta)

    records: List[PersonRecord] = []
    for person, q, f, position in zip(included, q_in, features, outcomes):
        addresses = _layout_addresses(rng, world, cfg, person.true_address, int(q), position)
        records.append(_make_record(rng, cfg, person, addresses, f, cfg.sol_in_scope_prob))

    for person in world.persons:
        if person.alive_in_scope:
            continue
        q = int(draw_multiplicity(rng, cfg.mean_sol_multiplicity, cfg.max_sol_multiplicity, 1)[0])
        addresses = _layout_addresses(rng, world, cfg, None, q, None)
        records.append(_make_record(rng, cfg, person, addresses, draw_address_features(rng, q),
                                    cfg.sol_erroneous_prob))

    records.sort(key=lambda r: r.id)
    logger.info(f"Derived population dataset with {len(records)} records "
                f"({len(included)} in scope, {len(records) - len(included)} erroneous)")
    return PopulationDataset(records=records, epoch=world.epoch, placement_beta=beta)


def _make_record(rng: np.random.Generator, cfg: ScenarioConfig, person: TruePerson, addresses: List[int],
                 features: np.ndarray, sol_prob: float) -> PersonRecord:
    noise = rng.normal(0.0, cfg.attribute_noise_sd) if cfg.attribute_noise_sd > 0 else 0.0
    return PersonRecord(
        id=person.id,
        sol_addresses=tuple(addresses),
        address_features=features,
        covariates=person.covariates.copy(),
        stratum=person.stratum,
        family_id=person.family_id,
        register_attribute=float(person.attribute + noise),
        attribute_variance=cfg.attribute_noise_sd ** 2,
        sign_of_life=draw_sign_of_life(rng, cfg.n_sources, sol_prob),
    )


def redraw_record(rng: np.random.Generator, world: WorldTruth, cfg: ScenarioConfig, person: TruePerson,
                  beta: np.ndarray, record: Optional[PersonRecord] = None) -> PersonRecord:
    """
    Fresh register record for a person under the current coefficients.

    Used when registers refresh a record after a move, birth or immigration.
    """
    q = int(draw_multiplicity(rng, cfg.mean_sol_multiplicity, cfg.max_sol_multiplicity, 1)[0])
    f = draw_address_features(rng, q)
    position = _draw_outcomes(rng, [f], person.covariates[None, :], beta)[0]
    addresses = _layout_addresses(rng, world, cfg, person.true_address, q, position)
    fresh = _make_record(rng, cfg, person, addresses, f, cfg.sol_in_scope_prob)
    if record is not None:
        fresh.register_attribute = record.register_attribute
        fresh.core = record.core
    return fresh


def simulate_census(world: WorldTruth, pd: PopulationDataset, link_rate: float, rng: np.random.Generator,
                    noise_cv: float = 0.0, hypercube_noise_cv: float = 0.0) -> CensusResult:
    """
    Run the census year: enumerate the in-scope population, link a core of
    the PD and publish locality and per-stratum population estimates.

    Core records carry their ground-truth labels.

    Raises:
        ScenarioError: If link_rate is outside [0, 1] or a noise level is negative
    """
    if not 0 <= link_rate <= 1:
        raise ScenarioError(f"link_rate must be in [0, 1], got {link_rate}", "simulate_census")
    if noise_cv < 0 or hypercube_noise_cv < 0:
        raise ScenarioError("census noise levels must be non-negative", "simulate_census")

    linked_records: List[PersonRecord] = []
    n_linked = 0
    for record in pd:
        label = true_label(record, world)
        if label.in_scope and rng.random() < link_rate:
            linked_records.append(replace(record, core=True, label=label))
            n_linked += 1
        else:
            linked_records.append(replace(record))

    truth = world.true_counts()
    locality_estimates = truth * _lognormal_factor(rng, noise_cv, truth.size)

    cell_truth: Dict[int, float] = {}
    for person in world.in_scope():
        cell_truth[person.stratum] = cell_truth.get(person.stratum, 0.0) + 1.0
    factors = _lognormal_factor(rng, hypercube_noise_cv, len(cell_truth))
    cells = {h: n * float(f) for (h, n), f in zip(sorted(cell_truth.items()), factors)}

    result = CensusResult(
        pd=PopulationDataset(linked_records, epoch=pd.epoch, placement_beta=pd.placement_beta),
        enumerated=world.population_size,
        linked=n_linked,
        locality_estimates=locality_estimates,
        n_hat=float(locality_estimates.sum()),
        cell_estimates=cells,
    )
    logger.info(f"Census linked {n_linked} of {result.enumerated} enumerated persons "
                f"({result.unlinked} unlinked)")
    return result


def _lognormal_factor(rng: np.random.Generator, cv: float, size: int) -> np.ndarray:
    """Mean-one multiplicative noise; exactly one when cv is zero."""
    if cv <= 0:
        return np.ones(size)
    sigma = np.sqrt(np.log1p(cv ** 2))
    return np.exp(rng.normal(-0.5 * sigma ** 2, sigma, size=size))


def draw_choice_records(rng: np.random.Generator, beta: np.ndarray, n: int, n_covariates: int,
                        kind: str = "placement", mean_q: float = 2.0, max_q: int = 4,
                        epoch: int = 0, start_id: int = 0) -> List[PersonRecord]:
    """
    Labelled stand-alone records drawn from a known coefficient vector.

    Addresses are placeholders ``id * max_q + j``; only features, covariates
    and labels matter for fitting.
    """
    if kind not in ("placement", "erroneous"):
        raise ValueError(f"Unknown model kind '{kind}'")
    model = PlacementModel(n_covariates)
    records: List[PersonRecord] = []
    for k in range(n):
        rid = start_id + k
        z = rng.normal(size=n_covariates)
        q = int(draw_multiplicity(rng, mean_q, max_q, 1)[0])
        f = draw_address_features(rng, q)
        sol = draw_sign_of_life(rng, 3, 0.5)
        record = PersonRecord(
            id=rid, sol_addresses=tuple(rid * max_q + j for j in range(q)), address_features=f,
            covariates=z, stratum=0, family_id=rid, register_attribute=1.0, sign_of_life=sol,
        )
        if kind == "placement":
            p = model.probabilities(beta, [record])[0]
            choice = int(rng.choice(p.size, p=p / p.sum()))
            record.label = RecordLabel(True, None if choice == q else choice, epoch)
        elif kind == "erroneous":
            eta = beta[0] + z @ beta[1:1 + n_covariates] + beta[-1] * record.sol_score
            erroneous = rng.random() < expit(eta)
            record.label = RecordLabel(False, None, epoch) if erroneous else RecordLabel(True, 0, epoch)
        records.append(record)
    return records
