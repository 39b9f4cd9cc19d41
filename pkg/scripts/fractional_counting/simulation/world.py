"""
World generation and per-epoch dynamics.
"""

import logging
from dataclasses import replace
from typing import Dict, List

import numpy as np

from ..config import DynamicsConfig, ScenarioConfig, SurveyConfig
from .base import (
    EventLog,
    MoveEvent,
    PersonRecord,
    PopulationDataset,
    ScenarioError,
    StepOutcome,
    TruePerson,
    UpdateBatch,
    WorldTruth,
    build_localities,
    true_label,
)
from .register import draw_sign_of_life, redraw_record

logger = logging.getLogger(__name__)


def _check_scenario(cfg: ScenarioConfig) -> None:
    if cfg.population_size < 0:
        raise ScenarioError(f"population_size must be non-negative, got {cfg.population_size}", "generate_world")
    if cfg.n_localities < 1:
        raise ScenarioError("at least one locality is required", "generate_world")
    if cfg.addresses_per_locality < 2:
        raise ScenarioError("each locality needs at least two addresses", "generate_world")
    if not 0 <= cfg.erroneous_rate < 1 or not 0 <= cfg.missing_rate <= 1:
        raise ScenarioError("erroneous_rate must be in [0, 1) and missing_rate in [0, 1]", "generate_world")


def _new_person(rng: np.random.Generator, cfg: ScenarioConfig, pid: int, address: int, family: int) -> TruePerson:
    return TruePerson(
        id=pid,
        alive_in_scope=True,
        true_address=address,
        covariates=rng.normal(size=cfg.n_covariates),
        stratum=int(rng.integers(cfg.n_strata)),
        attribute=float(rng.normal(cfg.attribute_mean, cfg.attribute_sd)),
        family_id=family,
    )


def generate_world(cfg: ScenarioConfig, rng: np.random.Generator) -> WorldTruth:
    """
    Generate the synthetic world at the census epoch.

    In-scope persons come in families that share a true address. The world
    also holds a pool of out-of-scope persons (former residents) sized so
    that they make up ``erroneous_rate`` of the population dataset; their
    covariates and strata are shifted so the erroneous status is learnable.

    Args:
        cfg: Scenario settings
        rng: World random stream

    Returns:
        WorldTruth at epoch 0

    Raises:
        ScenarioError: If the scenario parameters are out of range
    """
    _check_scenario(cfg)
    localities = build_localities(cfg.n_localities, cfg.addresses_per_locality)
    n_addresses = cfg.n_localities * cfg.addresses_per_locality

    persons: List[TruePerson] = []
    family = 0
    while len(persons) < cfg.population_size:
        size = min(1 + int(rng.poisson(cfg.family_mean_size - 1.0)), cfg.population_size - len(persons))
        address = int(rng.integers(n_addresses))
        for _ in range(size):
            persons.append(_new_person(rng, cfg, len(persons), address, family))
        family += 1

    expected_in_pd = cfg.population_size * (1.0 - cfg.missing_rate)
    n_former = int(round(expected_in_pd * cfg.erroneous_rate / (1.0 - cfg.erroneous_rate)))
    stratum_weights = np.arange(1, cfg.n_strata + 1, dtype=float)
    stratum_weights /= stratum_weights.sum()
    for k in range(n_former):
        persons.append(TruePerson(
            id=cfg.population_size + k,
            alive_in_scope=False,
            true_address=None,
            covariates=rng.normal(cfg.erroneous_shift, 1.0, size=cfg.n_covariates),
            stratum=int(rng.choice(cfg.n_strata, p=stratum_weights)),
            attribute=float(rng.normal(cfg.attribute_mean, cfg.attribute_sd)),
            family_id=family,
        ))
        family += 1

    logger.info(f"Generated world with {cfg.population_size} persons in {cfg.n_localities} localities "
                f"and {n_former} former residents")
    return WorldTruth(
        localities=localities,
        persons=persons,
        addresses_per_locality=cfg.addresses_per_locality,
        epoch=0,
        next_id=cfg.population_size + n_former,
        next_family=family,
    )


def _move_address(rng: np.random.Generator, world: WorldTruth, current: int, local_prob: float) -> int:
    home = world.locality_of(current)
    per = world.addresses_per_locality
    if world.n_localities == 1 or rng.random() < local_prob:
        locality = home
    else:
        locality = int((home + 1 + rng.integers(world.n_localities - 1)) % world.n_localities)
    while True:
        address = locality * per + int(rng.integers(per))
        if address != current:
            return address


def step_world(world: WorldTruth, pd: PopulationDataset, scenario: ScenarioConfig, dynamics: DynamicsConfig,
               survey: SurveyConfig, rng: np.random.Generator) -> StepOutcome:
    """
    Advance the world and the registers by one epoch.

    Persons die, emigrate or move; births and immigrants arrive. Registers
    react with some lag: deaths and emigrations are deregistered with
    probability ``deregistration_rate`` (the rest become erroneous records),
    moves and arrivals are registered with probability ``register_update_rate``
    (registered records are redrawn from the drifted placement coefficients
    and their labels go into the update batch). Sign-of-life activity is
    redrawn for every record and a coverage survey observes a Poisson sample
    of the new population dataset.

    Returns:
        StepOutcome with the new world, PD, update batch and event log
    """
    epoch = world.epoch + 1
    n_before = world.population_size
    events = EventLog(epoch=epoch)
    persons: List[TruePerson] = []
    moved: List[TruePerson] = []
    departed: set = set()

    for p in world.persons:
        if not p.alive_in_scope:
            persons.append(p)
            continue
        origin = world.locality_of(p.true_address)
        u = rng.random()
        if u < dynamics.death_rate:
            events.deaths.append((p.id, origin))
            persons.append(replace(p, alive_in_scope=False, true_address=None))
            departed.add(p.id)
        elif u < dynamics.death_rate + dynamics.emigration_rate:
            events.emigrations.append((p.id, origin))
            persons.append(replace(p, alive_in_scope=False, true_address=None))
            departed.add(p.id)
        elif u < dynamics.death_rate + dynamics.emigration_rate + dynamics.move_rate:
            address = _move_address(rng, world, p.true_address, dynamics.local_move_prob)
            mover = replace(p, true_address=address)
            events.moves.append(MoveEvent(p.id, origin, world.locality_of(address)))
            persons.append(mover)
            moved.append(mover)
        else:
            persons.append(p)

    next_id, next_family = world.next_id, world.next_family
    arrivals: List[TruePerson] = []
    residents = [p for p in persons if p.alive_in_scope]
    for _ in range(int(rng.poisson(dynamics.birth_rate * n_before))):
        if not residents:
            break
        parent = residents[int(rng.integers(len(residents)))]
        child = _new_person(rng, scenario, next_id, parent.true_address, parent.family_id)
        child.stratum = 0
        events.births.append((child.id, world.locality_of(child.true_address)))
        arrivals.append(child)
        next_id += 1
    for _ in range(int(rng.poisson(dynamics.immigration_rate * n_before))):
        person = _new_person(rng, scenario, next_id, int(rng.integers(world.n_addresses)), next_family)
        events.immigrations.append((person.id, world.locality_of(person.true_address)))
        arrivals.append(person)
        next_id += 1
        next_family += 1
    persons.extend(arrivals)

    new_world = WorldTruth(
        localities=world.localities, persons=persons, addresses_per_locality=world.addresses_per_locality,
        epoch=epoch, next_id=next_id, next_family=next_family,
    )

    if pd.placement_beta is None:
        rate = min(max(scenario.displacement_rate, 1e-12), 1 - 1e-12)
        slopes = scenario.displacement_slopes or [0.0] * scenario.n_covariates
        beta = np.concatenate([scenario.placement_coefficients, [np.log(rate / (1 - rate))], slopes])
    else:
        beta = np.asarray(pd.placement_beta, dtype=float).copy()
    if dynamics.beta_drift_sd > 0:
        beta[np.isfinite(beta)] += rng.normal(0.0, dynamics.beta_drift_sd, size=int(np.isfinite(beta).sum()))

    batch = UpdateBatch(epoch=epoch)
    by_id: Dict[int, PersonRecord] = pd.by_id()
    for pid in sorted(departed):
        if pid in by_id and rng.random() < dynamics.deregistration_rate:
            del by_id[pid]
    for person in moved:
        if person.id in by_id and rng.random() < dynamics.register_update_rate:
            fresh = redraw_record(rng, new_world, scenario, person, beta, by_id[person.id])
            by_id[person.id] = fresh
            batch.refreshed[person.id] = true_label(fresh, new_world)
    for person in arrivals:
        if rng.random() < dynamics.register_update_rate and rng.random() >= scenario.missing_rate:
            fresh = redraw_record(rng, new_world, scenario, person, beta)
            by_id[person.id] = fresh
            batch.refreshed[person.id] = true_label(fresh, new_world)

    records = []
    for rid in sorted(by_id):
        record = by_id[rid]
        person = new_world.person(rid)
        prob = scenario.sol_in_scope_prob if person is not None and person.alive_in_scope \
            else scenario.sol_erroneous_prob
        records.append(replace(record, sign_of_life=draw_sign_of_life(rng, scenario.n_sources, prob)))
    new_pd = PopulationDataset(records=records, epoch=epoch, placement_beta=beta)

    for record in new_pd:
        rate = survey.stratum_rates.get(str(record.stratum), survey.coverage_fraction)
        if rate > 0 and rng.random() < rate:
            batch.survey[record.id] = true_label(record, new_world)
            batch.inclusion_probabilities[record.id] = rate

    expected = n_before + events.net_change()
    if new_world.population_size != expected:
        raise ScenarioError(
            f"population accounting broken: {new_world.population_size} != {expected}", "step_world"
        )
    logger.info(f"Epoch {epoch}: {len(events.births)} births, {len(events.deaths)} deaths, "
                f"{len(events.moves)} moves, {len(batch.refreshed)} register updates, "
                f"{len(batch.survey)} surveyed")
    return StepOutcome(world=new_world, pd=new_pd, batch=batch, events=events)
