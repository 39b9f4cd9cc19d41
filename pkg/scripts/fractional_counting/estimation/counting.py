"""
Locality counts from fractional counters.

The classifier count assigns each record to its single most likely address.
The fractional count adds up placement probabilities instead, which keeps the
count unbiased whenever the counters are; its prediction variance treats each
person's locality membership as a Bernoulli trial.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..simulation.base import Locality, PersonRecord, WorldTruth, address_lookup
from .base import CountEstimate, CounterError, EstimationError, FractionalCounter, UnknownAddressError

AttributeSource = Union[str, Callable[[PersonRecord], float]]


def _localities_of(record: PersonRecord, lookup: Dict[int, int]) -> np.ndarray:
    try:
        return np.fromiter((lookup[a] for a in record.sol_addresses), dtype=int, count=record.q)
    except KeyError as e:
        raise UnknownAddressError(int(e.args[0]), record.id)


def _check_alignment(records: Sequence[PersonRecord], counters: Sequence[FractionalCounter]) -> None:
    if len(records) != len(counters):
        raise CounterError(f"{len(counters)} counters for {len(records)} records")
    for record, counter in zip(records, counters):
        if counter.mu.size != record.q:
            raise CounterError(f"record {record.id} lists {record.q} addresses but has {counter.mu.size} counters")


def _locality_masses(record: PersonRecord, counter: FractionalCounter,
                     lookup: Dict[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Localities the record touches and the placement mass μᵀδ_i in each."""
    locs = _localities_of(record, lookup)
    touched, inverse = np.unique(locs, return_inverse=True)
    return touched, np.bincount(inverse, weights=counter.mu, minlength=touched.size)


def classify(record: PersonRecord, counter: FractionalCounter, tie_rule: str = "lowest") -> np.ndarray:
    """
    One-hot indicator of the most likely listed address.

    Args:
        record: Record whose addresses the counter refers to
        counter: Fractional counters of the record
        tie_rule: ``lowest`` or ``highest`` listed position wins exact ties

    Raises:
        CounterError: If the counter does not match the record
    """
    if counter.mu.size != record.q:
        raise CounterError(f"record {record.id} lists {record.q} addresses but has {counter.mu.size} counters")
    winners = np.flatnonzero(counter.mu == counter.mu.max())
    if tie_rule == "lowest":
        choice = winners[0]
    elif tie_rule == "highest":
        choice = winners[-1]
    else:
        raise EstimationError(f"Unknown tie rule '{tie_rule}'", "classify")
    indicator = np.zeros(record.q, dtype=int)
    indicator[choice] = 1
    return indicator


def count_classifier(pd: Sequence[PersonRecord], counters: Sequence[FractionalCounter],
                     localities: Sequence[Locality], tie_rule: str = "lowest") -> CountEstimate:
    """Classifier count: each record counted once at its most likely address."""
    records = list(pd)
    _check_alignment(records, counters)
    lookup = address_lookup(localities)
    estimates = np.zeros(len(localities))
    for record, counter in zip(records, counters):
        locs = _localities_of(record, lookup)
        estimates[locs[np.argmax(classify(record, counter, tie_rule))]] += 1
    return CountEstimate("classifier", estimates, np.zeros_like(estimates))


def count_fractional(pd: Sequence[PersonRecord], counters: Sequence[FractionalCounter],
                     localities: Sequence[Locality], cluster: bool = False,
                     subset: Optional[Callable[[PersonRecord], bool]] = None) -> CountEstimate:
    """
    Fractional count N̂_i = Σ_k μ_kᵀδ_{k,i} with prediction variance.

    The default variance Σ_k p(1−p), p = μ_kᵀδ_{k,i}, assumes persons are
    independent. With ``cluster=True`` members of a family are treated as
    perfectly correlated, which bounds the variance from above.

    Args:
        pd: Records
        counters: Counters aligned with the records
        localities: Locality partition of the addresses
        cluster: Use family blocks for the variance
        subset: Optional record filter for a sub-population count
    """
    records = list(pd)
    _check_alignment(records, counters)
    lookup = address_lookup(localities)
    m = len(localities)
    estimates = np.zeros(m)
    variances = np.zeros(m)
    block_sd: Dict[Tuple[int, int], float] = {}

    for record, counter in zip(records, counters):
        if subset is not None and not subset(record):
            continue
        touched, mass = _locality_masses(record, counter, lookup)
        estimates[touched] += mass
        if cluster:
            for i, p in zip(touched, mass):
                key = (record.family_id, int(i))
                block_sd[key] = block_sd.get(key, 0.0) + float(np.sqrt(max(p * (1.0 - p), 0.0)))
        else:
            variances[touched] += np.clip(mass * (1.0 - mass), 0.0, None)

    for (_, i), sd in block_sd.items():
        variances[i] += sd * sd
    return CountEstimate("fractional_cluster" if cluster else "fractional", estimates, variances)


def count_with_theta(pd: Sequence[PersonRecord], counters: Sequence[FractionalCounter],
                     localities: Sequence[Locality], rule: str = "proportional") -> CountEstimate:
    """
    Count with erroneous-record and displacement counters.

    Each record contributes (1−θ)μᵀδ_i to locality i. Its displaced mass
    (1−θ)ξ goes either to the localities in proportion to the placed mass of
    records in the same stratum (``proportional``) or to a separate
    ``unplaced`` total (``unplaced``).
    """
    if rule not in ("proportional", "unplaced"):
        raise EstimationError(f"Unknown displacement rule '{rule}'", "count_with_theta")
    records = list(pd)
    _check_alignment(records, counters)
    lookup = address_lookup(localities)
    m = len(localities)

    placed: List[Tuple[np.ndarray, np.ndarray]] = []
    stratum_mass: Dict[int, np.ndarray] = {}
    for record, counter in zip(records, counters):
        touched, mass = _locality_masses(record, counter, lookup)
        placed.append((touched, mass))
        shares = stratum_mass.setdefault(record.stratum, np.zeros(m))
        shares[touched] += mass

    estimates = np.zeros(m)
    variances = np.zeros(m)
    unplaced = 0.0
    unplaced_var = 0.0
    for record, counter, (touched, mass) in zip(records, counters, placed):
        keep = 1.0 - counter.theta
        contribution = np.zeros(m)
        contribution[touched] = keep * mass
        displaced = keep * counter.xi
        if displaced > 0:
            if rule == "proportional":
                shares = stratum_mass[record.stratum]
                total = shares.sum()
                if total > 0:
                    contribution += displaced * shares / total
                else:
                    unplaced += displaced
                    unplaced_var += displaced * (1.0 - displaced)
            else:
                unplaced += displaced
                unplaced_var += displaced * (1.0 - displaced)
        estimates += contribution
        variances += np.clip(contribution * (1.0 - contribution), 0.0, None)

    return CountEstimate("theta", estimates, variances, unplaced=unplaced, unplaced_variance=unplaced_var)


def social_total(pd: Sequence[PersonRecord], counters: Sequence[FractionalCounter], locality: Locality,
                 attribute_source: AttributeSource = "register_attribute",
                 error_free: bool = False) -> Tuple[float, float]:
    """
    Locality total of a person attribute, t̂_i = Σ_k μ_kᵀδ_{k,i} ε̂_k.

    The variance per record is ε̂²·p(1−p) + p²·v with p = μ_kᵀδ_{k,i} and v
    the register variance of ε̂ (``attribute_variance``); ``error_free``
    sets v = 0, and with ε̂ ≡ 1 the count variance is recovered.

    Args:
        attribute_source: Record attribute name or a callable giving ε̂_k

    Returns:
        (total, variance)

    Raises:
        EstimationError: If an attribute value is missing or not finite
    """
    records = list(pd)
    _check_alignment(records, counters)
    lookup = {a: locality.index for a in locality.addresses}
    total = 0.0
    variance = 0.0
    for record, counter in zip(records, counters):
        inside = np.fromiter((a in lookup for a in record.sol_addresses), dtype=bool, count=record.q)
        p = float(counter.mu[inside].sum())
        if p == 0.0:
            continue
        value = _attribute(record, attribute_source)
        v = 0.0 if error_free else float(record.attribute_variance)
        total += p * value
        variance += value * value * p * (1.0 - p) + p * p * v
    return total, variance


def _attribute(record: PersonRecord, source: AttributeSource) -> float:
    value = source(record) if callable(source) else getattr(record, source, None)
    if value is None or not np.isfinite(value):
        raise EstimationError(f"Record {record.id} has no usable attribute value", "social_total")
    return float(value)


def count_truth(world: WorldTruth) -> CountEstimate:
    """Realised locality counts N_i, for comparison tables."""
    counts = world.true_counts()
    return CountEstimate("truth", counts, np.zeros_like(counts))
