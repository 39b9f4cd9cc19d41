"""
Deterministic random streams.

Every stochastic component draws from its own generator keyed by
(master seed, replicate id, purpose, epoch), so results do not depend on
the order in which replicates or components run.
"""

import numpy as np

STREAMS = {
    "world": 1,
    "register": 2,
    "census": 3,
    "dynamics": 4,
    "survey": 5,
    "theta": 6,
    "audit": 7,
    "propagate": 8,
    "experiment": 9,
}


def make_rng(seed: int, replicate: int = 0, stream: str = "world", epoch: int = 0) -> np.random.Generator:
    """
    Create the generator for one purpose of one replicate.

    Args:
        seed: Master seed
        replicate: Replicate id
        stream: Purpose name, one of STREAMS
        epoch: Epoch for per-epoch streams

    Returns:
        Independent numpy Generator

    Raises:
        ValueError: If the stream name is unknown or an entropy value is negative
    """
    if stream not in STREAMS:
        raise ValueError(f"Unknown random stream '{stream}'. Available: {sorted(STREAMS)}")
    if seed < 0 or replicate < 0 or epoch < 0:
        raise ValueError("seed, replicate and epoch must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([seed, replicate, STREAMS[stream], epoch]))
