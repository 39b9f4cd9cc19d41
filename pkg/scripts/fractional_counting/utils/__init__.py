"""
Utility modules for the fractional counting simulator.
"""

from .rng import STREAMS, make_rng

__all__ = ["STREAMS", "make_rng"]
