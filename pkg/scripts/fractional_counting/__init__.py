"""
Fractional counting simulator for register-based population statistics

Simulates a population and its registers, initiates per-record placement,
displacement and erroneous-record counters at a census, rolls them forward
with fresh labels, counts localities with competing methods and audits the
model-based statistics with probability samples.
"""

__version__ = "0.1.0"
__author__ = "Fractional Counting Development Team"

from .config import PipelineConfig, ConfigurationError
from .estimation.base import FractionalCounter, CountEstimate, ParamState
from .estimation.counting import count_classifier, count_fractional, count_with_theta, social_total
from .estimation.initiate import initiate
from .estimation.audit import run_audit
from .rolling.ebp import ebp_update
from .rolling.tree import roll_tree
from .pipeline import CountingPipeline, PipelineStep, run_replicates
from .experiments import experiments

__all__ = [
    # Configuration
    "PipelineConfig",
    "ConfigurationError",

    # Counters and counts
    "FractionalCounter",
    "CountEstimate",
    "ParamState",
    "count_classifier",
    "count_fractional",
    "count_with_theta",
    "social_total",

    # Stages
    "initiate",
    "ebp_update",
    "roll_tree",
    "run_audit",

    # Orchestration
    "CountingPipeline",
    "PipelineStep",
    "run_replicates",
    "experiments",
]
