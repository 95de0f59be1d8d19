"""Communication-efficient reservoir sampling over distributed mini-batch
streams: weighted or uniform, without replacement, with exact, bounded-size,
and centralized-baseline selection variants, plus the SPMD simulator and
oracles the test suite is built on.
"""

from .comm import Counters, PeHandle, ProtocolViolationError, run_spmd
from .engine import BatchReport, Sampler, uniform_skip_scan, weighted_skip_scan
from .reservoir import KeyedItem, Reservoir
from .selection import (
    InfeasibleRankError,
    SelectionResult,
    SortedCandidates,
    gather_select,
    select_exact,
    select_range,
)
from .variates import (
    InvalidThresholdError,
    InvalidWeightError,
    Rng,
    constrained_key,
    exponential_key,
    exponential_keys,
    uniform_constrained_key,
    uniform_skip,
    weighted_skip,
)

__version__ = "0.1.0"

__all__ = [
    "BatchReport",
    "Counters",
    "InfeasibleRankError",
    "InvalidThresholdError",
    "InvalidWeightError",
    "KeyedItem",
    "PeHandle",
    "ProtocolViolationError",
    "Reservoir",
    "Rng",
    "Sampler",
    "SelectionResult",
    "SortedCandidates",
    "constrained_key",
    "exponential_key",
    "exponential_keys",
    "gather_select",
    "run_spmd",
    "select_exact",
    "select_range",
    "uniform_constrained_key",
    "uniform_skip",
    "uniform_skip_scan",
    "weighted_skip",
    "weighted_skip_scan",
    "__version__",
]
