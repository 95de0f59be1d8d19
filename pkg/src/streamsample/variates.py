"""Random variates used by threshold-based reservoir sampling.

Weighted items get keys distributed Exponential(weight); the k items with the
smallest keys form a weighted sample without replacement.  Once a global key
threshold is known, the amount of weight (or the number of items, in the
uniform case) that passes before the next key falls below the threshold can be
drawn directly, and the key of the item that ends the skip is drawn from the
matching truncated distribution.  This module provides those draws plus the
uniform source they consume.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

__all__ = [
    "InvalidWeightError",
    "InvalidThresholdError",
    "Rng",
    "exponential_key",
    "exponential_keys",
    "weighted_skip",
    "constrained_key",
    "uniform_skip",
    "uniform_constrained_key",
]


class InvalidWeightError(ValueError):
    """Raised for weights that are not finite and strictly positive."""


class InvalidThresholdError(ValueError):
    """Raised for thresholds outside the domain of the requested draw."""


class Rng:
    """Deterministic uniform source on (0, 1].

    Draws come from a PCG64 stream keyed by ``(seed, stream)``; the same pair
    always reproduces the same sequence, and distinct stream ids give
    statistically independent streams (one per processing element, by
    convention).  Tests may pass ``source``, a callable returning floats in
    (0, 1], which replaces the generator entirely so that exact draw values
    can be injected.
    """

    __slots__ = ("seed", "stream", "_gen", "_source")

    def __init__(
        self,
        seed: int,
        stream: int | tuple[int, ...] = 0,
        source: Callable[[], float] | None = None,
    ):
        self.seed = seed
        self.stream = stream
        self._source = source
        if source is None:
            key = stream if isinstance(stream, tuple) else (stream,)
            ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        else:
            self._gen = None

    def uniform(self) -> float:
        """One uniform draw on (0, 1]."""
        if self._source is not None:
            return float(self._source())
        # 1 - random() maps the generator's [0, 1) to (0, 1]; a draw of
        # exactly 0 would otherwise produce an infinite key.
        return 1.0 - self._gen.random()

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniform draws on (0, 1], consuming the same stream as ``n``
        scalar calls."""
        if self._source is not None:
            return np.array([float(self._source()) for _ in range(n)], dtype=np.float64)
        out = self._gen.random(n)
        np.subtract(1.0, out, out=out)
        return out


def _check_weight(weight: float) -> None:
    if not (weight > 0.0) or not math.isfinite(weight):
        raise InvalidWeightError(f"weight must be finite and > 0, got {weight!r}")


def exponential_key(rng: Rng, weight: float) -> float:
    """Key for a newly seen item of the given weight: ``-ln(u) / weight``.

    Keys are distributed Exponential(weight), so the minimum over a set of
    items lands on item ``i`` with probability proportional to ``w_i``.
    """
    _check_weight(weight)
    return -math.log(rng.uniform()) / weight


def exponential_keys(rng: Rng, weights: np.ndarray) -> np.ndarray:
    """Vectorised :func:`exponential_key` for one batch of weights.

    Consumes exactly ``len(weights)`` uniforms, in item order, from the same
    stream the scalar form would use.
    """
    u = rng.uniforms(len(weights))
    return -np.log(u) / weights


def weighted_skip(rng: Rng, threshold: float) -> float:
    """Amount of weight that passes before the next key below ``threshold``.

    Distributed Exponential(threshold): ``-ln(u) / threshold``.  The scan
    subtracts item weights from this value and inserts the item on which it
    is exhausted.
    """
    if not (threshold > 0.0):
        raise InvalidThresholdError(f"threshold must be > 0, got {threshold!r}")
    return -math.log(rng.uniform()) / threshold


def constrained_key(rng: Rng, weight: float, threshold: float) -> float:
    """Key for an item known to fall below ``threshold``.

    Draws from Exponential(weight) truncated to [0, threshold): with
    ``x = exp(-threshold * weight)``, the key is ``-ln(x + u*(1-x)) / weight``
    for ``u`` on (0, 1].  ``u = 1`` gives 0.0 and ``u -> 0`` approaches the
    threshold from below, so the result is always strictly smaller than
    ``threshold``.  When ``x`` underflows to 0 the formula degrades to an
    unconstrained draw, which double precision still keeps far below any
    threshold large enough to underflow.
    """
    _check_weight(weight)
    if not (threshold > 0.0):
        raise InvalidThresholdError(f"threshold must be > 0, got {threshold!r}")
    x = math.exp(-threshold * weight)
    u = rng.uniform()
    return -math.log(x + u * (1.0 - x)) / weight


def uniform_skip(rng: Rng, threshold: float) -> int:
    """Number of items skipped before the next key below ``threshold``.

    Unweighted keys are plain uniforms, so each item falls below the
    threshold independently with probability ``threshold``; the gap is
    geometric: ``floor(ln(u) / ln(1 - threshold))``.  A threshold >= 1
    accepts every item (gap 0).
    """
    if not (threshold > 0.0):
        raise InvalidThresholdError(f"threshold must be > 0, got {threshold!r}")
    if threshold >= 1.0:
        return 0
    u = rng.uniform()
    return int(math.log(u) / math.log1p(-threshold))


def uniform_constrained_key(rng: Rng, threshold: float) -> float:
    """Key for an unweighted item known to fall below ``threshold``: uniform
    on (0, threshold]."""
    if not (0.0 < threshold <= 1.0):
        raise InvalidThresholdError(
            f"threshold must be in (0, 1] for uniform keys, got {threshold!r}"
        )
    return rng.uniform() * threshold
