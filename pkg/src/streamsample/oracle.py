"""Ground-truth generators and statistical checks for the sampler tests.

Everything here is deliberately independent of the engine's machinery:
the exact table enumerates sequential draws with rational arithmetic, the
reference sampler is the textbook one-shot exponential-clocks method, and
the selection oracle just merges and indexes.  Test code compares the
streaming engine against these.
"""

from __future__ import annotations

import heapq
from fractions import Fraction

import numpy as np
from scipy.stats import chi2

from .variates import Rng, exponential_keys

__all__ = [
    "exact_inclusion",
    "reference_sample",
    "inclusion_counts",
    "kth_of_merged",
    "chi_squared_gof",
    "chi_squared_two_sample",
    "ks_statistic",
]

_MAX_EXACT_N = 12


def exact_inclusion(weights, k: int) -> list[Fraction]:
    """Exact per-item inclusion probabilities for weighted sampling without
    replacement, as rationals.

    A sample is drawn item by item, each draw picking item i from the
    remainder with probability w_i over the remaining total.  The
    enumeration walks subsets in one dynamic-programming sweep: f[S] is the
    probability that the first |S| draws produce exactly the set S, built up
    by f[S + i] += f[S] * w_i / (W - W_S).  The inclusion probability of
    item i is the mass of all k-sets containing it.  Exponential clocks
    draw from the same distribution, so this doubles as their oracle.

    Exhaustive over 2^n subsets; n is capped at 12 to keep that honest.
    """
    w = [Fraction(x) for x in weights]
    n = len(w)
    if n > _MAX_EXACT_N:
        raise ValueError(f"exact enumeration capped at n={_MAX_EXACT_N}, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= {n}, got {k}")
    if any(x <= 0 for x in w):
        raise ValueError("weights must be positive")
    total = sum(w)
    # f[S] keyed by bitmask; subset weight tracked alongside to avoid
    # recomputing popcount sums.
    f = {0: Fraction(1)}
    wsum = {0: Fraction(0)}
    for _ in range(k):
        g: dict[int, Fraction] = {}
        for s, prob in f.items():
            rem = total - wsum[s]
            for i in range(n):
                bit = 1 << i
                if s & bit:
                    continue
                t = s | bit
                g[t] = g.get(t, Fraction(0)) + prob * w[i] / rem
                if t not in wsum:
                    wsum[t] = wsum[s] + w[i]
        f = g
    incl = [Fraction(0)] * n
    for s, prob in f.items():
        for i in range(n):
            if s & (1 << i):
                incl[i] += prob
    return incl


def reference_sample(rng: Rng, weights, k: int) -> np.ndarray:
    """One-shot sample: exponential key per item, indices of the k smallest.

    Returned indices are sorted.  This is the distributional ground truth
    every streaming variant must match.
    """
    w = np.asarray(weights, dtype=float)
    if not 0 <= k <= len(w):
        raise ValueError(f"need 0 <= k <= {len(w)}, got {k}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    keys = exponential_keys(rng, w)
    idx = np.argpartition(keys, k - 1)[:k]
    idx.sort()
    return idx


def inclusion_counts(rng: Rng, weights, k: int, runs: int, chunk: int = 256) -> np.ndarray:
    """How often each item lands in a one-shot sample over `runs` repeats.

    Vectorized across runs in chunks: a (chunk, n) key matrix per step,
    partition along rows, bincount the winning indices.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    counts = np.zeros(n, dtype=np.int64)
    done = 0
    while done < runs:
        m = min(chunk, runs - done)
        u = rng.uniforms(m * n).reshape(m, n)
        keys = -np.log(u) / w
        idx = np.argpartition(keys, k - 1, axis=1)[:, :k]
        counts += np.bincount(idx.ravel(), minlength=n)
        done += m
    return counts


def kth_of_merged(parts, k: int):
    """The k-th smallest element of several sequences merged (1-based).

    Ties resolve by the elements' own ordering, which for keyed items means
    the (key, pe, id) tuple order the engine uses everywhere.
    """
    pooled = [x for part in parts for x in part]
    if not 1 <= k <= len(pooled):
        raise ValueError(f"rank {k} out of range 1..{len(pooled)}")
    return heapq.nsmallest(k, pooled)[-1]


def chi_squared_gof(observed, probs, trials: int) -> float:
    """P-value for observed per-item inclusion counts against expected
    inclusion probabilities over `trials` independent runs.

    Each count is Binomial(trials, p_i), so the statistic sums
    (O - E)^2 / (trials * p * (1-p)) over items; items with p ∈ {0,1} carry
    no information and are dropped.  One degree of freedom is spent on the
    fixed sample size (counts sum to k * trials).  Sampling without
    replacement correlates the counts negatively, which only makes the test
    conservative.
    """
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(probs, dtype=float)
    if obs.shape != p.shape:
        raise ValueError(f"shape mismatch: {obs.shape} vs {p.shape}")
    live = (p > 0.0) & (p < 1.0)
    if not live.any():
        return 1.0
    var = trials * p[live] * (1.0 - p[live])
    stat = float(np.sum((obs[live] - trials * p[live]) ** 2 / var))
    dof = max(int(live.sum()) - 1, 1)
    return float(chi2.sf(stat, dof))


def chi_squared_two_sample(counts_a, counts_b, trials: int) -> float:
    """P-value for two inclusion-count vectors, each over `trials` runs,
    coming from the same per-item inclusion probabilities.

    Pooled estimate per item: m = (a+b)/2 expected hits, variance of the
    difference 2 * m * (1 - m/trials).  Degenerate items (pooled rate 0 or
    1, where both samplers agree exactly) drop out.
    """
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    m = (a + b) / 2.0
    live = (m > 0.0) & (m < trials)
    if not live.any():
        return 1.0
    var = 2.0 * m[live] * (1.0 - m[live] / trials)
    stat = float(np.sum((a[live] - b[live]) ** 2 / var))
    dof = max(int(live.sum()) - 1, 1)
    return float(chi2.sf(stat, dof))


def ks_statistic(samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and `cdf`."""
    xs = np.sort(np.asarray(samples, dtype=float))
    n = len(xs)
    if n == 0:
        raise ValueError("no samples")
    f = np.asarray([cdf(x) for x in xs], dtype=float)
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - f), np.max(f - (grid - 1.0 / n))))
