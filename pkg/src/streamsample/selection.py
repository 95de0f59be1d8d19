"""Distributed rank selection over per-PE sorted candidate sets.

Every PE holds a sorted set of keyed candidates (a reservoir tree or a
plain sorted list).  ``select_range`` finds an item whose global rank lies
in ``[k_lo, k_hi]`` using a constant number of collectives per round:
pivots are random candidates drawn via a geometric skip aimed near the
target rank, segment sizes come from one counting reduction, and the
bracket shrinks until either a pivot's rank is certified inside the range
or few enough candidates remain to gather outright.  ``select_exact`` is
the collapsed range.  Candidates never move between PEs except in the
final gather, so the traffic per call is O(pivots * rounds) words plus
one small gather.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass

from .comm import PeHandle
from .reservoir import KeyedItem
from .variates import Rng

__all__ = [
    "InfeasibleRankError",
    "SelectionResult",
    "SortedCandidates",
    "select_range",
    "select_exact",
    "gather_select",
]


class InfeasibleRankError(ValueError):
    """No candidate can have a global rank inside the requested range."""


@dataclass
class SelectionResult:
    item: KeyedItem
    rank: int  # certified global rank of item, 1-based
    rounds: int
    trace: list | None = None


class SortedCandidates:
    """Sorted-list candidate set exposing the same probes a reservoir does."""

    __slots__ = ("_items",)

    def __init__(self, items):
        self._items = sorted(items)

    @property
    def size(self) -> int:
        return len(self._items)

    def select(self, rank: int) -> KeyedItem:
        if not 1 <= rank <= len(self._items):
            raise IndexError(f"rank {rank} out of range 1..{len(self._items)}")
        return self._items[rank - 1]

    def slice(self, lo: int, hi: int) -> list:
        if not 0 <= lo <= hi <= len(self._items):
            raise IndexError(f"window [{lo}, {hi}) out of range")
        return self._items[lo:hi]

    def rank_of_key(self, probe) -> int:
        if not isinstance(probe, tuple):
            probe = (probe,)
        return bisect_left(self._items, probe)


_FAIL = (1, 0.0, 0, 0)


def _geom_failures(rng: Rng, q: float) -> int:
    # Failures before the first success of a Bernoulli(q) sequence.
    if q >= 1.0:
        return 0
    return int(math.log(rng.uniform()) / math.log1p(-q))


def _count_le(local, item: tuple, lo: int, hi: int) -> int:
    # Candidates <= item inside the local window [lo, hi).
    n = local.rank_of_key(item + (0,)) - lo
    return min(max(n, 0), hi - lo)


def _count_lt(local, item: tuple, lo: int, hi: int) -> int:
    n = local.rank_of_key(item) - lo
    return min(max(n, 0), hi - lo)


def _encode(local, lo: int, hi: int, idx: int, top: bool):
    if not lo <= idx < hi:
        return _FAIL
    key, pe, item_id = local.select(idx + 1)
    if top:
        return (0, -key, -pe, -item_id)
    return (0, key, pe, item_id)


def _decode(slot, top: bool) -> tuple:
    if top:
        return (-slot[1], -slot[2], -slot[3])
    return (slot[1], slot[2], slot[3])


def select_exact(
    h: PeHandle,
    local,
    k: int,
    rng: Rng,
    *,
    pivots: int = 4,
    base_factor: int = 64,
    global_count: int | None = None,
    trace: bool = False,
) -> SelectionResult:
    """The item of exact global rank k among all PEs' candidates."""
    return select_range(
        h,
        local,
        k,
        k,
        rng,
        pivots=pivots,
        base_factor=base_factor,
        global_count=global_count,
        trace=trace,
    )


def select_range(
    h: PeHandle,
    local,
    k_lo: int,
    k_hi: int,
    rng: Rng,
    *,
    pivots: int = 4,
    base_factor: int = 64,
    global_count: int | None = None,
    trace: bool = False,
) -> SelectionResult:
    """An item whose global rank is certified to lie in [k_lo, k_hi].

    All PEs call this together and receive the same result.  ``rng`` is the
    calling PE's private stream; control flow depends only on globally
    agreed quantities, so runs are reproducible for any thread count.
    ``global_count`` skips the initial size reduction when the caller
    already knows the total.
    """
    if k_lo < 1 or k_hi < k_lo:
        raise InfeasibleRankError(f"bad rank range [{k_lo}, {k_hi}]")
    if pivots < 1:
        raise ValueError(f"need at least one pivot, got {pivots}")
    G = global_count if global_count is not None else h.all_reduce(local.size, "sum")
    if k_lo > G:
        raise InfeasibleRankError(f"rank {k_lo} requested but only {G} candidates")

    base = base_factor * pivots
    lo, hi = 0, local.size
    below = 0
    rounds = 0
    steps: list | None = [] if trace else None

    while True:
        rounds += 1
        tl = k_lo - below
        th = min(k_hi - below, G)
        if steps is not None:
            steps.append((G, below, tl, th))

        if G <= base:
            mine = [tuple(it) for it in local.slice(lo, hi)]
            pool = h.gather(mine, root=0)
            chosen = None
            if h.rank == 0:
                pool.sort()
                chosen = pool[tl - 1]
            chosen = h.broadcast(chosen, root=0)
            return SelectionResult(KeyedItem(*chosen), below + tl, rounds, steps)

        # Draw pivots as random candidates, aimed near the target rank: a
        # Bernoulli(q) mark per candidate, keeping the first marked one in
        # key order.  The first success sits at a geometric rank with mean
        # 1/q, so q = 1/target puts pivots right around the target.  Past
        # the halfway point the same trick runs from the top downward,
        # which also keeps the no-success probability at most e^-2.
        t_mid = (tl + th) // 2
        top = t_mid > G // 2
        q = 1.0 / (G - t_mid + 1) if top else 1.0 / t_mid

        found: set[tuple] = set()
        want = pivots
        for _attempt in range(3):
            slots = []
            for _ in range(want):
                if hi > lo:
                    fails = _geom_failures(rng, q)
                    idx = (hi - 1 - fails) if top else (lo + fails)
                    slots.append(_encode(local, lo, hi, idx, top))
                else:
                    slots.append(_FAIL)
            combined = h.all_reduce(tuple(slots), "vector_min")
            want = 0
            for slot in combined:
                if slot[0] == 0:
                    found.add(_decode(slot, top))
                else:
                    want += 1
            if want == 0:
                break
        if not found:
            # Vanishingly rare: every attempt failed everywhere.  Fall back
            # to the window extreme, which still peels off one candidate.
            if hi > lo:
                mine = _encode(local, lo, hi, hi - 1 if top else lo, top)
            else:
                mine = _FAIL
            best = h.all_reduce(mine, "min")
            found.add(_decode(best, top))

        piv = sorted(found)
        local_le = tuple(_count_le(local, p, lo, hi) for p in piv)
        C = h.all_reduce(local_le, "vector_sum")

        hit = None
        for j, c in enumerate(C):
            if tl <= c <= th:
                hit = j
                break
        if hit is not None:
            return SelectionResult(KeyedItem(*piv[hit]), below + C[hit], rounds, steps)

        # No pivot certified, so the whole target range sits strictly
        # inside one segment; shrink the bracket to it.
        j_lo = -1
        for j in range(len(piv) - 1, -1, -1):
            if C[j] < tl:
                j_lo = j
                break
        j_hi = len(piv)
        for j in range(len(piv)):
            if C[j] > th:
                j_hi = j
                break
        new_G_hi = G
        if j_hi < len(piv):
            # The target ranks are strictly below this pivot.
            hi = lo + _count_lt(local, piv[j_hi], lo, hi)
            new_G_hi = C[j_hi] - 1
        new_G_lo = 0
        if j_lo >= 0:
            lo = lo + local_le[j_lo]
            new_G_lo = C[j_lo]
            below += C[j_lo]
        G = new_G_hi - new_G_lo


def gather_select(h: PeHandle, fresh, k: int, retained, *, root: int = 0):
    """Centralized alternative: pool each PE's new candidates at the root,
    keep only the k best there, and broadcast the k-th best as the new
    threshold item.

    ``retained`` is the root's tree of previously kept candidates (ignored
    elsewhere); the possibly rebuilt tree is returned along with the
    threshold, which is None while fewer than k candidates exist.
    """
    got = h.gather([tuple(it) for it in fresh], root=root)
    enc = None
    if h.rank == root:
        for t in got:
            retained.insert(KeyedItem(*t))
        if retained.size > k:
            retained, _ = retained.split_at_rank(k)
        if retained.size >= k:
            enc = tuple(retained.select(k))
    enc = h.broadcast(enc, root=root)
    thr = KeyedItem(*enc) if enc is not None else None
    return thr, retained
