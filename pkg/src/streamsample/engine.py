"""Distributed mini-batch sampling engine.

Each PE feeds its share of every mini-batch into a `Sampler`; together the
PEs maintain a fixed-size (or bounded-size) random sample of everything
seen so far, without replacement, weighted or uniform.  The core idea:
give every item an exponential clock key, keep the k smallest keys
globally, and remember the k-th smallest as the threshold T.  Once T is
known, a batch is not examined item by item: a skip scan jumps directly
from one inserted item to the next, drawing how much weight (or how many
items, in uniform mode) to pass over, so per-batch work is proportional
to the number of new sample candidates rather than the batch size.

At every batch boundary the PEs synchronize: one small reduction for the
counts, then a distributed rank selection to refresh the threshold, after
which each PE discards its local items above it.  Leftover skip state is
always discarded at a batch end, never carried into the next batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .comm import PeHandle
from .reservoir import KeyedItem, Reservoir
from .selection import gather_select, select_exact, select_range
from .variates import (
    InvalidWeightError,
    Rng,
    constrained_key,
    exponential_keys,
    uniform_constrained_key,
    uniform_skip,
    weighted_skip,
)

__all__ = ["Sampler", "BatchReport", "weighted_skip_scan", "uniform_skip_scan"]


def weighted_skip_scan(rng: Rng, weights, threshold: float, *, block=None, start=0):
    """Generate (index, key) for the items a skip scan inserts.

    Walks `weights[start:]` against a fixed threshold: repeatedly draws the
    amount of weight to pass over, subtracts item weights until it is spent,
    and yields the item reached together with its threshold-constrained key.
    The draw left unfinished when the sequence ends is discarded, so an empty
    scan still consumes exactly one draw.

    With `block` set, whole groups of that many items are skipped with a
    single subtraction of the precomputed group sum whenever the remaining
    skip covers it.  Group sums round differently than item-by-item
    subtraction, so scalar and blocked scans can diverge on float weights;
    with integer weights every partial sum is exact and the two insert
    identical sequences.
    """
    m = len(weights)
    if block is None:
        j = start
        while True:
            x = weighted_skip(rng, threshold)
            while j < m and x >= weights[j]:
                x -= weights[j]
                j += 1
            if j >= m:
                return
            yield j, constrained_key(rng, weights[j], threshold)
            j += 1
    else:
        sums = [sum(weights[i : i + block]) for i in range(0, m, block)]
        j = start
        while True:
            x = weighted_skip(rng, threshold)
            while j < m:
                if j % block == 0 and j + block <= m and x >= sums[j // block]:
                    x -= sums[j // block]
                    j += block
                    continue
                if x < weights[j]:
                    break
                x -= weights[j]
                j += 1
            if j >= m:
                return
            yield j, constrained_key(rng, weights[j], threshold)
            j += 1


def uniform_skip_scan(rng: Rng, count: int, threshold: float, *, start=0):
    """Generate (index, key) for a uniform-mode skip scan over `count` items.

    Skip lengths are item counts, so passed-over items are never touched at
    all.  Same draw discipline as the weighted scan: one skip draw per
    insertion plus one final discarded draw.
    """
    pos = start
    while True:
        pos += uniform_skip(rng, threshold)
        if pos >= count:
            return
        yield pos, uniform_constrained_key(rng, threshold)
        pos += 1


# Local-threshold front end (active only while the global threshold is
# unset): batches of at least max(1.5k, k+500) items get a local threshold
# at local rank k, and the tree is pruned back to k whenever it outgrows
# max(1.1k, k+250).
def _activation_bound(k: int) -> int:
    return max(int(1.5 * k), k + 500)


def _refresh_bound(k: int) -> int:
    return max(int(1.1 * k), k + 250)


@dataclass
class BatchReport:
    """Per-PE account of one batch; global fields agree on every PE."""

    batch: int
    insertions: int
    scanned: int
    weight_reads: int
    global_new: int
    global_size: int
    threshold: float | None
    sel_rounds: int
    broadcasts: int
    all_reduces: int
    gathers: int
    words: int
    wall_ns: int


class Sampler:
    """One PE's half of the global sampler; every PE drives its own in
    lockstep through `process_batch`.

    k is an int for the fixed-size modes, or a (low, high) pair with
    `selection="range"`, where the sample floats between the bounds and
    selection runs only when it overflows.  `selection="gather"` is the
    centralized baseline: candidates are shipped to one root PE that keeps
    the k best and announces the threshold.
    """

    def __init__(
        self,
        h: PeHandle,
        k,
        *,
        mode: str = "weighted",
        selection: str = "exact",
        pivots: int = 4,
        block: int | None = None,
        fanout: int = 16,
        rng: Rng | None = None,
        seed: int = 0,
        on_bad_weight: str = "reject",
        record_insertions: bool = False,
        root: int = 0,
    ):
        if mode not in ("weighted", "uniform"):
            raise ValueError(f"unknown mode {mode!r}")
        if selection not in ("exact", "range", "gather"):
            raise ValueError(f"unknown selection variant {selection!r}")
        if on_bad_weight not in ("reject", "skip"):
            raise ValueError(f"on_bad_weight must be 'reject' or 'skip'")
        if selection == "range":
            try:
                k_lo, k_hi = k
            except TypeError:
                raise ValueError("range selection needs k as a (low, high) pair")
            if not 1 <= k_lo < k_hi:
                raise ValueError(f"need 1 <= low < high, got ({k_lo}, {k_hi})")
        else:
            k_lo = k_hi = int(k)
            if k_lo < 1:
                raise ValueError(f"sample size must be >= 1, got {k}")
        if pivots < 1:
            raise ValueError(f"need at least one pivot, got {pivots}")
        self.h = h
        self.mode = mode
        self.selection = selection
        self.k_lo = k_lo
        self.k_hi = k_hi
        self.pivots = pivots
        self.block = block
        self.fanout = fanout
        self.on_bad_weight = on_bad_weight
        self.root = root
        self.rng = rng if rng is not None else Rng(seed, (h.rank,))
        self.tree = Reservoir(fanout)
        self.retained = (
            Reservoir(fanout) if selection == "gather" and h.rank == root else None
        )
        self.threshold: KeyedItem | None = None
        self.seen = 0  # n': valid items seen globally, all batches
        self.global_size = 0
        self.batch_count = 0
        self.insertions = 0  # cumulative this PE, pruned insertions included
        self.selection_calls = 0
        self.record_insertions = record_insertions
        self.last_inserted: list[KeyedItem] = []
        self._last_id: int | None = None

    def process_batch(self, item_ids, weights=None) -> BatchReport:
        """Feed this PE's share of the next mini-batch; collective."""
        t0 = time.perf_counter_ns()
        h = self.h
        ids = list(item_ids)
        if __debug__ and ids:
            prev = self._last_id
            for i in ids:
                if prev is not None and i <= prev:
                    raise ValueError(
                        f"item ids must be strictly increasing per PE; {i} after {prev}"
                    )
                prev = i
            self._last_id = prev

        weight_reads = 0
        wl = None
        if self.mode == "weighted":
            if weights is None:
                raise InvalidWeightError("weighted mode requires item weights")
            w = np.asarray(weights, dtype=float)
            if len(w) != len(ids):
                raise ValueError(f"{len(ids)} ids but {len(w)} weights")
            if w.size:
                ok = np.isfinite(w) & (w > 0.0)
                if not bool(ok.all()):
                    if self.on_bad_weight == "reject":
                        bad = int(np.flatnonzero(~ok)[0])
                        raise InvalidWeightError(
                            f"invalid weight {float(w[bad])!r} for item {ids[bad]}"
                        )
                    keep = np.flatnonzero(ok)
                    ids = [ids[i] for i in keep]
                    w = w[keep]
            weight_reads = len(w)
            wl = w.tolist()
        elif weights is not None and len(weights) != len(ids):
            raise ValueError(f"{len(ids)} ids but {len(weights)} weights")

        scanned = len(ids)
        base = h.counters()

        if self.threshold is None:
            events = self._unset_scan(ids, wl)
        else:
            gen = (
                weighted_skip_scan(self.rng, wl, self.threshold.key, block=self.block)
                if self.mode == "weighted"
                else uniform_skip_scan(self.rng, scanned, self.threshold.key)
            )
            pe = h.rank
            events = [KeyedItem(key, pe, ids[pos]) for pos, key in gen]
            if self.selection != "gather":
                for it in events:
                    self.tree.insert(it)

        rounds = 0
        if self.selection == "gather":
            c, s = h.all_reduce((len(events), scanned), "vector_sum")
            self.seen += s
            fresh = events if self.threshold is not None else self._survivors(events)
            thr, self.retained = gather_select(
                h, fresh, self.k_hi, self.retained, root=self.root
            )
            rounds = 1
            self.selection_calls += 1
            if thr is not None:
                if self.threshold is None:
                    self.tree = Reservoir(self.fanout)  # local scratch done for good
                self.threshold = thr
            self.global_size = min(self.k_hi, self.seen)
        else:
            c, s, m = h.all_reduce(
                (len(events), scanned, self.tree.size), "vector_sum"
            )
            self.seen += s
            self.global_size = m
            if self.selection == "exact":
                want = m >= self.k_lo and (c > 0 or self.threshold is None)
            else:
                want = m > self.k_hi
            if want:
                if self.selection == "exact":
                    res = select_exact(
                        h,
                        self.tree,
                        self.k_lo,
                        self.rng,
                        pivots=self.pivots,
                        global_count=m,
                    )
                else:
                    res = select_range(
                        h,
                        self.tree,
                        self.k_lo,
                        self.k_hi,
                        self.rng,
                        pivots=self.pivots,
                        global_count=m,
                    )
                self.threshold = res.item
                rounds = res.rounds
                self.selection_calls += 1
                self.tree, _ = self.tree.split_at_probe(tuple(res.item))
                self.global_size = res.rank

        self.batch_count += 1
        self.insertions += len(events)
        if self.record_insertions:
            self.last_inserted = events
        delta = h.counters().delta(base)
        return BatchReport(
            batch=self.batch_count - 1,
            insertions=len(events),
            scanned=scanned,
            weight_reads=weight_reads,
            global_new=c,
            global_size=self.global_size,
            threshold=None if self.threshold is None else self.threshold.key,
            sel_rounds=rounds,
            broadcasts=delta.broadcasts,
            all_reduces=delta.all_reduces,
            gathers=delta.gathers,
            words=delta.words,
            wall_ns=time.perf_counter_ns() - t0,
        )

    def _unset_scan(self, ids, wl) -> list[KeyedItem]:
        """Insertion phase while no global threshold exists.

        Everything is a candidate, so items are inserted outright; a long
        batch activates the local-threshold front end, which skip-scans the
        tail against this PE's own k-th smallest key and prunes the tree
        back to k whenever it overflows the refresh bound.  Returns every
        insertion event (pruned ones included).
        """
        pe = self.h.rank
        rng = self.rng
        k = self.k_hi
        m = len(ids)
        events: list[KeyedItem] = []
        j = 0
        if self.tree.size < k:
            take = min(k - self.tree.size, m)
            if take:
                keys = (
                    exponential_keys(rng, np.asarray(wl[:take]))
                    if self.mode == "weighted"
                    else rng.uniforms(take)
                )
                items = [KeyedItem(float(keys[i]), pe, ids[i]) for i in range(take)]
                if self.tree.size == 0:
                    self.tree = Reservoir.from_sorted(sorted(items), self.fanout)
                else:
                    for it in items:
                        self.tree.insert(it)
                events.extend(items)
                j = take
        if j >= m:
            return events

        if m < _activation_bound(k) or self.tree.size < k:
            keys = (
                exponential_keys(rng, np.asarray(wl[j:]))
                if self.mode == "weighted"
                else rng.uniforms(m - j)
            )
            for i in range(m - j):
                it = KeyedItem(float(keys[i]), pe, ids[j + i])
                self.tree.insert(it)
                events.append(it)
            return events

        refresh = _refresh_bound(k)
        if self.tree.size > refresh:
            self.tree, _ = self.tree.split_at_rank(k)
        t_loc = self.tree.select(k).key
        gen = (
            weighted_skip_scan(rng, wl, t_loc, block=self.block, start=j)
            if self.mode == "weighted"
            else uniform_skip_scan(rng, m, t_loc, start=j)
        )
        while True:
            got = next(gen, None)
            if got is None:
                return events
            pos, key = got
            it = KeyedItem(key, pe, ids[pos])
            self.tree.insert(it)
            events.append(it)
            if self.tree.size > refresh:
                self.tree, _ = self.tree.split_at_rank(k)
                t_loc = self.tree.select(k).key
                # The pending skip was already spent reaching the last
                # insertion, so restarting the scan loses no draw.
                gen = (
                    weighted_skip_scan(
                        rng, wl, t_loc, block=self.block, start=pos + 1
                    )
                    if self.mode == "weighted"
                    else uniform_skip_scan(rng, m, t_loc, start=pos + 1)
                )

    def _survivors(self, events: list[KeyedItem]) -> list[KeyedItem]:
        # Of this batch's insertions, the ones the local pruning kept.
        out = []
        for it in events:
            probe = tuple(it)
            if self.tree.rank_of_key(probe + (0,)) - self.tree.rank_of_key(probe) == 1:
                out.append(it)
        return out

    def current_sample(self, root: int = 0) -> list[tuple[int, float]]:
        """Collective: the global sample as (item_id, key) pairs sorted by
        key, delivered at `root` (everyone else gets an empty list)."""
        if self.selection == "gather":
            mine = (
                [tuple(it) for it in self.retained.items()]
                if self.h.rank == self.root
                else []
            )
        else:
            mine = [tuple(it) for it in self.tree.items()]
        got = self.h.gather(mine, root=root)
        if self.h.rank != root:
            return []
        got.sort()
        return [(item_id, key) for key, _pe, item_id in got]
