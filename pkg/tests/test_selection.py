"""Distributed rank selection against the merge oracle."""

import numpy as np
import pytest

from streamsample.comm import run_spmd
from streamsample.oracle import kth_of_merged
from streamsample.reservoir import KeyedItem, Reservoir
from streamsample.selection import (
    InfeasibleRankError,
    SortedCandidates,
    gather_select,
    select_exact,
    select_range,
)
from streamsample.variates import Rng


def random_instance(gen, p, max_total=2000, dup_keys=True):
    sizes = gen.integers(0, max_total // p + 1, p)
    locs = []
    nid = 0
    for pe in range(p):
        keys = gen.integers(0, 60, sizes[pe]) / 9.0 if dup_keys else gen.uniform(
            0, 1, sizes[pe]
        )
        part = []
        for x in keys:
            part.append(KeyedItem(float(x), pe, nid))
            nid += 1
        locs.append(sorted(part))
    return locs


def run_select(locs, rank, *, pivots=4, threads=1, lo_hi=None, seed=0):
    p = len(locs)

    def body(h):
        rng = Rng(seed, (h.rank, 77))
        local = SortedCandidates(locs[h.rank])
        if lo_hi is None:
            return select_exact(h, local, rank, rng, pivots=pivots)
        return select_range(h, local, lo_hi[0], lo_hi[1], rng, pivots=pivots)

    return run_spmd(p, body, threads=threads)


def test_worked_example():
    locs = [
        [KeyedItem(0.5, 0, 0), KeyedItem(2.0, 0, 1), KeyedItem(9.0, 0, 2)],
        [KeyedItem(1.0, 1, 3), KeyedItem(2.0, 1, 4)],
        [],
    ]
    for k in range(1, 6):
        want = kth_of_merged(locs, k)
        for res in run_select(locs, k):
            assert res.item == tuple(want)
            assert res.rank == k
            assert res.rounds >= 1


@pytest.mark.parametrize("pivots", [1, 4, 8])
def test_fuzz_against_merge_oracle(pivots):
    gen = np.random.default_rng(pivots * 100 + 5)
    for trial in range(40):
        p = int(gen.integers(1, 9))
        locs = random_instance(gen, p)
        total = sum(len(L) for L in locs)
        if total == 0:
            continue
        rank = int(gen.integers(1, total + 1))
        want = tuple(kth_of_merged(locs, rank))
        for res in run_select(locs, rank, pivots=pivots, seed=trial):
            assert res.item == want, f"trial {trial} rank {rank}"
            assert res.rank == rank


def test_range_rank_lands_in_window():
    gen = np.random.default_rng(12)
    for trial in range(30):
        p = int(gen.integers(1, 6))
        locs = random_instance(gen, p)
        total = sum(len(L) for L in locs)
        if total < 3:
            continue
        lo = int(gen.integers(1, total))
        hi = int(gen.integers(lo + 1, total + 1))
        pooled = sorted(x for L in locs for x in L)
        for res in run_select(locs, None, lo_hi=(lo, hi), seed=trial):
            assert lo <= res.rank <= hi
            assert res.item == tuple(pooled[res.rank - 1])


def test_collapsed_range_equals_exact():
    gen = np.random.default_rng(3)
    locs = random_instance(gen, 4)
    total = sum(len(L) for L in locs)
    k = total // 2 or 1
    exact = run_select(locs, k)[0]
    collapsed = run_select(locs, None, lo_hi=(k, k))[0]
    assert collapsed.item == exact.item and collapsed.rank == k


def test_infeasible_rank_raises():
    locs = [[KeyedItem(1.0, 0, 0)], []]

    def body(h):
        local = SortedCandidates(locs[h.rank])
        try:
            select_exact(h, local, 5, Rng(0, (h.rank,)))
            return None
        except InfeasibleRankError as e:
            return str(e)

    for msg in run_spmd(2, body):
        assert msg is not None and "5" in msg


def test_determinism_across_threads():
    gen = np.random.default_rng(8)
    locs = random_instance(gen, 6)
    total = sum(len(L) for L in locs)
    base = [(r.item, r.rank, r.rounds) for r in run_select(locs, total // 2, threads=1)]
    for t in (2, 3, 6):
        got = [(r.item, r.rank, r.rounds) for r in run_select(locs, total // 2, threads=t)]
        assert got == base


def test_extreme_ranks():
    # rank 1 and rank G fall out of the base case or the first pivot round
    gen = np.random.default_rng(21)
    locs = random_instance(gen, 3, max_total=200)
    total = sum(len(L) for L in locs)
    pooled = sorted(x for L in locs for x in L)
    assert run_select(locs, 1)[0].item == tuple(pooled[0])
    assert run_select(locs, total)[0].item == tuple(pooled[-1])


def test_gather_select_maintains_retained_topk():
    def body(h):
        retained = Reservoir(4) if h.rank == 0 else None
        batch1 = {
            0: [KeyedItem(11.0, 0, 0), KeyedItem(3.0, 0, 1)],
            1: [KeyedItem(7.0, 1, 2), KeyedItem(5.0, 1, 3)],
        }[h.rank]
        thr1, retained = gather_select(h, batch1, 3, retained)
        batch2 = {
            0: [KeyedItem(1.0, 0, 4)],
            1: [KeyedItem(2.0, 1, 5), KeyedItem(6.0, 1, 6)],
        }[h.rank]
        thr2, retained = gather_select(h, batch2, 3, retained)
        if h.rank == 0:
            return thr1, thr2, [it.key for it in retained.items()]
        return thr1, thr2, None

    out = run_spmd(2, body)
    thr1, thr2, kept = out[0]
    assert thr1.key == 7.0  # 3rd smallest of {11,3,7,5}
    assert thr2.key == 3.0  # 3rd smallest of {1,2,3,5,6,7,11}
    assert kept == [1.0, 2.0, 3.0]
    assert out[1][:2] == (thr1, thr2)  # every PE hears the same threshold


def test_gather_select_below_k_returns_none():
    def body(h):
        retained = Reservoir(4) if h.rank == 0 else None
        thr, retained = gather_select(h, [KeyedItem(1.0 + h.rank, h.rank, h.rank)], 5, retained)
        return thr

    assert run_spmd(3, body) == [None, None, None]
