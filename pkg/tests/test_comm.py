"""SPMD simulator tests: fold semantics, determinism under multiplexing,
and protocol-violation detection."""

import random

import pytest

from streamsample.comm import Counters, ProtocolViolationError, run_spmd


def test_broadcast_delivers_root_value():
    def body(h):
        got = h.broadcast(("payload", h.rank) if h.rank == 2 else None, root=2)
        assert got == ("payload", 2)
        return got

    assert run_spmd(4, body) == [("payload", 2)] * 4


def test_all_reduce_ops_worked_examples():
    def body(h):
        r = h.rank
        out = [
            h.all_reduce(r, "sum"),
            h.all_reduce((r, -r, float(r * r)), "vector_sum"),
            h.all_reduce((r % 2, r), "min"),
            h.all_reduce((r % 2, r), "max"),
            h.all_reduce((3 - r, r), "vector_min"),
            h.all_reduce((3 - r, r), "vector_max"),
        ]
        return out

    for got in run_spmd(4, body):
        assert got[0] == 6
        assert got[1] == (6, -6, 14.0)
        # tuples compare lexicographically: min over (flag, rank)
        assert got[2] == (0, 0)
        assert got[3] == (1, 3)
        # vector ops act per component
        assert got[4] == (0, 0)
        assert got[5] == (3, 3)


def test_gather_concatenates_in_rank_order():
    def body(h):
        got = h.gather([h.rank] * (h.rank + 1), root=1)
        return got

    out = run_spmd(3, body)
    assert out[1] == [0, 1, 1, 2, 2, 2]
    assert out[0] == [] and out[2] == []


def test_counters_and_word_accounting():
    def body(h):
        base = h.counters()
        h.broadcast(1.5, root=0)                    # 1 word
        h.all_reduce((1, 2, 3.0), "vector_sum")     # 3 words
        h.gather([(1.0, 2, 3), (4.0, 5, 6)])        # 3 words per tuple, p slots
        return h.counters().delta(base)

    d = run_spmd(2, body)[0]
    assert d == Counters(broadcasts=1, all_reduces=1, gathers=1, words=1 + 3 + 12)


def test_single_pe_runs_inline():
    def body(h):
        assert h.size == 1
        assert h.all_reduce(5, "sum") == 5
        assert h.broadcast("x") == "x"
        assert h.gather(["y"]) == ["y"]
        return h.rank

    assert run_spmd(1, body) == [0]


@pytest.mark.parametrize("threads", [1, 2, 3, 8])
def test_deterministic_across_thread_counts(threads):
    """Random collective scripts give identical results however the PEs are
    multiplexed onto OS threads."""

    def body(h):
        rng = random.Random(h.rank * 1000 + 17)  # same per rank every run
        script = random.Random(99)
        out = []
        for step in range(40):
            op = script.choice(["bcast", "sum", "vmin", "gather"])
            val = rng.randint(0, 100)
            if op == "bcast":
                out.append(h.broadcast(val if h.rank == step % h.size else None,
                                       root=step % h.size))
            elif op == "sum":
                out.append(h.all_reduce(val, "sum"))
            elif op == "vmin":
                out.append(h.all_reduce((val, h.rank), "vector_min"))
            else:
                out.append(tuple(h.gather([val], root=0)))
        return out

    baseline = run_spmd(6, body, threads=1)
    assert run_spmd(6, body, threads=threads) == baseline


def test_collective_order_violation_detected():
    def body(h):
        if h.rank == 0:
            h.broadcast(1, root=0)
        else:
            h.all_reduce(1, "sum")
        return None

    with pytest.raises(ProtocolViolationError):
        run_spmd(2, body, threads=2)


def test_mismatched_reduce_op_detected():
    def body(h):
        h.all_reduce(1, "sum" if h.rank == 0 else "max")

    with pytest.raises(ProtocolViolationError):
        run_spmd(2, body)


def test_vector_width_mismatch_detected():
    def body(h):
        h.all_reduce((1, 2) if h.rank == 0 else (1, 2, 3), "vector_sum")

    with pytest.raises(ProtocolViolationError):
        run_spmd(2, body)


def test_early_exit_peer_detected():
    # one PE returns without joining the collective the rest are waiting in
    def body(h):
        if h.rank == 3:
            return "left"
        h.all_reduce(1, "sum")

    with pytest.raises(ProtocolViolationError, match="finished without joining"):
        run_spmd(4, body, threads=2)


def test_peer_exception_propagates():
    class Boom(RuntimeError):
        pass

    def body(h):
        h.broadcast(0, root=0)
        if h.rank == 1:
            raise Boom("pe 1 failed")
        h.all_reduce(1, "sum")  # peers must not hang

    with pytest.raises(Boom, match="pe 1 failed"):
        run_spmd(3, body, threads=3)


def test_unknown_op_rejected():
    def body(h):
        h.all_reduce(1, "product")

    with pytest.raises(ValueError, match="unknown reduce op"):
        run_spmd(2, body)


def test_more_threads_than_pes_is_fine():
    assert run_spmd(2, lambda h: h.all_reduce(1, "sum"), threads=16) == [2, 2]
