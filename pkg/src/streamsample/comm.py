"""In-process SPMD execution with blocking collectives.

``run_spmd(p, fn)`` runs ``fn`` once per processing element.  PEs are
cooperative tasks multiplexed over ``threads`` OS threads (any ``threads <=
p``), so the same program text scales from one thread to one thread per PE.
Collectives are rendezvous points: every PE of the group must call the same
collective in the same order, and the combined result is folded in rank
order, which makes results bit-identical regardless of the thread count or
scheduling.  Communication volume is tracked in counters (collective counts
and words moved) rather than simulated delays.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

import greenlet

__all__ = [
    "ProtocolViolationError",
    "Counters",
    "Group",
    "PeHandle",
    "run_spmd",
]


class ProtocolViolationError(RuntimeError):
    """A PE broke the collective contract (wrong order, or exited early)."""


@dataclass
class Counters:
    """Cumulative communication cost of a group, in calls and words."""

    broadcasts: int = 0
    all_reduces: int = 0
    gathers: int = 0
    words: int = 0

    def snapshot(self) -> "Counters":
        return Counters(self.broadcasts, self.all_reduces, self.gathers, self.words)

    def delta(self, earlier: "Counters") -> "Counters":
        return Counters(
            self.broadcasts - earlier.broadcasts,
            self.all_reduces - earlier.all_reduces,
            self.gathers - earlier.gathers,
            self.words - earlier.words,
        )


_REDUCE_OPS = ("sum", "vector_sum", "min", "max", "vector_min", "vector_max")


def _word_count(payload) -> int:
    # Hot path: scalars, flat tuples, and sequences of flat tuples cover
    # every payload the samplers send; anything else recurses.
    t = type(payload)
    if t is int or t is float or t is bool:
        return 1
    if isinstance(payload, (tuple, list)):
        n = 0
        for x in payload:
            tx = type(x)
            if tx is int or tx is float or tx is bool:
                n += 1
            elif isinstance(x, (tuple, list)):
                for y in x:
                    ty = type(y)
                    if ty is int or ty is float or ty is bool:
                        n += 1
                    else:
                        n += _word_count(y)
            elif x is not None:
                n += _word_count(x)
        return n
    if payload is None:
        return 0
    return 1


def _fold(op: str, slots: list) -> Any:
    acc = slots[0]
    if op == "sum":
        for v in slots[1:]:
            acc = acc + v
        return acc
    if op == "min":
        for v in slots[1:]:
            if v < acc:
                acc = v
        return acc
    if op == "max":
        for v in slots[1:]:
            if v > acc:
                acc = v
        return acc
    width = len(acc)
    for v in slots[1:]:
        if len(v) != width:
            raise ProtocolViolationError(
                f"vector reduce with mismatched widths {width} and {len(v)}"
            )
    if op == "vector_sum":
        out = list(acc)
        for v in slots[1:]:
            for i, x in enumerate(v):
                out[i] = out[i] + x
        return tuple(out)
    if op == "vector_min":
        out = list(acc)
        for v in slots[1:]:
            for i, x in enumerate(v):
                if x < out[i]:
                    out[i] = x
        return tuple(out)
    out = list(acc)  # vector_max
    for v in slots[1:]:
        for i, x in enumerate(v):
            if x > out[i]:
                out[i] = x
    return tuple(out)


class Group:
    """Shared rendezvous state for one SPMD execution."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"group size must be >= 1, got {size}")
        self.size = size
        self.counters = Counters()
        self._cv = threading.Condition()
        self._slots: list = [None] * size
        self._sig = None
        self._arrived = 0
        self._gen = 0
        self._result = None
        self._active = size
        self._poison: tuple[int, BaseException] | None = None

    def _abort_locked(self, rank: int, exc: BaseException) -> None:
        if self._poison is None:
            self._poison = (rank, exc)
        self._cv.notify_all()

    def _complete_locked(self, kind: str, param) -> Any:
        slots = self._slots
        if kind == "broadcast":
            result = slots[param]
            self.counters.broadcasts += 1
            self.counters.words += _word_count(result)
        elif kind == "all_reduce":
            result = _fold(param, slots)
            self.counters.all_reduces += 1
            self.counters.words += _word_count(result)
        else:
            result = [x for slot in slots for x in slot]
            self.counters.gathers += 1
            self.counters.words += _word_count(result)
        self._result = result
        self._gen += 1
        self._arrived = 0
        self._sig = None
        self._slots = [None] * self.size
        return result


class PeHandle:
    """One PE's endpoint: its rank plus the group's collectives."""

    __slots__ = ("rank", "group", "_seq", "_host")

    def __init__(self, rank: int, group: Group, host=None):
        self.rank = rank
        self.group = group
        self._seq = 0
        self._host = host

    @property
    def size(self) -> int:
        return self.group.size

    def counters(self) -> Counters:
        return self.group.counters.snapshot()

    def broadcast(self, value=None, root: int = 0):
        """Every PE receives the root's value; non-roots pass None."""
        self._check_root(root)
        return self._collective("broadcast", root, value)

    def all_reduce(self, value, op: str):
        """Every PE receives the rank-ordered fold of all contributions.

        Ops: sum / min / max on whole payloads (tuples compare
        lexicographically, so min over (key, pe, id) triples is min-by-key
        with a deterministic tiebreak), and vector_sum / vector_min /
        vector_max applied per position over equal-length sequences.
        """
        if op not in _REDUCE_OPS:
            raise ValueError(f"unknown reduce op {op!r}; expected one of {_REDUCE_OPS}")
        return self._collective("all_reduce", op, value)

    def gather(self, items, root: int = 0) -> list:
        """The root receives all PEs' items concatenated in rank order;
        everyone else receives an empty list."""
        self._check_root(root)
        return self._collective("gather", root, list(items))

    def _check_root(self, root: int) -> None:
        if not 0 <= root < self.group.size:
            raise ValueError(f"root {root} out of range for group size {self.group.size}")

    def _collective(self, kind: str, param, payload):
        g = self.group
        self._seq += 1
        sig = (self._seq, kind, param)
        if g.size == 1:
            with g._cv:
                if g._poison is not None:
                    raise ProtocolViolationError(
                        f"group was aborted: {g._poison[1]}"
                    ) from g._poison[1]
                g._slots[0] = payload
                result = g._complete_locked(kind, param)
            return _deliver(kind, param, result, 0)
        with g._cv:
            if g._poison is not None:
                raise ProtocolViolationError(
                    f"group was aborted: {g._poison[1]}"
                ) from g._poison[1]
            if g._arrived == 0:
                g._sig = sig
            elif g._sig != sig:
                exc = ProtocolViolationError(
                    f"PE {self.rank} called {sig[1:]} (call #{sig[0]}) while peers "
                    f"are in {g._sig[1:]} (call #{g._sig[0]})"
                )
                g._abort_locked(self.rank, exc)
                raise exc
            g._slots[self.rank] = payload
            g._arrived += 1
            if g._arrived == g.size:
                try:
                    result = g._complete_locked(kind, param)
                except BaseException as exc:
                    # Peers are parked waiting on this rendezvous; they must
                    # see the failure, not sleep forever.
                    g._abort_locked(self.rank, exc)
                    raise
                g._cv.notify_all()
                return _deliver(kind, param, result, self.rank)
            if g._arrived == g._active:
                # Every PE still running has deposited; the rest already
                # finished, so this rendezvous can never complete.
                exc = ProtocolViolationError(
                    f"{g.size - g._active} PE(s) finished without joining the "
                    f"collective the remaining {g._active} are waiting in"
                )
                g._abort_locked(self.rank, exc)
                raise exc
            target_gen = g._gen + 1
        # Not the last to arrive: yield to the host scheduler until the
        # rendezvous completes (or the group is poisoned).
        self._host.block(self.rank, target_gen)
        if g._gen < target_gen:
            assert g._poison is not None
            raise ProtocolViolationError(
                f"group was aborted: {g._poison[1]}"
            ) from g._poison[1]
        return _deliver(kind, param, g._result, self.rank)


def _deliver(kind: str, param, result, rank: int):
    if kind == "gather" and rank != param:
        return []
    return result


class _Host:
    """Cooperative scheduler for the PEs hosted on one OS thread."""

    def __init__(self, group: Group):
        self.group = group
        self.pending: list[tuple[int, Callable]] = []
        self.ready: deque = deque()
        self.blocked: dict[int, tuple[greenlet.greenlet, int]] = {}
        self.remaining = 0
        self.main: greenlet.greenlet | None = None

    def block(self, rank: int, target_gen: int) -> None:
        self.blocked[rank] = (greenlet.getcurrent(), target_gen)
        self.main.switch()

    def _promote(self) -> None:
        g = self.group
        if not self.blocked:
            return
        poisoned = g._poison is not None
        gen = g._gen
        for rank in sorted(self.blocked):
            glet, tgen = self.blocked[rank]
            if poisoned or tgen <= gen:
                del self.blocked[rank]
                self.ready.append(glet)

    def run(self) -> None:
        g = self.group
        self.main = greenlet.getcurrent()
        # Greenlets must be created on their own host thread.
        for rank, body in sorted(self.pending):
            self.ready.append(greenlet.greenlet(body))
        self.remaining = len(self.pending)
        while self.remaining > 0:
            self._promote()
            if self.ready:
                self.ready.popleft().switch()
                continue
            with g._cv:
                while (
                    self.remaining > 0
                    and g._poison is None
                    and not any(tg <= g._gen for _, tg in self.blocked.values())
                ):
                    g._cv.wait()


def run_spmd(size: int, fn: Callable[[PeHandle], Any], *, threads: int = 1) -> list:
    """Run ``fn(handle)`` on every PE of a fresh group; returns per-rank
    results in rank order.

    ``threads`` caps the number of OS threads used; logical PEs beyond that
    are multiplexed cooperatively, with identical results for any value.
    """
    group = Group(size)
    if size == 1:
        return [fn(PeHandle(0, group))]
    threads = max(1, min(threads, size))
    hosts = [_Host(group) for _ in range(threads)]
    results: list = [None] * size

    def make_body(rank: int, handle: PeHandle, host: _Host):
        def body():
            try:
                results[rank] = fn(handle)
            except ProtocolViolationError:
                pass  # recorded as group poison by whoever detected it
            except BaseException as exc:
                with group._cv:
                    group._abort_locked(rank, exc)
            finally:
                host.remaining -= 1
                with group._cv:
                    group._active -= 1
                    if 0 < group._arrived == group._active:
                        group._abort_locked(
                            rank,
                            ProtocolViolationError(
                                f"PE {rank} finished while {group._arrived} peers "
                                "wait in a collective"
                            ),
                        )
                    group._cv.notify_all()

        return body

    for rank in range(size):
        host = hosts[rank % threads]
        handle = PeHandle(rank, group, host)
        host.pending.append((rank, make_body(rank, handle, host)))

    workers = [
        threading.Thread(target=host.run, name=f"spmd-host-{i}", daemon=True)
        for i, host in enumerate(hosts[1:], start=1)
    ]
    for w in workers:
        w.start()
    hosts[0].run()
    for w in workers:
        w.join()
    if group._poison is not None:
        raise group._poison[1]
    return results
