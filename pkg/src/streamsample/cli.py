"""Benchmark driver: generate a workload, run the distributed sampler on
it, and emit per-batch metrics as CSV.

The `run` command executes one configuration and writes one CSV row per
(batch, PE) plus a per-batch global summary row with pe = -1.  Every
column except the wall-clock one is byte-stable for a fixed config and
seed, regardless of `--threads`.  The `validate` command runs a small
oracle-backed check battery and reports pass/fail per check.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 validation
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
from dataclasses import dataclass

import numpy as np

from .comm import run_spmd
from .engine import Sampler
from .reservoir import KeyedItem
from .variates import Rng

CSV_COLUMNS = [
    "run_id", "batch", "pe", "insertions", "scanned", "sel_rounds",
    "threshold", "sample_size", "bcasts", "allreduces", "gathers",
    "words", "wall_ns",
]

_WEIGHT_FLOOR = 1e-3  # keeps normal draws positive; uniform draws clip harmlessly


@dataclass
class RunConfig:
    p: int
    k: int | None          # fixed-size modes
    k_lo: int | None       # range mode
    k_hi: int | None
    b: int                 # per-PE items per batch
    batches: int
    mode: str              # weighted | uniform
    selection: str         # exact | range | gather
    pivots: int
    dist: str              # uniform | normal
    seed: int
    threads: int
    output: str

    @property
    def select_token(self) -> str:
        if self.selection == "exact":
            return f"exact-{self.pivots}"
        return self.selection

    @property
    def run_id(self) -> str:
        # Threads and output path are excluded on purpose: neither may
        # change what gets computed.
        key = (
            f"p={self.p};k={self.k};k_lo={self.k_lo};k_hi={self.k_hi};"
            f"b={self.b};batches={self.batches};mode={self.mode};"
            f"select={self.select_token};dist={self.dist};seed={self.seed}"
        )
        return hashlib.sha1(key.encode()).hexdigest()[:12]


def _parse_select(text: str, parser: argparse.ArgumentParser) -> tuple[str, int | None]:
    if text in ("range", "gather"):
        return text, None
    if text == "exact":
        return "exact", None
    if text.startswith("exact-"):
        try:
            d = int(text[6:])
        except ValueError:
            d = 0
        if d >= 1:
            return "exact", d
    parser.error(f"--select must be exact[-N], range, or gather, not {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamsample",
        description="Distributed weighted reservoir sampling benchmark driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one benchmark configuration")
    run.add_argument("--p", type=int, default=1, help="number of simulated PEs")
    run.add_argument("--k", type=int, help="sample size (exact/gather selection)")
    run.add_argument("--k-lo", type=int, help="lower sample bound (range selection)")
    run.add_argument("--k-hi", type=int, help="upper sample bound (range selection)")
    run.add_argument("--b", type=int, default=1000, help="items per PE per batch")
    run.add_argument("--batches", type=int, default=10)
    run.add_argument("--mode", choices=("weighted", "uniform"), default="weighted")
    run.add_argument(
        "--select", default="exact-1",
        help="selection variant: exact-N (N pivots), range, or gather",
    )
    run.add_argument(
        "--pivots", type=int,
        help="pivot count for range selection (exact-N encodes its own)",
    )
    run.add_argument(
        "--dist", choices=("uniform", "normal"), default="uniform",
        help="weights: uniform over 0..100, or normal with the mean rising "
             "by batch number and PE rank",
    )
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--threads", type=int, default=1,
                     help="OS threads hosting the PEs (never affects results)")
    run.add_argument("--output", default="-", help="CSV path, - for stdout")

    val = sub.add_parser("validate", help="run the oracle-backed check battery")
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--threads", type=int, default=1)
    val.add_argument(
        "--corrupt-threshold", action="store_true",
        help="deliberately corrupt the threshold mid-run; the battery must "
             "catch it (negative test of the battery itself)",
    )
    return parser


def _config_from(args, parser) -> RunConfig:
    selection, d = _parse_select(args.select, parser)
    if selection == "range":
        if args.k is not None or args.k_lo is None or args.k_hi is None:
            parser.error("range selection needs --k-lo and --k-hi (and no --k)")
        if not 1 <= args.k_lo < args.k_hi:
            parser.error(f"need 1 <= k-lo < k-hi, got {args.k_lo}, {args.k_hi}")
        pivots = args.pivots if args.pivots is not None else 4
    else:
        if args.k is None or args.k_lo is not None or args.k_hi is not None:
            parser.error(f"{selection} selection needs --k (and no --k-lo/--k-hi)")
        if args.k < 1:
            parser.error(f"--k must be >= 1, got {args.k}")
        pivots = d if d is not None else 1
        if args.pivots is not None and d is not None and args.pivots != d:
            parser.error(f"--pivots {args.pivots} contradicts --select exact-{d}")
        if args.pivots is not None:
            pivots = args.pivots
    if pivots < 1:
        parser.error(f"pivot count must be >= 1, got {pivots}")
    for name in ("p", "b", "batches"):
        if getattr(args, name) < 1:
            parser.error(f"--{name} must be >= 1")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    return RunConfig(
        p=args.p, k=args.k, k_lo=args.k_lo, k_hi=args.k_hi, b=args.b,
        batches=args.batches, mode=args.mode, selection=selection,
        pivots=pivots, dist=args.dist, seed=args.seed, threads=args.threads,
        output=args.output,
    )


def _batch_weights(gen: np.random.Generator, dist: str, batch: int, rank: int, b: int):
    if dist == "uniform":
        w = gen.uniform(0.0, 100.0, b)
    else:
        w = gen.normal(50.0 + 2.0 * batch + 0.5 * rank, 10.0, b)
    return np.maximum(w, _WEIGHT_FLOOR)


def _run(cfg: RunConfig) -> int:
    k = (cfg.k_lo, cfg.k_hi) if cfg.selection == "range" else cfg.k

    def body(h):
        # Weight draws use a stream disjoint from the sampler's key stream.
        gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(101, h.rank)))
        )
        sampler = Sampler(
            h, k, mode=cfg.mode, selection=cfg.selection, pivots=cfg.pivots,
            seed=cfg.seed,
        )
        reports = []
        for batch in range(cfg.batches):
            lo = batch * cfg.p * cfg.b + h.rank * cfg.b
            ids = range(lo, lo + cfg.b)
            if cfg.mode == "weighted":
                w = _batch_weights(gen, cfg.dist, batch, h.rank, cfg.b)
                reports.append(sampler.process_batch(ids, w))
            else:
                reports.append(sampler.process_batch(ids))
        return reports

    t0 = time.perf_counter()
    per_rank = run_spmd(cfg.p, body, threads=cfg.threads)
    elapsed = time.perf_counter() - t0

    rows = []
    for batch in range(cfg.batches):
        for rank in range(cfg.p):
            r = per_rank[rank][batch]
            rows.append([
                cfg.run_id, batch, rank, r.insertions, r.scanned, r.sel_rounds,
                "" if r.threshold is None else repr(r.threshold),
                r.global_size, r.broadcasts, r.all_reduces, r.gathers,
                r.words, r.wall_ns,
            ])
        r0 = per_rank[0][batch]
        rows.append([
            cfg.run_id, batch, -1, r0.global_new,
            sum(per_rank[i][batch].scanned for i in range(cfg.p)),
            r0.sel_rounds,
            "" if r0.threshold is None else repr(r0.threshold),
            r0.global_size, r0.broadcasts, r0.all_reduces, r0.gathers,
            r0.words, max(per_rank[i][batch].wall_ns for i in range(cfg.p)),
        ])

    if cfg.output == "-":
        _write_csv(sys.stdout, rows)
    else:
        with open(cfg.output, "w", newline="") as fh:
            _write_csv(fh, rows)

    totals = [sum(r.insertions for r in reports) for reports in per_rank]
    scanned = sum(sum(r.scanned for r in reports) for reports in per_rank)
    sel_batches = sum(1 for r in per_rank[0] if r.sel_rounds > 0)
    rounds = sum(r.sel_rounds for r in per_rank[0])
    print(
        f"run {cfg.run_id}: p={cfg.p} k={k} b={cfg.b} batches={cfg.batches} "
        f"mode={cfg.mode} select={cfg.select_token} dist={cfg.dist} seed={cfg.seed}",
        file=sys.stderr,
    )
    print(
        f"  insertions per PE: mean {np.mean(totals):.1f}, max {max(totals)}; "
        f"selection rounds: mean "
        f"{rounds / sel_batches if sel_batches else 0.0:.2f} "
        f"over {sel_batches} selecting batches; "
        f"throughput {scanned / elapsed:,.0f} items/s",
        file=sys.stderr,
    )
    return 0


def _write_csv(fh, rows) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)


# --- validate battery ---------------------------------------------------

def _check_exact_inclusion(seed: int, threads: int, corrupt: bool):
    from .oracle import chi_squared_gof, exact_inclusion

    runs = 30000
    weights = (1.0, 1.0, 2.0)
    expect = [float(x) for x in exact_inclusion(weights, 2)]

    def body(h):
        rng = Rng(seed, (h.rank,))
        counts = [0, 0, 0]
        for _ in range(runs):
            s = Sampler(h, 2, rng=rng)
            s.process_batch((0, 1, 2), weights)
            for _, _, item in s.tree.items():
                counts[item] += 1
        return counts

    counts = run_spmd(1, body)[0]
    freqs = [c / runs for c in counts]
    worst = max(
        abs(f - e) / (e * (1 - e) / runs) ** 0.5 for f, e in zip(freqs, expect)
    )
    p = chi_squared_gof(counts, expect, runs)
    ok = worst <= 3.0 and p > 0.001
    return ok, f"max |z|={worst:.2f}, chi2 p={p:.4f}"


def _check_invariants(seed: int, threads: int, corrupt: bool):
    from .oracle import kth_of_merged

    p, k, b, batches = 4, 100, 125, 12
    bad = []

    def body(h):
        gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(7, h.rank)))
        )
        s = Sampler(h, k, seed=seed, record_insertions=True)
        merged: list = []
        for batch in range(batches):
            lo = batch * p * b + h.rank * b
            rep = s.process_batch(range(lo, lo + b), gen.uniform(0.5, 3.0, b))
            if corrupt and batch == 5:
                s.threshold = KeyedItem(s.threshold.key * 0.5, -1, -1)
            merged.extend(h.broadcast(h.gather(s.last_inserted)))
            local_max = s.tree.max().key if s.tree.size else 0.0
            worst_key = h.all_reduce(local_max, "max")
            thr = s.threshold.key if s.threshold is not None else None
            if h.rank == 0:
                n_seen = s.seen
                if n_seen >= k and rep.global_size != k:
                    bad.append(f"batch {batch}: size {rep.global_size} != {k}")
                if thr is not None and worst_key > thr:
                    bad.append(f"batch {batch}: stored key {worst_key} > threshold {thr}")
                if thr is not None and n_seen >= k:
                    want = kth_of_merged([merged], k).key
                    if want != thr:
                        bad.append(f"batch {batch}: threshold {thr} != oracle {want}")
        return None

    prev: list[float] = []

    def thr_track(h):  # separate clean run for monotonicity
        s = Sampler(h, k, seed=seed)
        gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(7, h.rank)))
        )
        for batch in range(batches):
            lo = batch * p * b + h.rank * b
            rep = s.process_batch(range(lo, lo + b), gen.uniform(0.5, 3.0, b))
            if h.rank == 0 and rep.threshold is not None:
                prev.append(rep.threshold)
        return None

    run_spmd(p, body, threads=threads)
    run_spmd(p, thr_track, threads=threads)
    if any(prev[i + 1] > prev[i] for i in range(len(prev) - 1)):
        bad.append("threshold increased")
    return not bad, bad[0] if bad else f"{batches} batches clean at p={p}"


def _check_selection(seed: int, threads: int, corrupt: bool):
    from .oracle import kth_of_merged
    from .selection import SortedCandidates, select_exact

    gen = np.random.default_rng(seed + 3)
    for trial in range(30):
        p = int(gen.integers(1, 9))
        sizes = gen.integers(0, 400, p)
        locs = [
            sorted(
                KeyedItem(float(x), pe, i)
                for i, x in enumerate(gen.integers(0, 50, sizes[pe]) / 7.0)
            )
            for pe in range(p)
        ]
        total = int(sizes.sum())
        if total == 0:
            continue
        rank = int(gen.integers(1, total + 1))
        want = kth_of_merged(locs, rank)

        def body(h):
            rng = Rng(seed, (41, h.rank))
            res = select_exact(h, SortedCandidates(locs[h.rank]), rank, rng)
            return res.item

        got = run_spmd(p, body, threads=threads)
        if any(tuple(g) != tuple(want) for g in got):
            return False, f"trial {trial}: got {got[0]}, oracle {tuple(want)}"
    return True, "30 random instances match the merge oracle"


def _check_uniform(seed: int, threads: int, corrupt: bool):
    from .oracle import chi_squared_gof

    runs, n, k = 30000, 6, 3

    def body(h):
        rng = Rng(seed + 1, (h.rank,))
        counts = [0] * n
        for _ in range(runs):
            s = Sampler(h, k, mode="uniform", rng=rng)
            s.process_batch(range(n))
            for _, _, item in s.tree.items():
                counts[item] += 1
        return counts

    counts = run_spmd(1, body)[0]
    expect = [k / n] * n
    worst = max(
        abs(c / runs - e) / (e * (1 - e) / runs) ** 0.5
        for c, e in zip(counts, expect)
    )
    p = chi_squared_gof(counts, expect, runs)
    ok = worst <= 3.0 and p > 0.001
    return ok, f"max |z|={worst:.2f}, chi2 p={p:.4f}"


def _check_blocked(seed: int, threads: int, corrupt: bool):
    gen = np.random.default_rng(seed + 9)
    for trial in range(60):
        w = gen.integers(1, 1 << 20, 1500).astype(float)

        def ids_for(block):
            def body(h):
                s = Sampler(h, 25, block=block, rng=Rng(seed, (trial,)),
                            record_insertions=True)
                out = []
                for lo in range(0, 1500, 500):
                    s.process_batch(range(lo, lo + 500), w[lo:lo + 500])
                    out.append(tuple(it.item_id for it in s.last_inserted))
                return out
            return run_spmd(1, body)[0]

        if ids_for(None) != ids_for(32):
            return False, f"trial {trial}: blocked and scalar scans diverged"
    return True, "60 integer-weight streams identical"


def _validate(args) -> int:
    checks = [
        ("exact-inclusion (1,1,2)/k=2", _check_exact_inclusion),
        ("size and threshold invariants", _check_invariants),
        ("selection vs merge oracle", _check_selection),
        ("uniform symmetry", _check_uniform),
        ("blocked-scan equivalence", _check_blocked),
    ]
    failures = 0
    for name, fn in checks:
        ok, detail = fn(args.seed, args.threads, args.corrupt_threshold)
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            failures += 1
    if failures:
        print(f"{failures} of {len(checks)} checks failed", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if not e.code else 1
    try:
        if args.command == "run":
            return _run(_config_from(args, parser))
        return _validate(args)
    except SystemExit as e:  # parser.error inside _config_from
        return 0 if not e.code else 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
