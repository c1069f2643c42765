"""Command line: ``run``, ``sweep``, ``verify`` and ``check-adversary``.

Exit codes: 0 success, 1 configuration or input error, 2 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from decimal import Decimal
from fractions import Fraction

from .adversary import check_admissible, parse_rate, read_trace
from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2
SWEEP_COLUMNS = ("rho", "b", "avg_pending", "avg_latency", "avg_latency_censored",
                 "max_pending_total", "max_latency", "committed", "aborted", "unfinished", "growing")


def _add_config_flags(p: argparse.ArgumentParser, skip=()):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    for f in fields(RunConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, default=None, choices=("true", "false"))
        else:
            p.add_argument(flag, dest=f.name, default=None)


def _config_from(args, skip=()) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if f.name not in skip}
    return load_config(args.config, **overrides)


def parse_rho_list(text: str) -> list[Fraction]:
    """``0.05,0.1`` or ``0.05..0.30`` (step 0.05) or ``0.05..0.30:0.01``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, rest = part.split("..", 1)
            hi, _, step = rest.partition(":")
            lo_d, hi_d, step_d = Decimal(lo), Decimal(hi), Decimal(step or "0.05")
            if step_d <= 0 or hi_d < lo_d:
                raise ValueError(f"bad rho range {part!r}")
            x = lo_d
            while x <= hi_d:
                out.append(parse_rate(str(x)))
                x += step_d
        else:
            out.append(parse_rate(part))
    return out


def _sweep_one(cfg: RunConfig) -> dict:
    from .engine import run, summarize
    sm = summarize(run(cfg), cfg.growth_threshold)
    row = {"rho": f"{float(cfg.rho):g}", "b": cfg.b}
    row.update({k: sm[k] for k in SWEEP_COLUMNS if k in sm})
    return row


def sweep(base: RunConfig, rhos, bs, workers: int = 1) -> list[dict]:
    """Runs in (b, rho) order; results come back in the same order however many workers."""
    configs = [base.replace(rho=r, b=b) for b in bs for r in rhos]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, configs))
    return [_sweep_one(c) for c in configs]


def write_sweep_csv(rows, out) -> None:
    w = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})


def cmd_run(args) -> int:
    from .engine import run, summarize, write_summary

    cfg = _config_from(args)
    if args.dump_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_OK
    res = run(cfg)
    sm = summarize(res, cfg.growth_threshold)
    if cfg.csv:
        res.metrics.write_csv(cfg.csv)
    else:
        res.metrics.write_csv(sys.stdout)
    if cfg.summary:
        write_summary(sm, cfg.summary)
    else:
        for k, v in sm.items():
            print(f"{k} = {v}", file=sys.stderr)
    problems = [k for k in ("atomicity_violations", "order_violations", "capacity_violations",
                            "conservation_violations") if sm.get(k)]
    if args.check_bounds:
        report = bound_report(cfg, res)
        for line in report.violations:
            print(f"bound violation: {line}", file=sys.stderr)
        if not report.ok:
            problems.append("bounds")
    if problems:
        print("invariant violation: " + ", ".join(problems), file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def bound_report(cfg: RunConfig, res):
    if cfg.scheduler == "bds":
        from .bds import bds_check_stability_invariants
        return bds_check_stability_invariants(res.metrics, cfg.rho, cfg.b, cfg.k, cfg.s,
                                              res.scheduler.epochs)
    from .fds import fds_check_stability_invariants
    sched = res.scheduler
    return fds_check_stability_invariants(
        res.metrics, cfg.rho, cfg.b, cfg.k, cfg.s, res.topology.D, cfg.c1, sched.clock,
        top_layer=max(sched.layers), sublayers=sched.hierarchy.sublayers,
        threshold=cfg.growth_threshold)


def cmd_sweep(args) -> int:
    base = _config_from(args, skip=("rho", "b"))
    rhos = parse_rho_list(args.rho)
    bs = [int(x) for x in args.b.split(",")]
    for b in bs:
        if b < 1:
            raise ConfigError("b", "must be a positive integer")
    rows = sweep(base, rhos, bs, workers=args.workers)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_sweep_csv(rows, fh)
    else:
        write_sweep_csv(rows, sys.stdout)
    if args.plot:
        from .plots import plot_sweep
        plot_sweep(rows, args.plot)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .scenarios import run_example_bds, run_example_fds

    checks = []
    bds = run_example_bds()
    checks.append(("BDS coloring {T1,T4}->0, {T2,T3}->1", bds.colors == {1: 0, 2: 1, 3: 1, 4: 0}))
    checks.append(("BDS latencies T1,T4 = 6 and T2,T3 = 10", bds.latency == {1: 6, 2: 10, 3: 10, 4: 6}))
    fds = run_example_fds()
    d1, d2 = fds.diameters[1], fds.diameters[2]
    checks.append((f"FDS diameters d1 = {d1}, d2 = {d2}", (d1, d2) == (1, 3)))
    checks.append(("FDS T1,T3,T4 scheduled at t+2d1, T2 at t+2d2",
                   fds.scheduled == {1: 2 * d1, 3: 2 * d1, 4: 2 * d1, 2: 2 * d2}))
    checks.append(("FDS T1,T4 commit at t+5d1", fds.committed[1] == fds.committed[4] == 5 * d1))
    checks.append(("FDS T2 commits by t+5d2", fds.committed[2] <= 5 * d2))
    # T3 shares S2 with T1 and S3 with T4, which go first at both
    checks.append(("FDS T3 commits at t+8 behind T1 and T4", fds.committed[3] == 8))
    for res in (bds.result, fds.result):
        audit = res.audit()
        checks.append((f"{res.config.scheduler.upper()} ledgers atomic and consistently ordered", audit.ok))
    failed = 0
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failed += not ok
    print(f"note: FDS T3 commits at t+{fds.committed[3]} > t+5d1; one shard finalizes one transaction per round")
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_check_adversary(args) -> int:
    trace = read_trace(args.trace)
    rep = check_admissible(trace, args.rho, args.b)
    if rep.ok:
        print(f"admissible: {len(trace)} transactions, {trace.rounds} rounds, rho={args.rho}, b={args.b}")
        return EXIT_OK
    print(f"violation: shard S{rep.shard}, rounds [{rep.start}, {rep.end}], "
          f"{rep.count} transactions > limit {rep.limit}")
    return EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shardsched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="one run: per-round CSV and a summary")
    _add_config_flags(pr)
    pr.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    pr.add_argument("--check-bounds", action="store_true", help="exit 2 if a stability bound fails")
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("sweep", help="grid over rho and b; one aggregate CSV row per run")
    _add_config_flags(ps, skip=("rho", "b"))
    ps.add_argument("--rho", required=True, help="list or range, e.g. 0.05..0.30 or 0.05..0.3:0.01")
    ps.add_argument("--b", required=True, help="comma-separated burstiness values")
    ps.add_argument("--workers", type=int, default=1, help="worker processes")
    ps.add_argument("--out", help="aggregate CSV path (default stdout)")
    ps.add_argument("--plot", help="write an SVG of pending and latency against rho")
    ps.set_defaults(func=cmd_sweep)

    pv = sub.add_parser("verify", help="replay the worked four-transaction example")
    pv.set_defaults(func=cmd_verify)

    pc = sub.add_parser("check-adversary", help="audit a trace file for (rho, b) admissibility")
    pc.add_argument("trace")
    pc.add_argument("--rho", required=True, type=parse_rate)
    pc.add_argument("--b", required=True, type=int)
    pc.set_defaults(func=cmd_check_adversary)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
