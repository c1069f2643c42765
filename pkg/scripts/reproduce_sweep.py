"""Sweep rho and b for both schedulers on 64 shards and draw the trend figures.

    python scripts/reproduce_sweep.py --out-dir figures
    python scripts/reproduce_sweep.py --schedulers bds --rounds 5000   # quick look
"""
import argparse
from pathlib import Path

import numpy as np

from shardsched.cli import parse_rho_list, sweep, write_sweep_csv
from shardsched.config import RunConfig
from shardsched.plots import plot_sweep

SETUPS = {
    "bds": dict(scheduler="bds", topology="uniform"),
    "fds": dict(scheduler="fds", topology="line"),
}


def trend_lines(rows, metric):
    out = []
    for b in sorted({r["b"] for r in rows}):
        y = np.array([r[metric] for r in rows if r["b"] == b], dtype=float)
        mono = bool(np.all(np.diff(y) >= 0))
        out.append(f"  b={b:<5} {metric:<13} " + " ".join(f"{v:9.1f}" for v in y)
                   + f"   nondecreasing={mono}")
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--schedulers", default="bds,fds")
    ap.add_argument("--s", type=int, default=64)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--b", default="1000,3000")
    ap.add_argument("--rho", default="0.05..0.30")
    ap.add_argument("--rounds", type=int, default=25000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default="figures")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rhos = parse_rho_list(args.rho)
    bs = [int(x) for x in args.b.split(",")]
    for name in args.schedulers.split(","):
        base = RunConfig(s=args.s, k=args.k, rounds=args.rounds, seed=args.seed, **SETUPS[name])
        rows = sweep(base, rhos, bs, workers=args.workers)
        with open(out / f"sweep_{name}.csv", "w", newline="") as fh:
            write_sweep_csv(rows, fh)
        plot_sweep(rows, str(out / f"sweep_{name}.svg"))
        print(f"{name}: s={args.s} k={args.k} rounds={args.rounds}  rho = "
              + " ".join(f"{float(r):g}" for r in rhos))
        for metric in ("avg_pending", "avg_latency"):
            print("\n".join(trend_lines(rows, metric)))
        print(f"  wrote {out / f'sweep_{name}.csv'} and {out / f'sweep_{name}.svg'}")


if __name__ == "__main__":
    main()
