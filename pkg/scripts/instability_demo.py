"""Pairwise-conflicting batches against both schedulers, below and above 2/(k+1).

Each batch is a clique of ``width`` transactions in which every pair shares
exactly one shard, so a batch needs ``width`` rounds of commits however it
is scheduled. Above 2/(k+1) no scheduler keeps up; both schedulers here
pay epoch overhead on top of that and start to fall behind at lower rates.

    python scripts/instability_demo.py --k 3 --s 6
"""
import argparse
from fractions import Fraction

from shardsched.adversary import theorem1_width
from shardsched.config import RunConfig
from shardsched.engine import detect_growth, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--s", type=int, default=6)
    ap.add_argument("--rounds", type=int, default=4000)
    ap.add_argument("--rates", default="1/10,1/5,1/3,1/2,2/3,1")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    width = theorem1_width(args.k, args.s)
    crit = Fraction(2, args.k + 1)
    print(f"k={args.k} s={args.s}: cliques of {width} transactions, critical rate 2/(k+1) = {crit}")
    print(f"{'scheduler':<10}{'rho':>6}{'seed':>6}{'final queue':>13}{'slope':>10}{'R2':>7}  verdict")
    for sched, topo in (("bds", "uniform"), ("fds", "line")):
        for text in args.rates.split(","):
            rho = Fraction(text)
            for seed in range(args.seeds):
                cfg = RunConfig(scheduler=sched, topology=topo, s=args.s, k=args.k, rho=rho, b=2,
                                rounds=args.rounds, strategy="theorem1", seed=seed)
                res = run(cfg)
                g = detect_growth(res.metrics)
                final = int(res.metrics.outstanding[-1]) if cfg.rounds else 0
                verdict = "growing" if g.growing else "stable"
                print(f"{sched:<10}{str(rho):>6}{seed:>6}{final:>13}{g.slope:>10.4f}{g.r2:>7.2f}  {verdict}")


if __name__ == "__main__":
    main()
