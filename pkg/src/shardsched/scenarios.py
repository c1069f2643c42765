"""The four-transaction worked example, on both schedulers.

Shards ``a, b, c, d`` are S1..S4 with one account each:

====  ========  ====
txn   accounts  home
====  ========  ====
T1    a, b      a
T2    a, d      c
T3    b, c      c
T4    c, d      d
====  ========  ====

For the distributed scheduler they sit at the left end of an 8-shard line,
where T1, T3, T4 fall into layer-1 clusters (diameter 1) and T2 into a
layer-2 cluster (diameter 3) when home clusters are chosen by the shards a
transaction actually touches.
"""
from __future__ import annotations

from dataclasses import dataclass

from .adversary import Injection, InjectionTrace
from .config import RunConfig
from .engine import RunResult, run
from .fds import EpochClock
from .model import Account, Transaction

WORKED_EXAMPLE = {1: ((1, 2), 1), 2: ((1, 4), 3), 3: ((2, 3), 3), 4: ((3, 4), 4)}


def example_transactions(rnd: int = 0) -> list[Transaction]:
    return [
        Transaction(tid, home, frozenset(Account(a, a) for a in accts), rnd)
        for tid, (accts, home) in WORKED_EXAMPLE.items()
    ]


def example_trace(s: int, inject_round: int, rounds: int) -> InjectionTrace:
    events = [Injection(inject_round, tid, home, accts) for tid, (accts, home) in WORKED_EXAMPLE.items()]
    return InjectionTrace(s, rounds, 1, events)


@dataclass
class ExampleOutcome:
    result: RunResult
    epoch_start: int
    colors: dict[int, int]
    scheduled: dict[int, int]  # rounds after epoch start
    committed: dict[int, int]
    latency: dict[int, int]
    diameters: dict[int, int]  # home-cluster diameter per txn


def run_example_bds() -> ExampleOutcome:
    """Inject in the last round of the initial empty epoch; the batch epoch starts at 2."""
    inject, start = 1, 2
    cfg = RunConfig(scheduler="bds", topology="uniform", s=4, rounds=16)
    res = run(cfg, example_trace(4, inject, cfg.rounds))
    ep = next(e for e in res.scheduler.epochs if e.txn_ids)
    assert ep.start == start
    colors = dict(ep.colors)
    committed = {tid: res.txns[tid].commit_round - start for tid in WORKED_EXAMPLE}
    latency = {tid: res.metrics.latency_of(tid) for tid in WORKED_EXAMPLE}
    return ExampleOutcome(res, start, colors, {}, committed, latency, {tid: 1 for tid in WORKED_EXAMPLE})


def run_example_fds(c: int = 4, home_rule: str = "access") -> ExampleOutcome:
    """Inject just before a boundary shared by every layer that is involved."""
    s = 8
    clock = EpochClock(s, c)
    start = clock.length(2)
    cfg = RunConfig(scheduler="fds", topology="line", s=s, c=c, rounds=start + 64,
                    home_rule=home_rule)
    res = run(cfg, example_trace(s, start - 1, cfg.rounds))
    sched = res.scheduler
    scheduled = {tid: sched.sched_rounds[tid] - start for tid in WORKED_EXAMPLE}
    committed = {tid: res.txns[tid].commit_round - start for tid in WORKED_EXAMPLE}
    latency = {tid: res.metrics.latency_of(tid) for tid in WORKED_EXAMPLE}
    diam = {tid: sched.assignment[tid].diameter for tid in WORKED_EXAMPLE}
    return ExampleOutcome(res, start, {}, scheduled, committed, latency, diam)
