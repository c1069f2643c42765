"""Synchronous round loop, per-round metrics and queue-growth detection.

Each round: deliver due messages, step the scheduler, then inject the
round's transactions. Injected transactions only reach a scheduler at its
next epoch boundary.
"""
from __future__ import annotations

import csv
import hashlib
import io
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import (AdversaryParams, InjectionTrace, read_trace, theorem1_adversary,
                        token_bucket_generator)
from .config import RunConfig
from .model import Status, Transaction, audit_ledgers
from .net import Transport
from .topology import Topology, line_topology, load_topology, uniform_topology

ROUND_COLUMNS = ("round", "pending_total", "in_flight", "committed_cum", "aborted_cum")
_STATUS_CODE = {Status.COMMITTED: 1, Status.ABORTED: 2}


@dataclass
class MetricsTrace:
    s: int
    rounds: int
    pending: np.ndarray  # waiting at a shard, not in transit
    in_flight: np.ndarray
    committed_cum: np.ndarray
    aborted_cum: np.ndarray
    shard_queues: np.ndarray  # [round, shard-1]: unfinished transactions by home shard
    leader_queue: np.ndarray  # scheduled-but-unconfirmed transactions held by leaders
    txn_ids: np.ndarray
    injection: np.ndarray
    commit: np.ndarray  # -1 while unfinished
    status: np.ndarray  # 0 unfinished, 1 committed, 2 aborted

    @property
    def outstanding(self) -> np.ndarray:
        return self.pending + self.in_flight

    @property
    def finished_mask(self) -> np.ndarray:
        return self.status > 0

    def latencies(self) -> np.ndarray:
        m = self.finished_mask
        return self.commit[m] - self.injection[m]

    def censored_latencies(self) -> np.ndarray:
        """Unfinished transactions count as waiting until the end of the run."""
        end = np.where(self.finished_mask, self.commit, self.rounds)
        return end - self.injection

    def latency_of(self, txn_id: int) -> int | None:
        idx = np.searchsorted(self.txn_ids, txn_id)
        if idx >= len(self.txn_ids) or self.txn_ids[idx] != txn_id or self.status[idx] == 0:
            return None
        return int(self.commit[idx] - self.injection[idx])

    def write_csv(self, out) -> None:
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="") as fh:
                self.write_csv(fh)
            return
        w = csv.writer(out, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for r in range(self.rounds):
            w.writerow((r, int(self.pending[r]), int(self.in_flight[r]),
                        int(self.committed_cum[r]), int(self.aborted_cum[r])))

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.csv_text().encode()).hexdigest()


@dataclass
class RunResult:
    config: RunConfig
    topology: Topology
    trace: InjectionTrace
    txns: dict[int, Transaction]
    scheduler: object
    metrics: MetricsTrace
    sched_rounds: dict[int, int] = field(default_factory=dict)

    @property
    def ledgers(self):
        return self.scheduler.ledgers

    def audit(self):
        return audit_ledgers(self.txns, self.ledgers)


def make_topology(cfg: RunConfig) -> Topology:
    if cfg.topology == "uniform":
        return uniform_topology(cfg.s)
    if cfg.topology == "line":
        return line_topology(cfg.s)
    topo = load_topology(cfg.topology[len("file:"):])
    if topo.s != cfg.s:
        from .config import ConfigError
        raise ConfigError("s", f"topology file has {topo.s} shards, config says {cfg.s}")
    return topo


def make_trace(cfg: RunConfig) -> InjectionTrace:
    if cfg.trace_file:
        return read_trace(cfg.trace_file)
    if cfg.strategy == "theorem1":
        return theorem1_adversary(cfg.k, cfg.s, cfg.rho, cfg.rounds, b=cfg.b, seed=cfg.seed)
    params = AdversaryParams(cfg.rho, cfg.b, cfg.k, cfg.seed)
    return token_bucket_generator(
        params, cfg.s, cfg.rounds, strategy=cfg.strategy,
        burst_round=cfg.burst_epoch * cfg.E0, burst_window=cfg.E0,
        accounts_per_shard=cfg.accounts_per_shard,
    )


def draw_failures(trace: InjectionTrace, cfg: RunConfig) -> dict[int, frozenset[int]]:
    """Destination shards whose condition check fails, drawn per transaction."""
    if cfg.abort_prob <= 0:
        return {}
    out = {}
    for e in trace.events:
        rng = random.Random(f"{cfg.seed}:{e.txn_id}")
        bad = frozenset(sh for sh in sorted(trace.shards_of(e)) if rng.random() < cfg.abort_prob)
        if bad:
            out[e.txn_id] = bad
    return out


def make_scheduler(cfg: RunConfig, topo: Topology, transport: Transport, finish):
    if cfg.scheduler == "bds":
        from .bds import BasicDistributedScheduler
        return BasicDistributedScheduler(topo, transport, finish, coloring=cfg.coloring,
                                         retry_aborts=cfg.retry_aborts)
    from .fds import FullyDistributedScheduler
    return FullyDistributedScheduler(topo, transport, finish, c=cfg.c, coloring=cfg.coloring,
                                     home_rule=cfg.home_rule, priority=cfg.priority,
                                     retry_aborts=cfg.retry_aborts)


def run(cfg: RunConfig, trace: InjectionTrace | None = None) -> RunResult:
    topo = make_topology(cfg)
    if trace is None:
        trace = make_trace(cfg)
    if trace.s > topo.s:
        raise ValueError(f"trace uses {trace.s} shards, topology has {topo.s}")
    txns = {t.txn_id: t for t in trace.transactions(draw_failures(trace, cfg))}
    by_round: dict[int, list[Transaction]] = {}
    for t in txns.values():
        by_round.setdefault(t.injection_round, []).append(t)

    R, s = cfg.rounds, topo.s
    pending = np.zeros(R, dtype=np.int64)
    in_flight = np.zeros(R, dtype=np.int64)
    committed = np.zeros(R, dtype=np.int64)
    aborted = np.zeros(R, dtype=np.int64)
    shard_q = np.zeros((R, s), dtype=np.int32)
    leader_q = np.zeros(R, dtype=np.int64)
    home_out = np.zeros(s, dtype=np.int32)
    unfinished: set[int] = set()
    counts = {Status.COMMITTED: 0, Status.ABORTED: 0}

    def finish(txn: Transaction, status: Status, rnd: int):
        unfinished.discard(txn.txn_id)
        home_out[txn.home_shard - 1] -= 1
        counts[status] += 1

    transport = Transport(topo)
    sched = make_scheduler(cfg, topo, transport, finish)
    for r in range(R):
        sched.step(r, transport.deliver(r))
        for t in by_round.get(r, ()):
            unfinished.add(t.txn_id)
            home_out[t.home_shard - 1] += 1
            sched.admit(t, r)
        moving = sum(1 for tid in transport.in_flight_txns() if tid in unfinished)
        in_flight[r] = moving
        pending[r] = len(unfinished) - moving
        committed[r] = counts[Status.COMMITTED]
        aborted[r] = counts[Status.ABORTED]
        shard_q[r] = home_out
        leader_q[r] = sched.leader_queue_size()

    ids = np.array(sorted(txns), dtype=np.int64)
    inj = np.array([txns[i].injection_round for i in ids], dtype=np.int64)
    com = np.array([txns[i].commit_round if txns[i].finished else -1 for i in ids], dtype=np.int64)
    st = np.array([_STATUS_CODE.get(txns[i].status, 0) for i in ids], dtype=np.int8)
    metrics = MetricsTrace(s, R, pending, in_flight, committed, aborted, shard_q, leader_q,
                           ids, inj, com, st)
    return RunResult(cfg, topo, trace, txns, sched, metrics,
                     sched_rounds=dict(getattr(sched, "sched_rounds", {})))


@dataclass(frozen=True)
class Growth:
    growing: bool
    slope: float
    r2: float

    @property
    def stable(self) -> bool:
        return not self.growing


def detect_growth(series, threshold: float = 0.01, r2_min: float = 0.9) -> Growth:
    """Least-squares trend of the second half of a queue-size series."""
    if isinstance(series, MetricsTrace):
        series = series.outstanding
    y = np.asarray(series, dtype=float)
    y = y[len(y) // 2:]
    if y.size < 2:
        return Growth(False, 0.0, 0.0)
    x = np.arange(y.size, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0
    if abs(slope) < 1e-12:
        slope = 0.0
    return Growth(bool(slope > threshold and r2 > r2_min), float(slope), r2)


def check_conservation(result: RunResult) -> list[str]:
    """injected = committed + aborted + pending + in flight, every round."""
    m = result.metrics
    inj_per_round = np.bincount(m.injection, minlength=m.rounds)[: m.rounds]
    injected = np.cumsum(inj_per_round)
    total = m.committed_cum + m.aborted_cum + m.pending + m.in_flight
    bad = np.nonzero(total != injected)[0]
    return [f"round {int(r)}: injected {int(injected[r])} != accounted {int(total[r])}" for r in bad[:5]]


def summarize(result: RunResult | MetricsTrace, threshold: float = 0.01) -> dict:
    m = result.metrics if isinstance(result, RunResult) else result
    out = m.outstanding
    lat = m.latencies()
    cens = m.censored_latencies()
    g = detect_growth(out, threshold)
    summary = {
        "rounds": m.rounds,
        "injected": int(m.txn_ids.size),
        "committed": int((m.status == 1).sum()),
        "aborted": int((m.status == 2).sum()),
        "unfinished": int((m.status == 0).sum()),
        "avg_pending": float(out.mean() / m.s) if out.size else 0.0,
        "avg_pending_total": float(out.mean()) if out.size else 0.0,
        "max_pending_total": int(out.max()) if out.size else 0,
        "avg_latency": float(lat.mean()) if lat.size else 0.0,
        "max_latency": int(lat.max()) if lat.size else 0,
        "avg_latency_censored": float(cens.mean()) if cens.size else 0.0,
        "growth_slope": g.slope,
        "growing": g.growing,
    }
    if isinstance(result, RunResult):
        audit = result.audit()
        summary["atomicity_violations"] = len(audit.atomicity_violations)
        summary["order_violations"] = len(audit.order_violations)
        summary["capacity_violations"] = len(result.scheduler.capacity_violations)
        summary["conservation_violations"] = len(check_conservation(result))
    return summary


def write_summary(summary: dict, out) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_summary(summary, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(summary.keys())
    w.writerow(summary.values())
