"""Basic distributed scheduler for the uniform model.

An epoch starting at round ``e`` runs

* ``e``: every home shard ships its pending transactions to the leader;
* ``e+1``: the leader colors them and returns the colors;
* ``e+2+4c .. e+5+4c`` for each color ``c``: split and send, vote,
  confirm, finalize.

So an epoch with ``z`` colors lasts ``2 + 4z`` rounds and a transaction of
color ``c`` commits at ``e + 1 + 4(c+1)``. Each exchange takes one round;
a shard's message to itself is held for the same one-round slot.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

from .adversary import parse_rate
from .base import SchedulerBase
from .coloring import Coloring, color_transactions, heavy_threshold
from .model import Status, Transaction, split
from .net import Message, Transport
from .topology import Topology


@dataclass
class EpochRecord:
    index: int
    start: int
    leader: int
    txn_ids: list[int] = field(default_factory=list)
    num_colors: int = 0
    length: int | None = None  # fixed once the leader has colored
    colors: dict[int, int] = field(default_factory=dict)


class BasicDistributedScheduler(SchedulerBase):
    name = "bds"

    def __init__(self, topology: Topology, transport: Transport, finish=None,
                 coloring: str = "greedy", retry_aborts: bool = False):
        if not topology.uniform:
            raise ValueError("the basic scheduler needs a uniform topology")
        super().__init__(topology, transport, finish, retry_aborts)
        self.coloring_strategy = coloring
        self.pending: dict[int, list[Transaction]] = {sh: [] for sh in range(1, self.s + 1)}
        self.epochs: list[EpochRecord] = []
        self.next_epoch_start = 0
        self.coloring: Coloring | None = None
        self._collected: list[Transaction] = []
        self._by_color: dict[int, dict[int, list[Transaction]]] = {}  # home -> color -> txns
        self._votes: dict[int, dict[int, bool]] = {}
        self._txn: dict[int, Transaction] = {}
        self._unconfirmed: dict[int, int] = {}  # destinations yet to finalize
        self.epoch_offset = 0

    @property
    def epoch(self) -> EpochRecord | None:
        return self.epochs[-1] if self.epochs else None

    def leader_for(self, epoch_index: int) -> int:
        return (epoch_index + self.epoch_offset) % self.s + 1

    def admit(self, txn: Transaction, now: int) -> None:
        self.pending[txn.home_shard].append(txn)

    def pending_count(self) -> int:
        return sum(map(len, self.pending.values()))

    def _post(self, kind, src, dst, payload, now, txns):
        self.transport.send(kind, src, dst, payload, now, txns=txns, delay=1)

    def step(self, now: int, inbox: list[Message]) -> None:
        for msg in inbox:
            getattr(self, f"_on_{msg.kind}")(msg, now)
        if now == self.next_epoch_start:
            self._phase1(now)
            return
        ep = self.epoch
        if ep is None:
            return
        rel = now - ep.start
        if rel == 1:
            self._phase2(now)
        elif rel >= 2 and (rel - 2) % 4 == 0:
            self._split_color((rel - 2) // 4, now)

    # phase 1: knowledge sharing
    def _phase1(self, now: int) -> None:
        index = len(self.epochs)
        ep = EpochRecord(index, now, self.leader_for(index))
        self.epochs.append(ep)
        self.next_epoch_start = None
        self._collected = []
        for home in range(1, self.s + 1):
            batch, self.pending[home] = self.pending[home], []
            if batch:
                ep.txn_ids.extend(t.txn_id for t in batch)
                self._post("txn_to_leader", home, ep.leader, batch, now, [t.txn_id for t in batch])

    def _on_txn_to_leader(self, msg: Message, now: int) -> None:
        self._collected.extend(msg.payload)

    # phase 2: coloring at the leader
    def _phase2(self, now: int) -> None:
        ep = self.epoch
        txns = sorted(self._collected, key=lambda t: t.txn_id)
        self._collected = []
        self.coloring = color_transactions(txns, self.coloring_strategy, s=self.s, granularity="shard")
        ep.num_colors = self.coloring.num_colors
        ep.colors = dict(self.coloring.colors)
        ep.length = 2 + 4 * ep.num_colors
        self.next_epoch_start = ep.start + ep.length
        by_home: dict[int, list[tuple[Transaction, int]]] = defaultdict(list)
        for t in txns:
            by_home[t.home_shard].append((t, self.coloring.colors[t.txn_id]))
        for home, items in sorted(by_home.items()):
            self._post("colored_txn", ep.leader, home, items, now, [t.txn_id for t, _ in items])

    def _on_colored_txn(self, msg: Message, now: int) -> None:
        queues = self._by_color.setdefault(msg.dst, {})
        for t, c in msg.payload:
            queues.setdefault(c, []).append(t)
            t.status = Status.SCHEDULED

    # phase 3: four rounds per color
    def _split_color(self, c: int, now: int) -> None:
        out: dict[tuple[int, int], list] = defaultdict(list)
        for home in range(1, self.s + 1):
            for t in self._by_color.get(home, {}).pop(c, []):
                self._txn[t.txn_id] = t
                subs = split(t)
                self._votes[t.txn_id] = {}
                for sub in subs:
                    out[(home, sub.destination)].append(sub)
        for (home, dest), subs in sorted(out.items()):
            self._post("subtxn", home, dest, subs, now, [sub.parent for sub in subs])

    def _on_subtxn(self, msg: Message, now: int) -> None:
        votes = [(sub.parent, sub.destination, sub.vote) for sub in msg.payload]
        self._post("vote", msg.dst, msg.src, votes, now, [v[0] for v in votes])

    def _on_vote(self, msg: Message, now: int) -> None:
        done = []
        for tid, dest, ok in msg.payload:
            got = self._votes[tid]
            got[dest] = ok
            if len(got) == len(self._txn[tid].shards):
                done.append(tid)
        out: dict[int, list] = defaultdict(list)
        for tid in done:
            decision = all(self._votes.pop(tid).values())
            self._unconfirmed[tid] = len(self._txn[tid].shards)
            for dest in sorted(self._txn[tid].shards):
                out[dest].append((tid, decision))
        for dest, items in sorted(out.items()):
            self._post("confirm", msg.dst, dest, items, now, [i[0] for i in items])

    def _on_confirm(self, msg: Message, now: int) -> None:
        for tid, decision in msg.payload:
            t = self._txn[tid]
            self._finalize(msg.dst, t, decision, now)
            self._unconfirmed[tid] -= 1
            if not self._unconfirmed[tid]:
                del self._unconfirmed[tid], self._txn[tid]
                self._finish(t, decision, now)


def bds_epoch_length_bound(b: int, k: int, s: int) -> int:
    """tau = 18 b min(k, ceil(sqrt s))."""
    return 18 * b * min(k, heavy_threshold(s))


def bds_latency_bound(b: int, k: int, s: int) -> int:
    return 2 * bds_epoch_length_bound(b, k, s)


def bds_rate_threshold(k: int, s: int) -> Fraction:
    return max(Fraction(1, 18 * k), Fraction(1, 18 * heavy_threshold(s)))


@dataclass
class StabilityReport:
    applies: bool
    violations: list[str] = field(default_factory=list)
    observations: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first(self) -> str | None:
        return self.violations[0] if self.violations else None


def bds_check_stability_invariants(metrics, rho, b: int, k: int, s: int,
                                   epochs: list[EpochRecord] | None = None) -> StabilityReport:
    """Pending <= 4bs, latency <= 2 tau, epoch length <= tau.

    Bounds are asserted only when rho meets the stability precondition;
    otherwise the observed maxima are recorded and nothing is flagged.
    """
    rho = parse_rate(rho)
    tau = bds_epoch_length_bound(b, k, s)
    applies = rho <= bds_rate_threshold(k, s)
    rep = StabilityReport(applies)
    outstanding = metrics.outstanding
    lat = metrics.latencies()
    lengths = [e.length for e in (epochs or []) if e.length is not None]
    rep.observations = {
        "max_pending": int(outstanding.max()) if outstanding.size else 0,
        "max_latency": int(lat.max()) if lat.size else 0,
        "max_epoch_length": max(lengths, default=0),
        "pending_bound": 4 * b * s,
        "latency_bound": 2 * tau,
        "epoch_bound": tau,
    }
    if not applies:
        return rep
    over = (outstanding > 4 * b * s).nonzero()[0]
    if over.size:
        r = int(over[0])
        rep.violations.append(f"round {r}: {int(outstanding[r])} pending > 4bs = {4 * b * s}")
    for tid, L in zip(metrics.txn_ids[metrics.finished_mask], lat):
        if L > 2 * tau:
            rep.violations.append(f"T{int(tid)}: latency {int(L)} > {2 * tau}")
            break
    for e in epochs or []:
        if e.length is not None and e.length > tau:
            rep.violations.append(f"epoch {e.index} at round {e.start}: length {e.length} > tau = {tau}")
            break
    return rep


@dataclass
class EpochOutcome:
    epoch: EpochRecord
    commits: dict[int, int]  # txn_id -> round
    aborts: dict[int, int]


def bds_run_epoch(pending: list[Transaction], s: int, start: int = 0, epoch_index: int = 0,
                  coloring: str = "greedy") -> EpochOutcome:
    """Run one isolated epoch over ``pending``, starting at round ``start``."""
    from .topology import uniform_topology

    topo = uniform_topology(s)
    transport = Transport(topo)
    commits, aborts = {}, {}

    def done(t, status, rnd):
        (commits if status is Status.COMMITTED else aborts)[t.txn_id] = rnd

    sched = BasicDistributedScheduler(topo, transport, done, coloring=coloring)
    sched.epoch_offset = epoch_index
    sched.next_epoch_start = start
    for t in pending:
        sched.admit(t, start - 1)
    now = start
    while True:
        sched.step(now, transport.deliver(now))
        if sched.next_epoch_start == now + 1:
            break
        now += 1
    return EpochOutcome(sched.epoch, commits, aborts)
