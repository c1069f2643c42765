"""Fully distributed scheduler for non-uniform distances.

Every (layer, sublayer) cluster with a leader runs its own epochs of
length ``E_i = 2**i * E0``, all aligned to round 0. In an epoch starting at
``e`` a cluster of strong diameter ``d``

1. has home shards ship the cluster's new transactions to the leader (round ``e``);
2. colors them at the leader once they have all arrived (round ``e + d``)
   and sends each destination its subtransaction with a height;
3. inserts them into the destination queues at round ``e + 2d``.

When the epoch also closes a rescheduling period of a higher layer, step 2
recolors every transaction the leader still holds that has not started
voting, and the destinations replace the old entries.

Committing is head-of-line per destination: the head subtransaction is
locked and voted on, the leader answers once it holds every vote with a
commit round ``R`` that all destinations reach, and they finalize at ``R``.

Heights are ``(t, layer, sublayer, color, txn_id)``. With
``priority="schedule"`` ``t`` is the round the schedule lands at the
destinations, so a queue never receives anything below a locked head.
With ``priority="epoch_end"`` ``t`` is the end of the coloring epoch and
a destination waits until no lower-height entry can still arrive.
"""
from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .adversary import parse_rate
from .base import SchedulerBase
from .bds import StabilityReport
from .coloring import color_transactions, heavy_threshold
from .model import Status, SubTransaction, Transaction, split
from .net import Message, Transport
from .topology import Cluster, ClusterHierarchy, Topology, build_hierarchy, home_cluster


@dataclass(frozen=True, order=True)
class Height:
    t: int
    layer: int
    sublayer: int
    color: int
    txn_id: int  # tie-break so the order is total


class EpochClock:
    def __init__(self, s: int, c: int = 4):
        if c < 1:
            raise ValueError("c must be >= 1")
        self.s = s
        self.c = c
        self.log_s = max(1, math.ceil(math.log2(s))) if s > 1 else 1
        self.E0 = c * self.log_s

    def length(self, layer: int) -> int:
        return self.E0 << layer

    def period(self, k: int) -> int:
        return self.E0 << k

    def is_start(self, layer: int, rnd: int) -> bool:
        return rnd % self.length(layer) == 0

    def start_of(self, layer: int, rnd: int) -> int:
        return rnd - rnd % self.length(layer)

    def end_of(self, layer: int, start: int) -> int:
        return start + self.length(layer)

    def reschedules(self, layer: int, start: int) -> bool:
        """Does this epoch end a rescheduling period ``P_k`` with ``k > layer``?"""
        return self.end_of(layer, start) % self.period(layer + 1) == 0


@dataclass
class LeaderEntry:
    txn: Transaction
    cluster: Cluster
    height: Height
    version: int = 1
    votes: dict[int, bool] = field(default_factory=dict)


@dataclass(frozen=True)
class QueueItem:
    height: Height
    version: int
    sub: SubTransaction
    leader: int
    cluster: tuple[int, int, int]


class DestinationQueue:
    """Height-ordered schedule queue of one shard, with in-place updates."""

    def __init__(self):
        self._heap: list[tuple[Height, int]] = []
        self.items: dict[int, QueueItem] = {}

    def put(self, item: QueueItem) -> QueueItem | None:
        tid = item.sub.parent
        old = self.items.get(tid)
        self.items[tid] = item
        heapq.heappush(self._heap, (item.height, item.version))
        return old

    def head(self) -> QueueItem | None:
        while self._heap:
            h, v = self._heap[0]
            cur = self.items.get(h.txn_id)
            if cur is not None and cur.version == v and cur.height == h:
                return cur
            heapq.heappop(self._heap)
        return None

    def pop_head(self) -> QueueItem:
        item = self.head()
        heapq.heappop(self._heap)
        del self.items[item.sub.parent]
        return item

    def ordered(self) -> list[QueueItem]:
        return sorted(self.items.values(), key=lambda it: it.height)

    def __len__(self):
        return len(self.items)


class FullyDistributedScheduler(SchedulerBase):
    name = "fds"

    def __init__(self, topology: Topology, transport: Transport, finish=None, c: int = 4,
                 coloring: str = "greedy", home_rule: str = "neighborhood",
                 priority: str = "schedule", hierarchy: ClusterHierarchy | None = None,
                 retry_aborts: bool = False):
        super().__init__(topology, transport, finish, retry_aborts)
        if priority not in ("schedule", "epoch_end"):
            raise ValueError(f"unknown priority {priority!r}")
        self.hierarchy = hierarchy or build_hierarchy(topology)
        self.clock = EpochClock(self.s, c)
        self.coloring_strategy = coloring
        self.home_rule = home_rule
        self.priority = priority
        self.layers = sorted({lvl[0] for lvl in self.hierarchy.levels()})
        self._leader_clusters: dict[int, list[Cluster]] = defaultdict(list)
        for cl in self.hierarchy.all_clusters():
            if cl.leader is not None:
                self._leader_clusters[cl.layer].append(cl)
        self._dmax = {i: self.hierarchy.layer_diameter(i) for i in self.layers}
        for i in self.layers:
            if self.clock.length(i) < 2 * self._dmax[i] + 1:
                raise ValueError(
                    f"epoch length {self.clock.length(i)} of layer {i} is shorter than "
                    f"2*{self._dmax[i]}+1; raise c")

        self.waiting: dict[tuple, list[Transaction]] = defaultdict(list)  # per home cluster
        self.arrived: dict[tuple, list[Transaction]] = defaultdict(list)
        self.sch_ldr: dict[tuple, dict[int, LeaderEntry]] = defaultdict(dict)
        self.sch_qd = {sh: DestinationQueue() for sh in range(1, self.s + 1)}
        self.locked: dict[int, tuple[int, int]] = {}  # dest -> (txn_id, version)
        self.assignment: dict[int, Cluster] = {}
        self.sched_rounds: dict[int, int] = {}  # first round a txn sits in its destination queues
        self.recolor_log: list[tuple[int, tuple]] = []  # (phase-2 round, cluster key)
        self.final_height: dict[int, Height] = {}
        self._phase2_due: dict[int, list[tuple[Cluster, int]]] = defaultdict(list)
        self._insert_due: dict[int, list[tuple[int, QueueItem]]] = defaultdict(list)
        self._finalize_due: dict[int, list[tuple[int, int, bool, int]]] = defaultdict(list)
        self._vote_inbox: list[tuple] = []
        self._remaining: dict[int, int] = {}
        self._txn_of: dict[int, Transaction] = {}
        self._versions: dict[int, int] = defaultdict(int)  # monotone across retries
        self._retired: set[int] = set()
        self._home_cache: dict[tuple, Cluster] = {}

    # engine hooks
    def admit(self, txn: Transaction, now: int) -> None:
        key = (txn.home_shard, txn.shards)
        cl = self._home_cache.get(key)
        if cl is None:
            cl = home_cluster(txn.home_shard, txn.shards, self.hierarchy, self.home_rule)
            self._home_cache[key] = cl
        self.assignment[txn.txn_id] = cl
        self.waiting[cl.key].append(txn)

    def leader_queue_size(self) -> int:
        return sum(len(q) for q in self.sch_ldr.values())

    def step(self, now: int, inbox: list[Message]) -> None:
        for msg in inbox:
            getattr(self, f"_on_{msg.kind}")(msg, now)
        self.phase_schedule(now)
        self.commit_step(now)

    # message handlers
    def _on_txn_to_leader(self, msg: Message, now: int) -> None:
        ckey, txns = msg.payload
        self.arrived[ckey].extend(txns)

    def _on_subtxn(self, msg: Message, now: int) -> None:
        for item, t_ins in msg.payload:
            if t_ins < now:
                raise RuntimeError(f"subtransaction of T{item.sub.parent} arrived after its slot")
            self._insert_due[t_ins].append((msg.dst, item))

    def _on_vote(self, msg: Message, now: int) -> None:
        self._vote_inbox.extend(msg.payload)

    def _on_confirm(self, msg: Message, now: int) -> None:
        for tid, decision, version, R in msg.payload:
            self._finalize_due[R].append((msg.dst, tid, decision, version))

    # scheduling: phases 1-3
    def phase_schedule(self, now: int) -> None:
        for i in self.layers:
            if self.clock.is_start(i, now):
                for cl in self._leader_clusters[i]:
                    self._phase1(cl, now)
        for cl, start in self._phase2_due.pop(now, ()):
            self._phase2(cl, start, now)
        for dest, item in self._insert_due.pop(now, ()):
            self._phase3(dest, item, now)

    def _phase1(self, cl: Cluster, now: int) -> None:
        batch = self.waiting.pop(cl.key, [])
        if not batch and not (self.sch_ldr.get(cl.key) and self.clock.reschedules(cl.layer, now)):
            return
        by_home: dict[int, list[Transaction]] = defaultdict(list)
        for t in batch:
            by_home[t.home_shard].append(t)
        for home, txns in sorted(by_home.items()):
            if home == cl.leader:
                self.arrived[cl.key].extend(txns)
            else:
                self.transport.send("txn_to_leader", home, cl.leader, (cl.key, txns), now,
                                    txns=[t.txn_id for t in txns])
        self._phase2_due[now + cl.diameter].append((cl, now))

    def _phase2(self, cl: Cluster, start: int, now: int) -> None:
        new = self.arrived.pop(cl.key, [])
        held = self.sch_ldr[cl.key]
        stale: list[LeaderEntry] = []
        if self.clock.reschedules(cl.layer, start):
            stale = [e for e in held.values() if not e.votes]
            if stale:
                self.recolor_log.append((now, cl.key))
        to_color = sorted([t for t in new] + [e.txn for e in stale], key=lambda t: t.txn_id)
        if not to_color:
            return
        coloring = color_transactions(to_color, self.coloring_strategy, s=self.s, granularity="shard")
        t_ins = start + 2 * cl.diameter
        t_key = t_ins if self.priority == "schedule" else self.clock.end_of(cl.layer, start)
        out: dict[int, list] = defaultdict(list)
        for t in to_color:
            h = Height(t_key, cl.layer, cl.sublayer, coloring.colors[t.txn_id], t.txn_id)
            self._versions[t.txn_id] += 1
            entry = held.get(t.txn_id)
            if entry is None:
                entry = held[t.txn_id] = LeaderEntry(t, cl, h)
            entry.version = self._versions[t.txn_id]
            entry.height = h
            entry.votes = {}
            t.status = Status.SCHEDULED
            for sub in split(t):
                item = QueueItem(h, entry.version, sub, cl.leader, cl.key)
                out[sub.destination].append((item, t_ins))
        for dest, items in sorted(out.items()):
            if dest == cl.leader:
                for item, ti in items:
                    self._insert_due[ti].append((dest, item))
            else:
                self.transport.send("subtxn", cl.leader, dest, items, now,
                                    txns=[it.sub.parent for it, _ in items])

    def _phase3(self, dest: int, item: QueueItem, now: int) -> None:
        old = self.sch_qd[dest].put(item)
        tid = item.sub.parent
        if old is not None and self.locked.get(dest, (None,))[0] == tid:
            del self.locked[dest]  # the vote already cast is for the old version
        self.sched_rounds.setdefault(tid, now)

    # committing
    def commit_step(self, now: int) -> None:
        for dest, tid, decision, version in self._finalize_due.pop(now, ()):
            self._finalize_at(dest, tid, decision, version, now)
        inbox, self._vote_inbox = self._vote_inbox, []
        for vote in inbox:
            self._leader_vote(*vote, now=now)
        for dest in range(1, self.s + 1):
            if dest in self.locked:
                continue
            item = self.sch_qd[dest].head()
            if item is None or (self.priority == "epoch_end" and now < self._settle(item.height)):
                continue
            self.locked[dest] = (item.sub.parent, item.version)
            vote = (item.cluster, item.sub.parent, item.version, dest, item.sub.vote)
            if item.leader == dest:
                self._leader_vote(*vote, now=now)
            else:
                self.transport.send("vote", dest, item.leader, [vote], now, txns=[item.sub.parent])

    def _settle(self, h: Height) -> int:
        # last round a lower-height entry can still be inserted anywhere
        return max(h.t - self.clock.length(i) + 2 * self._dmax[i] for i in self.layers if i <= h.layer)

    def _leader_vote(self, ckey, tid, version, dest, ok, now):
        entry = self.sch_ldr.get(ckey, {}).get(tid)
        if entry is None or entry.version != version:
            if entry is None and tid not in self._retired:
                raise RuntimeError(f"vote for unknown transaction T{tid}")
            return  # stale vote for a recolored or already confirmed transaction
        entry.votes[dest] = ok
        if len(entry.votes) < len(entry.txn.shards):
            return
        del self.sch_ldr[ckey][tid]
        self._retired.add(tid)
        self.final_height[tid] = entry.height
        decision = all(entry.votes.values())
        leader = entry.cluster.leader
        dests = sorted(entry.txn.shards)
        R = now + max(self.topology.d(leader, d) for d in dests) + 1
        self._remaining[tid] = len(dests)
        self._txn_of[tid] = entry.txn
        for d in dests:
            payload = [(tid, decision, entry.version, R)]
            if d == leader:
                self._finalize_due[R].append((d, tid, decision, entry.version))
            else:
                self.transport.send("confirm", leader, d, payload, now, txns=[tid])

    def _finalize_at(self, dest, tid, decision, version, now):
        if self.locked.get(dest) != (tid, version):
            raise RuntimeError(f"S{dest}: confirm for T{tid} v{version} but lock is {self.locked.get(dest)}")
        item = self.sch_qd[dest].pop_head()
        if item.sub.parent != tid:
            raise RuntimeError(f"S{dest}: head is T{item.sub.parent}, confirm is for T{tid}")
        del self.locked[dest]
        txn = self._txn_of[tid]
        self._finalize(dest, txn, decision, now)
        self._remaining[tid] -= 1
        if not self._remaining[tid]:
            del self._remaining[tid], self._txn_of[tid]
            self._finish(txn, decision, now)

    # introspection used by the invariant checks
    def queue_orders(self) -> dict[int, list[int]]:
        return {sh: [it.sub.parent for it in q.ordered()] for sh, q in self.sch_qd.items()}


def fds_phase_schedule(state: FullyDistributedScheduler, now: int) -> FullyDistributedScheduler:
    state.phase_schedule(now)
    return state


def fds_commit_step(state: FullyDistributedScheduler, now: int) -> FullyDistributedScheduler:
    state.commit_step(now)
    return state


def fds_latency_bound(b: int, k: int, s: int, d: int, c1: float) -> float:
    log_s = max(1, math.ceil(math.log2(s))) if s > 1 else 1
    return 2 * c1 * b * d * log_s ** 2 * min(k, heavy_threshold(s))


def fds_rate_threshold(k: int, d: int, sublayers: int, c: int = 60) -> Fraction:
    """A rate at which no shard's token bucket can refill within an epoch round trip."""
    return Fraction(1, c * max(d, 1) * sublayers * k)


def arrival_windows(injection_rounds, rounds: int, period: int) -> np.ndarray:
    """Number of new transactions in each aligned window of ``period`` rounds."""
    n = max(1, -(-rounds // period))
    inj = np.asarray(injection_rounds, dtype=np.int64)
    return np.bincount(inj // period, minlength=n)[:n] if inj.size else np.zeros(n, dtype=np.int64)


def fds_check_stability_invariants(metrics, rho, b: int, k: int, s: int, d: int, c1: float,
                                   clock: EpochClock, top_layer: int, sublayers: int = 2,
                                   threshold: float = 0.01) -> StabilityReport:
    """Pending <= 4bs, latency bound, and at most 2bs new transactions per top period.

    Bounds are asserted only below the configured rate threshold.
    """
    from .engine import detect_growth

    rho = parse_rate(rho)
    applies = rho <= fds_rate_threshold(k, d, sublayers)
    rep = StabilityReport(applies)
    out = metrics.outstanding
    lat = metrics.latencies()
    period = clock.length(top_layer)
    windows = arrival_windows(metrics.injection, metrics.rounds, period)
    lat_bound = fds_latency_bound(b, k, s, d, c1)
    growth = detect_growth(out, threshold)
    rep.observations = {
        "max_pending": int(out.max()) if out.size else 0,
        "max_latency": int(lat.max()) if lat.size else 0,
        "max_window": int(windows.max()) if windows.size else 0,
        "pending_bound": 4 * b * s,
        "latency_bound": lat_bound,
        "window_bound": 2 * b * s,
        "period": period,
        "slope": growth.slope,
        "growing": growth.growing,
    }
    if not applies:
        return rep
    over = np.nonzero(out > 4 * b * s)[0]
    if over.size:
        r = int(over[0])
        rep.violations.append(f"round {r}: {int(out[r])} pending > 4bs = {4 * b * s}")
    bad = np.nonzero(lat > lat_bound)[0]
    if bad.size:
        tid = int(metrics.txn_ids[metrics.finished_mask][bad[0]])
        rep.violations.append(f"T{tid}: latency {int(lat[bad[0]])} > {lat_bound}")
    wbad = np.nonzero(windows > 2 * b * s)[0]
    if wbad.size:
        w = int(wbad[0])
        rep.violations.append(f"period [{w * period}, {(w + 1) * period}): "
                              f"{int(windows[w])} new transactions > 2bs = {2 * b * s}")
    if growth.growing:
        rep.violations.append(f"pending queue grows (slope {growth.slope:.4f})")
    return rep
