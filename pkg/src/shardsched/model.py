"""Shards, accounts, transactions and per-shard ledgers.

Shards are numbered ``1..s``. A shard is an atomic actor: intra-shard
consensus is folded into the notion of a round.
"""
from __future__ import annotations

import enum
import graphlib
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class Status(enum.Enum):
    PENDING = "pending"
    SCHEDULED = "scheduled"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(frozen=True, order=True)
class Account:
    id: int
    owner: int  # shard index


def one_account_per_shard(s: int) -> dict[int, Account]:
    """Account ``i`` lives on shard ``i``; the default layout."""
    return {i: Account(i, i) for i in range(1, s + 1)}


def accounts_for(s: int, per_shard: int = 1) -> dict[int, Account]:
    if per_shard == 1:
        return one_account_per_shard(s)
    accts = {}
    for shard in range(1, s + 1):
        for j in range(per_shard):
            aid = (shard - 1) * per_shard + j + 1
            accts[aid] = Account(aid, shard)
    return accts


@dataclass(eq=False)
class Transaction:
    txn_id: int
    home_shard: int
    accessed_accounts: frozenset[Account]
    injection_round: int
    status: Status = Status.PENDING
    commit_round: int | None = None
    # simulated outcomes of the condition check / validity per destination shard;
    # a missing entry means the check passes
    failing_shards: frozenset[int] = frozenset()

    def __post_init__(self):
        if not self.accessed_accounts:
            raise ValueError(f"transaction {self.txn_id} accesses no accounts")

    @property
    def shards(self) -> frozenset[int]:
        return frozenset(a.owner for a in self.accessed_accounts)

    @property
    def finished(self) -> bool:
        return self.status in (Status.COMMITTED, Status.ABORTED)

    def finish(self, status: Status, rnd: int) -> None:
        if self.finished:
            raise RuntimeError(f"transaction {self.txn_id} finished twice")
        self.status = status
        self.commit_round = rnd

    def __repr__(self):
        accts = ",".join(str(a.id) for a in sorted(self.accessed_accounts))
        return f"T{self.txn_id}(home=S{self.home_shard}, acc={{{accts}}}, t={self.injection_round})"


@dataclass(frozen=True)
class SubTransaction:
    parent: int
    destination: int
    accounts: frozenset[Account]
    condition_ok: bool = True
    valid: bool = True

    @property
    def vote(self) -> bool:
        return self.condition_ok and self.valid


def split(txn: Transaction) -> list[SubTransaction]:
    """One subtransaction per distinct destination shard, ordered by shard."""
    if not txn.accessed_accounts:
        raise ValueError("cannot split a transaction with no accounts")
    by_shard: dict[int, set[Account]] = defaultdict(set)
    for acct in txn.accessed_accounts:
        by_shard[acct.owner].add(acct)
    return [
        SubTransaction(
            parent=txn.txn_id,
            destination=shard,
            accounts=frozenset(accts),
            condition_ok=shard not in txn.failing_shards,
            valid=True,
        )
        for shard, accts in sorted(by_shard.items())
    ]


@dataclass
class ConflictGraph:
    vertices: set[int] = field(default_factory=set)
    adj: dict[int, set[int]] = field(default_factory=dict)

    @property
    def edges(self) -> set[frozenset[int]]:
        return {frozenset((u, v)) for u, nbrs in self.adj.items() for v in nbrs}

    def degree(self, v: int) -> int:
        return len(self.adj.get(v, ()))

    def max_degree(self) -> int:
        return max((len(n) for n in self.adj.values()), default=0)

    def neighbors(self, v: int) -> set[int]:
        return self.adj.get(v, set())

    def add_edge(self, u: int, v: int) -> None:
        if u == v:
            raise ValueError("self-loop")
        self.adj[u].add(v)
        self.adj[v].add(u)


def conflict_keys(txn: Transaction, granularity: str = "account") -> frozenset:
    if granularity == "account":
        return txn.accessed_accounts
    if granularity == "shard":
        return txn.shards
    raise ValueError(f"unknown conflict granularity {granularity!r}")


def build_conflict_graph(txns: Iterable[Transaction], granularity: str = "account") -> ConflictGraph:
    """Conflict graph over ``txns``; all accesses count as writes.

    ``granularity="shard"`` makes transactions touching a common shard
    conflict, which is what the schedulers use so that a shard never
    finalizes two subtransactions in one round.
    """
    txns = list(txns)
    ids = [t.txn_id for t in txns]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate txn ids")
    g = ConflictGraph(vertices=set(ids), adj={i: set() for i in ids})
    by_key: dict[object, list[int]] = defaultdict(list)
    for t in txns:
        for key in conflict_keys(t, granularity):
            by_key[key].append(t.txn_id)
    for members in by_key.values():
        for u, v in itertools.combinations(members, 2):
            g.add_edge(u, v)
    return g


class LedgerError(ValueError):
    pass


@dataclass
class Ledger:
    shard: int
    entries: list[tuple[int, int]] = field(default_factory=list)

    def append(self, txn_id: int, rnd: int) -> "Ledger":
        if self.entries and rnd < self.entries[-1][1]:
            raise LedgerError(
                f"S{self.shard}: round {rnd} precedes last entry round {self.entries[-1][1]}"
            )
        self.entries.append((txn_id, rnd))
        return self

    def position(self) -> dict[int, int]:
        return {tid: i for i, (tid, _) in enumerate(self.entries)}


def ledger_append(ledger: Ledger, txn_id: int, rnd: int) -> Ledger:
    return ledger.append(txn_id, rnd)


@dataclass
class LedgerAudit:
    atomicity_violations: list[str] = field(default_factory=list)
    order_violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.atomicity_violations or self.order_violations)


def audit_ledgers(txns: Mapping[int, Transaction], ledgers: Mapping[int, Ledger]) -> LedgerAudit:
    """Check all-or-nothing commits and cross-ledger order of conflicting pairs."""
    audit = LedgerAudit()
    seen: dict[int, list[tuple[int, int]]] = defaultdict(list)  # txn -> [(shard, round)]
    for shard, ledger in ledgers.items():
        for tid, rnd in ledger.entries:
            seen[tid].append((shard, rnd))

    for tid, txn in txns.items():
        where = seen.get(tid, [])
        if txn.status is Status.COMMITTED:
            shards = sorted(s for s, _ in where)
            rounds = {r for _, r in where}
            if shards != sorted(txn.shards):
                audit.atomicity_violations.append(f"T{tid} committed but in ledgers {shards}")
            elif rounds != {txn.commit_round}:
                audit.atomicity_violations.append(f"T{tid} ledger rounds {sorted(rounds)} != {txn.commit_round}")
        elif where:
            audit.atomicity_violations.append(f"T{tid} is {txn.status.value} but in ledgers {where}")

    # Conflicting pairs are consistently ordered iff the union of every
    # ledger's successor edges is acyclic.
    sorter = graphlib.TopologicalSorter()
    for ledger in ledgers.values():
        ids = [tid for tid, _ in ledger.entries]
        for tid in ids:
            sorter.add(tid)
        for a, b in zip(ids, ids[1:]):
            sorter.add(b, a)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        audit.order_violations.append(f"inconsistent ledger order around {exc.args[1]}")
    return audit
