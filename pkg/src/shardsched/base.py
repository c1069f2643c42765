"""Plumbing shared by the two schedulers."""
from __future__ import annotations

from typing import Callable

from .model import Ledger, Status, Transaction
from .net import Message, Transport
from .topology import Topology

FinishFn = Callable[[Transaction, Status, int], None]


class SchedulerBase:
    name = "base"

    def __init__(self, topology: Topology, transport: Transport, finish: FinishFn | None = None,
                 retry_aborts: bool = False):
        self.topology = topology
        self.s = topology.s
        self.transport = transport
        self.ledgers = {sh: Ledger(sh) for sh in range(1, self.s + 1)}
        self._finish_cb = finish
        self.retry_aborts = retry_aborts
        self._last_finalize: dict[int, int] = {}
        self.capacity_violations: list[tuple[int, int]] = []  # (shard, round)

    # engine hooks
    def admit(self, txn: Transaction, now: int) -> None:
        raise NotImplementedError

    def step(self, now: int, inbox: list[Message]) -> None:
        raise NotImplementedError

    def leader_queue_size(self) -> int:
        return 0

    # helpers
    def _finalize(self, shard: int, txn: Transaction, commit: bool, now: int) -> None:
        if self._last_finalize.get(shard) == now:
            self.capacity_violations.append((shard, now))
        self._last_finalize[shard] = now
        if commit:
            self.ledgers[shard].append(txn.txn_id, now)

    def _finish(self, txn: Transaction, commit: bool, now: int) -> None:
        if not commit and self.retry_aborts:
            # the retried attempt re-evaluates its condition, modeled as passing
            txn.status = Status.PENDING
            txn.failing_shards = frozenset()
            self.admit(txn, now)
            return
        txn.finish(Status.COMMITTED if commit else Status.ABORTED, now)
        if self._finish_cb is not None:
            self._finish_cb(txn, txn.status, now)
