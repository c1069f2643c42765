"""Reliable inter-shard messaging with distance-proportional delay."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

from .topology import Topology

KINDS = ("txn_to_leader", "colored_txn", "subtxn", "vote", "confirm")


@dataclass(frozen=True)
class Message:
    kind: str
    src: int
    dst: int
    payload: object
    send_round: int
    deliver_round: int
    txns: tuple[int, ...] = ()


class Transport:
    """Delivers each message exactly at ``send_round + delay``.

    Messages due in the same round come out in send order, which keeps
    delivery FIFO per (src, dst, kind).
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self._queue: dict[int, list[Message]] = defaultdict(list)
        self._refs: Counter[int] = Counter()
        self.sent = 0

    def send(self, kind: str, src: int, dst: int, payload, now: int,
             txns: tuple[int, ...] = (), delay: int | None = None) -> Message:
        if kind not in KINDS:
            raise ValueError(f"unknown message kind {kind!r}")
        if delay is None:
            delay = self.topology.d(src, dst)
        if delay < 1:
            raise ValueError("zero-delay messages are handled locally, not sent")
        msg = Message(kind, src, dst, payload, now, now + delay, tuple(txns))
        self._queue[msg.deliver_round].append(msg)
        for t in set(msg.txns):
            self._refs[t] += 1
        self.sent += 1
        return msg

    def deliver(self, now: int) -> list[Message]:
        stale = [r for r in self._queue if r < now]
        if stale:
            raise RuntimeError(f"undelivered messages for past rounds {sorted(stale)}")
        msgs = self._queue.pop(now, [])
        for m in msgs:
            for t in set(m.txns):
                self._refs[t] -= 1
                if not self._refs[t]:
                    del self._refs[t]
        return msgs

    def in_flight_txns(self) -> set[int]:
        return set(self._refs)

    def in_flight_count(self) -> int:
        return len(self._refs)

    def pending_messages(self) -> int:
        return sum(len(v) for v in self._queue.values())
