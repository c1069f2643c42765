"""(rho, b)-bounded transaction injection.

A trace is admissible when, for every shard and every window of ``t``
consecutive rounds, at most ``floor(rho*t) + b`` injected transactions
access that shard. Because counts and ``b`` are integers the floor is
immaterial: ``n <= floor(x) + b`` iff ``n - b <= x``.
"""
from __future__ import annotations

import io
import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from .model import Account, Transaction


def parse_rate(value) -> Fraction:
    """Accept ``0.05``, ``"0.05"`` or ``"1/144"``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class AdversaryParams:
    rho: Fraction
    b: int
    k: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rho", parse_rate(self.rho))
        if not (0 <= self.rho <= 1):
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.b < 1:
            raise ValueError(f"b must be a positive integer, got {self.b}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class Injection:
    round: int
    txn_id: int
    home: int
    accounts: tuple[int, ...]


@dataclass
class InjectionTrace:
    s: int
    rounds: int
    accounts_per_shard: int = 1
    events: list[Injection] = field(default_factory=list)

    def owner(self, account: int) -> int:
        return (account - 1) // self.accounts_per_shard + 1

    def shards_of(self, inj: Injection) -> frozenset[int]:
        return frozenset(self.owner(a) for a in inj.accounts)

    def by_round(self) -> dict[int, list[Injection]]:
        out: dict[int, list[Injection]] = {}
        for e in self.events:
            out.setdefault(e.round, []).append(e)
        return out

    def congestion(self) -> np.ndarray:
        """Array ``c[shard, round]`` of transactions accessing the shard."""
        c = np.zeros((self.s + 1, max(self.rounds, 1)), dtype=np.int64)
        for e in self.events:
            for sh in self.shards_of(e):
                c[sh, e.round] += 1
        return c

    def transactions(self, failing: dict[int, frozenset[int]] | None = None) -> Iterator[Transaction]:
        failing = failing or {}
        for e in self.events:
            yield Transaction(
                txn_id=e.txn_id,
                home_shard=e.home,
                accessed_accounts=frozenset(Account(a, self.owner(a)) for a in e.accounts),
                injection_round=e.round,
                failing_shards=failing.get(e.txn_id, frozenset()),
            )

    def __len__(self):
        return len(self.events)


def _assign_ids(pending: list[tuple[int, int, tuple[int, ...]]]) -> list[Injection]:
    # monotone in injection order, ties broken by home shard
    pending.sort(key=lambda e: (e[0], e[1]))
    return [Injection(r, i, home, accts) for i, (r, home, accts) in enumerate(pending, start=1)]


class _Buckets:
    """Per-shard token buckets scaled by the rate denominator."""

    def __init__(self, s: int, rho: Fraction, b: int, full: bool):
        self.p, self.q = rho.numerator, rho.denominator
        self.cap = b * self.q
        self.tokens = [self.cap if full else 0] * (s + 1)

    def refill(self):
        cap, p = self.cap, self.p
        self.tokens = [min(cap, t + p) for t in self.tokens]

    def take(self, shards):
        for sh in shards:
            self.tokens[sh] -= self.q
            assert self.tokens[sh] >= 0


STRATEGIES = ("uniform_random", "single_epoch_burst")


def token_bucket_generator(
    params: AdversaryParams,
    s: int,
    rounds: int,
    strategy: str = "single_epoch_burst",
    burst_round: int = 0,
    burst_window: int = 1,
    accounts_per_shard: int = 1,
) -> InjectionTrace:
    """Generate an admissible trace.

    ``uniform_random``: every round each shard, as home, proposes one
    transaction over ``1..k`` uniformly chosen shards; it is injected only
    if every touched shard has a token. Buckets start empty.

    ``single_epoch_burst``: buckets start full and the adversary keeps the
    reserve untouched, injecting at rate rho over shards whose bucket is
    full. During ``[burst_round, burst_round + burst_window)`` it spends
    every token it has, then continues at rate rho with no reserve.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = random.Random(params.seed)
    k = min(params.k, s)
    buckets = _Buckets(s, params.rho, params.b, full=(strategy == "single_epoch_burst"))
    q = buckets.q
    apps = accounts_per_shard
    shards = list(range(1, s + 1))
    out: list[tuple[int, int, tuple[int, ...]]] = []

    def pick_accounts(chosen):
        if apps == 1:
            return tuple(sorted(chosen))
        return tuple(sorted((sh - 1) * apps + rng.randrange(apps) + 1 for sh in chosen))

    for r in range(rounds):
        buckets.refill()
        tokens = buckets.tokens
        if strategy == "uniform_random":
            for home in shards:
                m = rng.randint(1, k)
                chosen = rng.sample(shards, m)
                if all(tokens[sh] >= q for sh in chosen):
                    buckets.take(chosen)
                    out.append((r, home, pick_accounts(chosen)))
            continue

        in_burst = burst_round <= r < burst_round + burst_window
        threshold = buckets.cap if r < burst_round else q
        if threshold == 0:
            continue
        ready = [sh for sh in shards if tokens[sh] >= threshold]
        while ready:
            m = min(rng.randint(1, k), len(ready))
            chosen = rng.sample(ready, m)
            buckets.take(chosen)
            home = rng.randint(1, s)
            out.append((r, home, pick_accounts(chosen)))
            ready = [sh for sh in ready if tokens[sh] >= threshold]
            if not in_burst and r >= burst_round:
                # steady regime: at most one token's worth per shard per round
                ready = [sh for sh in ready if sh not in chosen]
    return InjectionTrace(s, rounds, apps, _assign_ids(out))


def theorem1_width(k: int, s: int) -> int:
    """Size of a mutually conflicting group in which each pair owns one shard."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if k * (k + 1) // 2 <= s:
        return k + 1
    p = (math.isqrt(8 * s + 1) - 1) // 2  # greatest p with p(p+1)/2 <= s
    return p + 1


def theorem1_groups(width: int) -> list[frozenset[int]]:
    """Shard sets of the ``width`` transactions; pair (i, j) owns one shard."""
    pairs = list(itertools.combinations(range(width), 2))
    shard_of = {pair: idx + 1 for idx, pair in enumerate(pairs)}
    return [
        frozenset(shard_of[tuple(sorted((i, j)))] for j in range(width) if j != i)
        for i in range(width)
    ]


def theorem1_adversary(k: int, s: int, rho, rounds: int, b: int = 2, seed: int = 0) -> InjectionTrace:
    """Repeated batches of pairwise-conflicting transactions.

    Each batch adds two units of congestion to each of the
    ``width*(width-1)/2`` shards it uses; batches are released every
    ``ceil(2/rho)`` rounds, so the per-shard rate is as close to rho as an
    integer period allows. With ``k = 1`` the two transactions share one shard.
    A nonzero ``seed`` relabels the shards at random.
    """
    rho = parse_rate(rho)
    width = theorem1_width(k, s)
    if rho <= 0:
        raise ValueError("rho must be positive")
    groups = theorem1_groups(width)
    if seed:
        n = width * (width - 1) // 2
        label = dict(zip(range(1, n + 1), random.Random(seed).sample(range(1, s + 1), n)))
        groups = [frozenset(label[x] for x in g) for g in groups]
    used = sorted(set().union(*groups))
    period = math.ceil(Fraction(2) / rho)
    out = []
    for m, r in enumerate(range(0, rounds, period)):
        for i, g in enumerate(groups):
            home = used[(m + i) % len(used)]
            out.append((r, home, tuple(sorted(g))))
    trace = InjectionTrace(s, rounds, 1, _assign_ids(out))
    report = check_admissible(trace, rho, b)
    if not report.ok:
        raise ValueError(f"clique batches need more burstiness than b={b}: {report}")
    return trace


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    shard: int | None = None
    start: int | None = None
    end: int | None = None  # inclusive
    count: int | None = None
    limit: int | None = None

    def __bool__(self):
        return self.ok


def check_admissible(trace: InjectionTrace, rho, b: int) -> AdmissibilityReport:
    """Earliest-ending window where some shard exceeds ``floor(rho*t) + b``.

    Linear per shard: with prefix sums ``P`` and ``V[i] = q*P[i] - p*i``
    the window ``[l, e)`` violates iff ``V[e] - V[l] > q*b``.
    """
    rho = parse_rate(rho)
    p, q = rho.numerator, rho.denominator
    if not trace.events:
        return AdmissibilityReport(True)
    c = trace.congestion()
    T = c.shape[1]
    best = None
    for shard in range(1, trace.s + 1):
        row = c[shard]
        if not row.any():
            continue
        P = np.concatenate(([0], np.cumsum(row)))
        V = q * P - p * np.arange(T + 1)
        run_min = np.minimum.accumulate(V[:-1])
        bad = np.nonzero(V[1:] - run_min > q * b)[0]
        if bad.size == 0:
            continue
        e = int(bad[0]) + 1
        if best is None or e < best[1]:
            best = (shard, e, V)
    if best is None:
        return AdmissibilityReport(True)
    shard, e, V = best
    # shortest violating window ending at round e-1
    l = max(i for i in range(e) if V[e] - V[i] > q * b)
    count = int(c[shard, l:e].sum())
    limit = (p * (e - l)) // q + b
    return AdmissibilityReport(False, shard, l, e - 1, count, limit)


def check_admissible_naive(trace: InjectionTrace, rho, b: int) -> AdmissibilityReport:
    """Double loop over every window; the reference for small traces."""
    rho = parse_rate(rho)
    c = trace.congestion()
    T = c.shape[1]
    for end in range(T):
        for shard in range(1, trace.s + 1):
            total = 0
            for start in range(end, -1, -1):
                total += int(c[shard, start])
                t = end - start + 1
                limit = math.floor(rho * t) + b
                if total > limit:
                    return AdmissibilityReport(False, shard, start, end, total, limit)
    return AdmissibilityReport(True)


def write_trace(trace: InjectionTrace, out: TextIO | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w") as fh:
            write_trace(trace, fh)
        return
    out.write(f"# s={trace.s} rounds={trace.rounds} accounts_per_shard={trace.accounts_per_shard}\n")
    for e in trace.events:
        out.write(f"{e.round} {e.txn_id} {e.home} {','.join(map(str, e.accounts))}\n")


def read_trace(src: TextIO | str | Path) -> InjectionTrace:
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return read_trace(fh)
    meta = {"s": None, "rounds": None, "accounts_per_shard": "1"}
    events = []
    for lineno, line in enumerate(src, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    meta[key] = val
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 'round txn_id home acct,...'")
        r, tid, home = map(int, parts[:3])
        accts = tuple(int(a) for a in parts[3].split(","))
        events.append(Injection(r, tid, home, accts))
    apps = int(meta["accounts_per_shard"])
    s = int(meta["s"]) if meta["s"] else max(((a - 1) // apps + 1 for e in events for a in e.accounts), default=1)
    s = max([s] + [e.home for e in events])
    rounds = int(meta["rounds"]) if meta["rounds"] else max((e.round for e in events), default=-1) + 1
    return InjectionTrace(s, rounds, apps, events)


def trace_text(trace: InjectionTrace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()
