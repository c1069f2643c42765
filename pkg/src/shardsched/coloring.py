"""Greedy vertex coloring of conflict graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from .model import ConflictGraph, Transaction, conflict_keys


@dataclass
class Coloring:
    colors: dict[int, int]

    @property
    def num_colors(self) -> int:
        return max(self.colors.values()) + 1 if self.colors else 0

    def classes(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_colors)]
        for v, c in sorted(self.colors.items()):
            out[c].append(v)
        return out

    def is_proper(self, g: ConflictGraph) -> bool:
        return all(self.colors[u] != self.colors[v] for u in g.adj for v in g.adj[u])


def _lowest_free(mask: int) -> int:
    # index of the lowest zero bit
    return (~mask & (mask + 1)).bit_length() - 1


def greedy_color(g: ConflictGraph, order: Sequence[int] | None = None) -> Coloring:
    """Give each vertex the smallest color not used by an earlier neighbor."""
    order = sorted(g.vertices) if order is None else list(order)
    colors: dict[int, int] = {}
    for v in order:
        used = 0
        for u in g.adj.get(v, ()):
            c = colors.get(u)
            if c is not None:
                used |= 1 << c
        colors[v] = _lowest_free(used)
    return Coloring(colors)


def greedy_color_by_keys(items: Iterable[tuple[int, Iterable[Hashable]]]) -> Coloring:
    """Greedy coloring where vertices conflict iff they share a key.

    Gives the same result as :func:`greedy_color` on the explicit conflict
    graph with the same vertex order, without materialising the edges.
    """
    used: dict[Hashable, int] = {}
    colors: dict[int, int] = {}
    for vid, keys in items:
        keys = tuple(keys)
        mask = 0
        for k in keys:
            mask |= used.get(k, 0)
        c = _lowest_free(mask)
        colors[vid] = c
        bit = 1 << c
        for k in keys:
            used[k] = used.get(k, 0) | bit
    return Coloring(colors)


def heavy_threshold(s: int) -> int:
    return math.isqrt(s - 1) + 1 if s > 1 else 1  # ceil(sqrt(s))


def heavy_light_color(
    txns: Sequence[Transaction], s: int, granularity: str = "account"
) -> Coloring:
    """Unique colors for transactions touching more than ceil(sqrt(s)) shards,
    then greedy on the rest with a disjoint palette."""
    limit = heavy_threshold(s)
    ordered = sorted(txns, key=lambda t: t.txn_id)
    heavy = [t for t in ordered if len(t.shards) > limit]
    light = [t for t in ordered if len(t.shards) <= limit]
    colors = {t.txn_id: i for i, t in enumerate(heavy)}
    base = len(heavy)
    light_coloring = greedy_color_by_keys((t.txn_id, conflict_keys(t, granularity)) for t in light)
    colors.update({v: base + c for v, c in light_coloring.colors.items()})
    return Coloring(colors)


def color_transactions(
    txns: Sequence[Transaction], strategy: str = "greedy", s: int | None = None,
    granularity: str = "shard",
) -> Coloring:
    """Color transactions in ascending txn_id order."""
    if strategy == "greedy":
        ordered = sorted(txns, key=lambda t: t.txn_id)
        return greedy_color_by_keys((t.txn_id, conflict_keys(t, granularity)) for t in ordered)
    if strategy == "heavy_light":
        if s is None:
            raise ValueError("heavy_light needs the shard count")
        return heavy_light_color(txns, s, granularity)
    raise ValueError(f"unknown coloring strategy {strategy!r}")


def zeta_bound(b: int, s: int) -> int:
    """Color budget of the heavy/light argument: 2b*r + (2b-1)*r + 1, r = ceil(sqrt(s))."""
    r = heavy_threshold(s)
    return 2 * b * r + (2 * b - 1) * r + 1
