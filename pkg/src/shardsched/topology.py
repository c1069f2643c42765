"""Shard distances and the layered cluster decomposition used by the FDS."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Topology:
    s: int
    dist: np.ndarray  # (s+1)x(s+1); row/col 0 unused so shards index directly
    kind: str = "explicit"

    @property
    def D(self) -> int:
        return int(self.dist.max()) if self.s > 1 else 0

    @property
    def uniform(self) -> bool:
        if self.s == 1:
            return True
        off = self.dist[1:, 1:][~np.eye(self.s, dtype=bool)]
        return bool((off == 1).all())

    def d(self, a: int, b: int) -> int:
        return int(self.dist[a, b])

    def neighborhood(self, shard: int, q: int) -> frozenset[int]:
        row = self.dist[shard, 1:]
        return frozenset(int(i) + 1 for i in np.nonzero(row <= q)[0])

    def validate(self) -> None:
        m = self.dist[1:, 1:]
        if m.shape != (self.s, self.s):
            raise ValueError("distance matrix has wrong shape")
        if not (m == m.T).all():
            raise ValueError("distance matrix is not symmetric")
        if (np.diag(m) != 0).any():
            raise ValueError("nonzero self-distance")
        off = m[~np.eye(self.s, dtype=bool)]
        if (off < 1).any():
            raise ValueError("off-diagonal distances must be >= 1")
        # triangle inequality: min over k of d(i,k)+d(k,j) >= d(i,j)
        for k in range(self.s):
            if (m[:, [k]] + m[[k], :] < m).any():
                raise ValueError("triangle inequality violated")


def _embed(m: np.ndarray) -> np.ndarray:
    s = m.shape[0]
    full = np.zeros((s + 1, s + 1), dtype=np.int64)
    full[1:, 1:] = m
    return full


def line_topology(s: int) -> Topology:
    if s < 1:
        raise ValueError("need at least one shard")
    idx = np.arange(1, s + 1)
    return Topology(s, _embed(np.abs(idx[:, None] - idx[None, :])), kind="line")


def uniform_topology(s: int) -> Topology:
    if s < 1:
        raise ValueError("need at least one shard")
    return Topology(s, _embed(1 - np.eye(s, dtype=np.int64)), kind="uniform")


def load_topology(path: str | Path) -> Topology:
    """Read ``s`` then ``uniform``, ``line`` or a lower-triangular matrix.

    Matrix rows are whitespace separated; row ``i`` (1-based) lists
    ``d(i,1) .. d(i,i-1)``, so the first row is empty and may be omitted.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty topology file")
    s = int(lines[0])
    body = lines[1:]
    if body and body[0] in ("uniform", "line"):
        return uniform_topology(s) if body[0] == "uniform" else line_topology(s)
    rows = [list(map(int, ln.split())) for ln in body]
    if len(rows) == s and not rows[0]:
        rows = rows[1:]
    if len(rows) != s - 1 or any(len(r) != i + 1 for i, r in enumerate(rows)):
        raise ValueError(f"{path}: expected {s - 1} lower-triangular rows")
    m = np.zeros((s, s), dtype=np.int64)
    for i, row in enumerate(rows, start=1):
        m[i, :i] = row
        m[:i, i] = row
    topo = Topology(s, _embed(m))
    topo.validate()
    return topo


@dataclass(frozen=True)
class Cluster:
    layer: int
    sublayer: int
    index: int  # position within its (layer, sublayer) partition
    members: frozenset[int]
    leader: int | None
    diameter: int

    @property
    def level(self) -> tuple[int, int]:
        return (self.layer, self.sublayer)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.layer, self.sublayer, self.index)

    def __repr__(self):
        lo, hi = min(self.members), max(self.members)
        span = f"S{lo}" if lo == hi else f"S{lo}..S{hi}"
        return f"C(L{self.layer},SL{self.sublayer},{span},ldr={self.leader})"


@dataclass
class ClusterHierarchy:
    topology: Topology
    layers: int
    sublayers: int
    clusters: dict[tuple[int, int], list[Cluster]] = field(default_factory=dict)

    def levels(self) -> list[tuple[int, int]]:
        return sorted(self.clusters)

    def all_clusters(self) -> list[Cluster]:
        return [c for lvl in self.levels() for c in self.clusters[lvl]]

    def cluster_of(self, shard: int, level: tuple[int, int]) -> Cluster:
        for c in self.clusters[level]:
            if shard in c.members:
                return c
        raise KeyError((shard, level))

    def layer_diameter(self, layer: int) -> int:
        return max(c.diameter for lvl, cs in self.clusters.items() if lvl[0] == layer for c in cs)


def strong_diameter(topo: Topology, members) -> int:
    idx = sorted(members)
    if len(idx) < 2:
        return 0
    sub = topo.dist[np.ix_(idx, idx)]
    return int(sub.max())


def leader_radius(layer: int) -> int:
    """Radius a leader's neighborhood must fit inside its cluster.

    A full block of ``2**layer`` shards on a line can hold a centred
    neighborhood of radius ``2**(layer-1) - 1`` and no larger.
    """
    return 0 if layer == 0 else 2 ** (layer - 1) - 1


def _pick_leader(members: frozenset[int], radius: int, s: int) -> int | None:
    # unclipped neighborhood: a block cut short by the line end cannot host a leader
    for m in sorted(members):
        if all(0 < x <= s and x in members for x in range(m - radius, m + radius + 1)):
            return m
    return None


def line_layer_count(s: int) -> int:
    return max(1, math.ceil(math.log2(s)) + 1) if s > 1 else 1


def line_cluster_hierarchy(topo: Topology) -> ClusterHierarchy:
    """Aligned and half-shifted power-of-two blocks on a line of shards.

    Layer 0 is singletons. Layer ``i`` sublayer 0 cuts the line into blocks
    of ``2**i`` starting at S1; sublayer 1 shifts the cuts right by
    ``2**(i-1)``. The top layer is one cluster of every shard.
    """
    s = topo.s
    layers = line_layer_count(s)
    h = ClusterHierarchy(topo, layers=layers, sublayers=2 if layers > 1 else 1)
    h.clusters[(0, 0)] = [
        Cluster(0, 0, i - 1, frozenset([i]), i, 0) for i in range(1, s + 1)
    ]
    top = layers - 1
    for layer in range(1, layers):
        size = 2 ** layer
        offsets = [0] if layer == top else [0, size // 2]
        for sub, off in enumerate(offsets):
            cuts = [1] + list(range(1 + off if off else 1 + size, s + 1, size))
            cuts = sorted(set(cuts))
            blocks = [frozenset(range(a, b)) for a, b in zip(cuts, cuts[1:] + [s + 1])]
            if layer == top:
                blocks = [frozenset(range(1, s + 1))]
            clusters = []
            for idx, members in enumerate(blocks):
                leader = _pick_leader(members, leader_radius(layer), s)
                if layer == top and leader is None:
                    leader = sorted(members)[(len(members) - 1) // 2]
                clusters.append(Cluster(layer, sub, idx, members, leader, strong_diameter(topo, members)))
            h.clusters[(layer, sub)] = clusters
    return h


def uniform_cluster_hierarchy(topo: Topology) -> ClusterHierarchy:
    """Singletons plus one all-shard cluster led by S1."""
    s = topo.s
    h = ClusterHierarchy(topo, layers=2 if s > 1 else 1, sublayers=1)
    h.clusters[(0, 0)] = [Cluster(0, 0, i - 1, frozenset([i]), i, 0) for i in range(1, s + 1)]
    if s > 1:
        h.clusters[(1, 0)] = [Cluster(1, 0, 0, frozenset(range(1, s + 1)), 1, topo.D)]
    return h


def build_hierarchy(topo: Topology) -> ClusterHierarchy:
    if topo.kind == "line":
        return line_cluster_hierarchy(topo)
    if topo.uniform:
        return uniform_cluster_hierarchy(topo)
    raise NotImplementedError("cluster construction exists only for line and uniform topologies")


def transaction_region(home: int, destinations, topo: Topology, rule: str = "neighborhood") -> frozenset[int]:
    """Shards a home cluster must contain.

    ``neighborhood``: the whole x-neighborhood of the home shard, x being
    the farthest destination. ``access``: only the home shard and the
    destinations themselves.
    """
    dests = frozenset(destinations)
    if rule == "neighborhood":
        x = max((topo.d(home, d) for d in dests), default=0)
        return topo.neighborhood(home, x)
    if rule == "access":
        return dests | {home}
    raise ValueError(f"unknown home-cluster rule {rule!r}")


def home_cluster(home: int, destinations, hierarchy: ClusterHierarchy, rule: str = "neighborhood") -> Cluster:
    """Lowest (layer, sublayer) cluster with a leader covering the region."""
    region = transaction_region(home, destinations, hierarchy.topology, rule)
    for level in hierarchy.levels():
        for c in hierarchy.clusters[level]:
            if c.leader is not None and region <= c.members:
                return c
    raise LookupError(f"no cluster covers {sorted(region)}")
