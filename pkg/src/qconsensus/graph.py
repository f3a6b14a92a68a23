"""Undirected simple connected graphs and the random families used in experiments.

Random generation uses numpy's PCG64 bit generator (``numpy.random.default_rng``),
whose stream is fixed across platforms for a given seed. Attempt ``a`` of a
rejection loop draws from ``SeedSequence([seed, a])`` so every retry is
reproducible on its own.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConnectivityFailure, ParameterOutOfRange

DEFAULT_RETRIES = 1000


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _edge_set: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ParameterOutOfRange(f"graph needs at least 2 nodes, got {self.n}")
        canon = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={self.n}")
            e = (min(u, v), max(u, v))
            if e in canon:
                raise ValueError(f"duplicate edge {e}")
            canon.add(e)
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        adj = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))
        object.__setattr__(self, "_edge_set", frozenset(self.edges))
        if not is_connected(self.n, self.adjacency):
            raise ValueError("graph is not connected")

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.adjacency)

    @property
    def m(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self._edge_set

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=np.int8)
        for u, v in self.edges:
            A[u, v] = A[v, u] = 1
        return A


@dataclass(frozen=True)
class GeometricLayout:
    positions: np.ndarray
    radius: float


def is_connected(n: int, adjacency) -> bool:
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count == n


def _try_graph(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    if not is_connected(n, adj):
        return None
    return Graph(n, tuple(edges))


def _attempt_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))


def erdos_renyi(n: int, p: float, seed: int = 0, retries: int = DEFAULT_RETRIES) -> Graph:
    """G(n, p) conditioned on connectivity by rejection sampling."""
    if n < 2:
        raise ParameterOutOfRange("n must be > 1")
    if not 0 < p <= 1:
        raise ParameterOutOfRange("p must lie in (0, 1]")
    iu, ju = np.triu_indices(n, k=1)
    for attempt in range(retries):
        rng = _attempt_rng(seed, attempt)
        keep = rng.random(iu.size) < p
        g = _try_graph(n, list(zip(iu[keep].tolist(), ju[keep].tolist())))
        if g is not None:
            return g
    raise ConnectivityFailure(f"no connected G({n}, {p}) found", retries)


def rgg_radius(n: int, c: float) -> float:
    """Connectivity radius ``sqrt(c * ln(n) / n)``."""
    return math.sqrt(c * math.log(n) / n)


def random_geometric(
    n: int,
    c: float | None = None,
    seed: int = 0,
    radius: float | None = None,
    retries: int = DEFAULT_RETRIES,
) -> tuple[Graph, GeometricLayout]:
    """Random geometric graph on the unit square, conditioned on connectivity.

    Give either the radius constant ``c`` or an explicit ``radius``.
    """
    if n < 2:
        raise ParameterOutOfRange("n must be > 1")
    if radius is None:
        if c is None or c <= 0:
            raise ParameterOutOfRange("radius constant c must be > 0")
        radius = rgg_radius(n, c)
    elif radius <= 0:
        raise ParameterOutOfRange("radius must be > 0")
    iu, ju = np.triu_indices(n, k=1)
    r2 = radius * radius
    for attempt in range(retries):
        rng = _attempt_rng(seed, attempt)
        pos = rng.random((n, 2))
        diff = pos[iu] - pos[ju]
        close = (diff * diff).sum(axis=1) <= r2
        g = _try_graph(n, list(zip(iu[close].tolist(), ju[close].tolist())))
        if g is not None:
            return g, GeometricLayout(positions=pos, radius=radius)
    raise ConnectivityFailure(f"no connected RGG(n={n}, R={radius:.4f}) found", retries)


def path_graph(n: int) -> Graph:
    return Graph(n, tuple((i, i + 1) for i in range(n - 1)))


def complete_graph(n: int) -> Graph:
    return Graph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))


def complete_bipartite_regular(n_left: int, n_right: int) -> Graph:
    """Complete bipartite graph K_{a,b}; nodes ``0..a-1`` form the left side."""
    if n_left < 1 or n_right < 1:
        raise ParameterOutOfRange("both sides need at least one node")
    edges = tuple((i, n_left + j) for i in range(n_left) for j in range(n_right))
    return Graph(n_left + n_right, edges)


def write_edge_list(g: Graph, path) -> None:
    lines = [f"{g.n} {g.m}"] + [f"{u} {v}" for u, v in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise ValueError(f"{path}: empty edge list")
    n, m = int(rows[0][0]), int(rows[0][1])
    edges = [(int(a), int(b)) for a, b in rows[1:]]
    if len(edges) != m:
        raise ValueError(f"{path}: header declares {m} edges, found {len(edges)}")
    return Graph(n, tuple(edges))
