"""Weight matrices: Metropolis, modified Metropolis, explicit, and the bad 2-node design."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ParameterOutOfRange
from .graph import Graph
from .numeric import HALF, format_rational, parse_rational, to_fraction

RULES = ("Symmetry", "DoublyStochastic", "DominantDiagonal", "Sparsity", "Rationality")


@dataclass(frozen=True)
class WeightMatrix:
    """Sparse exact weight matrix.

    ``offdiag`` maps ordered pairs ``(i, j)``, ``i != j``, to nonzero weights;
    constructors store both orientations. Asymmetric input is representable on
    purpose so that validation can report it.
    """

    n: int
    offdiag: Mapping[tuple[int, int], Fraction]
    diag: tuple[Fraction, ...]
    _rows: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        off = {}
        for (i, j), w in self.offdiag.items():
            if i == j:
                raise ValueError("diagonal entries belong in diag")
            w = to_fraction(w)
            if w != 0:
                off[(int(i), int(j))] = w
        object.__setattr__(self, "offdiag", off)
        object.__setattr__(self, "diag", tuple(to_fraction(d) for d in self.diag))
        if len(self.diag) != self.n:
            raise ValueError("diag length must equal n")
        rows = [dict() for _ in range(self.n)]
        for (i, j), w in sorted(off.items()):
            rows[i][j] = w
        object.__setattr__(self, "_rows", tuple(rows))

    def neighbor_weights(self, i: int) -> dict[int, Fraction]:
        return self._rows[i]

    def entry(self, i: int, j: int) -> Fraction:
        if i == j:
            return self.diag[i]
        return self.offdiag.get((i, j), Fraction(0))

    def dense(self) -> list[list[Fraction]]:
        return [[self.entry(i, j) for j in range(self.n)] for i in range(self.n)]

    def support(self) -> set[tuple[int, int]]:
        return {(min(i, j), max(i, j)) for i, j in self.offdiag}

    @property
    def delta(self) -> Fraction:
        return min(self.offdiag.values())

    @classmethod
    def from_dense(cls, rows: Sequence[Sequence]) -> "WeightMatrix":
        n = len(rows)
        off = {}
        for i, row in enumerate(rows):
            if len(row) != n:
                raise ValueError("matrix must be square")
            for j, v in enumerate(row):
                if i != j:
                    off[(i, j)] = to_fraction(v)
        return cls(n, off, tuple(to_fraction(rows[i][i]) for i in range(n)))


def _symmetric(n: int, edge_weights: dict[tuple[int, int], Fraction]) -> WeightMatrix:
    off = {}
    for (i, j), w in edge_weights.items():
        off[(i, j)] = w
        off[(j, i)] = w
    rowsum = [Fraction(0)] * n
    for (i, _), w in off.items():
        rowsum[i] += w
    return WeightMatrix(n, off, tuple(1 - s for s in rowsum))


def metropolis(g: Graph) -> WeightMatrix:
    d = g.degrees
    return _symmetric(g.n, {(u, v): Fraction(1, max(d[u], d[v]) + 1) for u, v in g.edges})


def modified_metropolis(g: Graph, C=2) -> WeightMatrix:
    """Metropolis weights divided by a rational ``C >= 2``; always dominant-diagonal."""
    C = to_fraction(C)
    if C < 2:
        raise ParameterOutOfRange(f"C must be >= 2, got {C}")
    d = g.degrees
    return _symmetric(g.n, {(u, v): 1 / (C * (max(d[u], d[v]) + 1)) for u, v in g.edges})


def two_node_cyclic(w) -> WeightMatrix:
    """The 2x2 matrix ``[[w, 1-w], [1-w, w]]``."""
    w = to_fraction(w)
    if not 0 < w < 1:
        raise ParameterOutOfRange("w must lie in (0, 1)")
    return _symmetric(2, {(0, 1): 1 - w})


def uniform_bipartite(n_left: int, n_right: int, self_weight) -> tuple[Graph, WeightMatrix]:
    """Regular complete bipartite graph with every self-weight equal to ``self_weight``.

    Needs ``n_left == n_right`` so that the uniform edge weight keeps the matrix
    doubly stochastic.
    """
    from .graph import complete_bipartite_regular

    if n_left != n_right:
        raise ParameterOutOfRange("regular bipartite graph needs equal sides")
    g = complete_bipartite_regular(n_left, n_right)
    w = to_fraction(self_weight)
    if not 0 < w < 1:
        raise ParameterOutOfRange("self weight must lie in (0, 1)")
    edge = (1 - w) / n_left
    return g, _symmetric(g.n, {e: edge for e in g.edges})


@dataclass
class AssumptionReport:
    satisfied: bool
    violations: list[tuple[str, tuple[int, ...]]]

    def rules(self) -> set[str]:
        return {rule for rule, _ in self.violations}

    def describe(self) -> str:
        if self.satisfied:
            return "weight assumption satisfied"
        return "; ".join(f"{rule} at {loc}" for rule, loc in self.violations)


def validate_assumption1(W: WeightMatrix, g: Graph | None = None) -> AssumptionReport:
    """Check symmetry, double stochasticity, dominant diagonal, sparsity, rationality.

    Without ``g`` the sparsity rule is checked against the matrix's own support,
    which always passes.
    """
    v: list[tuple[str, tuple[int, ...]]] = []
    if g is not None and g.n != W.n:
        raise ValueError("graph and matrix dimensions differ")
    for (i, j), w in sorted(W.offdiag.items()):
        if i < j and W.offdiag.get((j, i), Fraction(0)) != w:
            v.append(("Symmetry", (i, j)))
        elif i > j and (j, i) not in W.offdiag:
            v.append(("Symmetry", (j, i)))
        if not 0 < w < 1:
            v.append(("Rationality", (i, j)))
        if g is not None and not g.has_edge(i, j):
            v.append(("Sparsity", (i, j)))
    colsum = [Fraction(0)] * W.n
    for (i, j), w in W.offdiag.items():
        colsum[j] += w
    for i in range(W.n):
        row = W.diag[i] + sum(W.neighbor_weights(i).values(), Fraction(0))
        col = W.diag[i] + colsum[i]
        if row != 1 or col != 1:
            v.append(("DoublyStochastic", (i,)))
        if not W.diag[i] > HALF:
            v.append(("DominantDiagonal", (i,)))
    return AssumptionReport(satisfied=not v, violations=v)


def write_weights(W: WeightMatrix, path) -> None:
    """Sparse triplets ``i j p/q``; a symmetric pair is written once as ``i < j``."""
    lines = [str(W.n)]
    for (i, j), w in sorted(W.offdiag.items()):
        if i < j or W.offdiag.get((j, i)) != w:
            lines.append(f"{i} {j} {format_rational(w)}")
        if (j, i) not in W.offdiag:
            # explicit zero stops the reader from mirroring a one-sided entry
            lines.append(f"{j} {i} 0")
    lines += [f"{i} {i} {format_rational(d)}" for i, d in enumerate(W.diag)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_weights(path) -> WeightMatrix:
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    n = int(rows[0][0])
    explicit: dict[tuple[int, int], Fraction] = {}
    diag = [Fraction(0)] * n
    for i, j, w in rows[1:]:
        i, j, w = int(i), int(j), parse_rational(w)
        if i == j:
            diag[i] = w
        else:
            explicit[(i, j)] = w
    off = dict(explicit)
    for (i, j), w in explicit.items():
        off.setdefault((j, i), w)
    return WeightMatrix(n, off, tuple(diag))
