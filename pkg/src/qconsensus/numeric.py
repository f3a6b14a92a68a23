"""Exact rational helpers and the grid constants of the quantized system.

All states, weights and thresholds are ``fractions.Fraction`` values. The
decimal part ``c_i(k) = x_i(k) - floor(x_i(k))`` of every node moves on a
fixed grid of spacing ``1/B_i`` around its initial value, which is what makes
the margin ``gamma`` below strictly positive.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import AssumptionViolated, EmptyNeighborhood

Rational = Fraction

_INT_OR_RATIO = re.compile(r"^[+-]?\d+(/\d+)?$")
_DECIMAL = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)$")

HALF = Fraction(1, 2)


def parse_rational(text: str) -> Fraction:
    """Parse ``p/q`` or a finite decimal string into an exact Fraction.

    Anything else (floats in exponent notation, ``nan``, blanks) is rejected
    so that command-line input never passes through binary floating point.
    """
    s = str(text).strip()
    if _INT_OR_RATIO.match(s):
        if "/" in s and int(s.split("/")[1]) == 0:
            raise ValueError(f"zero denominator in {text!r}")
        return Fraction(s)
    if _DECIMAL.match(s):
        return Fraction(s)
    raise ValueError(f"not an exact rational: {text!r}")


def to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return parse_rational(value)
    return Fraction(value)


def format_rational(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def decimal_part(x: Fraction) -> Fraction:
    return x - math.floor(x)


def lcm_all(values: Iterable[int]) -> int:
    out = 1
    for v in values:
        out = math.lcm(out, int(v))
    return out


def lcm_denominators(weights_row: Sequence[Fraction]) -> int:
    """LCM of the denominators of one node's neighbor weights (``B_i``)."""
    if len(weights_row) == 0:
        raise EmptyNeighborhood("node has no neighbor weights")
    return lcm_all(Fraction(w).denominator for w in weights_row)


@dataclass(frozen=True)
class GridConstants:
    """Per-network constants used by the Lyapunov machinery.

    ``grid`` holds ``D_i = lcm(B_i, den(c_i(0)))``: every reachable decimal part
    of node ``i`` is a multiple of ``1/D_i``.
    """

    B: tuple[int, ...]
    grid: tuple[int, ...]
    gamma: Fraction
    delta: Fraction
    alpha: tuple[Fraction, ...]

    @property
    def alpha_max(self) -> Fraction:
        return max(self.alpha)

    @property
    def beta(self) -> Fraction:
        return min(self.gamma, self.delta)


def _neighbor_rows(weights) -> list[list[Fraction]]:
    return [list(weights.neighbor_weights(i).values()) for i in range(weights.n)]


def compute_gamma(weights, initial_decimals: Sequence[Fraction]) -> Fraction:
    """Half the smallest gap the decimal grid and the diagonal slack allow.

    ``gamma = 1/2 * min(min_i 1/D_i, min_i (1/2 - sum_j w_ij))``.
    """
    rows = _neighbor_rows(weights)
    if len(initial_decimals) != weights.n:
        raise ValueError("one initial decimal per node required")
    bad = [i for i in range(weights.n) if weights.diag[i] <= HALF]
    if bad:
        raise AssumptionViolated(
            f"diagonal entries must exceed 1/2; nodes {bad} do not",
            [("DominantDiagonal", (i, i)) for i in bad],
        )
    gaps = []
    for row, c0 in zip(rows, initial_decimals):
        c0 = to_fraction(c0)
        D = math.lcm(lcm_denominators(row), c0.denominator)
        gaps.append(Fraction(1, D))
    slack = [HALF - sum(row, Fraction(0)) for row in rows]
    if min(slack) <= 0:
        raise AssumptionViolated("neighbor weights of some node sum to 1/2 or more")
    return min(min(gaps), min(slack)) / 2


def grid_constants(weights, x0: Sequence[Fraction]) -> GridConstants:
    """All of ``B_i``, ``D_i``, gamma, delta and ``alpha_i`` for a start state.

    ``x0`` must be expressed in truncation coordinates (unit step).
    """
    x0 = [to_fraction(v) for v in x0]
    decimals = [decimal_part(v) for v in x0]
    rows = _neighbor_rows(weights)
    gamma = compute_gamma(weights, decimals)
    B = tuple(lcm_denominators(row) for row in rows)
    D = tuple(math.lcm(b, c.denominator) for b, c in zip(B, decimals))
    delta = min(w for row in rows for w in row)
    alpha = tuple(1 - weights.diag[i] + gamma for i in range(weights.n))
    return GridConstants(B=B, grid=D, gamma=gamma, delta=delta, alpha=alpha)
