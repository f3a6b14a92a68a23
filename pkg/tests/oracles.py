"""Slow, independent reference implementations used to cross-check the package.

Nothing here imports qconsensus: matrices are dense lists of Fractions and the
update is written straight from its definition.
"""

from __future__ import annotations

import math
from fractions import Fraction


def q_trunc(x: Fraction) -> int:
    return math.floor(x)


def q_ceil(x: Fraction) -> int:
    return -math.floor(-x)


def q_round(x: Fraction) -> int:
    lo = math.floor(x)
    return lo + 1 if x - lo >= Fraction(1, 2) else lo


QUANTIZERS = {"trunc": q_trunc, "ceil": q_ceil, "round": q_round}


def dense_metropolis(n, edges, C=1):
    deg = [0] * n
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    W = [[Fraction(0)] * n for _ in range(n)]
    for u, v in edges:
        W[u][v] = W[v][u] = Fraction(1) / (Fraction(C) * (max(deg[u], deg[v]) + 1))
    for i in range(n):
        W[i][i] = 1 - sum(W[i][j] for j in range(n) if j != i)
    return W


def dense_step(W, x, Q):
    """``x + W Q(x) - Q(x)`` with a full matrix-vector product."""
    n = len(x)
    q = [Fraction(Q(v)) for v in x]
    return tuple(x[i] + sum(W[i][j] * q[j] for j in range(n)) - q[i] for i in range(n))


def oracle_simulate(W, x0, Q, max_iters=100_000):
    """Iterate until all quantized values agree or a state repeats.

    Returns ``(kind, start, period, states)`` with ``states`` running up to
    and including the detection iteration.
    """
    x = tuple(Fraction(v) for v in x0)
    seen = {}
    states = []
    for k in range(max_iters + 1):
        states.append(x)
        qs = {Q(v) for v in x}
        if len(qs) == 1:
            return "consensus", k, None, states
        if x in seen:
            return "cycle", seen[x], k - seen[x], states
        seen[x] = k
        x = dense_step(W, x, Q)
    return "undecided", None, None, states


def oracle_gamma(W, x0):
    """Half the smallest of the grid gaps ``1/D_i`` and slacks ``1/2 - sum_j w_ij``."""
    n = len(W)
    cands = []
    for i in range(n):
        B = 1
        for j in range(n):
            if j != i and W[i][j] != 0:
                B = B * W[i][j].denominator // math.gcd(B, W[i][j].denominator)
        c = Fraction(x0[i]) - math.floor(Fraction(x0[i]))
        D = B * c.denominator // math.gcd(B, c.denominator)
        cands.append(Fraction(1, D))
        cands.append(Fraction(1, 2) - sum(W[i][j] for j in range(n) if j != i))
    return min(cands) / 2


def oracle_labels(x, m, alpha):
    out = []
    for v, a in zip(x, alpha):
        d = v - (m + 1)
        if d < -a:
            out.append(1)
        elif d < 0:
            out.append(2)
        elif d <= a:
            out.append(3)
        elif d < 1:
            out.append(4)
        elif d < 1 + a:
            out.append(5)
        else:
            out.append(6)
    return out


def pairwise_within(points, radius):
    """All pairs at Euclidean distance <= radius, by brute force."""
    out = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dx = points[i][0] - points[j][0]
            dy = points[i][1] - points[j][1]
            if dx * dx + dy * dy <= radius * radius:
                out.append((i, j))
    return out
