"""Uniform quantizers with rational step, and the maps onto the truncation system."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ParameterOutOfRange, UnsupportedReduction
from .numeric import HALF, to_fraction

TRUNCATION = "trunc"
CEILING = "ceil"
ROUNDING = "round"
PROBABILISTIC = "prob"
VARIANTS = (TRUNCATION, CEILING, ROUNDING, PROBABILISTIC)

_ALIASES = {
    "truncation": TRUNCATION,
    "floor": TRUNCATION,
    "ceiling": CEILING,
    "rounding": ROUNDING,
    "probabilistic": PROBABILISTIC,
}


@dataclass
class QuantizerKind:
    """Quantizer variant and step ``eps``: ``Q_eps(x) = eps * Q(x / eps)``.

    The probabilistic variant owns a PCG64 stream seeded by ``seed``, kept apart
    from graph generation so each concern is reproducible alone.
    """

    variant: str = TRUNCATION
    step: Fraction = Fraction(1)
    seed: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.variant = _ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ParameterOutOfRange(f"unknown quantizer {self.variant!r}")
        self.step = to_fraction(self.step)
        if self.step <= 0:
            raise ParameterOutOfRange("quantizer step must be > 0")
        if self.variant == PROBABILISTIC and self.rng is None:
            self.reset()

    @property
    def deterministic(self) -> bool:
        return self.variant != PROBABILISTIC

    def reset(self) -> None:
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, x) -> Fraction:
        return quantize(self, x)


def _unit(variant: str, z: Fraction, rng) -> int:
    lo = math.floor(z)
    if variant == TRUNCATION:
        return lo
    if variant == CEILING:
        return math.ceil(z)
    frac = z - lo
    if variant == ROUNDING:
        # ties go up: x - floor(x) >= 1/2 rounds to the ceiling
        return lo if frac < HALF else math.ceil(z)
    if frac == 0:
        return lo
    # P(ceil) = frac exactly: draw an integer below the denominator
    return lo + 1 if int(rng.integers(frac.denominator)) < frac.numerator else lo


def quantize(q: QuantizerKind, x) -> Fraction:
    x = to_fraction(x)
    return q.step * _unit(q.variant, x / q.step, q.rng)


@dataclass(frozen=True)
class InverseMap:
    """``y = sign * x / step + shift``  <=>  ``x = step * sign * (y - shift)``."""

    sign: int = 1
    shift: Fraction = Fraction(0)
    step: Fraction = Fraction(1)

    def forward(self, x: Sequence[Fraction]) -> list[Fraction]:
        return [self.sign * to_fraction(v) / self.step + self.shift for v in x]

    def __call__(self, y: Sequence[Fraction]) -> list[Fraction]:
        return [self.step * self.sign * (v - self.shift) for v in y]


def truncation_map(q: QuantizerKind) -> InverseMap:
    if q.variant == TRUNCATION:
        return InverseMap(1, Fraction(0), q.step)
    if q.variant == CEILING:
        return InverseMap(-1, Fraction(0), q.step)
    if q.variant == ROUNDING:
        return InverseMap(1, HALF, q.step)
    raise UnsupportedReduction("the probabilistic quantizer has no truncation equivalent")


def reduce_to_truncation(q: QuantizerKind, x0: Sequence) -> tuple[list[Fraction], InverseMap]:
    """Initial state of the equivalent unit-step truncation system, and the way back.

    Ceiling: ``y = -x``. Rounding: ``y = x + 1/2``. A non-unit step divides by
    ``eps`` first.
    """
    inv = truncation_map(q)
    return inv.forward(x0), inv
