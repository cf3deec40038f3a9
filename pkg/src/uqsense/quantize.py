"""Quantizers and the exact preimages (representation supports) of their levels.

Three schemes are modelled:

* ``MidTread(step)`` -- ideal ADC transfer, ``step * floor(x / step + 1/2)``.
* ``NearestInt`` -- C ``round()``: nearest integer, halfway cases away from zero.
* ``TruncateTowardZero`` -- C float-to-int cast.

Supports are exact with respect to the floating-point implementation of
:func:`quantize`: every float inside ``representation_support(L)`` quantizes
to ``L`` and every float outside does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError


@dataclass(frozen=True)
class MidTread:
    step: float

    def __post_init__(self):
        if not (math.isfinite(self.step) and self.step > 0):
            raise ConfigError(f"mid-tread step must be positive and finite, got {self.step!r}")


@dataclass(frozen=True)
class NearestInt:
    pass


@dataclass(frozen=True)
class TruncateTowardZero:
    pass


QuantScheme = MidTread | NearestInt | TruncateTowardZero


@dataclass(frozen=True)
class Interval:
    """Real interval with explicit endpoint openness.

    The default is half-open ``[lo, hi)``. ``lo_open`` exists because
    away-from-zero rounding and truncation have preimages that are open on
    the low side for negative levels.
    """

    lo: float
    hi: float
    hi_open: bool = True
    lo_open: bool = False

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigError(f"interval bounds out of order: [{self.lo}, {self.hi}]")
        if self.lo == self.hi and (self.hi_open or self.lo_open):
            raise ConfigError("a degenerate interval must be closed")

    @classmethod
    def point(cls, c: float) -> Interval:
        return cls(c, c, hi_open=False)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        above = x > self.lo if self.lo_open else x >= self.lo
        below = x < self.hi if self.hi_open else x <= self.hi
        return above & below


def _c_round(x: float) -> int:
    # floor(x + 0.5) misrounds 0.49999999999999994; compare the exact fraction instead
    a = abs(x)
    r = math.floor(a)
    if a - r >= 0.5:
        r += 1
    return int(math.copysign(r, x)) if r else 0


def quantize(x: float, scheme: QuantScheme) -> tuple[int, float]:
    """Return ``(level, reconstructed value)`` for ``x`` under ``scheme``."""
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"cannot quantize non-finite value {x!r}")
    if isinstance(scheme, MidTread):
        level = math.floor(x / scheme.step + 0.5)
        return level, level * scheme.step
    if isinstance(scheme, NearestInt):
        level = _c_round(x)
        return level, float(level)
    if isinstance(scheme, TruncateTowardZero):
        level = math.trunc(x)
        return level, float(level)
    raise ConfigError(f"unknown quantization scheme {scheme!r}")


def quantize_array(x, scheme: QuantScheme) -> np.ndarray:
    """Vectorized levels of :func:`quantize` (integers as int64)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot quantize non-finite values")
    if isinstance(scheme, MidTread):
        return np.floor(x / scheme.step + 0.5).astype(np.int64)
    if isinstance(scheme, NearestInt):
        a = np.abs(x)
        r = np.floor(a)
        r = r + (a - r >= 0.5)
        return (np.sign(x) * r).astype(np.int64)
    if isinstance(scheme, TruncateTowardZero):
        return np.trunc(x).astype(np.int64)
    raise ConfigError(f"unknown quantization scheme {scheme!r}")


def _first_float_at_or_above(level: int, step: float) -> float:
    """Smallest float x with floor(x/step + 0.5) >= level."""
    b = (level - 0.5) * step
    while quantize(math.nextafter(b, -math.inf), MidTread(step))[0] >= level:
        b = math.nextafter(b, -math.inf)
    while quantize(b, MidTread(step))[0] < level:
        b = math.nextafter(b, math.inf)
    return b


def representation_support(level: int, scheme: QuantScheme) -> Interval:
    """Exact set of inputs that :func:`quantize` maps to ``level``."""
    if isinstance(level, float):
        if not level.is_integer():
            raise FormatError(f"level must be an integer, got {level!r}")
        level = int(level)
    if isinstance(scheme, MidTread):
        lo = _first_float_at_or_above(level, scheme.step)
        hi = _first_float_at_or_above(level + 1, scheme.step)
        return Interval(lo, hi, hi_open=True)
    if isinstance(scheme, NearestInt):
        if level > 0:
            return Interval(level - 0.5, level + 0.5, hi_open=True)
        if level < 0:
            return Interval(level - 0.5, level + 0.5, hi_open=False, lo_open=True)
        return Interval(-0.5, 0.5, hi_open=True, lo_open=True)
    if isinstance(scheme, TruncateTowardZero):
        if level > 0:
            return Interval(float(level), level + 1.0, hi_open=True)
        if level < 0:
            return Interval(level - 1.0, float(level), hi_open=False, lo_open=True)
        return Interval(-1.0, 1.0, hi_open=True, lo_open=True)
    raise ConfigError(f"unknown quantization scheme {scheme!r}")


@dataclass(frozen=True)
class LinearFitRounding:
    a_fit: float
    b_fit: float
    a_int: int
    b_int: int


def demo_linear_fit_rounding(points) -> LinearFitRounding:
    """Least-squares line through ``points`` and its C-rounded integer coefficients.

    Shows how storing fitted coefficients as integers distorts the model.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise FormatError("need at least two (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.ptp(x) == 0:
        raise DomainError("all x values are equal; slope is undefined")
    a_fit, b_fit = np.polyfit(x, y, 1)
    return LinearFitRounding(float(a_fit), float(b_fit), _c_round(a_fit), _c_round(b_fit))


def noisy_line(a: float = 0.6, b: float = 3.4, sigma: float = 0.1, n: int = 100, seed: int = 0):
    """Points on ``y = a x + b`` over x in [0, 1] with seeded Gaussian noise."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    return np.column_stack([x, a * x + b + rng.normal(0.0, sigma, n)])
