"""Anisotropic exponent system, the Delta metric, and critical-dimension
arithmetic.

Exponents are kept as exact `fractions.Fraction` values whenever the inputs
are rational, so that identities like Q == d (a structural precondition for
the critical-dimension experiments) can be checked exactly instead of through
floating point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Tuple, Union

Rational = Union[int, Fraction]
Scalar = Union[int, float, Fraction]


def _as_fraction(x: Scalar) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12)
    raise TypeError(f"cannot interpret {x!r} as a rational number")


class Equation(enum.Enum):
    HEAT = "heat"
    HEAT_SIGMA = "heat_sigma"
    WAVE = "wave"


@dataclass(frozen=True)
class AnisotropyProfile:
    """Per-coordinate Hoelder exponents alpha_j in (0,1), the derived
    gamma_j = 1/alpha_j - 1, and the total Q = sum 1/alpha_j."""

    alphas: Tuple[Fraction, ...]
    gammas: Tuple[Fraction, ...] = field(init=False)
    Q: Fraction = field(init=False)

    def __post_init__(self):
        for a in self.alphas:
            if not (0 < a < 1):
                raise ValueError(f"alpha must lie in (0,1), got {a}")
        gammas = tuple(1 / a - 1 for a in self.alphas)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "Q", sum((1 / a for a in self.alphas), Fraction(0)))

    @property
    def arity(self) -> int:
        return len(self.alphas)


def anisotropy_profile(alphas: Sequence[Scalar]) -> AnisotropyProfile:
    """Build a profile from the exponents alpha_j; gammas and Q are derived."""
    return AnisotropyProfile(tuple(_as_fraction(a) for a in alphas))


def delta_metric(profile: AnisotropyProfile, x: Sequence[float], y: Sequence[float]) -> float:
    """The anisotropic distance sum_j |x_j - y_j|^alpha_j."""
    if len(x) != profile.arity or len(y) != profile.arity:
        raise ValueError(
            f"point arity mismatch: profile expects {profile.arity}, "
            f"got {len(x)} and {len(y)}"
        )
    return float(
        sum(abs(float(a) - float(b)) ** float(al) for a, b, al in zip(x, y, profile.alphas))
    )


@dataclass(frozen=True)
class ModelParams:
    """Which field, its spatial dimension k, Riesz exponent beta, number of
    i.i.d. components d, and time horizon."""

    equation: Equation
    k: int = 1
    beta: Fraction = Fraction(1)
    d: int = 1
    horizon: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "beta", _as_fraction(self.beta))
        if self.k < 1:
            raise ValueError("spatial dimension k must be a positive integer")
        if self.d < 1:
            raise ValueError("component count d must be a positive integer")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        b = self.beta
        if not (0 < b < min(self.k, 2)) and not (self.k == 1 and b == 1):
            raise ValueError(
                f"beta={b} outside (0, min(k,2)) and not the white-noise case k=1, beta=1"
            )
        if self.equation is Equation.WAVE and b < 1:
            raise ValueError("the wave kernel requires beta >= 1")


def critical_dimension(params: ModelParams) -> Fraction:
    """(4+2k)/(2-beta) for heat-type kernels, 2(k+1)/(2-beta) for the wave."""
    two_minus_beta = 2 - params.beta
    if params.equation in (Equation.HEAT, Equation.HEAT_SIGMA):
        return Fraction(4 + 2 * params.k) / two_minus_beta
    return Fraction(2 * (params.k + 1)) / two_minus_beta


def heat_profile(params: ModelParams) -> AnisotropyProfile:
    """Time exponent (2-beta)/4, space exponents (2-beta)/2 (k of them)."""
    a_time = (2 - params.beta) / 4
    a_space = (2 - params.beta) / 2
    return AnisotropyProfile((a_time,) + (a_space,) * params.k)


def wave_profile(params: ModelParams) -> AnisotropyProfile:
    """All exponents equal (2-beta)/2."""
    a = (2 - params.beta) / 2
    return AnisotropyProfile((a,) * (params.k + 1))


def profile_for(params: ModelParams) -> AnisotropyProfile:
    if params.equation is Equation.WAVE:
        return wave_profile(params)
    return heat_profile(params)


@dataclass(frozen=True)
class Box:
    """Product of closed intervals [c_j, d_j] with an enlargement margin."""

    intervals: Tuple[Tuple[float, float], ...]
    eps0: float = -1.0  # sentinel: default 0.1 * min side

    def __post_init__(self):
        if not self.intervals:
            raise ValueError("box needs at least one interval")
        for lo, hi in self.intervals:
            if not lo < hi:
                raise ValueError(f"degenerate interval [{lo}, {hi}]")
        if self.eps0 < 0:
            object.__setattr__(
                self, "eps0", 0.1 * min(hi - lo for lo, hi in self.intervals)
            )

    @property
    def arity(self) -> int:
        return len(self.intervals)

    def center(self) -> Tuple[float, ...]:
        return tuple(0.5 * (lo + hi) for lo, hi in self.intervals)

    def sides(self) -> Tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.intervals)

    def contains(self, p: Sequence[float], enlarged: bool = False) -> bool:
        m = self.eps0 if enlarged else 0.0
        return all(lo - m <= v <= hi + m for (lo, hi), v in zip(self.intervals, p))

    def delta_diameter(self, profile: AnisotropyProfile) -> float:
        if profile.arity != self.arity:
            raise ValueError("profile arity does not match box arity")
        return float(
            sum((hi - lo) ** float(a) for (lo, hi), a in zip(self.intervals, profile.alphas))
        )


def space_time_box(t_lo: float, t_hi: float, space: Sequence[Tuple[float, float]],
                   eps0: float = -1.0) -> Box:
    """A box whose first coordinate is time; requires t_lo > 0 so the field is
    nondegenerate on it."""
    if t_lo <= 0:
        raise ValueError("time interval must start strictly after 0")
    return Box(((t_lo, t_hi),) + tuple(tuple(iv) for iv in space), eps0)


def quasi_triangle_slack(profile: AnisotropyProfile, x, y, z) -> float:
    """Delta(x,y) + Delta(y,z) - Delta(x,z); nonnegative since each |.|^alpha
    is subadditive for alpha <= 1."""
    return (
        delta_metric(profile, x, y)
        + delta_metric(profile, y, z)
        - delta_metric(profile, x, z)
    )


def loglog(x: float) -> float:
    """log log x, guarded; used by covering radii thresholds (x > e)."""
    if x <= math.e:
        raise ValueError("loglog needs x > e")
    return math.log(math.log(x))
