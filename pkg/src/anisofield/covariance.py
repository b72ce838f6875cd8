"""Deterministic quadrature engine for second-moment quantities.

Everything here reduces to integrals of Re(g_p conj(g_q)) over frequency
regions.  The tau-integral over the full line has a closed form for both
kernels (Plancherel applied to the time profile of the mild solution), which
turns full-space second moments into one-dimensional radial integrals:

    heat:  int_R B_t conj(B_s) dtau = 2 pi exp(-|t-s| r^2)
                                      * (1 - exp(-2 min(t,s) r^2)) / (2 r^2)
    wave:  int_R B_t conj(B_s) dtau = 2 pi int_0^min(t,s)
                                      sin((t-w)r) sin((s-w)r) / r^2 dw
         = (pi/r^2) [ min(t,s) cos(|t-s| r) - (sin((t+s)r) - sin(|t-s| r))/(2r) ]

Band-restricted integrals over the box D1(c) = {|tau| < c^{1/a1}} x
{|xi| < c^{1/a2}} keep the tau-integral semi-analytic for the heat kernel
(full-line value minus a tail that reduces to Ct(w) = int_T^inf cos(w tau) /
(tau^2 + r^4) dtau, evaluated through the complex exponential integral) and
use oscillation-bounded tensor panel quadrature for the wave kernel.

Radial integrals split at a finite R0 into an adaptive head and tails that
are either Fourier-type (scipy's QAWF, weight cos/sin against a smooth
decaying factor) or plain power-law tails via the substitution r -> R0/x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from anisofield.model import (
    AnisotropyProfile,
    Box,
    Equation,
    ModelParams,
    delta_metric,
    profile_for,
)
from anisofield.spectral import (
    BandSpec,
    FULL_BAND,
    SigmaSpec,
    SpectralKernelSpec,
)

__all__ = [
    "QuadratureSpec",
    "QuadResult",
    "FitResult",
    "FittedConstants",
    "calibrate_kappa",
    "calibrated_spec",
    "heat_time_correlator",
    "wave_time_correlator",
    "second_moment",
    "canonical_metric",
    "band_increment_l2",
    "f1_low_band",
    "f2_high_band",
    "fit_band_constants",
    "metric_equivalence_scan",
    "variance_scaling",
    "covariance_smoothness",
    "projection_alpha",
]


# ---------------------------------------------------------------------------
# plumbing types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for the adaptive quadrature engine.

    tol is an absolute tolerance target for a single region integral; the
    reported error estimate accumulates the QUADPACK estimates of every
    sub-integral.  max_subdiv maps onto the QUADPACK subdivision limit.
    """

    tol: float = 1e-9
    max_subdiv: int = 2000
    radial_reduction: bool = True
    method: str = "adaptive-gauss-kronrod"
    # wave panel quadrature: panels per oscillation period and nodes per panel
    panels_per_period: float = 1.5
    panel_order: int = 12

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_subdiv < 10:
            raise ValueError("max_subdiv too small")


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class QuadResult:
    """A real value with an accumulated absolute-error estimate; converged is
    False when some sub-integral failed to meet its tolerance (reported, never
    silent)."""

    value: float
    error: float
    converged: bool = True

    def __float__(self) -> float:
        return self.value

    def __add__(self, other: "QuadResult") -> "QuadResult":
        return QuadResult(self.value + other.value, self.error + other.error,
                          self.converged and other.converged)

    def __sub__(self, other: "QuadResult") -> "QuadResult":
        return QuadResult(self.value - other.value, self.error + other.error,
                          self.converged and other.converged)

    def scaled(self, c: float) -> "QuadResult":
        return QuadResult(c * self.value, abs(c) * self.error, self.converged)


@dataclass(frozen=True)
class FitResult:
    """One fitted constant/exponent with the grid it was fitted on and free
    form diagnostics (residuals, R^2, worst pair, ...)."""

    name: str
    value: float
    grid: Tuple
    diagnostics: Dict[str, float] = field(default_factory=dict)


@dataclass
class FittedConstants:
    """Named constants the experiments estimate; every entry carries its
    experiment grid."""

    constants: Dict[str, FitResult] = field(default_factory=dict)

    def add(self, fit: FitResult) -> None:
        self.constants[fit.name] = fit

    def __getitem__(self, name: str) -> FitResult:
        return self.constants[name]

    def __contains__(self, name: str) -> bool:
        return name in self.constants


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def calibrate_kappa(params: ModelParams) -> float:
    """kappa = (2 pi)^{-(k+1)/2}.

    The raw radial engine integrates 2 pi * C(t,s,r) against |xi|^{beta-k},
    while the mild-solution variance is (2 pi)^{-k} times the same xi-integral
    (space-Fourier Plancherel); matching them fixes kappa^2 = (2 pi)^{-(k+1)}
    for every (equation, k, beta).  The closure against the physical-space
    closed forms (heat k=1=beta: int_0^1 (8 pi s)^{-1/2} ds; wave: t^2/4) is
    asserted in the test suite.
    """
    return float((2.0 * math.pi) ** (-(params.k + 1) / 2.0))


def calibrated_spec(params: ModelParams, sigma: Optional[SigmaSpec] = None
                    ) -> SpectralKernelSpec:
    return SpectralKernelSpec(params=params, sigma=sigma,
                              kappa=calibrate_kappa(params))


# ---------------------------------------------------------------------------
# closed-form time correlators (full tau-line integrals / 2 pi)
# ---------------------------------------------------------------------------


def heat_time_correlator(t: float, s: float, r) -> np.ndarray:
    """int_0^min(t,s) exp(-(t-w) r^2) exp(-(s-w) r^2) dw, vectorized in r."""
    r = np.asarray(r, dtype=float)
    m = min(t, s)
    delta = abs(t - s)
    r2 = r * r
    small = r2 * m < 1e-8
    safe = np.where(small, 1.0, r2)
    with np.errstate(under="ignore"):
        out = np.exp(-delta * r2) * (-np.expm1(-2.0 * m * safe)) / (2.0 * safe)
        # r -> 0 limit: m (1 - (delta + m) r^2 + ...)
        lim = m * (1.0 - (delta + m) * r2)
    return np.where(small, lim, out)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def wave_time_correlator(t: float, s: float, r) -> np.ndarray:
    """int_0^min(t,s) sin((t-w)r) sin((s-w)r) / r^2 dw, vectorized in r."""
    r = np.asarray(r, dtype=float)
    m = min(t, s)
    delta = abs(t - s)
    tp = t + s
    small = r * tp < 1e-3
    safe = np.where(small, 1.0, r)
    out = (m * np.cos(delta * safe)
           - (np.sin(tp * safe) - np.sin(delta * safe)) / (2.0 * safe)
           ) / (2.0 * safe * safe)
    if np.any(small):
        # smooth small-r branch: sin(ar)/r = a sinc(ar/pi)
        w = 0.5 * m * (_GL_NODES + 1.0)
        wt = 0.5 * m * _GL_WEIGHTS
        rr = r[..., None] if r.ndim else r.reshape(1)[:, None]
        f = ((t - w) * np.sinc((t - w) * rr / np.pi)
             * (s - w) * np.sinc((s - w) * rr / np.pi))
        lim = (f * wt).sum(axis=-1).reshape(r.shape)
        out = np.where(small, lim, out)
    return out


def time_correlator(equation: Equation, t: float, s: float, r) -> np.ndarray:
    if equation is Equation.WAVE:
        return wave_time_correlator(t, s, r)
    return heat_time_correlator(t, s, r)


# ---------------------------------------------------------------------------
# heat tau-tail: Ct(w) = int_T^inf cos(w tau) / (tau^2 + a^2) dtau, a = r^2
# ---------------------------------------------------------------------------


def _exp_scaled_e1(c: float, wT: float) -> complex:
    """e^c E1(c - i wT), stable for any real c and wT > 0."""
    z = complex(c, -wT)
    az = abs(z)
    if az >= 40.0:
        # asymptotic series e^c E1(z) = e^{i wT}/z sum (-1)^n n!/z^n
        acc = 0.0 + 0.0j
        term = 1.0 + 0.0j
        for n in range(12):
            acc += term
            term *= -(n + 1) / z
        return np.exp(1j * wT) / z * acc
    return math.exp(c) * special.exp1(z)


def _ct_tail(omega: float, T: float, a: float) -> float:
    """int_T^inf cos(omega tau) / (tau^2 + a^2) dtau for omega >= 0, T > 0,
    a >= 0."""
    omega = abs(omega)
    if omega == 0.0:
        if a == 0.0:
            return 1.0 / T
        return math.atan2(a, T) / a
    c = omega * a
    wT = omega * T
    if c < 1e-4 * wT:
        # odd Taylor expansion of (F(-c) - F(c)) / (2 i a) in c; the series
        # converges only inside the E1 singularity radius |c| < wT, and the
        # direct difference below is cancellation-safe once c is not tiny
        # relative to wT, so the branch point is c ~ 1e-4 wT
        ztilde = 1j * wT
        e = np.exp(ztilde)
        f0 = _exp_scaled_e1(0.0, wT)
        f1 = f0 + e / ztilde
        f2 = f1 + e / ztilde**2
        f3 = f2 + 2.0 * e / ztilde**3
        val = 1j * omega * (f1 + (c * c / 6.0) * f3)
        return float(val.real)
    val = (_exp_scaled_e1(-c, wT) - _exp_scaled_e1(c, wT)) / (2j * a)
    return float(val.real)


def heat_tau_tail(T: float, t: float, s: float, r: float) -> float:
    """int_T^inf Re(B_t conj(B_s))(tau, r) dtau for the heat bracket."""
    a = r * r
    with np.errstate(under="ignore"):
        es = math.exp(-s * a) if s * a < 700 else 0.0
        et = math.exp(-t * a) if t * a < 700 else 0.0
    return (_ct_tail(abs(t - s), T, a)
            - es * _ct_tail(t, T, a)
            - et * _ct_tail(s, T, a)
            + es * et * _ct_tail(0.0, T, a))


def _heat_box_tau(T: float, t: float, s: float, r: float) -> float:
    """int_{-T}^{T} Re(B_t conj(B_s)) dtau (heat)."""
    full = 2.0 * math.pi * float(heat_time_correlator(t, s, r))
    return full - 2.0 * heat_tau_tail(T, t, s, r)


# ---------------------------------------------------------------------------
# 1D quadrature helpers
# ---------------------------------------------------------------------------


def _acc(results: List[Tuple[float, float]], quad: QuadratureSpec) -> QuadResult:
    v = sum(r[0] for r in results)
    e = sum(r[1] for r in results)
    return QuadResult(v, e, e <= 100.0 * quad.tol + 1e-13)


def _quad(f, lo, hi, quad: QuadratureSpec, points=None) -> Tuple[float, float]:
    kw = dict(epsabs=quad.tol, epsrel=quad.tol, limit=quad.max_subdiv)
    if points is not None and np.isfinite(hi):
        kw["points"] = points
    return integrate.quad(f, lo, hi, full_output=False, **kw)[:2]


def _tail_plain(f, R0: float, quad: QuadratureSpec) -> Tuple[float, float]:
    """int_{R0}^inf f(r) dr via r = R0/x on (0, 1]."""
    g = lambda x: f(R0 / x) * R0 / (x * x)
    return integrate.quad(g, 0.0, 1.0, epsabs=quad.tol, epsrel=quad.tol,
                          limit=quad.max_subdiv)[:2]


def _tail_fourier(f, omega: float, kind: str, R0: float,
                  quad: QuadratureSpec) -> Tuple[float, float]:
    """int_{R0}^inf f(r) trig(omega r) dr, f smooth and decaying (QAWF)."""
    if omega == 0.0:
        if kind == "sin":
            return (0.0, 0.0)
        return _tail_plain(f, R0, quad)
    v = e = 0.0
    if omega * R0 < 1.0:
        # sub-oscillatory stretch: integrate plainly (in geometric segments,
        # so the decay near R0 is resolved) up to one radian and let QAWF
        # take over where the weight actually oscillates
        mid = 1.0 / omega
        trig = math.cos if kind == "cos" else math.sin
        g = lambda r: f(r) * trig(omega * r)
        lo = R0
        while lo < mid:
            hi = min(8.0 * lo, mid)
            vv, ee = _quad(g, lo, hi, quad)
            v += vv
            e += ee
            lo = hi
        R0 = mid
    out = integrate.quad(f, R0, np.inf, weight=kind, wvar=omega,
                         epsabs=quad.tol, limlst=120, limit=quad.max_subdiv)
    return v + out[0], e + out[1]


def _tail_phase(f, omega: float, phase: float, R0: float,
                quad: QuadratureSpec) -> Tuple[float, float]:
    """int_{R0}^inf f(r) cos(omega r + phase) dr."""
    if omega < 0:
        omega, phase = -omega, -phase
    cp, sp = math.cos(phase), math.sin(phase)
    v = e = 0.0
    if abs(cp) > 1e-15:
        vv, ee = _tail_fourier(f, omega, "cos", R0, quad)
        v += cp * vv
        e += abs(cp) * ee
    if abs(sp) > 1e-15 and omega != 0.0:
        vv, ee = _tail_fourier(f, omega, "sin", R0, quad)
        v -= sp * vv
        e += abs(sp) * ee
    return v, e


def _surface_constant(k: int) -> float:
    return 2.0 * math.pi ** (k / 2.0) / math.gamma(k / 2.0)


def _split_point(p: Sequence[float], k: int) -> Tuple[float, np.ndarray]:
    p = tuple(float(v) for v in p)
    if len(p) != k + 1:
        raise ValueError(f"point must have 1 + k = {k + 1} coordinates, got {len(p)}")
    return p[0], np.asarray(p[1:])


# ---------------------------------------------------------------------------
# full-band second moments (radial reductions)
# ---------------------------------------------------------------------------

_R0_HEAT = 10.0
_R0_WAVE = 20.0


def _head_integrand(spec: SpectralKernelSpec, t: float, s: float, u: float):
    """angular(u, r) * r^{beta-1} * C(t, s, r) for the head [0, R0]."""
    k, beta = spec.params.k, float(spec.params.beta)
    eq = spec.params.equation

    def f(r):
        if r == 0.0:
            r = 1e-300
        c = float(time_correlator(eq, t, s, r))
        base = r ** (beta - 1.0) * c
        if u == 0.0:
            return base * (2.0 if k == 1 else _surface_constant(k))
        if k == 1:
            return base * 2.0 * math.cos(u * r)
        return base * 2.0 * math.pi * special.j0(u * r)

    return f


def _heat_full_tails(spec: SpectralKernelSpec, t: float, s: float, u: float,
                     R0: float, quad: QuadratureSpec) -> List[Tuple[float, float]]:
    k, beta = spec.params.k, float(spec.params.beta)
    m = min(t, s)
    delta = abs(t - s)

    def f0(r):
        with np.errstate(under="ignore"):
            return (r ** (beta - 3.0) * math.exp(-delta * r * r)
                    * (-math.expm1(-2.0 * m * r * r)) / 2.0)

    if u == 0.0:
        c = 2.0 if k == 1 else _surface_constant(k)
        return [_scale(_tail_plain(f0, R0, quad), c)]
    if k == 1:
        return [_scale(_tail_fourier(f0, u, "cos", R0, quad), 2.0)]
    # k = 2: two-term J0 asymptotic; caller guarantees u * R0 >= 25
    amp = 2.0 * math.pi * math.sqrt(1.0 / (math.pi * u))
    f1 = lambda r: f0(r) * r ** -0.5
    f2 = lambda r: f0(r) * r ** -1.5 / (8.0 * u)
    return [
        _scale(_tail_phase(f1, u, -math.pi / 4.0, R0, quad), amp),
        _scale(_tail_phase(f2, u, -3.0 * math.pi / 4.0, R0, quad), amp),
    ]


def _scale(ve: Tuple[float, float], c: float) -> Tuple[float, float]:
    return c * ve[0], abs(c) * ve[1]


def _wave_tail_terms(beta: float, t: float, s: float
                     ) -> List[Tuple[float, float, float, float]]:
    """The wave correlator times r^{beta-1} as (coef, power, omega, phase)
    pieces: coef * r^{-power} * cos(omega r + phase)."""
    m = min(t, s)
    delta = abs(t - s)
    tp = t + s
    terms = [(m / 2.0, 3.0 - beta, delta, 0.0),
             (-0.25, 4.0 - beta, tp, -math.pi / 2.0)]
    if delta > 0:
        terms.append((0.25, 4.0 - beta, delta, -math.pi / 2.0))
    return terms


def _wave_full_tails(spec: SpectralKernelSpec, t: float, s: float, u: float,
                     R0: float, quad: QuadratureSpec) -> List[Tuple[float, float]]:
    k, beta = spec.params.k, float(spec.params.beta)
    out = []
    for coef, power, omega, phase in _wave_tail_terms(beta, t, s):
        f = lambda r, p=power: r ** (-p)
        if u == 0.0:
            c = coef * (2.0 if k == 1 else _surface_constant(k))
            out.append(_scale(_tail_phase(f, omega, phase, R0, quad), c))
        elif k == 1:
            # cos(ur) cos(omega r + phi) = [cos((omega+u) r + phi)
            #                              + cos((omega-u) r + phi)] / 2
            for om in (omega + u, omega - u):
                out.append(_scale(_tail_phase(f, om, phase, R0, quad), coef))
        else:
            amp = 2.0 * math.pi * math.sqrt(1.0 / (math.pi * u))
            for dp, dphase, damp in ((0.5, -math.pi / 4.0, 1.0),
                                     (1.5, -3.0 * math.pi / 4.0, 1.0 / (8.0 * u))):
                fj = lambda r, p=power + dp: r ** (-p)
                for om, ph in ((omega + u, phase + dphase),
                               (omega - u, phase + dphase)):
                    out.append(_scale(_tail_phase(fj, om, ph, R0, quad),
                                      0.5 * coef * amp * damp))
    return out


def _full_radial_value(spec: SpectralKernelSpec, t: float, s: float, u: float,
                       quad: QuadratureSpec) -> QuadResult:
    """2 pi kappa^2 int dxi |xi|^{beta-k} e^{-i xi . dx} C(t,s,|xi|), reduced
    radially; u = |dx|."""
    k = spec.params.k
    eq = spec.params.equation
    if k > 2 and u != 0.0:
        raise ValueError("non-radial second moments support k in {1, 2} only")
    R0 = _R0_HEAT if eq in (Equation.HEAT, Equation.HEAT_SIGMA) else _R0_WAVE
    if k == 2 and u > 0.0:
        R0 = max(R0, 25.0 / u)
    head = _quad(_head_integrand(spec, t, s, u), 0.0, R0, quad, points=[0.0])
    if eq is Equation.WAVE:
        tails = _wave_full_tails(spec, t, s, u, R0, quad)
    else:
        tails = _heat_full_tails(spec, t, s, u, R0, quad)
    res = _acc([head] + tails, quad)
    return res.scaled(2.0 * math.pi * spec.kappa ** 2)


# ---------------------------------------------------------------------------
# heat_sigma full-band second moment (k = 1, cross-spectral atom sum)
# ---------------------------------------------------------------------------


def _sigma_cross_correlator(t: float, s: float, Rm: float, Rn: float,
                            omega: float) -> complex:
    """int_0^min(t,s) e^{i omega w} e^{-(t-w) Rm^2} e^{-(s-w) Rn^2} dw."""
    m = min(t, s)
    A = Rm * Rm + Rn * Rn
    zc = complex(A, omega)
    e0 = -t * Rm * Rm - s * Rn * Rn
    if abs(zc) * m < 1e-8:
        return m * np.exp(e0) * (1.0 + zc * m / 2.0)
    e1 = complex(-(t - m) * Rm * Rm - (s - m) * Rn * Rn, omega * m)
    return (np.exp(e1) - np.exp(e0)) / zc


def _sigma_full_moment(spec: SpectralKernelSpec, p, q,
                       quad: QuadratureSpec) -> QuadResult:
    if spec.params.k != 1:
        raise ValueError("heat_sigma second moments are implemented for k = 1")
    beta = float(spec.params.beta)
    t, x = _split_point(p, 1)
    s, y = _split_point(q, 1)
    x, y = float(x[0]), float(y[0])
    atoms = [(c, rm, float(z[0])) for c, rm, z in spec.sigma.atoms]

    def integrand(xi):
        total = 0.0 + 0.0j
        for cm, rm, zm in atoms:
            Rm = abs(xi - zm)
            phim = np.exp(-1j * (xi - zm) * x)
            for cn, rn, zn in atoms:
                Rn = abs(xi - zn)
                cross = _sigma_cross_correlator(t, s, Rm, Rn, rm - rn)
                total += (cm * np.conj(cn) * phim
                          * np.exp(1j * (xi - zn) * y) * cross)
        return abs(xi) ** (beta - 1.0) * total.real

    zs = sorted({zm for _, _, zm in atoms} | {0.0})
    R0 = max(200.0, 4.0 * max(abs(z) for z in zs) + 200.0)
    pieces = [
        _quad(integrand, -R0, 0.0, quad, points=[z for z in zs if -R0 < z < 0.0]),
        _quad(integrand, 0.0, R0, quad, points=[z for z in zs if 0.0 < z < R0]),
    ]
    # tail: for |xi| >= R0 the cross-correlator approaches the constant-sigma
    # heat correlator times sigma(t,x) sigma(s,y) when t = s; for t != s the
    # tail is Gaussian-damped and negligible at this R0.
    if t == s:
        st = float(spec.sigma.evaluate(t, [[x]]).real)
        ss = float(spec.sigma.evaluate(s, [[y]]).real)
        m = min(t, s)
        f0 = lambda r: (r ** (beta - 3.0)
                        * (-math.expm1(-2.0 * m * r * r)) / 2.0)
        u = abs(x - y)
        pieces.append(_scale(_tail_fourier(f0, u, "cos", R0, quad), 2.0 * st * ss))
    res = _acc(pieces, quad)
    return res.scaled(2.0 * math.pi * spec.kappa ** 2)


# ---------------------------------------------------------------------------
# band-restricted integrals
# ---------------------------------------------------------------------------


def _band_edges(profile: AnisotropyProfile, c: float) -> Tuple[float, float]:
    a1 = float(profile.alphas[0])
    a2 = float(profile.alphas[1])
    return c ** (1.0 / a1), c ** (1.0 / a2)


def _heat_box_value(spec: SpectralKernelSpec, t, s, u, c: float,
                    quad: QuadratureSpec) -> QuadResult:
    """Second moment restricted to D1(c), heat k = 1."""
    if spec.params.k != 1:
        raise ValueError("band-restricted heat integrals support k = 1 only")
    beta = float(spec.params.beta)
    T, R = _band_edges(spec.profile, c)

    def f(r):
        if r == 0.0:
            r = 1e-300
        base = r ** (beta - 1.0) * _heat_box_tau(T, t, s, r)
        return base * (2.0 * math.cos(u * r) if u else 2.0)

    pieces = []
    lo = 0.0
    for hi in _decades(R):
        pieces.append(_quad(f, lo, hi, quad, points=[0.0] if lo == 0.0 else None))
        lo = hi
    res = _acc(pieces, quad)
    return res.scaled(spec.kappa ** 2)


def _decades(R: float) -> List[float]:
    edges = []
    e = 1.0
    while e < R:
        edges.append(e)
        e *= 8.0
    edges.append(R)
    return edges


def _heat_complement_value(spec: SpectralKernelSpec, t, s, u, b: float,
                           quad: QuadratureSpec) -> QuadResult:
    """Second moment over the complement of D1(b), heat k = 1, computed
    directly (no large-value cancellation)."""
    if spec.params.k != 1:
        raise ValueError("band-restricted heat integrals support k = 1 only")
    beta = float(spec.params.beta)
    T, R = _band_edges(spec.profile, b)
    ang = (lambda r: 2.0 * math.cos(u * r)) if u else (lambda r: 2.0)

    # region |tau| >= T, all xi
    def fa(r):
        if r == 0.0:
            r = 1e-300
        return r ** (beta - 1.0) * 2.0 * heat_tau_tail(T, t, s, r) * ang(r)

    # region |tau| < T, |xi| >= R
    def fb_plain(r):
        return r ** (beta - 1.0) * _heat_box_tau(T, t, s, r)

    pieces = []
    R0 = max(_R0_HEAT, 1.0)
    pieces.append(_quad(fa, 0.0, R0, quad, points=[0.0]))
    fa_tail = lambda r: r ** (beta - 1.0) * 2.0 * heat_tau_tail(T, t, s, r)
    if u == 0.0:
        pieces.append(_scale(_tail_plain(fa_tail, R0, quad), 2.0))
        pieces.append(_scale(_tail_plain(fb_plain, R, quad), 2.0))
    else:
        pieces.append(_scale(_tail_fourier(fa_tail, u, "cos", R0, quad), 2.0))
        pieces.append(_scale(_tail_fourier(fb_plain, u, "cos", R, quad), 2.0))
    res = _acc(pieces, quad)
    return res.scaled(spec.kappa ** 2)


# --- wave: oscillation-bounded tensor panel quadrature over the D1 box -----


def _panel_nodes(length: float, freq: float, quad: QuadratureSpec
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, length] with panel width at most a
    fraction of the oscillation period 2 pi / freq."""
    width = min(1.0, 2.0 * math.pi / max(freq, 1e-9) / quad.panels_per_period)
    n_panels = max(4, int(math.ceil(length / width)))
    gx, gw = np.polynomial.legendre.leggauss(quad.panel_order)
    h = length / n_panels
    starts = h * np.arange(n_panels)
    nodes = (starts[:, None] + h * 0.5 * (gx[None, :] + 1.0)).ravel()
    weights = np.tile(h * 0.5 * gw, n_panels)
    return nodes, weights


def _wave_bracket_grid(t: float, tau: np.ndarray, r: np.ndarray) -> np.ndarray:
    """B_t on the tensor grid tau (n,) x r (m,), stable at tau = +-r."""
    from anisofield.spectral import phi_t
    tt = tau[:, None]
    rr = r[None, :]
    return (np.exp(-1j * tt * t) * (phi_t(t, tt + rr) - phi_t(t, tt - rr))
            / (2.0 * rr))


def _wave_box_bilinear(spec: SpectralKernelSpec, t, s, u, c: float,
                       quad: QuadratureSpec, combo: str) -> QuadResult:
    """Tensor-panel integral over D1(c) for the wave kernel (k = 1).

    combo = "cross": 4 k^2 int int cos(xi u) Re(B_t conj(B_s)) r^{beta-1}
    combo = "increment": same with |B_t|^2 + |B_s|^2 - 2 cos(xi u) Re(..).
    """
    if spec.params.k != 1:
        raise ValueError("band-restricted wave integrals support k = 1 only")
    beta = float(spec.params.beta)
    T, R = _band_edges(spec.profile, c)
    freq = t + s + abs(u)
    tau, wt = _panel_nodes(T, freq, quad)
    r, wr = _panel_nodes(R, freq, quad)
    wxi = wr * r ** (beta - 1.0) * (np.cos(u * r) if u else 1.0)
    wxi_flat = wr * r ** (beta - 1.0)
    total = 0.0
    chunk = max(1, int(2_000_000 // max(len(r), 1)))
    for i in range(0, len(tau), chunk):
        tt = tau[i:i + chunk]
        Bt = _wave_bracket_grid(t, tt, r)
        Bs = Bt if s == t else _wave_bracket_grid(s, tt, r)
        cross = (Bt * np.conj(Bs)).real
        if combo == "cross":
            total += wt[i:i + chunk] @ cross @ wxi
        else:
            sq = (np.abs(Bt) ** 2 + np.abs(Bs) ** 2) @ wxi_flat
            total += wt[i:i + chunk] @ (sq - 2.0 * (cross @ wxi))
    value = 4.0 * spec.kappa ** 2 * total
    # panel rule error is far below the oscillation-resolved tolerance; report
    # a conservative estimate tied to the panel count
    err = abs(value) * 1e-12 + 1e-12
    return QuadResult(value, err, True)


# ---------------------------------------------------------------------------
# public second-moment API
# ---------------------------------------------------------------------------


def _points_key(p) -> Tuple[float, ...]:
    return tuple(float(v) for v in p)


def second_moment(spec: SpectralKernelSpec, p: Sequence[float],
                  q: Sequence[float], band: BandSpec = FULL_BAND,
                  quad: QuadratureSpec = DEFAULT_QUAD) -> QuadResult:
    """E[Re v_j(band, p) Re v_j(band, q)] per component."""
    return _second_moment_cached(spec, _points_key(p), _points_key(q), band, quad)


@lru_cache(maxsize=200_000)
def _second_moment_cached(spec: SpectralKernelSpec, p: Tuple[float, ...],
                          q: Tuple[float, ...], band: BandSpec,
                          quad: QuadratureSpec) -> QuadResult:
    if band.empty:
        return QuadResult(0.0, 0.0, True)
    k = spec.params.k
    t, x = _split_point(p, k)
    s, y = _split_point(q, k)
    if t < 0 or s < 0:
        raise ValueError("points need nonnegative time")
    if t == 0.0 or s == 0.0:
        return QuadResult(0.0, 0.0, True)
    u = float(np.linalg.norm(x - y))
    eq = spec.params.equation
    if eq is Equation.HEAT_SIGMA:
        if not band.full:
            raise NotImplementedError(
                "band-restricted heat_sigma second moments are not supported; "
                "use the full band")
        return _sigma_full_moment(spec, p, q, quad)
    if band.full:
        return _full_radial_value(spec, t, s, u, quad)
    full_needed = math.isinf(band.b)
    if eq is Equation.HEAT:
        if full_needed:
            if band.a == 0.0:
                return _full_radial_value(spec, t, s, u, quad)
            return _heat_complement_value(spec, t, s, u, band.a, quad)
        hi = _heat_box_value(spec, t, s, u, band.b, quad)
        if band.a == 0.0:
            return hi
        return hi - _heat_box_value(spec, t, s, u, band.a, quad)
    # wave
    if full_needed:
        full = _full_radial_value(spec, t, s, u, quad)
        if band.a == 0.0:
            return full
        return full - _wave_box_bilinear(spec, t, s, u, band.a, quad, "cross")
    hi = _wave_box_bilinear(spec, t, s, u, band.b, quad, "cross")
    if band.a == 0.0:
        return hi
    return hi - _wave_box_bilinear(spec, t, s, u, band.a, quad, "cross")


def _full_increment_value(spec: SpectralKernelSpec, t: float, s: float,
                          u: float, quad: QuadratureSpec) -> QuadResult:
    """E |v_j(p) - v_j(q)|^2 over the full band as a single radial integral
    of the combined (cancellation-free) integrand, plus per-term tails."""
    k, beta = spec.params.k, float(spec.params.beta)
    eq = spec.params.equation
    if k > 2 and u != 0.0:
        raise ValueError("non-radial increments support k in {1, 2} only")
    R0 = _R0_HEAT if eq is not Equation.WAVE else _R0_WAVE
    if k == 2 and u > 0.0:
        R0 = max(R0, 25.0 / u)

    def head(r):
        if r == 0.0:
            r = 1e-300
        ctt = float(time_correlator(eq, t, t, r))
        css = float(time_correlator(eq, s, s, r))
        cts = float(time_correlator(eq, t, s, r))
        if u == 0.0:
            ang = 1.0
        elif k == 1:
            ang = math.cos(u * r)
        else:
            ang = float(special.j0(u * r))
        comb = ctt + css - 2.0 * ang * cts
        c = 2.0 if k == 1 else (2.0 * math.pi if u else _surface_constant(k))
        return c * r ** (beta - 1.0) * comb

    pieces = [_quad(head, 0.0, R0, quad, points=[0.0])]
    tail_fn = _wave_full_tails if eq is Equation.WAVE else _heat_full_tails
    pieces += tail_fn(spec, t, t, 0.0, R0, quad)
    pieces += tail_fn(spec, s, s, 0.0, R0, quad)
    pieces += [_scale(ve, -2.0) for ve in tail_fn(spec, t, s, u, R0, quad)]
    return _acc(pieces, quad).scaled(2.0 * math.pi * spec.kappa ** 2)


def canonical_metric(spec: SpectralKernelSpec, p, q,
                     quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """sqrt(E |v_j(p) - v_j(q)|^2) per component."""
    pk, qk = _points_key(p), _points_key(q)
    if pk == qk:
        return 0.0
    k = spec.params.k
    t, x = _split_point(pk, k)
    s, y = _split_point(qk, k)
    u = float(np.linalg.norm(x - y))
    if spec.params.equation is Equation.HEAT_SIGMA:
        d2 = (second_moment(spec, pk, pk, FULL_BAND, quad).value
              + second_moment(spec, qk, qk, FULL_BAND, quad).value
              - 2.0 * second_moment(spec, pk, qk, FULL_BAND, quad).value)
        return math.sqrt(max(d2, 0.0))
    d2 = _full_increment_value(spec, t, s, u, quad).value
    return math.sqrt(max(d2, 0.0))


def f1_low_band(spec: SpectralKernelSpec, a: float, p, q,
                quad: QuadratureSpec = DEFAULT_QUAD) -> QuadResult:
    """Increment second moment restricted to D1(a):
    E |(v([0,a),p) - v([0,a),q))_j|^2."""
    return _f1_cached(spec, float(a), _points_key(p), _points_key(q), quad)


@lru_cache(maxsize=100_000)
def _f1_cached(spec, a, p, q, quad) -> QuadResult:
    if a <= 0.0 or p == q:
        return QuadResult(0.0, 0.0, True)
    k = spec.params.k
    t, x = _split_point(p, k)
    s, y = _split_point(q, k)
    u = float(np.linalg.norm(x - np.asarray(y)))
    if spec.params.equation is Equation.HEAT:
        beta = float(spec.params.beta)
        T, R = _band_edges(spec.profile, a)

        def f(r):
            if r == 0.0:
                r = 1e-300
            it = _heat_box_tau(T, t, t, r)
            is_ = _heat_box_tau(T, s, s, r)
            ix = _heat_box_tau(T, t, s, r)
            comb = it + is_ - 2.0 * math.cos(u * r) * ix
            return 2.0 * r ** (beta - 1.0) * comb

        pieces = []
        lo = 0.0
        for hi in _decades(R):
            pieces.append(_quad(f, lo, hi, quad,
                                points=[0.0] if lo == 0.0 else None))
            lo = hi
        return _acc(pieces, quad).scaled(spec.kappa ** 2)
    if spec.params.equation is Equation.WAVE:
        return _wave_box_bilinear(spec, t, s, u, a, quad, "increment")
    raise NotImplementedError("f1 supports the heat and wave kernels")


def f2_high_band(spec: SpectralKernelSpec, b: float, p, q,
                 quad: QuadratureSpec = DEFAULT_QUAD) -> QuadResult:
    """Increment second moment over the complement of D1(b)."""
    return _f2_cached(spec, float(b), _points_key(p), _points_key(q), quad)


@lru_cache(maxsize=100_000)
def _f2_cached(spec, b, p, q, quad) -> QuadResult:
    if math.isinf(b) or p == q:
        return QuadResult(0.0, 0.0, True)
    k = spec.params.k
    t, x = _split_point(p, k)
    s, y = _split_point(q, k)
    u = float(np.linalg.norm(x - np.asarray(y)))
    if spec.params.equation is Equation.HEAT:
        ctt = _heat_complement_value(spec, t, t, 0.0, b, quad)
        css = _heat_complement_value(spec, s, s, 0.0, b, quad)
        cts = _heat_complement_value(spec, t, s, u, b, quad)
        return ctt + css - cts.scaled(2.0)
    if spec.params.equation is Equation.WAVE:
        full = (second_moment(spec, p, p, FULL_BAND, quad)
                + second_moment(spec, q, q, FULL_BAND, quad)
                - second_moment(spec, p, q, FULL_BAND, quad).scaled(2.0))
        box = _wave_box_bilinear(spec, t, s, u, b, quad, "increment")
        return full - box
    raise NotImplementedError("f2 supports the heat and wave kernels")


def band_increment_l2(spec: SpectralKernelSpec, band: BandSpec, p, q,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """|| v([a,b), p) - v(p) - v([a,b), q) + v(q) ||_{L2} per component,
    as sqrt(f1(a) + f2(b))."""
    if _points_key(p) == _points_key(q):
        return 0.0
    total = (f1_low_band(spec, band.a, p, q, quad).value
             + f2_high_band(spec, band.b, p, q, quad).value)
    return math.sqrt(max(total, 0.0))


# ---------------------------------------------------------------------------
# fitted constants and scans
# ---------------------------------------------------------------------------


def _loglog_fit(xs: np.ndarray, ys: np.ndarray) -> Tuple[float, float, float]:
    """slope, intercept, R^2 of log ys against log xs."""
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _pair_grid(box: Box, n_pairs: int, seed: int, max_delta: float,
               profile: AnisotropyProfile,
               min_scale: float = 0.03) -> List[Tuple[Tuple, Tuple]]:
    """Random pairs with Delta-distance log-uniform in
    [min_scale, 1] * max_delta; the Delta budget is split across coordinates
    and inverted per coordinate, so the target distance is hit exactly."""
    rng = np.random.default_rng(seed)
    lo = np.array([iv[0] for iv in box.intervals])
    hi = np.array([iv[1] for iv in box.intervals])
    alphas = np.array([float(a) for a in profile.alphas])
    pairs = []
    while len(pairs) < n_pairs:
        p = lo + (hi - lo) * rng.random(len(lo))
        scale = math.exp(rng.uniform(math.log(min_scale), 0.0)) * max_delta
        weights = rng.dirichlet(np.ones(len(lo)))
        signs = rng.choice([-1.0, 1.0], size=len(lo))
        q = p + signs * (weights * scale) ** (1.0 / alphas)
        if not box.contains(q):
            continue
        d = delta_metric(profile, p, q)
        if 0 < d <= max_delta:
            pairs.append((tuple(p), tuple(q)))
    return pairs


def fit_band_constants(spec: SpectralKernelSpec, box: Box,
                       band_ladder: Sequence[Tuple[float, float]],
                       pairs: Sequence[Tuple[Sequence[float], Sequence[float]]],
                       quad: QuadratureSpec = DEFAULT_QUAD,
                       a0: float = 2.0) -> FittedConstants:
    """Smallest c0 for which the band-increment inequalities hold on the grid:

        sqrt(f1(a) + f2(b)) <= c0 [ sum_j a^{gamma_j} |p_j - q_j| + 1/b ]
        sqrt(f1(a0))        <= c0   sum_j |p_j - q_j|
    """
    if len(pairs) < 10:
        raise ValueError("need at least 10 point pairs")
    if len(band_ladder) < 4:
        raise ValueError("need at least 4 band values")
    uniq = {( _points_key(p), _points_key(q)) for p, q in pairs}
    if len(uniq) < 2:
        raise ValueError("degenerate pair grid: identical pairs cannot fix c0")
    profile = spec.profile
    gammas = np.array([float(g) for g in profile.gammas])
    ratios = []
    worst = (0.0, None)
    for p, q in pairs:
        dxy = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
        for a, b in band_ladder:
            lhs = band_increment_l2(spec, BandSpec(a, b), p, q, quad)
            rhs = float(np.sum(a ** gammas * dxy)) + (0.0 if math.isinf(b) else 1.0 / b)
            if math.isinf(b):
                rhs += 0.0
            ratio = lhs / rhs if rhs > 0 else 0.0
            ratios.append(ratio)
            if ratio > worst[0]:
                worst = (ratio, (p, q, a, b))
        lhs0 = math.sqrt(max(f1_low_band(spec, a0, p, q, quad).value, 0.0))
        rhs0 = float(np.sum(dxy))
        if rhs0 > 0:
            ratios.append(lhs0 / rhs0)
    ratios = np.asarray(ratios)
    c0 = float(ratios.max())
    ls = float(np.mean(ratios))
    fits = FittedConstants()
    fits.add(FitResult(
        name="c0",
        value=c0,
        grid=(tuple(band_ladder), len(pairs), a0),
        diagnostics={
            "mean_ratio": ls,
            "max_ratio": c0,
            "n_evaluations": float(len(ratios)),
        },
    ))
    return fits


def metric_equivalence_scan(spec: SpectralKernelSpec, box: Box, n_pairs: int,
                            quad: QuadratureSpec = DEFAULT_QUAD,
                            seed: int = 0, a0: float = 2.0) -> Dict[str, object]:
    """min/max of d(p,q) / Delta(p,q) over random pairs with
    Delta <= min(1/a0, 1)."""
    profile = spec.profile
    max_delta = min(1.0 / a0, 1.0)
    pairs = _pair_grid(box, n_pairs, seed, max_delta, profile)
    table = []
    for p, q in pairs:
        dlt = delta_metric(profile, p, q)
        d = canonical_metric(spec, p, q, quad)
        table.append((p, q, dlt, d, d / dlt))
    ratios = np.array([row[4] for row in table])
    return {
        "c_min": float(ratios.min()),
        "C_max": float(ratios.max()),
        "table": table,
        "ratio_spread": float(ratios.max() / ratios.min()),
    }


def variance_scaling(spec: SpectralKernelSpec, ts: Sequence[float],
                     quad: QuadratureSpec = DEFAULT_QUAD) -> FitResult:
    """Slope of log Var v(t, 0) against log t."""
    ts = np.asarray(sorted(float(t) for t in ts))
    if len(ts) < 5 or ts.max() / ts.min() < 10.0:
        raise ValueError("need at least 5 times spanning a decade")
    origin = (0.0,) * spec.params.k
    vs = np.array([
        second_moment(spec, (t, *origin), (t, *origin), FULL_BAND, quad).value
        for t in ts
    ])
    slope, intercept, r2 = _loglog_fit(ts, vs)
    return FitResult(
        name="variance_scaling_exponent",
        value=slope,
        grid=tuple(ts),
        diagnostics={"intercept": intercept, "r2": r2},
    )


def projection_alpha(spec: SpectralKernelSpec, y, xprime,
                     quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """alpha(y) = E[v_j(y) v_j(x')] / E[v_j(x')^2]."""
    denom = second_moment(spec, xprime, xprime, FULL_BAND, quad).value
    if denom <= 0:
        raise ValueError("anchor variance vanishes; anchor must have t > 0")
    return second_moment(spec, y, xprime, FULL_BAND, quad).value / denom


def covariance_smoothness(spec: SpectralKernelSpec, box: Box,
                          anchor: Sequence[float],
                          pairs: Sequence[Tuple[Sequence[float], Sequence[float]]],
                          quad: QuadratureSpec = DEFAULT_QUAD,
                          zero_tol: float = 1e-6) -> FitResult:
    """Fit |E[(v_j(p1) - v_j(p2)) v_j(x')]| <= C (sum_j |p1_j - p2_j|)^delta.

    Returns the log-log slope delta (math.inf with C = 0 when every
    difference is below zero_tol: the anchor covariance is constant on the
    grid to that tolerance)."""
    diffs, seps = [], []
    for p1, p2 in pairs:
        g = abs(second_moment(spec, p1, anchor, FULL_BAND, quad).value
                - second_moment(spec, p2, anchor, FULL_BAND, quad).value)
        h = float(np.sum(np.abs(np.asarray(p1, dtype=float)
                                - np.asarray(p2, dtype=float))))
        diffs.append(g)
        seps.append(h)
    diffs = np.asarray(diffs)
    seps = np.asarray(seps)
    modulus = float(diffs.max())
    if modulus < zero_tol:
        return FitResult(
            name="covariance_smoothness_delta",
            value=math.inf,
            grid=tuple(seps),
            diagnostics={"constant": 0.0, "modulus": modulus, "r2": 1.0},
        )
    keep = diffs > max(10.0 * quad.tol, 1e-14)
    slope, intercept, r2 = _loglog_fit(seps[keep], diffs[keep])
    return FitResult(
        name="covariance_smoothness_delta",
        value=slope,
        grid=tuple(seps),
        diagnostics={"constant": math.exp(intercept), "modulus": modulus,
                     "r2": r2},
    )


def smoothness_pair_ladder(box: Box, profile: AnisotropyProfile, rho: float,
                           n_scales: int = 6) -> List[Tuple[Tuple, Tuple]]:
    """Coordinate-axis pairs inside the 2 rho Delta-ball of the box center,
    at geometrically decreasing separations (one pair per axis per scale)."""
    center = np.asarray(box.center())
    alphas = [float(a) for a in profile.alphas]
    pairs = []
    for j, a in enumerate(alphas):
        hmax = (2.0 * rho) ** (1.0 / a) / 4.0
        for i in range(n_scales):
            h = hmax * 2.0 ** (-i)
            p1 = center.copy()
            p2 = center.copy()
            p1[j] += h / 2.0
            p2[j] -= h / 2.0
            pairs.append((tuple(p1), tuple(p2)))
    return pairs
