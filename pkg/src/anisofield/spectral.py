"""Spectral amplitudes of the three kernels, frequency-band geometry, and
discretized frequency grids with quadrature weights.

Conventions
-----------
The driving noise is complex, with independent real/imaginary white-noise
parts; a node at (tau, xi) with weight w (the Lebesgue measure of its cell)
carries a complex Gaussian whose real and imaginary parts each have variance
w.  The field is Re( sum_nodes amplitude * W_node ), so its covariance is the
Riemann sum of Re(g_p conj(g_q)) over cells — the quantity module covariance
integrates exactly.

Grids are symmetric under (tau, xi) -> (-tau, -xi) and cell-centered (no node
at xi = 0).  Layout is per-octave in the band coordinate
c = max(|tau|^a1, |xi|^a2), so every band annulus [2^j, 2^(j+1)) holds a
comparable node count.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

from anisofield.model import (
    AnisotropyProfile,
    Equation,
    ModelParams,
    profile_for,
)

_PHI_TAYLOR_CUT = 1e-4


@dataclass(frozen=True)
class SigmaSpec:
    """Trigonometric-polynomial coefficient sigma(t,x) = sum_m c_m
    exp(i(r_m t + z_m . x)).

    Atoms must come in conjugate pairs (c, r, z) / (conj(c), -r, -z) so sigma
    is real; positivity is validated on a grid and the observed range
    [c_T, C_T] recorded.
    """

    atoms: Tuple[Tuple[complex, float, Tuple[float, ...]], ...]
    c_T: float = field(init=False, default=0.0)
    C_T: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("sigma needs at least one atom")
        k = len(self.atoms[0][2])
        for c, r, z in self.atoms:
            if len(z) != k:
                raise ValueError("inconsistent space-frequency arity in sigma atoms")
        lo, hi = self._validate_real_positive()
        object.__setattr__(self, "c_T", lo)
        object.__setattr__(self, "C_T", hi)

    @property
    def k(self) -> int:
        return len(self.atoms[0][2])

    def evaluate(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(np.broadcast(t, x[..., 0]).shape, dtype=complex)
        for c, r, z in self.atoms:
            out = out + c * np.exp(1j * (r * t + x @ np.asarray(z)))
        return out

    def _validate_real_positive(self, horizon: float = 4.0, extent: float = 8.0,
                                n: int = 48) -> Tuple[float, float]:
        ts = np.linspace(0.0, horizon, n)
        xs = np.linspace(-extent, extent, n)
        if self.k == 1:
            tt, xx = np.meshgrid(ts, xs, indexing="ij")
            vals = self.evaluate(tt, xx[..., None])
        else:
            # validate along a couple of diagonal space directions
            vals = []
            for direction in np.eye(self.k):
                tt, ss = np.meshgrid(ts, xs, indexing="ij")
                pts = ss[..., None] * direction
                vals.append(self.evaluate(tt, pts))
            vals = np.concatenate([v.ravel() for v in vals])
        vals = np.asarray(vals)
        if np.max(np.abs(vals.imag)) > 1e-9:
            raise ValueError("sigma atoms are not conjugate-symmetric (sigma not real)")
        lo = float(np.min(vals.real))
        hi = float(np.max(vals.real))
        if lo <= 0:
            raise ValueError(f"sigma is not strictly positive (min {lo:.3g} on grid)")
        return lo, hi


@dataclass(frozen=True)
class SpectralKernelSpec:
    """A kernel identity: model parameters, optional sigma, and the
    calibration constant kappa multiplying every amplitude."""

    params: ModelParams
    sigma: Optional[SigmaSpec] = None
    kappa: float = 1.0

    def __post_init__(self):
        if (self.params.equation is Equation.HEAT_SIGMA) != (self.sigma is not None):
            raise ValueError("sigma must be present exactly when equation is heat_sigma")
        if self.sigma is not None and self.sigma.k != self.params.k:
            raise ValueError("sigma space-frequency arity must match k")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @property
    def profile(self) -> AnisotropyProfile:
        return profile_for(self.params)

    def content_key(self) -> str:
        sig = None
        if self.sigma is not None:
            sig = [[repr(c), r, list(z)] for c, r, z in self.sigma.atoms]
        blob = json.dumps(
            {
                "equation": self.params.equation.value,
                "k": self.params.k,
                "beta": str(self.params.beta),
                "kappa": repr(self.kappa),
                "sigma": sig,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BandSpec:
    """Half-open frequency band [a, b) in the coordinate
    max(|tau|^alpha1, |xi|^alpha2)."""

    a: float = 0.0
    b: float = math.inf

    def __post_init__(self):
        if not (0 <= self.a <= self.b):
            raise ValueError(f"need 0 <= a <= b, got [{self.a}, {self.b})")

    @property
    def full(self) -> bool:
        return self.a == 0.0 and math.isinf(self.b)

    @property
    def empty(self) -> bool:
        return self.a == self.b


FULL_BAND = BandSpec(0.0, math.inf)


def phi_t(t: float, u: np.ndarray) -> np.ndarray:
    """(1 - exp(itu))/u with the removable singularity at u = 0 handled by a
    3-term Taylor series (phi_t(0) = -it)."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) <= _PHI_TAYLOR_CUT
    safe = np.where(small, 1.0, u)
    direct = -np.expm1(1j * t * safe) / safe
    itu = 1j * t * u
    taylor = -1j * t * (1.0 + itu / 2.0 + itu * itu / 6.0)
    return np.where(small, taylor, direct)


def _xi_norm(xi: np.ndarray, k: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim >= 1 and xi.shape[-1] == k and (k > 1 or xi.ndim > 1):
        return np.sqrt(np.sum(xi * xi, axis=-1))
    return np.abs(xi)


def _phase(x: Sequence[float], xi: np.ndarray, k: int) -> np.ndarray:
    x = np.asarray(np.atleast_1d(x), dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.ndim >= 1 and xi.shape[-1] == k and (k > 1 or xi.ndim > 1):
        return xi @ x
    return xi * float(x[0])


def heat_bracket(t: float, tau: np.ndarray, r: np.ndarray) -> np.ndarray:
    """(exp(-i tau t) - exp(-t r^2)) / (r^2 - i tau)."""
    tau = np.asarray(tau, dtype=float)
    r2 = np.asarray(r, dtype=float) ** 2
    with np.errstate(under="ignore"):
        num = np.exp(-1j * tau * t) - np.exp(-t * r2)
    return num / (r2 - 1j * tau)


def wave_bracket(t: float, tau: np.ndarray, r: np.ndarray) -> np.ndarray:
    """exp(-i tau t)/(2r) * (phi_t(tau + r) - phi_t(tau - r)); all the
    singularities at tau = +-r are removable via phi_t."""
    tau = np.asarray(tau, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.exp(-1j * tau * t) * (phi_t(t, tau + r) - phi_t(t, tau - r)) / (2.0 * r)


def heat_amplitude(spec: SpectralKernelSpec, t: float, x, tau, xi) -> np.ndarray:
    """kappa * e^{-i xi.x} (e^{-i tau t} - e^{-t|xi|^2})/(|xi|^2 - i tau)
    * |xi|^{(beta-k)/2}."""
    k, beta = spec.params.k, float(spec.params.beta)
    r = _xi_norm(xi, k)
    riesz = r ** ((beta - k) / 2.0)
    return spec.kappa * np.exp(-1j * _phase(x, xi, k)) * heat_bracket(t, tau, r) * riesz


def wave_amplitude(spec: SpectralKernelSpec, t: float, x, tau, xi) -> np.ndarray:
    k, beta = spec.params.k, float(spec.params.beta)
    r = _xi_norm(xi, k)
    riesz = r ** ((beta - k) / 2.0)
    return spec.kappa * np.exp(-1j * _phase(x, xi, k)) * wave_bracket(t, tau, r) * riesz


def heat_sigma_amplitude(spec: SpectralKernelSpec, t: float, x, tau, xi) -> np.ndarray:
    """kappa * |xi|^{(beta-k)/2} * sum_m c_m H_{t,x}(tau - r_m, xi - z_m)
    where H is the phase-carrying heat bracket at the shifted frequency."""
    if spec.sigma is None:
        raise ValueError("heat_sigma amplitude requires a sigma spec")
    k, beta = spec.params.k, float(spec.params.beta)
    tau = np.asarray(tau, dtype=float)
    xi_arr = np.asarray(xi, dtype=float)
    r = _xi_norm(xi_arr, k)
    riesz = r ** ((beta - k) / 2.0)
    total = np.zeros(np.broadcast(tau, r).shape, dtype=complex)
    for c, rm, zm in spec.sigma.atoms:
        if k == 1:
            xs = xi_arr - zm[0]
        else:
            xs = xi_arr - np.asarray(zm)
        rs = _xi_norm(xs, k)
        total = total + c * np.exp(-1j * _phase(x, xs, k)) * heat_bracket(t, tau - rm, rs)
    return spec.kappa * riesz * total


def amplitude(spec: SpectralKernelSpec, t: float, x, tau, xi) -> np.ndarray:
    eq = spec.params.equation
    if eq is Equation.HEAT:
        return heat_amplitude(spec, t, x, tau, xi)
    if eq is Equation.WAVE:
        return wave_amplitude(spec, t, x, tau, xi)
    return heat_sigma_amplitude(spec, t, x, tau, xi)


def band_coordinate(profile: AnisotropyProfile, tau, xi_norm) -> np.ndarray:
    a1 = float(profile.alphas[0])
    a2 = float(profile.alphas[1])
    return np.maximum(np.abs(tau) ** a1, np.asarray(xi_norm, dtype=float) ** a2)


def band_mask(profile: AnisotropyProfile, band: BandSpec, tau, xi) -> np.ndarray:
    """True iff max(|tau|^a1, |xi|^a2) lies in [a, b); xi may be an |xi| array
    or a vector array."""
    xi = np.asarray(xi, dtype=float)
    r = xi if xi.ndim <= np.asarray(tau).ndim else np.sqrt((xi * xi).sum(-1))
    c = band_coordinate(profile, tau, np.abs(r))
    return (c >= band.a) & (c < band.b)


# ---------------------------------------------------------------------------
# frequency grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyGrid:
    """Cell-centered nodes over D1(b_max) = {max(|tau|^a1,|xi|^a2) < b_max}.

    tau: (n,) node times; xi: (n,k); w: cell Lebesgue measures; tau_hw: cell
    half-widths in tau (used for exact in-cell averaging of oscillatory
    amplitude mass); amp_scale: radial-singularity cell-average correction
    factors (1 away from the innermost shell).
    """

    tau: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    tau_hw: np.ndarray
    amp_scale: np.ndarray
    b_max: float
    trunc_tau: float
    trunc_xi: float
    tail_bound: float
    nodes_per_octave: int
    chunk_size: int = 65536

    @property
    def n_nodes(self) -> int:
        return int(self.tau.shape[0])

    @property
    def k(self) -> int:
        return int(self.xi.shape[1])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.tau).tobytes())
        h.update(np.ascontiguousarray(self.xi).tobytes())
        h.update(np.ascontiguousarray(self.w).tobytes())
        h.update(f"{self.b_max}:{self.nodes_per_octave}:{self.chunk_size}".encode())
        return h.hexdigest()[:16]

    def covered_measure(self) -> float:
        return float(np.sum(self.w))


def _rect_cells(t_lo, t_hi, x_lo, x_hi, n_t, n_x):
    """Cell-centered n_t x n_x subdivision of [t_lo,t_hi) x [x_lo,x_hi)."""
    ht = (t_hi - t_lo) / n_t
    hx = (x_hi - x_lo) / n_x
    tc = t_lo + ht * (np.arange(n_t) + 0.5)
    xc = x_lo + hx * (np.arange(n_x) + 0.5)
    tt, xx = np.meshgrid(tc, xc, indexing="ij")
    return tt.ravel(), xx.ravel(), np.full(tt.size, ht * hx), np.full(tt.size, ht / 2)


def build_frequency_grid(spec: SpectralKernelSpec, profile: AnisotropyProfile,
                         resolution: int, b_max: float,
                         tail_coefficient: float = 4.0,
                         min_nodes_per_octave: int = 64) -> FrequencyGrid:
    """Per-octave grid over D1(b_max).

    resolution = target node count per octave shell (all four sign quadrants
    together).  For k = 1 the quadrant shell splits into two rectangles; each
    gets a cell-centered subgrid whose tau/xi cell counts follow the
    alpha1:alpha2 scaling of the shell.  k = 2 uses a cartesian xi-plane grid
    with center-in-region membership.
    """
    if resolution < min_nodes_per_octave:
        raise ValueError(
            f"resolution {resolution} below minimum nodes-per-octave {min_nodes_per_octave}"
        )
    if not (b_max > 1 and math.isfinite(b_max)):
        raise ValueError("b_max must be finite and > 1")
    a1 = float(profile.alphas[0])
    a2 = float(profile.alphas[1])
    k = spec.params.k
    if k == 1:
        tau, xi, w, thw = _grid_k1(a1, a2, resolution, b_max)
        xi = xi[:, None]
    elif k == 2:
        tau, xi, w, thw = _grid_k2(a1, a2, resolution, b_max)
    else:
        raise ValueError("synthesis grids support k in {1, 2} only")

    amp_scale = _radial_cell_average_scale(spec, k, xi, w)
    trunc_tau = b_max ** (1.0 / a1)
    trunc_xi = b_max ** (1.0 / a2)
    return FrequencyGrid(
        tau=tau, xi=xi, w=w, tau_hw=thw, amp_scale=amp_scale,
        b_max=float(b_max), trunc_tau=trunc_tau, trunc_xi=trunc_xi,
        tail_bound=tail_coefficient * b_max ** -2, nodes_per_octave=resolution,
    )


def _grid_k1(a1, a2, resolution, b_max):
    taus, xis, ws, thws = [], [], [], []

    def add_rect(t_lo, t_hi, x_lo, x_hi, n_t, n_x):
        tt, xx, ww, hh = _rect_cells(t_lo, t_hi, x_lo, x_hi, n_t, n_x)
        for st in (1.0, -1.0):
            for sx in (1.0, -1.0):
                taus.append(st * tt)
                xis.append(sx * xx)
                ws.append(ww)
                thws.append(hh)

    n_oct = max(1, int(math.ceil(math.log2(b_max))))
    edges = [min(2.0 ** j, b_max) for j in range(n_oct + 1)]
    # base box c < 1 (per positive quadrant); give it one octave's budget
    n_side = max(2, int(round(math.sqrt(resolution / 4))))
    add_rect(0.0, 1.0, 0.0, 1.0, n_side, n_side)
    per_rect = max(2, int(round(math.sqrt(resolution / 8))))
    for c1, c2 in zip(edges[:-1], edges[1:]):
        if c2 <= c1:
            continue
        T1, T2 = c1 ** (1 / a1), c2 ** (1 / a1)
        X1, X2 = c1 ** (1 / a2), c2 ** (1 / a2)
        # right rectangle: tau in [T1,T2), xi in [0,X2)
        add_rect(T1, T2, 0.0, X2, per_rect, per_rect)
        # top rectangle: tau in [0,T1), xi in [X1,X2)
        add_rect(0.0, T1, X1, X2, per_rect, per_rect)
    tau = np.concatenate(taus)
    xi = np.concatenate(xis)
    w = np.concatenate(ws)
    thw = np.concatenate(thws)
    order = np.lexsort((xi, tau))
    return tau[order], xi[order], w[order], thw[order]


def _grid_k2(a1, a2, resolution, b_max):
    """Cartesian (tau, xi1, xi2) cells per octave with center-in-annulus
    membership; modest node counts, intended for validation-scale sampling."""
    taus, xis, ws, thws = [], [], [], []
    n_oct = max(1, int(math.ceil(math.log2(b_max))))
    edges = [0.0] + [min(2.0 ** j, b_max) for j in range(n_oct + 1)]
    per_octave = resolution
    for c1, c2 in zip(edges[:-1], edges[1:]):
        if c2 <= c1:
            continue
        T2 = c2 ** (1 / a1)
        X2 = c2 ** (1 / a2)
        n_t = max(2, int(round((per_octave / 4) ** (1 / 3) * 2)))
        n_x = max(4, int(round((per_octave / 4) ** (1 / 3) * 2)))
        ht = 2 * T2 / n_t
        hx = 2 * X2 / n_x
        tc = -T2 + ht * (np.arange(n_t) + 0.5)
        xc = -X2 + hx * (np.arange(n_x) + 0.5)
        tt, x1, x2 = np.meshgrid(tc, xc, xc, indexing="ij")
        tt, x1, x2 = tt.ravel(), x1.ravel(), x2.ravel()
        r = np.hypot(x1, x2)
        c = np.maximum(np.abs(tt) ** a1, r ** a2)
        keep = (c >= c1) & (c < c2) & (r > 0)
        taus.append(tt[keep])
        xis.append(np.stack([x1[keep], x2[keep]], axis=1))
        ws.append(np.full(keep.sum(), ht * hx * hx))
        thws.append(np.full(keep.sum(), ht / 2))
    tau = np.concatenate(taus)
    xi = np.concatenate(xis)
    w = np.concatenate(ws)
    thw = np.concatenate(thws)
    order = np.lexsort((xi[:, 1], xi[:, 0], tau))
    return tau[order], xi[order], w[order], thw[order]


def _radial_cell_average_scale(spec: SpectralKernelSpec, k: int,
                               xi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sqrt( cell-average of |xi|^{beta-k} / center value ) for nodes whose
    cell touches the integrable singularity at xi = 0; 1 elsewhere."""
    beta = float(spec.params.beta)
    p = beta - k
    scale = np.ones(xi.shape[0])
    if p == 0:
        return scale
    r = np.sqrt((xi * xi).sum(axis=1))
    if k == 1:
        # innermost cells sit at center hx/2 with extent [0, hx) = [0, 2r);
        # the exact cell average of xi^p there is (2r)^p/(p+1) vs center r^p
        inner = r < np.sqrt(w)
        ratio = (2 * r[inner]) ** p / (p + 1) / r[inner] ** p
        scale[inner] = np.sqrt(ratio)
    else:
        inner = r < np.sqrt(w) ** (1 / 1.5)
        if np.any(inner):
            # numeric average of |xi|^p over the square cell centered at xi
            hx = (w[inner]) ** (1 / 3) / 2  # cells are ht*hx*hx; crude half-width
            g = np.linspace(-1, 1, 9) * 0.5
            gx, gy = np.meshgrid(g, g, indexing="ij")
            pts_x = xi[inner][:, 0][:, None] + 2 * hx[:, None] * gx.ravel()[None, :]
            pts_y = xi[inner][:, 1][:, None] + 2 * hx[:, None] * gy.ravel()[None, :]
            rr = np.hypot(pts_x, pts_y)
            avg = np.mean(rr ** p, axis=1)
            scale[inner] = np.sqrt(avg / r[inner] ** p)
    return scale
