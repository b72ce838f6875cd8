"""Coupled Gaussian sampling of the field and its band restrictions on
space-time point sets, plus the anchored projection decomposition
v = v1 + v2 and the v3 transform.

Sampling contract
-----------------
A sample is a pure function of (master seed, replica index, grid, kernel
spec, points): noise is drawn from a counter-based generator keyed by
(seed, replica, node-chunk index), so values never depend on evaluation
order, thread count, or which bands are requested.  All band samples of one
replica share a single noise draw, which makes band additivity exact (the
sample for [a, c) is the nodewise sum of the samples for any partition of
[a, c)) and disjoint-band samples independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from anisofield.model import AnisotropyProfile, Box, Equation
from anisofield.spectral import (
    FULL_BAND,
    BandSpec,
    FrequencyGrid,
    SpectralKernelSpec,
    amplitude,
    band_mask,
)


class BandTruncationError(ValueError):
    """A requested finite band edge lies beyond the grid's coverage."""


@dataclass(frozen=True)
class Provenance:
    seed: int
    replica: int
    grid_hash: str
    spec_hash: str


@dataclass(frozen=True)
class NoiseDraw:
    """One complex Gaussian per node and component: real and imaginary parts
    independent N(0, node weight).  Shapes are (d, n_nodes)."""

    re: np.ndarray
    im: np.ndarray
    seed: int
    replica: int
    grid_hash: str

    @property
    def d(self) -> int:
        return int(self.re.shape[0])


@dataclass(frozen=True)
class FieldSample:
    points: Tuple[Tuple[float, ...], ...]
    values: np.ndarray  # (n_points, d) real
    band: BandSpec
    provenance: Provenance

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field sample contains non-finite values")


@dataclass(frozen=True)
class ProjectionDecomposition:
    """v = v1 + v2 with v2(y) = alpha(y) * v(x') the conditional expectation
    of v(y) given the anchor value."""

    anchor: Tuple[float, ...]
    anchor_value: np.ndarray        # (d,)
    alpha: np.ndarray               # (n_points,)
    v1: np.ndarray                  # (n_points, d)
    v2: np.ndarray                  # (n_points, d)
    sample: FieldSample
    alpha_at: Callable[[Sequence[float]], float]


def _chunk_rng(seed: int, replica: int, chunk: int, stream: int):
    """Counter-based generator for one (replica, node-chunk) pair; stream
    separates the Gaussian weights (0) from the node-placement jitter (1)."""
    key = np.array(
        [
            (np.uint64(seed) << np.uint64(1)) | np.uint64(stream),
            (np.uint64(replica) << np.uint64(32)) | np.uint64(chunk),
        ],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_noise(seed: int, replica: int, chunk: int, size: int, d: int):
    """Standard normals for one node chunk.  Within a chunk the draws run in
    node order, 2*d values per node (real parts then imaginary, component
    order)."""
    rg = _chunk_rng(seed, replica, chunk, 0)
    z = rg.standard_normal((size, 2, d))
    return z[:, 0, :].T.copy(), z[:, 1, :].T.copy()  # each (d, size)


def draw_noise(grid: FrequencyGrid, d: int = 1, seed: int = 0,
               replica: int = 0) -> NoiseDraw:
    """Materialize the full per-node draw for one replica; scaled by the
    node weights so each part has variance w."""
    n = grid.n_nodes
    re = np.empty((d, n))
    im = np.empty((d, n))
    for c0 in range(0, n, grid.chunk_size):
        c1 = min(c0 + grid.chunk_size, n)
        zr, zi = _chunk_noise(seed, replica, c0 // grid.chunk_size, c1 - c0, d)
        re[:, c0:c1] = zr
        im[:, c0:c1] = zi
    s = np.sqrt(grid.w)
    return NoiseDraw(re * s, im * s, seed, replica, grid.content_hash())


_GL3_NODES = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0  # normalized to sum 1


def _cell_average_factor(spec: SpectralKernelSpec, grid: FrequencyGrid,
                         t: float) -> np.ndarray:
    """sqrt of (cell average of |bracket|^2 * |xi|^(beta-k)) / (value at the
    cell center), per node, via a tensor Gauss-Legendre rule over the cell.

    A plain midpoint rule misrepresents each cell's variance mass: the
    bracket oscillates in tau at rate t and its 1/(tau^2 + r^4)-type envelope
    is convex, so the field's grid variance lands a couple of percent below
    the band integral.  Averaging the squared modulus over the cell restores
    each node's exact mass up to the (smooth) cross-variation, pushing the
    bias well below Monte Carlo resolution.  On the innermost shell the
    radial singularity |xi|^(beta-k) is kept out of the average — the grid's
    amp_scale already corrects it exactly."""
    if t == 0.0:
        return np.ones(grid.n_nodes)
    from anisofield.spectral import heat_bracket, wave_bracket

    bracket = heat_bracket if spec.params.equation is Equation.HEAT else wave_bracket
    k = grid.k
    p = float(spec.params.beta) - k
    tau = grid.tau
    thw = grid.tau_hw
    r_c = np.sqrt(np.sum(grid.xi * grid.xi, axis=1))
    with np.errstate(divide="ignore"):
        den = np.abs(bracket(t, tau, r_c)) ** 2
    # riesz joins the average only where amp_scale has not already fixed it
    use_riesz = (p != 0.0) & (grid.amp_scale == 1.0)
    num = np.zeros_like(den)
    if k == 1:
        xhw = grid.w / (2.0 * thw) / 2.0
        xi_c = grid.xi[:, 0]
        for ga, wa in zip(_GL3_NODES, _GL3_WEIGHTS):
            for gb, wb in zip(_GL3_NODES, _GL3_WEIGHTS):
                r = np.abs(xi_c + xhw * gb)
                val = np.abs(bracket(t, tau + thw * ga, r)) ** 2
                if p != 0.0:
                    val = val * np.where(use_riesz, r ** p / r_c ** p, 1.0)
                num += wa * wb * val
    else:
        xhw = np.sqrt(grid.w / (2.0 * thw)) / 2.0
        for ga, wa in zip(_GL3_NODES, _GL3_WEIGHTS):
            for gb, wb in zip(_GL3_NODES, _GL3_WEIGHTS):
                for gc, wc in zip(_GL3_NODES, _GL3_WEIGHTS):
                    x1 = grid.xi[:, 0] + xhw * gb
                    x2 = grid.xi[:, 1] + xhw * gc
                    r = np.hypot(x1, x2)
                    val = np.abs(bracket(t, tau + thw * ga, r)) ** 2
                    if p != 0.0:
                        val = val * np.where(use_riesz, r ** p / r_c ** p, 1.0)
                    num += wa * wb * wc * val
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return np.sqrt(np.maximum(ratio, 0.0))


def node_amplitudes(spec: SpectralKernelSpec, grid: FrequencyGrid,
                    point: Sequence[float],
                    factor_cache: Optional[dict] = None) -> np.ndarray:
    """Complex amplitude of every grid node at one space-time point, with
    the grid's cell-average corrections applied.  factor_cache (keyed by t)
    lets callers evaluating many points with shared times skip the repeated
    cell-average quadrature."""
    t = float(point[0])
    x = np.asarray(point[1:], dtype=float)
    g = amplitude(spec, t, x, grid.tau, grid.xi)
    g = g * grid.amp_scale
    if spec.params.equation in (Equation.HEAT, Equation.WAVE):
        if factor_cache is None:
            fac = _cell_average_factor(spec, grid, t)
        else:
            fac = factor_cache.get(t)
            if fac is None:
                fac = _cell_average_factor(spec, grid, t)
                factor_cache[t] = fac
        g = g * fac
    return g


def jittered_nodes(grid: FrequencyGrid, seed: int, replica: int):
    """Node positions drawn uniformly within their cells, counter-based on
    (seed, replica, chunk).  With per-replica jitter the ensemble second
    moment at any point pair is *exactly* the band integral over the covered
    region — cell averaging happens in expectation — at the cost of
    re-evaluating amplitudes every replica."""
    n = grid.n_nodes
    k = grid.k
    u = np.empty((n, 1 + k))
    for c0 in range(0, n, grid.chunk_size):
        c1 = min(c0 + grid.chunk_size, n)
        rg = _chunk_rng(seed, replica, c0 // grid.chunk_size, 1)
        u[c0:c1] = rg.random((c1 - c0, 1 + k))
    tau = grid.tau + grid.tau_hw * (2.0 * u[:, 0] - 1.0)
    if k == 1:
        xhw = grid.w / (2.0 * grid.tau_hw) / 2.0
    else:
        xhw = np.sqrt(grid.w / (2.0 * grid.tau_hw)) / 2.0
    xi = grid.xi + xhw[:, None] * (2.0 * u[:, 1:] - 1.0)
    return tau, xi


def _validate_points(spec: SpectralKernelSpec, points) -> Tuple[Tuple[float, ...], ...]:
    pts = tuple(tuple(float(v) for v in p) for p in points)
    for p in pts:
        if len(p) != spec.params.k + 1:
            raise ValueError(f"point {p} has arity {len(p)}, expected {spec.params.k + 1}")
        if not (0.0 <= p[0] <= spec.params.horizon):
            raise ValueError(f"time {p[0]} outside [0, horizon={spec.params.horizon}]")
    return pts


def _validate_bands(grid: FrequencyGrid, bands: Sequence[BandSpec]):
    for b in bands:
        if math.isfinite(b.b) and b.b > grid.b_max * (1 + 1e-12):
            raise BandTruncationError(
                f"band [{b.a}, {b.b}) exceeds grid coverage b_max={grid.b_max}"
            )


class FieldEvaluator:
    """Amplitude matrix for a fixed (spec, grid, points, bands), reused
    across replicas.  sample(seed, replica, d) is the hot path."""

    def __init__(self, spec: SpectralKernelSpec, grid: FrequencyGrid,
                 points, bands: Sequence[BandSpec] = (FULL_BAND,),
                 jitter: bool = False):
        self.spec = spec
        self.grid = grid
        self.points = _validate_points(spec, points)
        self.bands = tuple(bands)
        self.jitter = jitter
        _validate_bands(grid, self.bands)
        if jitter:
            self.masks = None
            self._gr = self._gi = None
            return
        profile = spec.profile
        xi_norm = np.sqrt(np.sum(grid.xi * grid.xi, axis=1))
        self.masks = [
            np.asarray(band_mask(profile, b, grid.tau, xi_norm), dtype=float)
            for b in self.bands
        ]
        G = np.empty((len(self.points), grid.n_nodes), dtype=complex)
        fcache = {}
        for i, p in enumerate(self.points):
            G[i] = node_amplitudes(spec, grid, p, fcache)
        self._gr = np.ascontiguousarray(G.real)
        self._gi = np.ascontiguousarray(G.imag)

    def sample(self, seed: int, replica: int = 0, d: int = 1) -> np.ndarray:
        """(n_bands, n_points, d) real values, all bands from one draw."""
        noise = draw_noise(self.grid, d, seed, replica)
        if not self.jitter:
            return self.sample_from(noise)
        grid = self.grid
        tau, xi = jittered_nodes(grid, seed, replica)
        xi_norm = np.sqrt(np.sum(xi * xi, axis=1))
        profile = self.spec.profile
        out = np.empty((len(self.bands), len(self.points), d))
        for i, p in enumerate(self.points):
            t = float(p[0])
            x = np.asarray(p[1:], dtype=float)
            g = amplitude(self.spec, t, x, tau, xi)
            for b, band in enumerate(self.bands):
                m = band_mask(profile, band, tau, xi_norm)
                gr = np.where(m, g.real, 0.0)
                gi = np.where(m, g.imag, 0.0)
                out[b, i] = noise.re @ gr - noise.im @ gi
        return out

    def sample_from(self, noise: NoiseDraw) -> np.ndarray:
        if self.jitter:
            raise ValueError("jittered evaluation needs sample(seed, replica, d)")
        if noise.grid_hash != self.grid.content_hash():
            raise ValueError("noise draw belongs to a different grid")
        out = np.empty((len(self.bands), len(self.points), noise.d))
        for b, m in enumerate(self.masks):
            # Re(sum g W) = sum(Re g * Re W - Im g * Im W)
            out[b] = (self._gr * m) @ noise.re.T - (self._gi * m) @ noise.im.T
        return out

    def band_variances(self) -> np.ndarray:
        """Exact per-band grid variances sum w |g|^2, shape (n_bands,
        n_points): the discrete truth fixed-grid samples fluctuate around."""
        if self.jitter:
            raise ValueError("grid variances are only defined for the fixed grid")
        mod2 = self._gr ** 2 + self._gi ** 2
        return np.stack([(mod2 * m) @ self.grid.w for m in self.masks])


def ensemble_values(spec: SpectralKernelSpec, grid: FrequencyGrid, points,
                    bands: Sequence[BandSpec] = (FULL_BAND,), d: int = 1,
                    seed: int = 0, replicas: int = 1,
                    replica_offset: int = 0, point_block: int = 2048) -> np.ndarray:
    """(replicas, n_bands, n_points, d) values on the fixed grid, accumulated
    node-chunk by node-chunk so the amplitude matrix never has to persist for
    large point sets.  Matches sample_fields for the same replica index up
    to summation order (bit-identical when the grid fits one chunk).  Points
    are processed in blocks of point_block to bound the amplitude-matrix
    memory; the block split never changes values (noise is keyed by node
    chunk only)."""
    pts = _validate_points(spec, points)
    if len(pts) > point_block:
        out = np.empty((replicas, len(bands), len(pts), d))
        for b0 in range(0, len(pts), point_block):
            b1 = min(b0 + point_block, len(pts))
            out[:, :, b0:b1] = ensemble_values(
                spec, grid, pts[b0:b1], bands, d, seed, replicas,
                replica_offset, point_block)
        return out
    bands = tuple(bands)
    _validate_bands(grid, bands)
    profile = spec.profile
    out = np.zeros((replicas, len(bands), len(pts), d))
    n = grid.n_nodes
    for c0 in range(0, n, grid.chunk_size):
        c1 = min(c0 + grid.chunk_size, n)
        sub = FrequencyGrid(
            tau=grid.tau[c0:c1], xi=grid.xi[c0:c1], w=grid.w[c0:c1],
            tau_hw=grid.tau_hw[c0:c1], amp_scale=grid.amp_scale[c0:c1],
            b_max=grid.b_max, trunc_tau=grid.trunc_tau, trunc_xi=grid.trunc_xi,
            tail_bound=grid.tail_bound, nodes_per_octave=grid.nodes_per_octave,
            chunk_size=grid.chunk_size,
        )
        G = np.empty((len(pts), c1 - c0), dtype=complex)
        fcache = {}
        for i, p in enumerate(pts):
            G[i] = node_amplitudes(spec, sub, p, fcache)
        xi_norm = np.sqrt(np.sum(sub.xi * sub.xi, axis=1))
        s = np.sqrt(sub.w)
        chunk = c0 // grid.chunk_size
        mats = []
        for b in bands:
            m = np.asarray(band_mask(profile, b, sub.tau, xi_norm), dtype=float)
            mats.append((np.ascontiguousarray(G.real * m),
                         np.ascontiguousarray(G.imag * m)))
        for r in range(replicas):
            zr, zi = _chunk_noise(seed, replica_offset + r, chunk, c1 - c0, d)
            re = zr * s
            im = zi * s
            for b, (gr, gi) in enumerate(mats):
                out[r, b] += gr @ re.T - gi @ im.T
    return out


def sample_fields(spec: SpectralKernelSpec, grid: FrequencyGrid, points,
                  bands: Sequence[BandSpec] = (FULL_BAND,), d: int = 1,
                  seed: int = 0, replica: int = 0) -> Tuple[FieldSample, ...]:
    """One coupled draw, one FieldSample per requested band."""
    ev = FieldEvaluator(spec, grid, points, bands)
    vals = ev.sample(seed, replica, d)
    prov = Provenance(seed, replica, grid.content_hash(), spec.content_key())
    return tuple(
        FieldSample(ev.points, vals[i], band, prov)
        for i, band in enumerate(bands)
    )


def anchor_point(box: Box, profile: AnisotropyProfile,
                 rho: Optional[float] = None) -> Tuple[float, ...]:
    """t' = t - 2 (2 rho)^(1/alpha_1), x' = x, from the box center; rho
    defaults to 1/8 of the box's Delta-diameter."""
    if rho is None:
        rho = box.delta_diameter(profile) / 8.0
    c = box.center()
    t_prime = c[0] - 2.0 * (2.0 * rho) ** (1.0 / float(profile.alphas[0]))
    if t_prime <= 0:
        raise ValueError(
            f"anchor time {t_prime:.4g} <= 0: rho={rho:.4g} too large for this box"
        )
    return (t_prime,) + tuple(c[1:])


def covariance_oracle(spec: SpectralKernelSpec, band: BandSpec = FULL_BAND,
                      quad=None) -> Callable:
    """Per-component second-moment callable (p, q) -> E(v_j(p) v_j(q)),
    backed by the quadrature engine."""
    from anisofield import covariance as _cov

    q_spec = quad if quad is not None else _cov.QuadratureSpec()

    def oracle(p, qpt):
        return float(_cov.second_moment(spec, tuple(p), tuple(qpt), band, q_spec))

    return oracle


def project_decompose(sample: FieldSample, x_prime: Sequence[float],
                      cov: Callable, spec: SpectralKernelSpec,
                      grid: FrequencyGrid) -> ProjectionDecomposition:
    """Split a full-band sample as v = v1 + alpha(y) v(x'), where alpha(y) =
    E(v(y)v(x')) / E(v(x')^2) and the anchor value v(x') comes from the same
    noise draw as the sample."""
    prov = sample.provenance
    if prov.grid_hash != grid.content_hash() or prov.spec_hash != spec.content_key():
        raise ValueError("sample provenance does not match the supplied spec/grid")
    x_prime = tuple(float(v) for v in x_prime)
    var_anchor = float(cov(x_prime, x_prime))
    if var_anchor <= 0:
        raise ValueError(f"anchor variance {var_anchor:.4g} is not positive")

    def alpha_at(y) -> float:
        return float(cov(tuple(y), x_prime)) / var_anchor

    alpha = np.array([alpha_at(p) for p in sample.points])
    ev = FieldEvaluator(spec, grid, [x_prime], [sample.band])
    anchor_value = ev.sample(prov.seed, prov.replica, sample.values.shape[1])[0, 0]
    v2 = alpha[:, None] * anchor_value[None, :]
    v1 = sample.values - v2
    return ProjectionDecomposition(
        anchor=x_prime, anchor_value=anchor_value, alpha=alpha,
        v1=v1, v2=v2, sample=sample, alpha_at=alpha_at,
    )


def transform_v3(decomp: ProjectionDecomposition, z0,
                 alpha_floor: float = 1e-3) -> np.ndarray:
    """v3(y) = (z0 - v1(y)) / alpha(y); v(y) = z0 iff v3(y) = v(x')."""
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != decomp.anchor_value.shape:
        raise ValueError("z0 must be a d-vector matching the sample components")
    a_min = float(np.min(np.abs(decomp.alpha)))
    if a_min < alpha_floor:
        raise ValueError(f"alpha reaches {a_min:.4g}, below floor {alpha_floor}")
    return (z0[None, :] - decomp.v1) / decomp.alpha[:, None]
