"""Anisotropic dyadic covers of a small ball around a fixed center:
good-cube classification of the projected field, greedy two-family cover
construction, covering sums, and the related event frequencies.

Geometry
--------
A cube of order l has per-coordinate side 2^(-l q_j) with q_j = 1/alpha_j
(required integer here, so cubes of consecutive orders nest exactly).  The
covered region is the order-2p hull of the Delta-ball of radius rho around
a center sitting on the order-2p lattice: the union of order-2p cells that
meet the ball.  A union of dyadic cubes can tile that hull exactly — it
cannot tile the curved ball — so exhaustiveness and non-overlap are audited
in exact integer units of order-2p cells, never floating point.

At desk scale the ball radius shrinks with p (rho = 2^(-p-3) by default) so
the hull stays enumerable; covering sums are normalized by the continuum
ball volume as the bounds demand, which keeps the across-p comparison
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from anisofield.model import AnisotropyProfile, delta_metric
from anisofield.spectral import FULL_BAND, FrequencyGrid, SpectralKernelSpec
from anisofield.synth import anchor_point, covariance_oracle, ensemble_values


def integer_inverse_alphas(profile: AnisotropyProfile) -> Tuple[int, ...]:
    qs = []
    for a in profile.alphas:
        q = 1 / a
        if q.denominator != 1:
            raise ValueError(
                f"dyadic cubes need integer 1/alpha_j; got 1/{a} = {q}"
            )
        qs.append(int(q))
    return tuple(qs)


@dataclass(frozen=True)
class DyadicCube:
    """Order-l cube prod_j [m_j 2^(-l q_j), (m_j+1) 2^(-l q_j))."""

    order: int
    indices: Tuple[int, ...]
    inv_alphas: Tuple[int, ...]

    def extent(self) -> Tuple[Tuple[Fraction, Fraction], ...]:
        out = []
        for m, q in zip(self.indices, self.inv_alphas):
            side = Fraction(1, 2 ** (self.order * q))
            out.append((m * side, (m + 1) * side))
        return tuple(out)

    def contains(self, y: Sequence[float]) -> bool:
        return all(
            lo <= Fraction(float(v)).limit_denominator(2 ** 60) < hi
            for (lo, hi), v in zip(self.extent(), y)
        )

    def corner(self) -> Tuple[float, ...]:
        """The distinguished point p_A: the lower-left corner."""
        return tuple(float(lo) for lo, _ in self.extent())


def dyadic_locate(profile: AnisotropyProfile, order: int,
                  y: Sequence[float]) -> DyadicCube:
    if order < 0:
        raise ValueError("cube order must be nonnegative")
    qs = integer_inverse_alphas(profile)
    idx = tuple(
        int(math.floor(float(v) * 2 ** (order * q))) for v, q in zip(y, qs)
    )
    return DyadicCube(order, idx, qs)


def good_cube_threshold(ell: int, k3_tilde: float, Q: float) -> float:
    """d_l = K3~ 2^(-l) (log log 2^l)^(-1/Q); needs l log 2 > 1 (l >= 2)."""
    inner = ell * math.log(2.0)
    if inner <= 1.0:
        raise ValueError(f"threshold undefined at order {ell}: log log 2^l <= 0")
    return k3_tilde * 2.0 ** (-ell) * math.log(inner) ** (-1.0 / Q)


def ball_volume(profile: AnisotropyProfile, rho: float) -> float:
    """Lebesgue measure of {sum_j |u_j|^alpha_j <= rho}: the Dirichlet
    formula 2^n rho^Q prod Gamma(1 + q_j) / Gamma(1 + Q)."""
    qs = [float(1 / a) for a in profile.alphas]
    Q = sum(qs)
    num = 1.0
    for q in qs:
        num *= math.gamma(1.0 + q)
    return 2.0 ** profile.arity * rho ** Q * num / math.gamma(1.0 + Q)


@dataclass(frozen=True)
class CoverMember:
    cube: DyadicCube
    family: str            # "H1" | "H2"
    order: int
    p_A: Tuple[float, ...]
    r_A: float
    n_cells: int           # order-2p hull cells owned by this member


@dataclass(frozen=True)
class CoveringFamily:
    p: int
    members: Tuple[CoverMember, ...]
    thresholds: Dict[int, float]
    hull_cells: int
    rho: float
    center: Tuple[float, ...]

    def audit(self) -> Dict[str, bool]:
        """Exact integer bookkeeping: member cell counts partition the hull."""
        owned = sum(m.n_cells for m in self.members)
        orders_ok = all(
            (self.p <= m.order <= 2 * self.p) if m.family == "H1"
            else m.order == 2 * self.p
            for m in self.members
        )
        return {
            "cells_partitioned": owned == self.hull_cells,
            "orders_valid": orders_ok,
            "passed": owned == self.hull_cells and orders_ok,
        }

    def n_h2(self) -> int:
        return sum(1 for m in self.members if m.family == "H2")


def covering_sums(family: CoveringFamily, d: int) -> Dict[str, float]:
    """Sum of f(r_A) = r_A^d log log(1/r_A) and of r_A^d, with the H1/H2
    split."""
    out = {"f_sum": 0.0, "rd_sum": 0.0, "f_sum_h1": 0.0, "f_sum_h2": 0.0,
           "rd_sum_h1": 0.0, "rd_sum_h2": 0.0}
    for m in family.members:
        r = m.r_A
        if r >= 1.0:
            raise ValueError(f"member radius {r} >= 1: f(r) undefined")
        f = r ** d * math.log(math.log(1.0 / r))
        out["f_sum"] += f
        out["rd_sum"] += r ** d
        tag = m.family.lower()
        out[f"f_sum_{tag}"] += f
        out[f"rd_sum_{tag}"] += r ** d
    return out


class CoveringStudy:
    """Per-p machinery: hull enumeration, the sampling grid, the projected
    field over replicas, classification and cover construction."""

    def __init__(self, spec: SpectralKernelSpec, grid: FrequencyGrid, p: int,
                 center: Sequence[float], replicas: int = 50, seed: int = 0,
                 d: int = 6, rho: Optional[float] = None,
                 quad=None, verbose: bool = False):
        if p < 2:
            raise ValueError("need p >= 2 so the threshold table is defined")
        profile = spec.profile
        qs = integer_inverse_alphas(profile)
        self.spec = spec
        self.p = p
        self.qs = qs
        self.Q = float(profile.Q)
        self.rho = 2.0 ** (-(p + 6)) if rho is None else float(rho)
        self.replicas = replicas
        self.seed = seed
        self.d = d
        # snap the center onto the order-2p lattice
        self.center = tuple(
            round(float(c) * 2 ** (2 * p * q)) / 2 ** (2 * p * q)
            for c, q in zip(center, qs)
        )
        self._enumerate_hull()
        self._build_grid_points()
        # anchored projection: alpha(y) from quadrature, v(x') from the draw
        self.anchor = anchor_point_for(self.center, profile, self.rho)
        cov = covariance_oracle(spec, quad=quad)
        var_anchor = cov(self.anchor, self.anchor)
        self.alpha = np.array(
            [cov(tuple(pt), self.anchor) / var_anchor for pt in self.points]
        )
        pts = [self.anchor] + [tuple(pt) for pt in self.points]
        vals = ensemble_values(spec, grid, pts, [FULL_BAND], d=d,
                               seed=seed, replicas=replicas)[:, 0]
        self.anchor_values = vals[:, 0]              # (rep, d)
        self.values = vals[:, 1:]                    # (rep, P, d)
        self.v1 = self.values - self.alpha[None, :, None] * vals[:, :1]
        self._index_orders()

    # -- geometry ---------------------------------------------------------

    def _enumerate_hull(self):
        p, qs, rho = self.p, self.qs, self.rho
        profile = self.spec.profile
        scales = [2 ** (2 * p * q) for q in qs]
        los, his = [], []
        for c, q, s in zip(self.center, qs, scales):
            h = rho ** q
            los.append(int(math.floor((c - h) * s)) - 1)
            his.append(int(math.floor((c + h) * s)) + 1)
        axes = [np.arange(lo, hi + 1) for lo, hi in zip(los, his)]
        mesh = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=1)
        # closest-point Delta distance from the cell to the center
        dist = np.zeros(idx.shape[0])
        for j, (q, s, a) in enumerate(zip(qs, scales, profile.alphas)):
            lo = idx[:, j] / s
            hi = (idx[:, j] + 1) / s
            gap = np.maximum(0.0, np.maximum(lo - self.center[j],
                                             self.center[j] - hi))
            dist += gap ** float(a)
        self.cells = idx[dist <= rho]
        if self.cells.shape[0] == 0:
            raise ValueError("empty hull: rho too small for this order")

    def _build_grid_points(self):
        """Two sample points per coordinate per order-2p cell, plus a ball
        grid dense enough that the good-cube suprema see the ball interior
        even when the ball is smaller than a single cell."""
        from anisofield.oscillation import ball_grid

        p, qs = self.p, self.qs
        cell_set = {tuple(row) for row in self.cells}
        pts = []
        pt_cell = []
        offsets = np.array([0.25, 0.75])
        for row in self.cells:
            axes = [
                (row[j] + offsets) / 2 ** (2 * p * qs[j])
                for j in range(len(qs))
            ]
            mesh = np.meshgrid(*axes, indexing="ij")
            block = np.stack([m.ravel() for m in mesh], axis=1)
            pts.append(block)
            pt_cell.extend([tuple(row)] * block.shape[0])
        extra = ball_grid(self.spec.profile, self.center, self.rho,
                          points_per_side=12, min_points=128)
        keep = []
        for y in extra:
            cell = tuple(
                int(math.floor(float(v) * 2 ** (2 * p * q)))
                for v, q in zip(y, qs)
            )
            if cell in cell_set:
                keep.append((y, cell))
        if keep:
            pts.append(np.array([y for y, _ in keep]))
            pt_cell.extend(c for _, c in keep)
        self.points = np.concatenate(pts, axis=0)
        self.point_cell = pt_cell
        profile = self.spec.profile
        self.in_ball = np.array([
            delta_metric(profile, pt, self.center) <= self.rho
            for pt in self.points
        ])
        self.cell_set = cell_set

    def _index_orders(self):
        """Group points and hull cells by ancestor cube at each order."""
        p, qs = self.p, self.qs
        self.point_groups = {}
        self.cell_groups = {}
        for ell in range(p, 2 * p + 1):
            shift = [(2 * p - ell) * q for q in qs]
            pk = [
                tuple(int(c) >> s for c, s in zip(cell, shift))
                for cell in self.point_cell
            ]
            keys, inverse = np.unique(
                np.array(pk, dtype=np.int64), axis=0, return_inverse=True)
            self.point_groups[ell] = ([tuple(k) for k in keys], inverse)
            ck = np.stack(
                [self.cells[:, j] >> shift[j] for j in range(len(qs))], axis=1)
            self.cell_groups[ell] = ck

    # -- per-replica work -------------------------------------------------

    def oscillations(self, rep: int, ell: int, use_v1: bool = True) -> Dict:
        """Euclidean-norm oscillation of the (projected) field over each
        order-ell cube's in-ball points; cubes with < 2 in-ball points get 0."""
        keys, inverse = self.point_groups[ell]
        vals = (self.v1 if use_v1 else self.values)[rep]
        n_g = len(keys)
        hi = np.full((n_g, self.d), -np.inf)
        lo = np.full((n_g, self.d), np.inf)
        mask = self.in_ball
        np.maximum.at(hi, inverse[mask], vals[mask])
        np.minimum.at(lo, inverse[mask], vals[mask])
        rng = hi - lo
        rng[~np.isfinite(rng)] = 0.0
        osc = np.sqrt(np.sum(rng * rng, axis=1))
        return {k: float(o) for k, o in zip(keys, osc)}

    def classify_good(self, rep: int, k3_tilde: float) -> Dict[int, Dict]:
        """good/bad flag per cube per order in [p, 2p]; cubes without
        constraining points are vacuously good."""
        out = {}
        for ell in range(self.p, 2 * self.p + 1):
            d_ell = good_cube_threshold(ell, k3_tilde, self.Q)
            osc = self.oscillations(rep, ell)
            out[ell] = {k: (o <= d_ell) for k, o in osc.items()}
        return out

    def build_cover(self, rep: int, k3_tilde: float,
                    k4: float) -> CoveringFamily:
        """Greedy coarse-to-fine: select maximal good cubes order by order;
        leftover order-2p cells that are not good become H2."""
        p = self.p
        flags = self.classify_good(rep, k3_tilde)
        n_cells = self.cells.shape[0]
        covered = np.zeros(n_cells, dtype=bool)
        members: List[CoverMember] = []
        thresholds = {
            ell: good_cube_threshold(ell, k3_tilde, self.Q)
            for ell in range(p, 2 * p + 1)
        }
        for ell in range(p, 2 * p + 1):
            anc = self.cell_groups[ell]
            good = flags[ell]
            chosen: Dict[Tuple[int, ...], List[int]] = {}
            for ci in np.flatnonzero(~covered):
                key = tuple(int(v) for v in anc[ci])
                # cubes with no sampled points never fail the condition
                if good.get(key, True):
                    chosen.setdefault(key, []).append(ci)
            for key, cell_ids in chosen.items():
                cube = DyadicCube(ell, key, self.qs)
                members.append(CoverMember(
                    cube, "H1", ell, cube.corner(),
                    4.0 * thresholds[ell], len(cell_ids)))
                covered[cell_ids] = True
        r_h2 = k4 * 2.0 ** (-2 * p) * math.sqrt(p)
        for ci in np.flatnonzero(~covered):
            cube = DyadicCube(2 * p, tuple(int(v) for v in self.cells[ci]),
                              self.qs)
            members.append(CoverMember(cube, "H2", 2 * p, cube.corner(),
                                       r_h2, 1))
            covered[ci] = True
        fam = CoveringFamily(p, tuple(members), thresholds, n_cells,
                             self.rho, self.center)
        if not fam.audit()["passed"]:
            raise AssertionError("cover construction broke the cell partition")
        return fam

    def good_point_fraction(self, rep: int, k3_tilde: float) -> float:
        """Fraction of in-ball grid points lying in some good cube of order
        in [p, 2p] (the volume-fraction statistic behind the first event)."""
        flags = self.classify_good(rep, k3_tilde)
        mask = self.in_ball
        in_good = np.zeros(int(mask.sum()), dtype=bool)
        for ell in range(self.p, 2 * self.p + 1):
            keys, inverse = self.point_groups[ell]
            goodvec = np.array([flags[ell].get(k, True) for k in keys])
            in_good |= goodvec[inverse[mask]]
        return float(in_good.mean())

    def omega_rates(self, k3_tilde: float, k4: float, beta_exp: float,
                    delta_exponents: Optional[Sequence[float]] = None) -> Dict:
        """Empirical frequencies of the three per-replica events and the H2
        cardinalities.  beta_exp must respect the window (0,
        min_j(delta_j/alpha_j - 1) ^ 1) built from the fitted smoothness
        exponents."""
        profile = self.spec.profile
        if delta_exponents is not None:
            cap = min(
                min(dj / float(aj) - 1.0
                    for dj, aj in zip(delta_exponents, profile.alphas)),
                1.0,
            )
            if not (0.0 < beta_exp < cap):
                raise ValueError(
                    f"beta_exp={beta_exp} outside (0, {cap:.4g})"
                )
        p = self.p
        vol_target = 1.0 - math.exp(-math.sqrt(p) / 4.0)
        mod_bound = k4 * 2.0 ** (-2 * p) * math.sqrt(p)
        hits1 = hits2 = hits4 = 0
        n_h2 = []
        fractions = []
        for rep in range(self.replicas):
            frac = self.good_point_fraction(rep, k3_tilde)
            fractions.append(frac)
            if frac >= vol_target:
                hits1 += 1
            if float(np.linalg.norm(self.anchor_values[rep])) <= 2.0 ** (beta_exp * p):
                hits2 += 1
            osc2p = self.oscillations(rep, 2 * p, use_v1=False)
            if max(osc2p.values()) <= mod_bound:
                hits4 += 1
            n_h2.append(self.build_cover(rep, k3_tilde, k4).n_h2())
        R = self.replicas
        return {
            "omega_1": hits1 / R,
            "omega_2": hits2 / R,
            "omega_4": hits4 / R,
            "n_h2": n_h2,
            "volume_fractions": fractions,
            "volume_target": vol_target,
        }


def anchor_point_for(center: Sequence[float], profile: AnisotropyProfile,
                     rho: float) -> Tuple[float, ...]:
    """Anchor below the center by twice the (2 rho)-scale in time."""
    t_prime = center[0] - 2.0 * (2.0 * rho) ** (1.0 / float(profile.alphas[0]))
    if t_prime <= 0:
        raise ValueError("anchor time would be nonpositive")
    return (t_prime,) + tuple(center[1:])


def covering_report(spec: SpectralKernelSpec, grid: FrequencyGrid,
                    p_values: Sequence[int], center: Sequence[float],
                    k3_tilde: float, k4: float, d: int = 6,
                    replicas: int = 50, seed: int = 0,
                    quad=None) -> Dict:
    """Cross-p summary used by the acceptance experiment: per (p, replica)
    the audit flag and both covering sums, normalized by the continuum ball
    volume."""
    profile = spec.profile
    rows = []
    for p in p_values:
        study = CoveringStudy(spec, grid, p, center, replicas=replicas,
                              seed=seed, d=d, quad=quad)
        lam = ball_volume(profile, study.rho)
        for rep in range(replicas):
            fam = study.build_cover(rep, k3_tilde, k4)
            sums = covering_sums(fam, d)
            rows.append({
                "p": p, "replica": rep,
                "audit_passed": fam.audit()["passed"],
                "f_over_lambda": sums["f_sum"] / lam,
                "rd_sum": sums["rd_sum"],
                "n_members": len(fam.members),
                "n_h2": fam.n_h2(),
                "hull_cells": study.hull_cells if hasattr(study, "hull_cells")
                              else study.cells.shape[0],
            })
    return {"rows": rows}
