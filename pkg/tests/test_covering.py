import math
from fractions import Fraction

import numpy as np
import pytest

from anisofield.covariance import calibrated_spec
from anisofield.covering import (CoveringStudy, DyadicCube, ball_volume,
                                 covering_report, covering_sums,
                                 dyadic_locate, good_cube_threshold,
                                 integer_inverse_alphas)
from anisofield.model import Equation, ModelParams, profile_for
from anisofield.spectral import build_frequency_grid

SPEC = calibrated_spec(ModelParams(Equation.HEAT, k=1, beta=1))
PROFILE = SPEC.profile


def test_integer_inverse_alphas():
    assert integer_inverse_alphas(PROFILE) == (4, 2)
    wave = profile_for(ModelParams(Equation.WAVE, k=1, beta=1))
    assert integer_inverse_alphas(wave) == (2, 2)


def test_good_cube_threshold_formula():
    k3, Q = 0.07, 6.0
    ell = 5
    expected = k3 * 2.0 ** -5 * math.log(5 * math.log(2.0)) ** (-1.0 / Q)
    assert good_cube_threshold(ell, k3, Q) == pytest.approx(expected)
    with pytest.raises(ValueError):
        good_cube_threshold(1, k3, Q)


def test_ball_volume_against_monte_carlo():
    rho = 0.5
    vol = ball_volume(PROFILE, rho)
    rng = np.random.default_rng(0)
    # ball fits in the box prod_j [-rho^(1/alpha_j), rho^(1/alpha_j)]
    half = [rho ** (1.0 / float(a)) for a in PROFILE.alphas]
    n = 400_000
    u = rng.uniform(-1, 1, size=(n, 2)) * half
    inside = (np.abs(u[:, 0]) ** 0.25 + np.abs(u[:, 1]) ** 0.5) <= rho
    mc = inside.mean() * 4 * half[0] * half[1]
    assert vol == pytest.approx(mc, rel=0.02)


def test_dyadic_cube_geometry():
    cube = dyadic_locate(PROFILE, 2, (0.3, 0.7))
    assert cube.contains((0.3, 0.7))
    ext = cube.extent()
    # order-2 sides: 2^(-2*4) in time, 2^(-2*2) in space
    assert ext[0][1] - ext[0][0] == Fraction(1, 2 ** 8)
    assert ext[1][1] - ext[1][0] == Fraction(1, 2 ** 4)
    corner = cube.corner()
    assert all(lo <= c for (lo, _), c in zip(ext, corner))


def test_dyadic_locate_rejects_negative_order():
    with pytest.raises(ValueError):
        dyadic_locate(PROFILE, -1, (0.5, 0.5))


def _study(p=2, replicas=3):
    grid = build_frequency_grid(SPEC, SPEC.profile, 128, 256.0)
    return CoveringStudy(SPEC, grid, p, (1.0, 0.0), replicas=replicas,
                         seed=0, d=4)


def test_cover_audit_and_sums():
    study = _study()
    fam = study.build_cover(0, k3_tilde=0.07, k4=1.0)
    audit = fam.audit()
    assert audit["passed"], audit
    sums = covering_sums(fam, d=4)
    assert sums["f_sum"] > 0 and sums["rd_sum"] > 0
    assert sums["f_sum"] == pytest.approx(sums["f_sum_h1"] + sums["f_sum_h2"])
    # every member radius is a positive sub-unit scale
    assert all(0 < m.r_A < 1 for m in fam.members)


def test_cover_h2_members_have_fine_order():
    study = _study()
    fam = study.build_cover(1, k3_tilde=0.07, k4=1.0)
    for m in fam.members:
        if m.family == "H2":
            assert m.order == 2 * fam.p
        else:
            assert fam.p <= m.order <= 2 * fam.p


def test_permissive_threshold_gives_coarse_cover():
    study = _study()
    loose = study.build_cover(0, k3_tilde=0.5, k4=1.0)
    tight = study.build_cover(0, k3_tilde=1e-9, k4=1.0)
    # a permissive threshold accepts coarse cubes; a tiny one pushes
    # everything to order-2p refinement
    assert min(m.order for m in loose.members) <= min(
        m.order for m in tight.members)
    assert min(m.order for m in tight.members) == 2 * tight.p


def test_covering_study_rejects_tiny_order():
    grid = build_frequency_grid(SPEC, SPEC.profile, 128, 256.0)
    with pytest.raises(ValueError):
        CoveringStudy(SPEC, grid, 1, (1.0, 0.0), replicas=1, seed=0, d=2)


def test_covering_report_rows_shape():
    grid = build_frequency_grid(SPEC, SPEC.profile, 128, 256.0)
    report = covering_report(SPEC, grid, (2, 3), (1.0, 0.0), k3_tilde=0.07,
                             k4=1.0, d=4, replicas=2, seed=0)
    rows = report["rows"]
    assert len(rows) == 4
    assert {r["p"] for r in rows} == {2, 3}
    for r in rows:
        assert r["audit_passed"]
        assert r["f_over_lambda"] > 0
