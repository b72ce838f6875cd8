import numpy as np
import pytest

from anisofield.covariance import calibrated_spec, second_moment
from anisofield.model import Equation, ModelParams, space_time_box
from anisofield.spectral import BandSpec, build_frequency_grid
from anisofield.synth import (BandTruncationError, FieldEvaluator,
                              anchor_point, covariance_oracle, draw_noise,
                              ensemble_values, jittered_nodes,
                              project_decompose, sample_fields, transform_v3)

SPEC = calibrated_spec(ModelParams(Equation.HEAT, k=1, beta=1))
GRID = build_frequency_grid(SPEC, SPEC.profile, 64, 16.0)
POINTS = [(1.0, 0.0), (1.0, 0.5), (1.5, 0.25)]


def test_draw_noise_deterministic_and_replica_distinct():
    n1 = draw_noise(GRID, d=2, seed=3, replica=5)
    n2 = draw_noise(GRID, d=2, seed=3, replica=5)
    n3 = draw_noise(GRID, d=2, seed=3, replica=6)
    assert np.array_equal(n1.re, n2.re) and np.array_equal(n1.im, n2.im)
    assert not np.array_equal(n1.re, n3.re)


def test_noise_second_moment_matches_weights():
    # re and im each carry variance w per node; aggregate statistic = 2 w
    total = np.zeros(GRID.n_nodes)
    reps = 400
    for r in range(reps):
        n = draw_noise(GRID, d=1, seed=0, replica=r)
        total += n.re[0] ** 2 + n.im[0] ** 2
    ratio = total.sum() / (reps * GRID.w.sum())
    assert ratio == pytest.approx(2.0, abs=0.1)


def test_ensemble_values_replica_offset_slices():
    a = ensemble_values(SPEC, GRID, POINTS, d=2, seed=1, replicas=4)
    b = ensemble_values(SPEC, GRID, POINTS, d=2, seed=1, replicas=1,
                        replica_offset=2)
    assert np.array_equal(a[2], b[0])


def test_ensemble_values_point_block_invariance():
    a = ensemble_values(SPEC, GRID, POINTS, seed=1, replicas=2)
    b = ensemble_values(SPEC, GRID, POINTS, seed=1, replicas=2, point_block=1)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_evaluator_matches_ensemble_values():
    ev = FieldEvaluator(SPEC, GRID, POINTS)
    v = ev.sample(seed=1, replica=3, d=2)
    w = ensemble_values(SPEC, GRID, POINTS, d=2, seed=1, replicas=1,
                        replica_offset=3)[0]
    assert np.allclose(v, w, rtol=1e-12, atol=1e-12)


def test_grid_variance_matches_band_quadrature():
    grid = build_frequency_grid(SPEC, SPEC.profile, 256, 64.0)
    ev = FieldEvaluator(SPEC, grid, POINTS)
    grid_var = ev.band_variances()[0]
    band = BandSpec(0.0, grid.b_max)
    for i, p in enumerate(POINTS):
        ref = second_moment(SPEC, p, p, band).value
        assert grid_var[i] == pytest.approx(ref, rel=2e-3)


def test_jittered_nodes_stay_in_cells_on_average():
    tau, xi = jittered_nodes(GRID, seed=0, replica=0)
    assert np.all(np.abs(tau - GRID.tau) <= GRID.tau_hw + 1e-12)
    tau2, _ = jittered_nodes(GRID, seed=0, replica=1)
    assert not np.array_equal(tau, tau2)


def test_jitter_ensemble_unbiased_at_time_lagged_pair():
    grid = build_frequency_grid(SPEC, SPEC.profile, 128, 32.0)
    pts = [(1.0, 0.2), (1.5, 0.2)]
    ev = FieldEvaluator(SPEC, grid, pts, jitter=True)
    n = 600
    prods = np.empty(n)
    for r in range(n):
        v = ev.sample(0, r, 1)[0][:, 0]
        prods[r] = v[0] * v[1]
    ref = second_moment(SPEC, pts[0], pts[1], BandSpec(0.0, grid.b_max)).value
    z = (prods.mean() - ref) / (prods.std(ddof=1) / np.sqrt(n))
    assert abs(z) < 4.0


def test_band_beyond_grid_raises():
    with pytest.raises(BandTruncationError):
        ensemble_values(SPEC, GRID, POINTS, bands=[BandSpec(0.0, 64.0)])


def test_point_arity_validated():
    with pytest.raises(ValueError):
        ensemble_values(SPEC, GRID, [(1.0, 0.0, 0.0)])


def test_sample_provenance_guard():
    samples = sample_fields(SPEC, GRID, POINTS, d=2, seed=0, replica=0)
    other = build_frequency_grid(SPEC, SPEC.profile, 64, 8.0)
    cov = covariance_oracle(SPEC)
    with pytest.raises(ValueError):
        project_decompose(samples[0], (0.9, 0.0), cov, SPEC, other)


def test_projection_decomposition_identity_and_v3():
    sample = sample_fields(SPEC, GRID, POINTS, d=2, seed=0, replica=1)[0]
    cov = covariance_oracle(SPEC)
    dec = project_decompose(sample, (0.9, 0.25), cov, SPEC, GRID)
    assert np.allclose(dec.v1 + dec.v2, sample.values, atol=1e-12)
    z0 = np.array([0.3, -0.1])
    v3 = transform_v3(dec, z0)
    # v(y) = z0 iff v3(y) = v(x'): check the algebraic identity
    recon = dec.v1 + dec.alpha[:, None] * v3
    assert np.allclose(recon, np.broadcast_to(z0, recon.shape), atol=1e-12)


def test_anchor_point_positive_time_required():
    box = space_time_box(0.05, 0.1, [(0.0, 1.0)])
    with pytest.raises(ValueError):
        anchor_point(box, SPEC.profile, rho=0.5)
