import math

import numpy as np
import pytest
from scipy import integrate

from anisofield.covariance import (QuadResult, QuadratureSpec, _ct_tail,
                                   calibrate_kappa, calibrated_spec,
                                   canonical_metric, f1_low_band,
                                   f2_high_band, heat_time_correlator,
                                   second_moment, variance_scaling,
                                   wave_time_correlator)
from anisofield.model import Equation, ModelParams, delta_metric
from anisofield.spectral import FULL_BAND, BandSpec

HEAT11 = calibrated_spec(ModelParams(Equation.HEAT, k=1, beta=1))
WAVE11 = calibrated_spec(ModelParams(Equation.WAVE, k=1, beta=1))


def test_calibration_against_closed_forms():
    # int_0^1 (8 pi s)^(-1/2) ds = (2 pi)^(-1/2); wave: t^2/4 at t = 1
    heat = second_moment(HEAT11, (1, 0), (1, 0)).value
    wave = second_moment(WAVE11, (1, 0), (1, 0)).value
    assert heat == pytest.approx(0.3989422804014327, rel=1e-9)
    assert wave == pytest.approx(0.25, rel=1e-9)


def test_calibrate_kappa_deterministic_and_positive():
    k1 = calibrate_kappa(ModelParams(Equation.HEAT, k=1, beta=1))
    k2 = calibrate_kappa(ModelParams(Equation.HEAT, k=1, beta=1))
    assert k1 == k2 > 0


def test_heat_time_correlator_oracle():
    # r = 0: int_0^min(t,s) dw = min(t, s)
    assert float(heat_time_correlator(1.3, 0.7, 0.0)) == pytest.approx(0.7)
    t, s, r = 1.3, 0.7, 1.1

    def f(w):
        return math.exp(-(t - w) * r * r) * math.exp(-(s - w) * r * r)

    ref, _ = integrate.quad(f, 0.0, min(t, s))
    assert float(heat_time_correlator(t, s, r)) == pytest.approx(ref, rel=1e-9)


def test_wave_time_correlator_oracle():
    t, s, r = 1.3, 0.7, 1.1

    def f(w):
        return math.sin((t - w) * r) * math.sin((s - w) * r) / (r * r)

    ref, _ = integrate.quad(f, 0.0, min(t, s))
    assert float(wave_time_correlator(t, s, r)) == pytest.approx(ref, rel=1e-9)


def test_ct_tail_small_frequency_regression():
    # int_T^inf cos(omega tau)/(tau^2 + a^2) dtau in the regime
    # omega * a > omega * T, where a Taylor expansion in omega*a diverges
    def ref(omega, T, a):
        if omega == 0.0:
            return math.atan2(a, T) / a
        f = lambda tau: 1.0 / (tau * tau + a * a)
        v, _ = integrate.quad(f, T, np.inf, weight="cos", wvar=omega,
                              limit=4000)
        return v

    for omega, T, a in ((3e-4, 5.0625, 25.0), (1e-2, 2.0, 9.0),
                        (0.0, 3.0, 4.0)):
        assert _ct_tail(omega, T, a) == pytest.approx(ref(omega, T, a),
                                                      rel=1e-4)


def test_f1_nonnegative_for_small_time_lags():
    # regression: the band increment is a second moment and must be >= 0
    for a in (1.5, 2.0, 3.0, 4.0):
        v = f1_low_band(HEAT11, a, (1.0, 0.3), (1.0003, 0.3)).value
        assert v >= -1e-12


def test_f1_increasing_f2_decreasing_in_band_edge():
    p, q = (1.0, 0.3), (1.01, 0.33)
    f1s = [f1_low_band(HEAT11, a, p, q).value for a in (2.0, 4.0, 8.0)]
    assert f1s[0] <= f1s[1] <= f1s[2]
    f2s = [f2_high_band(HEAT11, b, p, q).value for b in (4.0, 16.0, 64.0)]
    assert f2s[0] >= f2s[1] >= f2s[2] >= 0


def test_band_split_is_consistent_with_full_increment():
    # f1[0, c) + f2[c, inf) = full increment second moment
    p, q = (1.0, 0.3), (1.02, 0.35)
    full = (second_moment(HEAT11, p, p).value
            + second_moment(HEAT11, q, q).value
            - 2 * second_moment(HEAT11, p, q).value)
    c = 8.0
    split = f1_low_band(HEAT11, c, p, q).value + f2_high_band(HEAT11, c, p, q).value
    assert split == pytest.approx(full, rel=1e-6)


def test_second_moment_symmetry_and_psd():
    pts = [(1.0, 0.0), (1.2, 0.4), (1.5, 0.9)]
    C = np.array([[second_moment(HEAT11, p, q).value for q in pts]
                  for p in pts])
    assert np.allclose(C, C.T, rtol=1e-9)
    assert np.linalg.eigvalsh(C).min() > -1e-12


def test_variance_scaling_exponent_heat():
    fit = variance_scaling(HEAT11, np.geomspace(0.3, 3.9, 6))
    assert fit.value == pytest.approx(0.5, abs=1e-4)


def test_variance_scaling_needs_a_decade():
    with pytest.raises(ValueError):
        variance_scaling(HEAT11, [1.0, 1.1, 1.2, 1.3, 1.4])


def test_canonical_metric_comparable_to_delta():
    profile = HEAT11.profile
    p, q = (1.3, 0.4), (1.31, 0.45)
    d = canonical_metric(HEAT11, p, q)
    dlt = delta_metric(profile, p, q)
    assert 0.1 * dlt <= d <= 4.0 * dlt


def test_quad_result_arithmetic():
    a = QuadResult(1.0, 0.1, True)
    b = QuadResult(2.0, 0.2, False)
    s = a + b
    assert s.value == 3.0 and s.error == pytest.approx(0.3) and not s.converged
    d = a - b
    assert d.value == -1.0 and d.error == pytest.approx(0.3)
    assert a.scaled(-2.0).value == -2.0 and a.scaled(-2.0).error == pytest.approx(0.2)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(tol=0.0)
    with pytest.raises(ValueError):
        QuadratureSpec(max_subdiv=3)


def test_band_limited_moment_below_full():
    p = (1.0, 0.2)
    full = second_moment(HEAT11, p, p, FULL_BAND).value
    band = second_moment(HEAT11, p, p, BandSpec(0.0, 8.0)).value
    assert 0 < band < full
