import math

import numpy as np
import pytest

from anisofield.model import Equation, ModelParams, profile_for
from anisofield.spectral import (FULL_BAND, BandSpec, SigmaSpec,
                                 SpectralKernelSpec, band_coordinate,
                                 band_mask, build_frequency_grid,
                                 heat_bracket, phi_t, wave_bracket)


def _heat_spec():
    return SpectralKernelSpec(params=ModelParams(Equation.HEAT, k=1, beta=1))


def test_phi_t_removable_singularity():
    u = np.array([0.0, 1e-12, 1.0])
    v = phi_t(2.0, u)
    # phi_t(t, 0) = -i t (limit of (1 - e^{itu})/u)
    assert v[0] == pytest.approx(-2j)
    assert abs(v[1] - v[0]) < 1e-6
    assert v[2] == pytest.approx((1 - np.exp(2j)) / 1.0)


def test_heat_bracket_matches_direct_integral():
    # B_t(tau, r) = int_0^t e^{-i tau s} e^{-(t-s) r^2} ds, by midpoint sum
    t, tau, r = 1.3, np.array([0.7]), np.array([1.1])
    got = heat_bracket(t, tau, r)[0]
    s = np.linspace(0, t, 200001)[:-1] + t / 200001 / 2
    ref = np.mean(np.exp(-1j * tau[0] * s) * np.exp(-(t - s) * r[0] ** 2)) * t
    assert got == pytest.approx(ref, rel=1e-6)


def test_wave_bracket_matches_direct_integral():
    # B_t(tau, r) = int_0^t e^{-i tau s} sin((t-s) r)/r ds
    t, tau, r = 1.3, np.array([0.7]), np.array([1.1])
    got = wave_bracket(t, tau, r)[0]
    s = np.linspace(0, t, 200001)[:-1] + t / 200001 / 2
    ref = np.mean(np.exp(-1j * tau[0] * s) * np.sin((t - s) * r[0]) / r[0]) * t
    assert got == pytest.approx(ref, rel=1e-6)


def test_band_spec_validation():
    with pytest.raises(ValueError):
        BandSpec(2.0, 1.0)
    with pytest.raises(ValueError):
        BandSpec(-1.0, 2.0)
    assert FULL_BAND.full
    assert BandSpec(3.0, 3.0).empty


def test_band_coordinate_and_mask():
    profile = profile_for(ModelParams(Equation.HEAT, k=1, beta=1))
    tau = np.array([0.0, 16.0, 0.0])
    xi = np.array([[1.0], [0.0], [4.0]])
    # coordinate = max(|tau|^alpha1, |xi|^alpha2), alphas (1/4, 1/2)
    c = band_coordinate(profile, tau, np.abs(xi[:, 0]))
    assert c == pytest.approx([1.0, 2.0, 2.0])
    m = band_mask(profile, BandSpec(0.0, 2.0), tau, xi)
    assert list(m) == [True, False, False]
    assert band_mask(profile, FULL_BAND, tau, xi).all()


def test_sigma_spec_requires_conjugate_pairs():
    with pytest.raises(ValueError):
        SigmaSpec(atoms=((1.0 + 0.5j, 1.0, (2.0,)),))   # no conjugate partner


def test_sigma_spec_rejects_nonpositive():
    # 0.2 + cos(t + 2x) dips below zero
    with pytest.raises(ValueError):
        SigmaSpec(atoms=((0.2 + 0j, 0.0, (0.0,)),
                         (0.5 + 0j, 1.0, (2.0,)),
                         (0.5 + 0j, -1.0, (-2.0,))))


def test_sigma_spec_range():
    sig = SigmaSpec(atoms=((1.5 + 0j, 0.0, (0.0,)),
                           (0.5 + 0j, 1.0, (2.0,)),
                           (0.5 + 0j, -1.0, (-2.0,))))
    assert 0.4 <= sig.c_T <= 1.1
    assert 1.9 <= sig.C_T <= 2.6
    vals = sig.evaluate(0.3, [[0.1], [0.7]])
    assert np.all(vals >= sig.c_T - 1e-9)


def test_kernel_spec_sigma_consistency():
    sig = SigmaSpec(atoms=((1.5 + 0j, 0.0, (0.0,)),
                           (0.5 + 0j, 1.0, (2.0,)),
                           (0.5 + 0j, -1.0, (-2.0,))))
    with pytest.raises(ValueError):
        SpectralKernelSpec(params=ModelParams(Equation.HEAT, k=1, beta=1),
                           sigma=sig)
    with pytest.raises(ValueError):
        SpectralKernelSpec(params=ModelParams(Equation.HEAT_SIGMA, k=1,
                                              beta=1))
    with pytest.raises(ValueError):
        SpectralKernelSpec(params=ModelParams(Equation.HEAT, k=1, beta=1),
                           kappa=0.0)


def test_grid_nodes_cover_band_and_weights_positive():
    spec = _heat_spec()
    grid = build_frequency_grid(spec, spec.profile, 64, 8.0)
    assert grid.n_nodes > 0
    assert np.all(grid.w > 0)
    c = band_coordinate(spec.profile, grid.tau,
                        np.abs(grid.xi[:, 0]))
    assert np.all(c <= 8.0 + 1e-9)


def test_grid_content_hash_sensitivity():
    spec = _heat_spec()
    g1 = build_frequency_grid(spec, spec.profile, 64, 8.0)
    g2 = build_frequency_grid(spec, spec.profile, 64, 8.0)
    g3 = build_frequency_grid(spec, spec.profile, 128, 8.0)
    assert g1.content_hash() == g2.content_hash()
    assert g1.content_hash() != g3.content_hash()


def test_grid_rejects_too_low_resolution():
    spec = _heat_spec()
    with pytest.raises(ValueError):
        build_frequency_grid(spec, spec.profile, 8, 8.0)
