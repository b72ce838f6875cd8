import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisofield.model import (AnisotropyProfile, Box, Equation, ModelParams,
                              anisotropy_profile, critical_dimension,
                              delta_metric, loglog, profile_for,
                              quasi_triangle_slack, space_time_box)


def test_heat_profile_k1_beta1():
    p = profile_for(ModelParams(Equation.HEAT, k=1, beta=1))
    assert p.alphas == (Fraction(1, 4), Fraction(1, 2))
    assert p.gammas == (Fraction(3), Fraction(1))
    assert p.Q == 6


def test_heat_profile_k2_beta15():
    p = profile_for(ModelParams(Equation.HEAT, k=2, beta=1.5))
    assert p.alphas == (Fraction(1, 8), Fraction(1, 4), Fraction(1, 4))
    assert p.Q == 16


def test_wave_profile_k1_beta1():
    p = profile_for(ModelParams(Equation.WAVE, k=1, beta=1))
    assert p.alphas == (Fraction(1, 2), Fraction(1, 2))
    assert p.Q == 4


def test_wave_profile_k2_beta15():
    p = profile_for(ModelParams(Equation.WAVE, k=2, beta=1.5))
    assert p.alphas == (Fraction(1, 4), Fraction(1, 4), Fraction(1, 4))
    assert p.Q == 12


def test_critical_dimension_equals_q():
    for eq, k, beta in ((Equation.HEAT, 1, 1), (Equation.WAVE, 1, 1),
                        (Equation.HEAT, 2, 1.5), (Equation.WAVE, 2, 1.5)):
        params = ModelParams(eq, k=k, beta=beta)
        assert critical_dimension(params) == profile_for(params).Q


def test_profile_rejects_alpha_outside_unit_interval():
    with pytest.raises(ValueError):
        AnisotropyProfile((Fraction(1),))
    with pytest.raises(ValueError):
        anisotropy_profile([0])


def test_model_params_validation():
    with pytest.raises(ValueError, match="beta >= 1"):
        ModelParams(Equation.WAVE, k=1, beta=0.5)
    with pytest.raises(ValueError):
        ModelParams(Equation.HEAT, k=1, beta=1.7)   # beta > min(k, 2)
    with pytest.raises(ValueError):
        ModelParams(Equation.HEAT, k=0)
    with pytest.raises(ValueError):
        ModelParams(Equation.HEAT, d=0)
    # white-noise corner case is allowed
    ModelParams(Equation.HEAT, k=1, beta=1)


coords = st.floats(min_value=-5, max_value=5, allow_nan=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.tuples(coords, coords), st.tuples(coords, coords))
def test_delta_metric_symmetry_and_identity(x, y):
    profile = profile_for(ModelParams(Equation.HEAT, k=1, beta=1))
    d = delta_metric(profile, x, y)
    assert d >= 0
    assert d == delta_metric(profile, y, x)
    assert delta_metric(profile, x, x) == 0


@settings(max_examples=50, deadline=None)
@given(st.tuples(coords, coords), st.tuples(coords, coords),
       st.tuples(coords, coords))
def test_quasi_triangle_slack_nonnegative(x, y, z):
    profile = profile_for(ModelParams(Equation.HEAT, k=1, beta=1))
    assert quasi_triangle_slack(profile, x, y, z) >= -1e-12


def test_box_basics():
    box = space_time_box(1.0, 2.0, [(0.0, 1.0)])
    c = box.center()
    assert box.contains(c)
    assert not box.contains((0.5, 0.5))
    profile = profile_for(ModelParams(Equation.HEAT, k=1, beta=1))
    assert box.delta_diameter(profile) > 0


def test_space_time_box_rejects_empty_interval():
    with pytest.raises(ValueError):
        space_time_box(2.0, 1.0, [(0.0, 1.0)])


def test_loglog_values():
    # loglog(x) = log log x, defined for x > e
    assert loglog(math.exp(math.e)) == pytest.approx(1.0)
    assert loglog(2 ** 16) > loglog(2 ** 4) > 0
    with pytest.raises(ValueError):
        loglog(1.0)
