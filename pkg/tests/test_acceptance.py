"""End-to-end acceptance suite: each test runs one criterion at full scale
and prints a single PASS/FAIL line with the measured diagnostics."""

import pytest

from anisofield import acceptance


def _run(index, capsys):
    res = acceptance.CRITERIA[index]("full")
    with capsys.disabled():
        status = "PASS" if res.passed else "FAIL"
        print(f"\ncriterion {res.index:2d} ({res.name}): {status} -- "
              f"{res.detail}")
    assert res.passed, f"criterion {res.index} ({res.name}): {res.detail}"


def test_criterion_01_calibration_closure(capsys):
    _run(1, capsys)


def test_criterion_02_variance_scaling(capsys):
    _run(2, capsys)


def test_criterion_03_band_inequalities(capsys):
    _run(3, capsys)


def test_criterion_04_metric_equivalence(capsys):
    _run(4, capsys)


def test_criterion_05_covariance_smoothness(capsys):
    _run(5, capsys)


def test_criterion_06_mc_quadrature_agreement(capsys):
    _run(6, capsys)


def test_criterion_07_oscillation_event(capsys):
    _run(7, capsys)


def test_criterion_08_small_ball(capsys):
    _run(8, capsys)


def test_criterion_09_covering(capsys):
    _run(9, capsys)


def test_criterion_10_hitting_exponents(capsys):
    _run(10, capsys)


def test_criterion_11_determinism(capsys):
    _run(11, capsys)
