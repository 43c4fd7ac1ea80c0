import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bmimap.errors import BoundaryError, DomainError
from bmimap.specfun import owens_t, std_normal_cdf, std_normal_pdf, std_normal_quantile


def test_pdf_values(oracles):
    assert std_normal_pdf(0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert std_normal_pdf(1.0) == std_normal_pdf(-1.0)
    for x, v in oracles["pdf"].items():
        assert std_normal_pdf(float(x)) == pytest.approx(v, rel=1e-14)


def test_pdf_rejects_non_finite():
    with pytest.raises(DomainError):
        std_normal_pdf(math.inf)
    with pytest.raises(DomainError):
        std_normal_pdf(np.array([0.0, math.nan]))


def test_cdf_values(oracles):
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(math.inf) == 1.0
    assert std_normal_cdf(-math.inf) == 0.0
    assert std_normal_cdf(1.96) == pytest.approx(0.9750021, abs=1e-7)
    for x, v in oracles["cdf"].items():
        assert abs(std_normal_cdf(float(x)) - v) <= 1e-12


def test_cdf_array_matches_scalar():
    xs = np.linspace(-9, 9, 101)
    arr = std_normal_cdf(xs)
    assert np.allclose(arr, [std_normal_cdf(float(x)) for x in xs], atol=1e-15)


def test_cdf_nan():
    with pytest.raises(DomainError):
        std_normal_cdf(math.nan)


@given(st.floats(-40, 40, allow_nan=False))
def test_cdf_symmetry(x):
    assert abs(std_normal_cdf(x) + std_normal_cdf(-x) - 1.0) <= 1e-12


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_cdf_monotone(x, y):
    if x <= y:
        assert std_normal_cdf(x) <= std_normal_cdf(y)


def test_quantile_values(oracles):
    assert std_normal_quantile(0.5) == 0.0
    assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    for p, v in oracles["quantile"].items():
        assert std_normal_quantile(float(p)) == pytest.approx(v, rel=1e-12, abs=1e-13)


@pytest.mark.parametrize("x", [-3.0, -1.0, 0.0, 1.0, 3.0])
def test_quantile_inverts_cdf(x):
    assert std_normal_quantile(std_normal_cdf(x)) == pytest.approx(x, abs=1e-12)


@given(st.floats(1e-8, 1 - 1e-8))
def test_quantile_round_trip(p):
    assert abs(std_normal_cdf(std_normal_quantile(p)) - p) <= 1e-10


def test_quantile_increasing():
    p = np.linspace(1e-9, 1 - 1e-9, 20001)
    assert np.all(np.diff(std_normal_quantile(p)) > 0)


def test_quantile_errors():
    for p in (0.0, 1.0):
        with pytest.raises(BoundaryError):
            std_normal_quantile(p)
    for p in (-0.1, 1.5, math.nan):
        with pytest.raises(DomainError):
            std_normal_quantile(p)
    with pytest.raises(BoundaryError):
        std_normal_quantile(np.array([0.2, 1.0]))


def test_owens_t_special_values():
    assert owens_t(0.7, 0.0) == 0.0
    assert owens_t(0.0, 1.0) == pytest.approx(0.125, abs=1e-15)
    assert abs(owens_t(0.0, 1 / math.sqrt(3.0)) - 1 / 12) <= 1e-12
    for a in (0.3, 2.0, -4.0):
        assert owens_t(0.0, a) == pytest.approx(math.atan(a) / (2 * math.pi), abs=1e-15)


def test_owens_t_frozen_points(oracles):
    for key, v in oracles["owens_t_points"].items():
        h, a = map(float, key.split(","))
        assert abs(owens_t(h, a) - v) <= 1e-12


def _quad_t(h, a):
    f = lambda x: math.exp(-0.5 * h * h * (1 + x * x)) / (1 + x * x)
    return integrate.quad(f, 0.0, a, epsabs=1e-14, epsrel=1e-13)[0] / (2 * math.pi)


@settings(max_examples=200)
@given(st.floats(-6, 6), st.floats(-8, 8))
def test_owens_t_against_live_quadrature(h, a):
    assert abs(owens_t(h, a) - _quad_t(h, a)) <= 1e-10


@given(st.floats(-6, 6), st.floats(-8, 8))
def test_owens_t_symmetries(h, a):
    assert owens_t(-h, a) == pytest.approx(owens_t(h, a), abs=1e-15)
    assert owens_t(h, -a) == pytest.approx(-owens_t(h, a), abs=1e-15)


def test_owens_t_large_arguments():
    # T(h, inf) = Q(|h|)/2; a = 1e6 is effectively infinite.
    for h in (0.1, 1.0, 3.0):
        assert owens_t(h, 1e6) == pytest.approx(0.5 * std_normal_cdf(-h), abs=1e-12)
    assert owens_t(40.0, 2.0) == 0.0


def test_owens_t_non_finite():
    with pytest.raises(DomainError):
        owens_t(math.nan, 1.0)
    with pytest.raises(DomainError):
        owens_t(0.0, math.inf)
