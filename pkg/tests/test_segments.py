import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from enlab.segments import (
    AnalyticSegment,
    FunctionSegment,
    PolyExpTerm,
    constant,
    exponential,
    linear,
    product,
)


def test_pure_exponential_integral():
    seg = exponential(1.0, -1.0)
    assert seg.integral(0.0, 1.0) == pytest.approx(1.0 - math.exp(-1.0), abs=1e-14)


def test_constant_and_linear():
    assert constant(3.0)(1.7) == 3.0
    seg = linear(2.0, -0.5, t0=1.0)
    assert seg(1.0) == pytest.approx(2.0)
    assert seg(3.0) == pytest.approx(1.0)
    assert seg.integral(1.0, 3.0) == pytest.approx(3.0)


coeff = st.floats(-3.0, 3.0, allow_nan=False)
rate = st.floats(-2.0, 2.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    coeffs=st.lists(coeff, min_size=1, max_size=3),
    r=rate,
    t0=st.floats(0.0, 2.0),
    lo=st.floats(0.0, 2.0),
    width=st.floats(0.1, 3.0),
)
def test_polyexp_integral_matches_quadrature(coeffs, r, t0, lo, width):
    term = PolyExpTerm(tuple(coeffs), r, t0)
    hi = lo + width
    expected, _ = quad(lambda u: float(term(u)), lo, hi, limit=200)
    assert term.integral(lo, hi) == pytest.approx(expected, rel=1e-10, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    a=st.lists(coeff, min_size=1, max_size=3),
    b=st.lists(coeff, min_size=1, max_size=3),
    ra=rate,
    rb=rate,
)
def test_product_is_pointwise_product(a, b, ra, rb):
    sa = AnalyticSegment((PolyExpTerm(tuple(a), ra, 0.3),))
    sb = AnalyticSegment((PolyExpTerm(tuple(b), rb, 1.1),))
    ts = np.linspace(0.0, 2.5, 11)
    got = (sa * sb)(ts)
    want = sa(ts) * sb(ts)
    assert np.max(np.abs(got - want)) < 1e-9 * max(1.0, np.max(np.abs(want)))


def test_shift_preserves_function():
    term = PolyExpTerm((1.0, -2.0, 0.5), 0.7, 0.2)
    shifted = term.shifted(1.4)
    ts = np.linspace(0.0, 3.0, 13)
    assert np.allclose(term(ts), shifted(ts), rtol=1e-12, atol=1e-12)


def test_derivative_matches_finite_difference():
    seg = AnalyticSegment(
        (PolyExpTerm((0.5, 1.0, -0.25), -0.4, 0.6), PolyExpTerm((2.0,), 0.9, 0.0))
    )
    d = seg.derivative()
    h = 1e-6
    for t in (0.3, 1.2, 2.4):
        fd = (seg(t + h) - seg(t - h)) / (2 * h)
        assert d(t) == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_integral_additivity():
    seg = AnalyticSegment((PolyExpTerm((1.0, 0.3), -0.2, 0.0),))
    total = seg.integral(0.0, 2.0)
    assert total == pytest.approx(seg.integral(0.0, 0.7) + seg.integral(0.7, 2.0), abs=1e-13)


def test_function_segment_quadrature():
    seg = FunctionSegment(lambda t: np.sin(t))
    assert seg.integral(0.0, math.pi) == pytest.approx(2.0, abs=1e-9)


def test_product_mixed_falls_back_to_callable():
    seg = product(constant(2.0), FunctionSegment(lambda t: np.cos(t)))
    assert isinstance(seg, FunctionSegment)
    assert seg(0.0) == pytest.approx(2.0)


def test_analytic_json_round_trip():
    seg = AnalyticSegment((PolyExpTerm((1.0, -0.5), 0.3, 0.8), PolyExpTerm((2.0,), 0.0, 0.0)))
    back = AnalyticSegment.from_json(seg.to_json())
    ts = np.linspace(0.0, 2.0, 9)
    assert np.allclose(seg(ts), back(ts), rtol=0, atol=0)
