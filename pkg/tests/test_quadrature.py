import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polysob import quadrature as quad


def test_segment_rule_exactness():
    for exactness in range(0, 14):
        rule = quad.segment_rule(exactness)
        assert abs(rule.weights.sum() - 1.0) <= 1e-14
        for m in range(rule.exactness + 1):
            val = float((rule.nodes**m) @ rule.weights)
            assert abs(val - 1.0 / (m + 1)) <= 1e-13


def test_triangle_rule_exactness():
    for exactness in (0, 1, 2, 4, 8, 16, 26):
        rule = quad.triangle_rule(exactness)
        assert abs(rule.weights.sum() - 0.5) <= 1e-14
        for a in range(exactness + 1):
            for b in range(exactness + 1 - a):
                val = float((rule.nodes[:, 0] ** a * rule.nodes[:, 1] ** b) @ rule.weights)
                ref = quad.triangle_monomial_integral(a, b)
                assert abs(val - ref) <= 1e-13 * max(ref, 1.0)


def test_map_to_triangle_area():
    tri = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
    _, w = quad.map_to_triangle(quad.triangle_rule(2), tri)
    assert abs(w.sum() - 3.0) <= 1e-13


def test_adaptive_triangle_against_closed_forms():
    # |x - y| over the unit square equals 1/3
    tris = np.array(
        [[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]]
    )
    val, info = quad.adaptive_triangle_integral(
        lambda p: np.abs(p[:, 0] - p[:, 1]), tris
    )
    assert abs(val - 1.0 / 3.0) <= 1e-9
    assert info.abs_error <= 1e-8

    # sqrt(x^2 + y^2) over the unit square: (2/3)(sqrt 2 + asinh(1))... use
    # the standard closed form int = (sqrt 2 + log(1 + sqrt 2)) / 3
    ref = (math.sqrt(2.0) + math.log(1.0 + math.sqrt(2.0))) / 3.0
    val, _ = quad.adaptive_triangle_integral(
        lambda p: np.hypot(p[:, 0], p[:, 1]), tris
    )
    assert abs(val - ref) <= 1e-8


def test_adaptive_segment_against_closed_form():
    val, info = quad.adaptive_segment_integral(
        lambda t: np.abs(t - 0.3) ** 1.5, np.zeros(2), np.array([1.0, 0.0])
    )
    ref = (0.3**2.5 + 0.7**2.5) / 2.5
    assert abs(val - ref) <= 1e-9
    assert not info.cap_hit


def test_abs_power_exact_vs_antiderivative():
    # |t^2 - t + 0.21| on [0, 1]: roots 0.3, 0.7
    c = np.array([0.21, -1.0, 1.0])
    p = np.polynomial.polynomial.polyint(c)
    pv = lambda x: np.polynomial.polynomial.polyval(x, p)
    ref = pv(0.3) - pv(0.0) - (pv(0.7) - pv(0.3)) + pv(1.0) - pv(0.7)
    got = quad.abs_power_segment_integral(c, 1.0, 1)
    assert abs(got - ref) <= 1e-14


@given(
    st.integers(min_value=1, max_value=5),
    st.integers(min_value=1, max_value=3),
    st.integers(min_value=0, max_value=10**6),
)
@settings(max_examples=40)
def test_abs_power_matches_adaptive(deg, q, seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, size=deg + 1)
    exact = quad.abs_power_segment_integral(c, 1.0, q)
    ref, _ = quad.adaptive_segment_integral(
        lambda t: np.abs(np.polynomial.polynomial.polyval(t, c)) ** q,
        np.zeros(2),
        np.array([1.0, 0.0]),
    )
    assert abs(exact - ref) <= 1e-8 * max(ref, 1e-6)


def test_poly_roots_batch_matches_companion():
    rng = np.random.default_rng(1)
    for k in (1, 2, 3, 4):
        C = rng.uniform(-1.0, 1.0, size=(2000, k + 1))
        v1 = quad.abs_power_segment_batch(C, 1.0, 1)
        roots = quad._companion_roots_batch(C)
        # rebuild the splitter result with companion roots for comparison
        re, im = roots.real, roots.imag
        ok = (np.abs(im) <= 1e-8 * (1.0 + np.abs(re))) & (re > 1e-13) & (re < 1.0 - 1e-13)
        breaks = np.where(ok, re, 1.0)
        breaks.sort(axis=1)
        rule = quad.segment_rule(k)
        edges = np.concatenate(
            [np.zeros((len(C), 1)), breaks, np.ones((len(C), 1))], axis=1
        )
        v2 = np.zeros(len(C))
        for i in range(edges.shape[1] - 1):
            lo, hi = edges[:, i, None], edges[:, i + 1, None]
            t = lo + (hi - lo) * rule.nodes[None, :]
            val = np.zeros_like(t)
            val[:] = C[:, k, None]
            for m in range(k - 1, -1, -1):
                val = val * t + C[:, m, None]
            v2 += np.abs((val @ rule.weights) * (hi - lo)[:, 0])
        assert np.max(np.abs(v1 - v2) / np.maximum(v2, 1e-300)) <= 1e-12


def test_abs_power_rejects_bad_q():
    with pytest.raises(ValueError):
        quad.abs_power_segment_integral(np.array([1.0, 1.0]), 1.0, 0)
