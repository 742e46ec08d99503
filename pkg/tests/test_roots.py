"""Polynomial root extraction against a dense-grid sign-change oracle."""

import numpy as np

from polycert.numeric import Interval
from polycert.roots import roots_quadratic_in_range, roots_quartic_in_range


def _grid_sign_changes(coeffs, rng, resolution=1e-5):
    xs = np.arange(rng.lo, rng.hi + resolution, resolution)
    vals = np.polyval(coeffs, xs)
    sign = np.sign(vals)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    return [0.5 * (xs[i] + xs[i + 1]) for i in flips]


def test_quadratic_simple():
    assert roots_quadratic_in_range(1, 0, -1, Interval(-2, 2)) == [-1.0, 1.0]
    assert roots_quadratic_in_range(1, 0, 1, Interval(-2, 2)) == []


def test_quadratic_logistic_product_form():
    # s(1-s) = 0.16  ->  s^2 - s + 0.16 = 0, roots 0.2 and 0.8
    roots = roots_quadratic_in_range(1.0, -1.0, 0.16, Interval(0, 1))
    assert len(roots) == 2
    for s in roots:
        assert abs(s * (1 - s) - 0.16) < 1e-12


def test_quadratic_degenerates_to_linear():
    assert roots_quadratic_in_range(0.0, 2.0, -1.0, Interval(0, 1)) == [0.5]
    assert roots_quadratic_in_range(0.0, 0.0, 1.0, Interval(0, 1)) == []


def test_quadratic_range_filtering():
    roots = roots_quadratic_in_range(1, 0, -4, Interval(0, 3))
    assert roots == [2.0]


def test_quartic_factorable():
    roots = roots_quartic_in_range(1, 0, -5, 0, 4, Interval(-3, 3))
    assert np.allclose(roots, [-2, -1, 1, 2], atol=1e-10)


def test_quartic_no_real_roots():
    assert roots_quartic_in_range(1, 0, 0, 0, 1, Interval(-1, 1)) == []


def test_quartic_interior_stationary_coefficients():
    # the quartic arising from the interior stationary condition of
    # sigma(x)tanh(y) - plane, with plane coefficients a=0.04, b=0.46
    a, b = 0.04, 0.46
    coeffs = [1.0, -2.0 - b, 1.0 + 2.0 * b, -b, -a * a]
    roots = roots_quartic_in_range(*coeffs, Interval(0, 1))
    oracle = _grid_sign_changes(np.array(coeffs), Interval(0, 1), 1e-6)
    assert len(roots) >= len(oracle)
    for r_ref in oracle:
        assert min(abs(r - r_ref) for r in roots) < 1e-5
    for r in roots:
        assert abs(np.polyval(coeffs, r)) < 1e-10


def test_root_completeness_random():
    rng = np.random.default_rng(11)
    window = Interval(-2, 2)
    for _ in range(300):
        coeffs = rng.normal(size=5)
        roots = roots_quartic_in_range(*coeffs, window)
        for r_ref in _grid_sign_changes(coeffs, window):
            assert roots and min(abs(r - r_ref) for r in roots) < 1e-4


def test_quartic_leading_zero_degrades():
    # cubic disguised as a quartic
    roots = roots_quartic_in_range(0, 1, 0, -1, 0, Interval(-2, 2))
    assert np.allclose(sorted(roots), [-1, 0, 1], atol=1e-10)
