"""Exact 3-variable LP solver against a vertex-enumeration oracle."""

import numpy as np
import pytest

from polycert.lp import maximize, solve_lp3, solve_lp3_oracle
from polycert.numeric import DegenerateSamplesError


def _objective(plane, samples):
    return sum(plane(x, y) for x, y, _ in samples)


def test_exact_plane_recovered():
    # all samples on z = 2x + 3y + 1: the plane is its own tightest bound
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(20, 2))
    samples = [(x, y, 2 * x + 3 * y + 1) for x, y in pts]
    for sense in ("lower", "upper"):
        p = solve_lp3(samples, sense, np.random.default_rng(1))
        assert np.allclose([p.a, p.b, p.c], [2.0, 3.0, 1.0], atol=1e-7)


def test_collinear_samples_raise():
    samples = [(t, 2 * t, t * t) for t in np.linspace(0, 1, 8)]
    with pytest.raises(DegenerateSamplesError):
        solve_lp3(samples, "lower", np.random.default_rng(0))


def test_matches_oracle_small_instances():
    rng = np.random.default_rng(42)
    for trial in range(300):
        n = int(rng.integers(4, 13))
        xy = rng.uniform(-2, 2, size=(n, 2))
        z = np.sin(xy[:, 0]) * np.cos(xy[:, 1]) + rng.normal(scale=0.1, size=n)
        samples = [tuple(map(float, (x, y, zz))) for (x, y), zz in zip(xy, z)]
        sense = "lower" if trial % 2 == 0 else "upper"
        try:
            got = solve_lp3(samples, sense, np.random.default_rng(trial))
        except DegenerateSamplesError:
            continue
        ref = solve_lp3_oracle(samples, sense)
        got_obj, ref_obj = _objective(got, samples), _objective(ref, samples)
        scale = max(1.0, abs(ref_obj))
        assert abs(got_obj - ref_obj) <= 1e-9 * scale


def test_feasibility_of_returned_plane():
    rng = np.random.default_rng(3)
    for trial in range(100):
        xy = rng.uniform(-3, 3, size=(30, 2))
        z = xy[:, 0] ** 2 - xy[:, 1] ** 2 + rng.normal(scale=0.2, size=30)
        samples = [tuple(map(float, (x, y, zz))) for (x, y), zz in zip(xy, z)]
        lo = solve_lp3(samples, "lower", np.random.default_rng(trial))
        up = solve_lp3(samples, "upper", np.random.default_rng(trial))
        for x, y, zz in samples:
            assert lo(x, y) <= zz + 1e-9
            assert up(x, y) >= zz - 1e-9


def test_maximize_simple_polytope():
    # max x + y subject to x <= 1, y <= 2, x + y <= 2.5
    A = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    b = [1.0, 2.0, 2.5]
    v = maximize(np.array([1.0, 1.0]), A, b, np.random.default_rng(0))
    assert abs(v[0] + v[1] - 2.5) < 1e-9


def test_maximize_detects_unbounded_direction():
    A = [np.array([1.0, 0.0])]
    b = [1.0]
    with pytest.raises(DegenerateSamplesError):
        maximize(np.array([0.0, 1.0]), A, b, np.random.default_rng(0))
