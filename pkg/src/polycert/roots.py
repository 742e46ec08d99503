"""Real root extraction for the polynomials appearing in offset correction.

Quadratics come from the edge stationary conditions, the quartic from the
interior stationary condition of sigma(x)*tanh(y) minus a plane.  Roots feed
a soundness-critical minimum search, so completeness matters more than speed:
companion-matrix roots are polished with Newton steps and a bisection sweep
catches anything the eigenvalue solver mangles on ill-conditioned input.
"""

from __future__ import annotations

import numpy as np

from .numeric import Interval

_RANGE_TOL = 1e-12


def _polish(coeffs: np.ndarray, r: float, iters: int = 3) -> float:
    deriv = np.polyder(coeffs)
    for _ in range(iters):
        p = np.polyval(coeffs, r)
        dp = np.polyval(deriv, r)
        if dp == 0.0:
            break
        step = p / dp
        if not np.isfinite(step):
            break
        r -= step
    return r


def _dedupe(roots: list[float], tol: float) -> list[float]:
    out: list[float] = []
    for r in sorted(roots):
        if not out or abs(r - out[-1]) > tol:
            out.append(r)
    return out


def _in_range(roots: list[float], rng: Interval) -> list[float]:
    return [min(max(r, rng.lo), rng.hi) for r in roots
            if rng.lo - _RANGE_TOL <= r <= rng.hi + _RANGE_TOL]


def roots_quadratic_in_range(c2: float, c1: float, c0: float, rng: Interval) -> list[float]:
    """All real roots of c2 t^2 + c1 t + c0 inside rng (degenerates to linear)."""
    if abs(c2) < 1e-300:
        if abs(c1) < 1e-300:
            return []
        return _in_range([-c0 / c1], rng)
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0.0:
        return []
    sq = np.sqrt(disc)
    # numerically stable pairing
    q = -0.5 * (c1 + np.copysign(sq, c1)) if c1 != 0.0 else 0.5 * sq
    roots = []
    if q != 0.0:
        roots = [q / c2, c0 / q]
    else:
        roots = [0.0] if disc == 0.0 else [sq / (2 * c2), -sq / (2 * c2)]
    roots = [_polish(np.array([c2, c1, c0]), r, iters=1) for r in roots]
    return _in_range(_dedupe(roots, 1e-12), rng)


def _bisection_sweep(coeffs: np.ndarray, rng: Interval, n_grid: int = 2048) -> list[float]:
    xs = np.linspace(rng.lo, rng.hi, n_grid + 1)
    vals = np.polyval(coeffs, xs)
    sign = np.sign(vals)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    roots: list[float] = []
    if flips.size:
        # bisect all sign-change cells simultaneously
        a = xs[flips].copy()
        b = xs[flips + 1].copy()
        fa = vals[flips].copy()
        for _ in range(60):
            m = 0.5 * (a + b)
            fm = np.polyval(coeffs, m)
            same = (fa < 0) == (fm < 0)
            a = np.where(same, m, a)
            fa = np.where(same, fm, fa)
            b = np.where(same, b, m)
            if np.max(b - a) < 1e-15 * max(1.0, abs(rng.lo), abs(rng.hi)):
                break
        roots.extend((0.5 * (a + b)).tolist())
    roots.extend(xs[np.nonzero(vals == 0.0)[0]].tolist())
    return roots


def roots_quartic_in_range(c4: float, c3: float, c2: float, c1: float, c0: float,
                           rng: Interval) -> list[float]:
    """All real roots of the quartic inside rng, accurate to ~1e-10.

    Companion-matrix eigenvalues with Newton polish; a bisection sweep over
    the range is merged in as a fallback for poorly conditioned instances.
    """
    coeffs = np.array([c4, c3, c2, c1, c0], dtype=float)
    nz = np.nonzero(np.abs(coeffs) > 1e-300)[0]
    if nz.size == 0:
        return []
    coeffs_t = coeffs[nz[0]:]
    roots: list[float] = []
    if len(coeffs_t) == 1:
        return []
    if len(coeffs_t) == 2:
        roots = [-coeffs_t[1] / coeffs_t[0]]
    else:
        scale = max(abs(rng.lo), abs(rng.hi), 1.0)
        for r in np.roots(coeffs_t):
            if abs(r.imag) < 1e-6 * scale:
                roots.append(_polish(coeffs_t, float(r.real)))
    roots.extend(_bisection_sweep(coeffs_t, rng))
    return _in_range(_dedupe(roots, 1e-9 * max(1.0, rng.width)), rng)
