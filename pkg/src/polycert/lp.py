"""Exact low-dimensional linear programming.

The certifier only ever solves LPs over the three plane coefficients
(A, B, C), so a small randomized incremental (Seidel-style) solver is enough
and keeps the hot path free of external solver dependencies.  The solver is
exact up to floating point: the returned vertex is the solution of the linear
system of its active constraints.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .numeric import DegenerateSamplesError, Plane

# Artificial bounding box for the Seidel recursion.  A plane bounding a
# sigmoid/tanh product never has coefficients anywhere near this magnitude,
# so touching the box means the instance was degenerate.
_BOX = 1e7
_FEAS_TOL = 1e-9


class _Infeasible(Exception):
    pass


class _Unbounded(Exception):
    pass


def _solve_1d(c, A, b, lo, hi):
    a = A[:, 0]
    pos = a > _FEAS_TOL
    neg = a < -_FEAS_TOL
    if pos.any():
        hi = min(hi, float((b[pos] / a[pos]).min()))
    if neg.any():
        lo = max(lo, float((b[neg] / a[neg]).max()))
    rest = ~pos & ~neg
    if rest.any() and (b[rest] < -_FEAS_TOL).any():
        raise _Infeasible
    if lo > hi + 1e-7:
        raise _Infeasible
    return np.array([hi if c[0] >= 0 else lo])


def _seidel(c, A, b, lo, hi, rng):
    """max c.v subject to A v <= b and lo <= v <= hi (elementwise)."""
    d = len(c)
    if d == 1:
        return _solve_1d(c, A, b, lo[0], hi[0])
    v = np.where(c >= 0, hi, lo).astype(float)
    order = rng.permutation(len(A))
    Ao, bo = A[order], b[order]
    tol = _FEAS_TOL * np.maximum(1.0, np.abs(bo))
    pos = 0
    while pos < len(bo):
        violated = np.nonzero(Ao[pos:] @ v - bo[pos:] > tol[pos:])[0]
        if violated.size == 0:
            break
        i = pos + int(violated[0])
        a, bb = Ao[i], bo[i]
        # The optimum moves onto a.v == bb.  Eliminate the variable with the
        # largest pivot and recurse in dimension d-1.
        j = int(np.argmax(np.abs(a)))
        if abs(a[j]) < 1e-13:
            raise _Infeasible
        keep = np.arange(d) != j
        sub = -a[keep] / a[j]          # v_j = sub . v_keep + off
        off = bb / a[j]

        # all constraints processed so far, plus the box constraints of the
        # eliminated variable, rewritten over the remaining variables
        G = Ao[:i]
        ej = np.zeros(d)
        ej[j] = 1.0
        G = np.vstack([G, ej, -ej])
        h = np.concatenate([bo[:i], [hi[j], -lo[j]]])
        A_red = G[:, keep] + np.outer(G[:, j], sub)
        b_red = h - G[:, j] * off

        c_red = c[keep] + c[j] * sub
        sol = _seidel(c_red, A_red, b_red, lo[keep], hi[keep], rng)
        v = np.empty(d)
        v[keep] = sol
        v[j] = sub @ sol + off
        pos = i + 1
    return v


def maximize(c: np.ndarray, A: Sequence[np.ndarray], b: Sequence[float],
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Maximize c.v subject to A v <= b inside the implicit bounding box."""
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    lo = np.full(len(c), -_BOX)
    hi = np.full(len(c), _BOX)
    try:
        v = _seidel(c, A, b, lo, hi, rng)
    except _Infeasible as exc:
        raise DegenerateSamplesError("LP instance infeasible") from exc
    if np.any(np.abs(v) >= _BOX * (1 - 1e-6)):
        raise DegenerateSamplesError(
            "LP optimum touches the bounding box; problem is unbounded "
            "or degenerate")
    return v


def solve_lp3(samples: Sequence[tuple[float, float, float]], sense: str,
              rng: np.random.Generator | None = None) -> Plane:
    """Fit the tightest plane below (sense='lower') or above (sense='upper')
    the sampled surface points, maximizing/minimizing the summed plane values.

    Raises DegenerateSamplesError when the (x, y) samples are collinear, in
    which case the optimal plane is not unique.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise ValueError("need at least 3 samples of (x, y, z)")
    xy1 = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    sv = np.linalg.svd(xy1, compute_uv=False)
    if sv[-1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateSamplesError("sample (x, y) locations are collinear")
    if sense not in ("lower", "upper"):
        raise ValueError(f"sense must be 'lower' or 'upper', got {sense!r}")

    # lower: max sum(A x_i + B y_i + C)  s.t.  A x_i + B y_i + C <= z_i
    # upper is the mirrored problem.
    sgn = 1.0 if sense == "lower" else -1.0
    obj = sgn * xy1.sum(axis=0)
    A = [sgn * row for row in xy1]
    b = [sgn * z for z in pts[:, 2]]
    v = maximize(obj, A, b, rng=rng)
    return Plane(float(v[0]), float(v[1]), float(v[2]))


def solve_lp3_oracle(samples: Sequence[tuple[float, float, float]], sense: str) -> Plane:
    """Brute-force reference: enumerate all constraint triples, keep the best
    feasible vertex.  Only used by tests; exponential in nothing but slow."""
    from itertools import combinations

    pts = np.asarray(samples, dtype=float)
    xy1 = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    z = pts[:, 2]
    sgn = 1.0 if sense == "lower" else -1.0
    best, best_obj = None, -np.inf
    for trio in combinations(range(len(pts)), 3):
        M = xy1[list(trio)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, z[list(trio)])
        resid = sgn * (xy1 @ v - z)
        if np.max(resid) > 1e-9 * max(1.0, np.abs(z).max()):
            continue
        obj = sgn * xy1.sum(axis=0) @ v
        if obj > best_obj:
            best, best_obj = v, obj
    if best is None:
        raise DegenerateSamplesError("oracle found no feasible vertex")
    return Plane(float(best[0]), float(best[1]), float(best[2]))
