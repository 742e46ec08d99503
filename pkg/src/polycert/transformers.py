"""Abstract transformers for the nonlinear operations.

Binary transformers (sigmoid*tanh and sigmoid*identity) synthesize bounding
planes by sampling the surface, solving a 3-variable LP, and restoring global
soundness with a closed-form offset derived from the stationary points of the
violation function (corners, edge criticals from the reduced quadratics, and
for sigmoid*tanh an interior quartic in s = sigmoid(x)).

Unary transformers (sigmoid, tanh, relu, square, log, floor) use closed-form
chord/tangent bounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import LOWER, UPPER, AbstractElement, BoundPair
from .lp import maximize, solve_lp3
from .numeric import (SOUND_SLACK, DegenerateSamplesError, Interval, LinExpr,
                      Plane)
from .roots import roots_quadratic_in_range, roots_quartic_in_range

_DEGEN_WIDTH = 1e-12


class BinaryKind(Enum):
    SIGTANH = "sigtanh"   # f(x, y) = sigmoid(x) * tanh(y)
    SIGID = "sigid"       # g(x, y) = sigmoid(x) * y


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(s):
    return float(np.log(s) - np.log1p(-s))


def surface(kind: BinaryKind, x, y):
    if kind is BinaryKind.SIGTANH:
        return sigmoid(x) * np.tanh(y)
    return sigmoid(x) * np.asarray(y, dtype=float)


@dataclass(frozen=True)
class Region:
    """Input box of a binary operation, obtained by backsubstitution."""

    x: Interval
    y: Interval

    @property
    def corners(self):
        return [(self.x.lo, self.y.lo), (self.x.lo, self.y.hi),
                (self.x.hi, self.y.lo), (self.x.hi, self.y.hi)]


@dataclass(frozen=True)
class CandidateSet:
    """Five lower and five upper planes: full region, then triangles T1..T4.

    Every plane is individually sound over the full region (post offset),
    so any convex combination of them is sound.
    """

    kind: BinaryKind
    region: Region
    lower: tuple[Plane, ...]
    upper: tuple[Plane, ...]

    def __post_init__(self):
        assert len(self.lower) == 5 and len(self.upper) == 5


# ---------------------------------------------------------------------------
# Offset correction (Fermat / stationary-point analysis)
# ---------------------------------------------------------------------------

def _sigtanh_extrema(plane: Plane, region: Region) -> list[tuple[float, float]]:
    """Candidate extrema of F(x,y) = sigmoid(x)tanh(y) - plane(x,y) on the region."""
    lx, ux = region.x.lo, region.x.hi
    ly, uy = region.y.lo, region.y.hi
    A, B = plane.a, plane.b
    pts = list(region.corners)

    t_rng = Interval(np.tanh(ly), np.tanh(uy))
    s_rng = Interval(float(sigmoid(lx)), float(sigmoid(ux)))

    # Case 1: x fixed at an endpoint, dF/dy = 0  =>  1 - t^2 = B / sigma(x)
    for xe in (lx, ux):
        S = float(sigmoid(xe))
        if S > 0.0:
            for t in roots_quadratic_in_range(1.0, 0.0, B / S - 1.0, t_rng):
                pts.append((xe, float(np.arctanh(np.clip(t, -1 + 1e-16, 1 - 1e-16)))))

    # Case 2: y fixed at an endpoint, dF/dx = 0  =>  s(1-s) = A / tanh(y)
    for ye in (ly, uy):
        T = float(np.tanh(ye))
        if abs(T) > 1e-300:
            for s in roots_quadratic_in_range(1.0, -1.0, A / T, s_rng):
                if 0.0 < s < 1.0:
                    pts.append((logit(s), ye))

    # Case 3: interior stationary points.  Eliminating tanh(y) from the two
    # stationary conditions gives a quartic in s = sigma(x).
    s_open = Interval(max(s_rng.lo, 1e-12), min(s_rng.hi, 1 - 1e-12))
    if s_open.lo <= s_open.hi:
        for s in roots_quartic_in_range(1.0, -2.0 - B, 1.0 + 2.0 * B, -B, -A * A,
                                        s_open):
            den = s * (1.0 - s)
            if den <= 1e-300:
                continue
            t_cands = [A / den]
            disc = 1.0 - B / s
            if disc >= 0.0:
                rt = np.sqrt(disc)
                t_cands.extend([rt, -rt])
            for t in t_cands:
                if t_rng.lo < t < t_rng.hi and abs(t) < 1.0:
                    x = logit(s)
                    y = float(np.arctanh(t))
                    if lx < x < ux and ly < y < uy:
                        pts.append((x, y))
    return pts


def _sigid_extrema(plane: Plane, region: Region) -> list[tuple[float, float]]:
    """Candidate extrema of G(x,y) = sigmoid(x)y - plane(x,y) on the region.

    G is monotone in y for fixed x and its Hessian is indefinite, so only the
    corners and the horizontal-edge criticals s(1-s) = A/y matter.
    """
    lx, ux = region.x.lo, region.x.hi
    A = plane.a
    pts = list(region.corners)
    s_rng = Interval(float(sigmoid(lx)), float(sigmoid(ux)))
    for ye in (region.y.lo, region.y.hi):
        if abs(ye) > 1e-300:
            for s in roots_quadratic_in_range(1.0, -1.0, A / ye, s_rng):
                if 0.0 < s < 1.0:
                    pts.append((logit(s), ye))
    return pts


def _offset(kind: BinaryKind, plane: Plane, region: Region, sense: str) -> Plane:
    if kind is BinaryKind.SIGTANH:
        pts = _sigtanh_extrema(plane, region)
    else:
        pts = _sigid_extrema(plane, region)
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    viol = surface(kind, xs, ys) - plane(xs, ys)
    if sense == LOWER:
        return plane.shifted(float(viol.min()) - SOUND_SLACK)
    return plane.shifted(float(viol.max()) + SOUND_SLACK)


def offset_sigtanh(plane: Plane, region: Region, sense: str) -> Plane:
    """Shift the plane's offset so it soundly bounds sigmoid(x)tanh(y) on the region."""
    return _offset(BinaryKind.SIGTANH, plane, region, sense)


def offset_sigid(plane: Plane, region: Region, sense: str) -> Plane:
    """Shift the plane's offset so it soundly bounds sigmoid(x)*y on the region."""
    return _offset(BinaryKind.SIGID, plane, region, sense)


# ---------------------------------------------------------------------------
# Plane synthesis
# ---------------------------------------------------------------------------

def _sample_subregion(region: Region, subregion: int, n: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform samples from the box (k=0) or one of the four diagonal-split
    triangles (k=1..4), via rejection from the bounding box."""
    if subregion == 0:
        u = rng.random(n)
        v = rng.random(n)
    else:
        us, vs = [], []
        need = n
        while need > 0:
            cu = rng.random(2 * need + 8)
            cv = rng.random(2 * need + 8)
            if subregion == 1:
                keep = cv <= cu            # below the main diagonal
            elif subregion == 2:
                keep = cv >= cu
            elif subregion == 3:
                keep = cv <= 1.0 - cu      # below the anti-diagonal
            elif subregion == 4:
                keep = cv >= 1.0 - cu
            else:
                raise ValueError(f"subregion must be 0..4, got {subregion}")
            us.append(cu[keep])
            vs.append(cv[keep])
            need = n - sum(len(a) for a in us)
        u = np.concatenate(us)[:n]
        v = np.concatenate(vs)[:n]
    x = region.x.lo + u * region.x.width
    y = region.y.lo + v * region.y.width
    return x, y


def _corner_extreme(kind: BinaryKind, region: Region, sense: str) -> float:
    xs, ys = zip(*region.corners)
    vals = surface(kind, np.array(xs), np.array(ys))
    return float(vals.min() if sense == LOWER else vals.max())


def _fit_1d(x: np.ndarray, z: np.ndarray, sense: str,
            rng: np.random.Generator) -> tuple[float, float]:
    """Best line a*x + c below/above the samples (region degenerate in one axis)."""
    sgn = 1.0 if sense == LOWER else -1.0
    n = len(x)
    obj = sgn * np.array([x.sum(), n])
    A = [sgn * np.array([xi, 1.0]) for xi in x]
    b = [sgn * zi for zi in z]
    v = maximize(obj, A, b, rng=rng)
    return float(v[0]), float(v[1])


def synthesize_plane(kind: BinaryKind, region: Region, subregion: int,
                     n_samples: int, sense: str,
                     rng: np.random.Generator) -> Plane:
    """Sample the surface on the subregion, fit the LP-optimal plane, then
    offset-correct over the full region so the result is globally sound."""
    if n_samples < 10:
        raise ValueError("need at least 10 samples")
    wx, wy = region.x.width, region.y.width
    if wx < _DEGEN_WIDTH and wy < _DEGEN_WIDTH:
        z = float(surface(kind, region.x.mid, region.y.mid))
        raw = Plane(0.0, 0.0, z)
    elif wx < _DEGEN_WIDTH or wy < _DEGEN_WIDTH:
        x, y = _sample_subregion(region, 0, n_samples, rng)
        z = surface(kind, x, y)
        if wx < _DEGEN_WIDTH:
            slope, c = _fit_1d(y, z, sense, rng)
            raw = Plane(0.0, slope, c)
        else:
            slope, c = _fit_1d(x, z, sense, rng)
            raw = Plane(slope, 0.0, c)
    else:
        raw = None
        for _ in range(4):
            x, y = _sample_subregion(region, subregion, n_samples, rng)
            z = surface(kind, x, y)
            try:
                raw = solve_lp3(np.column_stack([x, y, z]), sense, rng=rng)
                break
            except DegenerateSamplesError:
                continue
        if raw is None:
            # interval-constant fallback; still offset-corrected below
            raw = Plane(0.0, 0.0, _corner_extreme(kind, region, sense))
    return _offset(kind, raw, region, sense)


def candidates(kind: BinaryKind, region: Region, n_samples: int = 100,
               seed: int = 0, neuron_id: int = 0,
               subregions: tuple[int, ...] = (0, 1, 2, 3, 4)) -> CandidateSet:
    """Five lower and five upper sound candidate planes for the operation.

    Deterministic given (seed, neuron_id): each (subregion, sense) pair gets
    its own splittable generator, so synthesis order does not matter.  When
    only a subset of subregions is requested, the remaining slots reuse the
    full-region plane (still sound, just without subregion diversity).
    """
    planes = {LOWER: [], UPPER: []}
    for sense_idx, sense in enumerate((LOWER, UPPER)):
        made = {}
        for k in range(5):
            sub = k if k in subregions else 0
            if sub not in made:
                rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=seed,
                                           spawn_key=(neuron_id, sub, sense_idx)))
                made[sub] = synthesize_plane(kind, region, sub, n_samples,
                                             sense, rng)
            planes[sense].append(made[sub])
    return CandidateSet(kind, region, tuple(planes[LOWER]), tuple(planes[UPPER]))


# ---------------------------------------------------------------------------
# Unary transformers
# ---------------------------------------------------------------------------

class LogDomainError(ValueError):
    """Log transformer received a box with non-positive lower bound."""


def _line(src: int, slope: float, x0: float, y0: float) -> LinExpr:
    return LinExpr(np.array([src]), np.array([float(slope)]), y0 - slope * x0)


def _s_curve_bounds(src: int, box: Interval, g, dg) -> tuple[LinExpr, LinExpr]:
    """Chord/tangent bounds for an S-shaped activation (sigmoid, tanh)."""
    l, u = box.lo, box.hi
    gl, gu = float(g(l)), float(g(u))
    if u - l < _DEGEN_WIDTH:
        c = 0.5 * (gl + gu)
        return LinExpr.constant(c), LinExpr.constant(c)
    chord = (gu - gl) / (u - l)
    lam = min(float(dg(l)), float(dg(u)))
    lower = _line(src, chord, l, gl) if l >= 0.0 else _line(src, lam, l, gl)
    upper = _line(src, chord, u, gu) if u <= 0.0 else _line(src, lam, u, gu)
    return lower, upper


def sigmoid_bounds(src: int, box: Interval) -> tuple[LinExpr, LinExpr]:
    return _s_curve_bounds(src, box, sigmoid, lambda x: sigmoid(x) * (1 - sigmoid(x)))


def tanh_bounds(src: int, box: Interval) -> tuple[LinExpr, LinExpr]:
    return _s_curve_bounds(src, box, np.tanh, lambda x: 1.0 - np.tanh(x) ** 2)


def relu_bounds(src: int, box: Interval) -> tuple[LinExpr, LinExpr]:
    l, u = box.lo, box.hi
    if l >= 0.0:
        e = _line(src, 1.0, 0.0, 0.0)
        return e, e
    if u <= 0.0:
        z = LinExpr.constant(0.0)
        return z, z
    upper = _line(src, u / (u - l), l, 0.0)
    lower = _line(src, 1.0 if u >= -l else 0.0, 0.0, 0.0)
    return lower, upper


def square_bounds(src: int, box: Interval, delta: float = 1e-5) -> tuple[LinExpr, LinExpr]:
    """Piecewise lower bound keeping the output non-negative up to threshold
    delta (required by the downstream log), plus the chord upper bound."""
    l, u = box.lo, box.hi
    sq = np.sqrt(delta) if delta > 0 else 0.0
    upper = _line(src, u + l, 0.0, -u * l)
    if 3 * l * l + 2 * l * u - u * u <= 4 * delta and sq <= l:
        p = l + np.sqrt(max(l * l - delta, 0.0))
        lower = _line(src, 2 * p, 0.0, -p * p)
    elif 3 * u * u + 2 * u * l - l * l <= 4 * delta and u <= -sq:
        p = u - np.sqrt(max(u * u - delta, 0.0))
        lower = _line(src, 2 * p, 0.0, -p * p)
    elif l <= sq and u >= -sq:
        lower = LinExpr.constant(0.0)
    else:
        m = 0.5 * (u + l)
        lower = _line(src, u + l, 0.0, -m * m)
    return lower, upper


def log_bounds(src: int, box: Interval) -> tuple[LinExpr, LinExpr]:
    """Chord lower bound and parallel mid-point tangent upper bound for log."""
    l, u = box.lo, box.hi
    if l <= 0.0:
        raise LogDomainError(f"log transformer needs positive lower bound, got {l}")
    if u - l < _DEGEN_WIDTH:
        c = float(np.log(0.5 * (l + u)))
        return LinExpr.constant(c), LinExpr.constant(c)
    lower = _line(src, np.log(u / l) / (u - l), l, np.log(l))
    upper = _line(src, 2.0 / (u + l), 0.0, np.log(0.5 * (u + l)) - 1.0)
    return lower, upper


def floor_bounds(src: int, box: Interval, delta: float) -> tuple[LinExpr, LinExpr]:
    """Bounds for x -> max(x, delta), used to keep the log input positive."""
    l, u = box.lo, box.hi
    if l >= delta:
        e = _line(src, 1.0, 0.0, 0.0)
        return e, e
    if u <= delta:
        e = LinExpr.constant(delta)
        return e, e
    lower = LinExpr.constant(delta)
    upper = _line(src, (u - delta) / (u - l), l, delta)
    return lower, upper


_UNARY_RANGES = {
    "sigmoid": lambda box: Interval(float(sigmoid(box.lo)), float(sigmoid(box.hi))),
    "tanh": lambda box: Interval(float(np.tanh(box.lo)), float(np.tanh(box.hi))),
    "relu": lambda box: Interval(max(box.lo, 0.0), max(box.hi, 0.0)),
    "square": lambda box: Interval(
        0.0 if box.lo <= 0.0 <= box.hi else min(box.lo ** 2, box.hi ** 2),
        max(box.lo ** 2, box.hi ** 2)),
    "log": lambda box: Interval(float(np.log(box.lo)), float(np.log(box.hi))),
}


def apply_unary(elem: AbstractElement, src: int, op: str,
                delta: float = 1e-5) -> AbstractElement:
    """Append one neuron computing op(x_src), with closed-form bounds."""
    box = elem.box(src)
    if op == "sigmoid":
        lo_e, up_e = sigmoid_bounds(src, box)
    elif op == "tanh":
        lo_e, up_e = tanh_bounds(src, box)
    elif op == "relu":
        lo_e, up_e = relu_bounds(src, box)
    elif op == "square":
        lo_e, up_e = square_bounds(src, box, delta)
    elif op == "log":
        lo_e, up_e = log_bounds(src, box)
    elif op == "floor":
        lo_e, up_e = floor_bounds(src, box, delta)
    else:
        raise ValueError(f"unknown unary op {op!r}")
    out = elem.append_neurons([(lo_e, up_e)])
    j = len(out) - 1
    if op == "floor":
        rng_box = Interval(max(box.lo, delta), max(box.hi, delta))
    else:
        rng_box = _UNARY_RANGES[op](box)
    cur = out.box(j)
    lo = max(cur.lo, rng_box.lo)
    hi = min(cur.hi, rng_box.hi)
    if lo > hi:  # numerical sliver; keep the exact range
        lo, hi = rng_box.lo, rng_box.hi
    out.bounds[j] = BoundPair(lo_e, up_e, Interval(lo, hi))
    return out


def binary_exprs(x_id: int, y_id: int, lower: Plane, upper: Plane) -> tuple[LinExpr, LinExpr]:
    ids = np.array([x_id, y_id])
    lo_e = LinExpr(ids, np.array([lower.a, lower.b]), lower.c)
    up_e = LinExpr(ids, np.array([upper.a, upper.b]), upper.c)
    return lo_e, up_e


def binary_range(kind: BinaryKind, x_box: Interval, y_box: Interval) -> Interval:
    """Exact range of the surface over the box.  Both factors are monotone,
    and the first is positive, so the extrema sit at the corners."""
    s = Interval(sigmoid(x_box.lo), sigmoid(x_box.hi))
    t = (Interval(np.tanh(y_box.lo), np.tanh(y_box.hi))
         if kind is BinaryKind.SIGTANH else y_box)
    prods = (s.lo * t.lo, s.lo * t.hi, s.hi * t.lo, s.hi * t.hi)
    return Interval(min(prods), max(prods))


def apply_binary(elem: AbstractElement, x_id: int, y_id: int,
                 lower: Plane, upper: Plane,
                 kind: BinaryKind | None = None) -> AbstractElement:
    """Append one neuron bounded by the given (already sound) planes over the
    inputs' region.  Its box is the backsubstituted plane bounds intersected
    with the exact interval range of the surface when the kind is known."""
    lo_e, up_e = binary_exprs(x_id, y_id, lower, upper)
    out = elem.append_neurons([(lo_e, up_e)])
    if kind is None:
        return out
    nid = len(out) - 1
    cur = out.box(nid)
    rng = binary_range(kind, elem.box(x_id), elem.box(y_id))
    lo, hi = max(cur.lo, rng.lo), min(cur.hi, rng.hi)
    box = Interval(lo, hi) if lo <= hi else rng
    bounds = out.bounds
    bounds[nid] = BoundPair(lo_e, up_e, box)
    return out
