"""Scalar, interval and linear-expression primitives shared by the whole certifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

# Absolute slack used whenever a floating-point comparison guards soundness.
SOUND_SLACK = 1e-9


class DegenerateSamplesError(ValueError):
    """Raised when an LP sample set does not pin down a unique optimal plane."""


@dataclass(frozen=True)
class Interval:
    """Concrete lower/upper bounds for a single scalar quantity."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError(f"interval endpoints must be finite: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"empty interval: lo={self.lo} > hi={self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= x <= self.hi + slack

    def add(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def scale(self, k: float) -> "Interval":
        if k >= 0:
            return Interval(k * self.lo, k * self.hi)
        return Interval(k * self.hi, k * self.lo)

    def shift(self, b: float) -> "Interval":
        return Interval(self.lo + b, self.hi + b)

    @staticmethod
    def point(x: float) -> "Interval":
        return Interval(x, x)

    @staticmethod
    def dot(coeffs: np.ndarray, boxes: "list[Interval]") -> "Interval":
        """Outward-conservative sum of products sum_i coeffs[i] * boxes[i]."""
        lo = 0.0
        hi = 0.0
        for k, box in zip(coeffs, boxes):
            if k >= 0:
                lo += k * box.lo
                hi += k * box.hi
            else:
                lo += k * box.hi
                hi += k * box.lo
        return Interval(lo, hi)


@dataclass(frozen=True)
class LinExpr:
    """Sparse linear expression sum_i coeffs[i] * x_{indices[i]} + const.

    Indices refer to positions in the global neuron ordering.  Validity
    (all indices strictly below the neuron the expression bounds) is checked
    when the expression is attached to an element.
    """

    indices: np.ndarray
    coeffs: np.ndarray
    const: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        cf = np.asarray(self.coeffs, dtype=np.float64)
        if idx.shape != cf.shape or idx.ndim != 1:
            raise ValueError("indices and coeffs must be 1-D arrays of equal length")
        if idx.size and (len(np.unique(idx)) != idx.size):
            # merge duplicates so downstream scatter-adds stay simple
            order = np.argsort(idx)
            idx, cf = idx[order], cf[order]
            uniq, start = np.unique(idx, return_index=True)
            cf = np.add.reduceat(cf, start)
            idx = uniq
        if idx.size and np.any(idx < 0):
            raise ValueError("negative neuron index in linear expression")
        if idx.size:
            keep = cf != 0.0
            if not keep.all():
                idx, cf = idx[keep], cf[keep]
        if not np.all(np.isfinite(cf)) or not np.isfinite(self.const):
            raise ValueError("non-finite coefficient in linear expression")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coeffs", cf)
        object.__setattr__(self, "const", float(self.const))

    @staticmethod
    def from_dict(coeffs: Mapping[int, float], const: float) -> "LinExpr":
        items = sorted(coeffs.items())
        idx = np.array([i for i, _ in items], dtype=np.int64)
        cf = np.array([c for _, c in items], dtype=np.float64)
        return LinExpr(idx, cf, const)

    @staticmethod
    def constant(c: float) -> "LinExpr":
        return LinExpr(np.zeros(0, dtype=np.int64), np.zeros(0), c)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(c) for i, c in zip(self.indices, self.coeffs)}

    @property
    def max_index(self) -> int:
        return int(self.indices.max()) if self.indices.size else -1

    def evaluate(self, values: np.ndarray) -> float:
        return float(values[self.indices] @ self.coeffs + self.const)

    def scaled(self, k: float) -> "LinExpr":
        return LinExpr(self.indices, k * self.coeffs, k * self.const)

    def plus(self, other: "LinExpr") -> "LinExpr":
        idx = np.concatenate([self.indices, other.indices])
        cf = np.concatenate([self.coeffs, other.coeffs])
        return LinExpr(idx, cf, self.const + other.const)


@dataclass(frozen=True)
class Plane:
    """A plane z = a*x + b*y + c bounding a two-input surface from one side."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b) and np.isfinite(self.c)):
            raise ValueError(f"plane components must be finite: {self}")

    def __call__(self, x, y):
        return self.a * x + self.b * y + self.c

    def shifted(self, delta: float) -> "Plane":
        return Plane(self.a, self.b, self.c + delta)

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])
