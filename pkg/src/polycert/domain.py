"""Polyhedral abstract domain: per-neuron dual linear bounds plus intervals,
with a sign-directed backsubstitution engine and the exact affine transformer.

Each neuron carries a lower and an upper linear expression over strictly
earlier neurons plus a concrete interval.  Input neurons carry the interval
only.  Elements are immutable; transformers return extended copies that share
the per-neuron records of their predecessor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numeric import Interval, LinExpr

LOWER = "lower"
UPPER = "upper"


@dataclass(frozen=True)
class BoundPair:
    lower: LinExpr | None
    upper: LinExpr | None
    box: Interval


class AbstractElement:
    """Ordered neurons, each with dual linear bounds and an interval box."""

    def __init__(self, input_boxes: Sequence[Interval]):
        self._bounds: list[BoundPair] = [
            BoundPair(None, None, box) for box in input_boxes
        ]
        self.input_count = len(self._bounds)

    def __len__(self) -> int:
        return len(self._bounds)

    @property
    def bounds(self) -> list[BoundPair]:
        return self._bounds

    def box(self, j: int) -> Interval:
        return self._bounds[j].box

    def boxes(self, ids: Sequence[int]) -> list[Interval]:
        return [self._bounds[j].box for j in ids]

    def _extended(self, new_bounds: list[BoundPair]) -> "AbstractElement":
        out = AbstractElement.__new__(AbstractElement)
        out._bounds = self._bounds + new_bounds
        out.input_count = self.input_count
        return out

    def append_neurons(self, specs: Sequence[tuple[LinExpr, LinExpr]],
                       boxes: Sequence[Interval] | None = None) -> "AbstractElement":
        """Append neurons with given (lower, upper) expressions.

        Boxes are computed by full backsubstitution unless supplied.  All
        appended expressions may only reference already-existing neurons.
        """
        base = len(self._bounds)
        new = []
        for k, (lo_e, up_e) in enumerate(specs):
            limit = base + k
            if lo_e.max_index >= limit or up_e.max_index >= limit:
                raise ValueError(
                    f"expression for neuron {limit} references index >= {limit}")
            if boxes is not None:
                box = boxes[k]
            else:
                tmp = self._extended(new)
                lov = backsubstitute(tmp, lo_e, LOWER)
                hiv = backsubstitute(tmp, up_e, UPPER)
                if lov > hiv:
                    # the two passes round independently; collapse inversions
                    # at floating-point noise level, reject anything larger
                    if lov - hiv > 1e-9 * max(1.0, abs(lov)):
                        raise ValueError(
                            f"inconsistent bounds for neuron {limit}")
                    lov = hiv = 0.5 * (lov + hiv)
                box = Interval(lov, hiv)
            new.append(BoundPair(lo_e, up_e, box))
        return self._extended(new)


def backsubstitute(elem: AbstractElement, expr: LinExpr, sense: str) -> float:
    """Sound scalar bound on expr over the element.

    Recursively substitutes each neuron by its lower or upper expression
    depending on the sign of its accumulated coefficient (positive coefficient
    under a lower-sense query picks the lower expression), down to the input
    neurons, which are then concretized with their boxes.
    """
    if sense not in (LOWER, UPPER):
        raise ValueError(f"bad sense {sense!r}")
    n = len(elem)
    want_lower = sense == LOWER

    # depth-0 bound: concretize the expression over its sources' boxes
    # directly.  Both this and the fully backsubstituted value are sound, so
    # the tighter of the two is returned (full depth is not always tighter).
    if expr.indices.size and expr.max_index >= n:
        raise ValueError("expression references unknown neuron")
    shallow = Interval.dot(expr.coeffs, elem.boxes(expr.indices)).shift(expr.const)
    shallow_bound = shallow.lo if want_lower else shallow.hi
    coeff = np.zeros(n)
    if expr.indices.size:
        coeff[expr.indices] += expr.coeffs
    const = expr.const

    bounds = elem.bounds
    top = expr.max_index
    for j in range(top, elem.input_count - 1, -1):
        cj = coeff[j]
        if cj == 0.0:
            continue
        coeff[j] = 0.0
        use_lower = (cj > 0.0) == want_lower
        e = bounds[j].lower if use_lower else bounds[j].upper
        if e.indices.size:
            coeff[e.indices] += cj * e.coeffs
        const += cj * e.const

    total = const
    for i in range(elem.input_count):
        ci = coeff[i]
        if ci == 0.0:
            continue
        box = bounds[i].box
        if (ci > 0.0) == want_lower:
            total += ci * box.lo
        else:
            total += ci * box.hi
    if want_lower:
        return float(max(total, shallow_bound))
    return float(min(total, shallow_bound))


def concretize(elem: AbstractElement, expr: LinExpr) -> Interval:
    return Interval(backsubstitute(elem, expr, LOWER),
                    backsubstitute(elem, expr, UPPER))


def affine_transformer(elem: AbstractElement, weights: np.ndarray, bias: np.ndarray,
                       source_ids: Sequence[int]) -> AbstractElement:
    """Append one neuron per row of weights: y_r = weights[r] . x[source_ids] + bias[r].

    Affine maps are exact in this domain: lower == upper == the expression.
    """
    weights = np.asarray(weights, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != bias.shape[0]:
        raise ValueError("weights must be (rows, inputs) matching bias length")
    if weights.shape[1] != len(source_ids):
        raise ValueError("weight columns must match number of source neurons")
    ids = np.asarray(source_ids, dtype=np.int64)
    if ids.size and ids.max() >= len(elem):
        raise ValueError("source neuron does not exist")
    specs = []
    for r in range(weights.shape[0]):
        row = weights[r]
        nz = np.nonzero(row)[0]
        e = LinExpr(ids[nz], row[nz], float(bias[r]))
        specs.append((e, e))
    return elem.append_neurons(specs)


def objective_lower_bound(elem: AbstractElement, true_label: int, other_label: int) -> float:
    """Sound lower bound on z_true - z_other via backsubstitution."""
    if true_label == other_label:
        raise ValueError("labels must differ")
    expr = LinExpr(np.array([true_label, other_label]), np.array([1.0, -1.0]), 0.0)
    return backsubstitute(elem, expr, LOWER)
