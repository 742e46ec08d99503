"""Abstraction refinement: learn convex combinations of candidate planes.

Candidate planes and all interval boxes are synthesized once (with the
full-region plane in place) and frozen; the certification objective is then
a piecewise-linear function of the softmax-normalized combination weights.
The bound computation is replayed in torch so gradients come from
reverse-mode differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .network import BinaryRecord, NetworkAbstraction
from .numeric import LinExpr, Plane
from .transformers import CandidateSet

N_CANDIDATES = 5


def normalize_lambda(lam_tilde: np.ndarray) -> np.ndarray:
    """Softmax over the candidate axis (last axis of size 5)."""
    z = lam_tilde - lam_tilde.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def combined_planes(cs: CandidateSet, lam_lower: np.ndarray,
                    lam_upper: np.ndarray) -> tuple[Plane, Plane]:
    """Convex combination of the candidate planes; sound since each candidate
    is individually sound over the full region."""
    for lam in (lam_lower, lam_upper):
        if abs(float(np.sum(lam)) - 1.0) > 1e-6 or np.any(lam < -1e-12):
            raise ValueError("lambda weights must lie on the simplex")
    lo = np.array([p.as_array() for p in cs.lower]).T @ lam_lower
    up = np.array([p.as_array() for p in cs.upper]).T @ lam_upper
    return Plane(*lo), Plane(*up)


def combined_bounds(record: BinaryRecord, lam_lower: np.ndarray,
                    lam_upper: np.ndarray) -> tuple[LinExpr, LinExpr]:
    """The combined planes expressed over the record's two input neurons."""
    lo, up = combined_planes(record.candidate_set, lam_lower, lam_upper)
    ids = np.array([record.x_id, record.y_id])
    return (LinExpr(ids, np.array([lo.a, lo.b]), lo.c),
            LinExpr(ids, np.array([up.a, up.b]), up.c))


@dataclass
class CertificationTask:
    """One certification problem over a frozen abstraction."""
    abstraction: NetworkAbstraction
    true_label: int                   # index into abstraction.output_ids
    adversary_labels: list[int]
    max_epoch: int = 100
    lr: float = 100.0
    lr_decay: float = 0.98
    optimizer: str = "adam"           # "adam" | "gd"
    init: str = "random"              # "random" | "vertex0"
    seed: int = 0

    def __post_init__(self):
        if self.max_epoch < 1 or self.lr <= 0 or not (0 < self.lr_decay <= 1):
            raise ValueError("bad optimization hyperparameters")


@dataclass
class LabelResult:
    label: int
    bound: float
    epochs: int
    certified: bool


@dataclass
class CertificationResult:
    certified: bool
    labels: list[LabelResult] = field(default_factory=list)

    @property
    def worst_bound(self) -> float:
        return min((r.bound for r in self.labels), default=np.inf)


class _BoundGraph:
    """Differentiable replay of backsubstitution over a frozen abstraction."""

    def __init__(self, abstraction: NetworkAbstraction):
        elem = abstraction.element
        self.n = len(elem)
        self.input_count = elem.input_count
        self.output_ids = abstraction.output_ids
        self.in_lo = torch.tensor([elem.box(i).lo for i in range(self.input_count)],
                                  dtype=torch.float64)
        self.in_hi = torch.tensor([elem.box(i).hi for i in range(self.input_count)],
                                  dtype=torch.float64)
        self.boxes = [elem.box(i) for i in range(self.n)]
        self.binary_slot = {rec.neuron_id: k
                           for k, rec in enumerate(abstraction.binaries)}
        self.n_ops = len(abstraction.binaries)
        # (n_ops, 2 senses, 5 candidates, 3 coefficients)
        planes = np.zeros((max(self.n_ops, 1), 2, N_CANDIDATES, 3))
        parents = np.zeros((max(self.n_ops, 1), 2), dtype=np.int64)
        for k, rec in enumerate(abstraction.binaries):
            cs = rec.candidate_set
            planes[k, 0] = [p.as_array() for p in cs.lower]
            planes[k, 1] = [p.as_array() for p in cs.upper]
            parents[k] = (rec.x_id, rec.y_id)
        self.planes = torch.tensor(planes)
        self.binary_parents = parents
        # fixed expressions for non-binary neurons
        self.fixed = {}
        for j in range(self.input_count, self.n):
            if j in self.binary_slot:
                continue
            bp = elem.bounds[j]
            self.fixed[j] = (
                torch.tensor(bp.lower.indices),
                torch.tensor(bp.lower.coeffs), float(bp.lower.const),
                torch.tensor(bp.upper.indices),
                torch.tensor(bp.upper.coeffs), float(bp.upper.const))

    def objective_bound(self, lam_tilde: torch.Tensor, true_label: int,
                        adversary: int) -> torch.Tensor:
        """Lower bound on z_true - z_adv as a function of the raw weights."""
        lam = torch.softmax(lam_tilde, dim=-1)          # (n_ops, 2, 5)
        combo = torch.einsum("osk,oskc->osc", lam, self.planes)
        coeff = torch.zeros(self.n, dtype=torch.float64)
        coeff = coeff.index_put(
            (torch.tensor([self.output_ids[true_label],
                           self.output_ids[adversary]]),),
            torch.tensor([1.0, -1.0], dtype=torch.float64))
        const = torch.zeros((), dtype=torch.float64)
        top = max(self.output_ids[true_label], self.output_ids[adversary])
        for j in range(top, self.input_count - 1, -1):
            cj = coeff[j]
            cj_val = float(cj.detach())
            if cj_val == 0.0:
                continue
            coeff = coeff.index_put((torch.tensor([j]),),
                                    torch.zeros(1, dtype=torch.float64))
            use_lower = cj_val > 0.0
            slot = self.binary_slot.get(j)
            if slot is None:
                il, cl, bl, iu, cu, bu = self.fixed[j]
                idx, cf, cst = (il, cl, bl) if use_lower else (iu, cu, bu)
                if idx.numel():
                    coeff = coeff.index_add(0, idx, cj * cf)
                const = const + cj * cst
            else:
                abc = combo[slot, 0 if use_lower else 1]
                idx = torch.tensor(self.binary_parents[slot])
                coeff = coeff.index_add(0, idx, cj * abc[:2])
                const = const + cj * abc[2]
        cin = coeff[:self.input_count]
        const = const + torch.sum(torch.where(cin > 0, self.in_lo, self.in_hi) * cin)
        # interval floor: the frozen boxes give a sound lambda-independent
        # lower bound; mirror the depth-0 shortcut of the numpy engine so the
        # two bound computations agree
        floor = (self.boxes[self.output_ids[true_label]].lo
                 - self.boxes[self.output_ids[adversary]].hi)
        return torch.maximum(const, torch.tensor(floor, dtype=torch.float64))


def _graph(task: CertificationTask) -> _BoundGraph:
    cached = getattr(task, "_graph_cache", None)
    if cached is None:
        cached = _BoundGraph(task.abstraction)
        task._graph_cache = cached
    return cached


def loss(task: CertificationTask, lam_tilde: np.ndarray, adversary: int) -> float:
    """Negated certification bound; < 0 means the adversary label is refuted."""
    g = _graph(task)
    lt = torch.tensor(np.asarray(lam_tilde, dtype=float))
    return float(-g.objective_bound(lt, task.true_label, adversary))


def grad_lambda(task: CertificationTask, lam_tilde: np.ndarray,
                adversary: int) -> np.ndarray:
    """Gradient of the loss w.r.t. the raw (pre-softmax) weights, by
    reverse-mode differentiation of the bound computation."""
    g = _graph(task)
    lt = torch.tensor(np.asarray(lam_tilde, dtype=float), requires_grad=True)
    value = -g.objective_bound(lt, task.true_label, adversary)
    value.backward()
    return lt.grad.numpy().copy()


def init_lambda(task: CertificationTask, n_ops: int, label_pos: int) -> np.ndarray:
    if task.init == "vertex0":
        lt = np.zeros((n_ops, 2, N_CANDIDATES))
        lt[..., 0] = 40.0   # softmax puts ~all mass on the full-region plane
        return lt
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=task.seed, spawn_key=(label_pos,)))
    return rng.uniform(-1.0, 1.0, size=(n_ops, 2, N_CANDIDATES))


def optimize_label(task: CertificationTask, adversary: int,
                   label_pos: int) -> LabelResult:
    """Gradient-descent loop for one adversary label; exits at the first
    epoch whose bound is positive."""
    g = _graph(task)
    lt = torch.tensor(init_lambda(task, g.n_ops, label_pos), requires_grad=True)
    if task.optimizer == "adam":
        opt = torch.optim.Adam([lt], lr=task.lr)
    elif task.optimizer == "gd":
        opt = torch.optim.SGD([lt], lr=task.lr)
    else:
        raise ValueError(f"unknown optimizer {task.optimizer!r}")
    best = -np.inf
    epochs = 0
    for epoch in range(task.max_epoch):
        opt.zero_grad()
        bound = g.objective_bound(lt, task.true_label, adversary)
        cur = float(bound.detach())
        best = max(best, cur)
        epochs = epoch + 1
        if cur > 0.0:
            break
        if g.n_ops == 0:
            break  # nothing to optimize
        (-bound).backward()
        opt.step()
        for group in opt.param_groups:
            group["lr"] *= task.lr_decay
    return LabelResult(adversary, best, epochs, best > 0.0)


def certify(task: CertificationTask) -> CertificationResult:
    """Per adversary label: fresh raw weights, then softmax / loss / gradient
    step with learning-rate decay until the bound goes positive or the epoch
    budget runs out.  Certified only if every label is refuted."""
    results = []
    ok = True
    for pos, adv in enumerate(task.adversary_labels):
        if adv == task.true_label:
            raise ValueError("adversary label equals the true label")
        res = optimize_label(task, adv, pos)
        results.append(res)
        if not res.certified:
            ok = False
    return CertificationResult(ok, results)


def lp_bounds(abstraction: NetworkAbstraction, true_label: int,
              adversary_labels: list[int]) -> dict[int, float]:
    """Baseline bounds using the full-region planes only (no refinement)."""
    from .domain import objective_lower_bound
    out = abstraction.output_ids
    return {adv: objective_lower_bound(abstraction.element, out[true_label], out[adv])
            for adv in adversary_labels}
