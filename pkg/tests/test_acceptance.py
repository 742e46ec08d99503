"""End-to-end acceptance checks, one test per criterion.

Each test prints a single summary line with the measured quantities before
asserting, so failures still report what was observed.
"""

import json
import pathlib
import time

import numpy as np
import pytest

from polycert.cli import falsify, main
from polycert.domain import objective_lower_bound
from polycert.network import (AffineLayer, CandidatePlaneProvider, LSTMWeights,
                              ModelSpec, PreprocSpec, ThreatModel,
                              abstract_forward, build_input_element,
                              concrete_forward, load_input, load_model)
from polycert.numeric import DegenerateSamplesError, Interval, Plane
from polycert.refinement import (CertificationTask, certify, grad_lambda,
                                 loss, lp_bounds)
from polycert.lp import solve_lp3, solve_lp3_oracle
from polycert.transformers import (BinaryKind, Region, offset_sigid,
                                   offset_sigtanh, surface, synthesize_plane)

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
TOY_MODEL = FIXTURES / "toy_cell.json"
TOY_INPUT = FIXTURES / "toy_input.json"
DIGITS_MODEL = FIXTURES / "digits_lstm.json"


def _report(num, ok, detail):
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})")


def _toy_abstraction(seed, eps=1.2, n_samples=100, full_only=False):
    model = load_model(TOY_MODEL)
    inp, label = load_input(TOY_INPUT)
    elem = build_input_element(model, inp, ThreatModel("linf", eps, None))
    provider = CandidatePlaneProvider(seed=seed, n_samples=n_samples,
                                      full_only=full_only)
    return abstract_forward(model, elem, provider), label


# ---------------------------------------------------------------------------
# 1. Golden fixture: baseline bound window and optimized certification
# ---------------------------------------------------------------------------

def test_criterion_01_golden_fixture():
    start = time.perf_counter()
    lp_vals, opt_ok = [], 0
    for seed in range(10):
        absn, label = _toy_abstraction(seed)
        adv = 1 - label
        lp_vals.append(lp_bounds(absn, label, [adv])[adv])
        task = CertificationTask(absn, label, [adv], optimizer="gd", seed=seed)
        opt_ok += certify(task).certified
    elapsed = time.perf_counter() - start
    mean_lp = float(np.mean(lp_vals))
    ok_lp = -0.15 <= mean_lp <= -0.07
    ok = ok_lp and opt_ok >= 9 and elapsed < 5.0
    _report(1, ok, f"mean lp bound {mean_lp:+.4f} vs window [-0.15, -0.07], "
                   f"opt certified {opt_ok}/10, {elapsed:.2f}s")
    assert opt_ok >= 9
    assert elapsed < 5.0
    assert ok_lp
    assert ok


# ---------------------------------------------------------------------------
# 2. Golden fixture: intermediate boxes
# ---------------------------------------------------------------------------

def test_criterion_02_intermediate_boxes():
    absn, _ = _toy_abstraction(0)
    elem = absn.element
    o2 = elem.box(6)
    c2 = elem.box(11)
    ok_o2 = o2.lo == 0.4 and o2.hi == 1.6
    ref = Interval(-0.79, 0.62)
    ok_c2 = (c2.lo <= ref.lo and c2.hi >= ref.hi
             and abs(c2.width - ref.width) <= 0.1 * ref.width)
    ok = ok_o2 and ok_c2
    _report(2, ok, f"o2 [{o2.lo}, {o2.hi}] exact={ok_o2}, "
                   f"c2 [{c2.lo:+.3f}, {c2.hi:+.3f}] "
                   f"vs reference [-0.79, +0.62] contained+width10%={ok_c2}")
    assert ok_o2
    assert ok_c2
    assert ok


# ---------------------------------------------------------------------------
# 3. Soundness of offset-corrected planes on dense grids
# ---------------------------------------------------------------------------

def test_criterion_03_offset_soundness_suite():
    rng = np.random.default_rng(2024)
    worst_violation = 0.0
    worst_delta_err = 0.0
    for kind, offset_fn in ((BinaryKind.SIGTANH, offset_sigtanh),
                            (BinaryKind.SIGID, offset_sigid)):
        for _ in range(200):
            x0 = rng.uniform(-4.0, 2.0)
            y0 = rng.uniform(-4.0, 2.0)
            region = Region(Interval(x0, x0 + rng.uniform(0.2, 2.5)),
                            Interval(y0, y0 + rng.uniform(0.2, 2.5)))
            gx, gy = np.meshgrid(
                np.linspace(region.x.lo, region.x.hi, 500),
                np.linspace(region.y.lo, region.y.hi, 500))
            z = surface(kind, gx, gy)
            plane = Plane(*rng.normal(scale=0.5, size=3))
            resid = z - plane(gx, gy)
            for sense, extremum in (("lower", resid.min()),
                                    ("upper", resid.max())):
                out = offset_fn(plane, region, sense)
                worst_delta_err = max(worst_delta_err,
                                      abs((out.c - plane.c) - extremum))
                post = z - out(gx, gy)
                v = -post.min() if sense == "lower" else post.max()
                worst_violation = max(worst_violation, v)
    ok = worst_violation <= 1e-7 and worst_delta_err <= 1e-5
    _report(3, ok, f"max grid violation {worst_violation:.2e} (<=1e-7), "
                   f"max offset-vs-grid error {worst_delta_err:.2e} (<=1e-5)")
    assert ok


# ---------------------------------------------------------------------------
# 4. Plane-fit LP agrees with the vertex-enumeration oracle
# ---------------------------------------------------------------------------

def test_criterion_04_lp_exactness():
    rng = np.random.default_rng(99)
    worst = 0.0
    done = 0
    while done < 1000:
        n = int(rng.integers(4, 13))
        pts = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-3, 3, n),
                               rng.normal(scale=2.0, size=n)])
        sense = "lower" if rng.integers(2) else "upper"
        try:
            got = solve_lp3(pts, sense, rng=rng)
            ref = solve_lp3_oracle(pts, sense)
        except DegenerateSamplesError:
            continue
        xy1 = np.column_stack([pts[:, 0], pts[:, 1], np.ones(n)])
        o_got = float(xy1.sum(axis=0) @ got.as_array())
        o_ref = float(xy1.sum(axis=0) @ ref.as_array())
        worst = max(worst, abs(o_got - o_ref) / max(1.0, abs(o_ref)))
        done += 1
    ok = worst <= 1e-9
    _report(4, ok, f"1000 instances, worst relative objective error {worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 5. Plane quality improves with sample count
# ---------------------------------------------------------------------------

def test_criterion_05_sample_count_trend():
    region = Region(Interval(-1.5, 1.8), Interval(-2.0, 1.2))

    def objective(p):
        return p.a * region.x.mid + p.b * region.y.mid + p.c

    ref = synthesize_plane(BinaryKind.SIGTANH, region, 0, 100000, "lower",
                           np.random.default_rng(123456))
    medians = []
    for n in (10, 100, 1000):
        gaps = [objective(ref) - objective(
            synthesize_plane(BinaryKind.SIGTANH, region, 0, n, "lower",
                             np.random.default_rng(seed)))
                for seed in range(50)]
        medians.append(float(np.median(gaps)))
    ok = medians[0] > medians[1] > medians[2]
    _report(5, ok, "median gaps n=10/100/1000: "
            + "/".join(f"{m:.4f}" for m in medians))
    assert ok


# ---------------------------------------------------------------------------
# 6. Gradients match finite differences
# ---------------------------------------------------------------------------

def _random_model(rng, input_dim=2, hidden=2, frames=2, classes=2, cells=1,
                  scale=0.7):
    lws = []
    in_dim = input_dim
    for _ in range(cells):
        lws.append(LSTMWeights(
            *(rng.normal(scale=scale, size=(in_dim + hidden, hidden))
              for _ in range(4)),
            *(rng.normal(scale=scale, size=hidden) for _ in range(4))))
        in_dim = hidden
    post = (AffineLayer(rng.normal(scale=scale, size=(classes, hidden)),
                        rng.normal(scale=scale, size=classes)),)
    return ModelSpec(input_dim=input_dim, frame_count=frames, pre_layers=(),
                     lstm_layers=tuple(lws), post_layers=post)


def test_criterion_06_gradient_check():
    h = 1e-4
    good = total = 0
    for net_seed in range(20):
        rng = np.random.default_rng(net_seed)
        model = _random_model(rng)
        inp = rng.normal(size=(2, 2))
        elem = build_input_element(model, inp, ThreatModel("linf", 0.1, None))
        absn = abstract_forward(
            model, elem, CandidatePlaneProvider(seed=net_seed, n_samples=20))
        label = int(np.argmax(concrete_forward(model, inp)))
        adv = 1 - label
        task = CertificationTask(absn, label, [adv])
        n_ops = len(absn.binaries)
        for _ in range(25):
            lt = rng.uniform(-1, 1, size=(n_ops, 2, 5))
            g = grad_lambda(task, lt, adv)
            o, s, k = (int(rng.integers(n_ops)), int(rng.integers(2)),
                       int(rng.integers(5)))
            p = lt.copy()
            p[o, s, k] += h
            m = lt.copy()
            m[o, s, k] -= h
            fd = (loss(task, p, adv) - loss(task, m, adv)) / (2 * h)
            rel = abs(fd - g[o, s, k]) / max(abs(fd), abs(g[o, s, k]), 1e-6)
            good += rel <= 1e-3
            total += 1
    ok = total == 500 and good >= 0.95 * total
    _report(6, ok, f"{good}/{total} probes within 1e-3 relative error")
    assert ok


# ---------------------------------------------------------------------------
# 7. Certification and falsification never disagree
# ---------------------------------------------------------------------------

def test_criterion_07_certify_vs_falsify():
    conflicts = certified_n = falsified_n = 0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        model = _random_model(rng, cells=int(rng.integers(1, 3)),
                              scale=float(rng.uniform(0.4, 1.0)))
        inp = rng.normal(size=(2, 2))
        threat = ThreatModel("linf", float(rng.uniform(0.05, 0.4)), None)
        label = int(np.argmax(concrete_forward(model, inp)))
        elem = build_input_element(model, inp, threat)
        absn = abstract_forward(
            model, elem, CandidatePlaneProvider(seed=i, n_samples=20))
        task = CertificationTask(absn, label, [1 - label], optimizer="gd",
                                 init="vertex0", max_epoch=30, seed=i)
        is_cert = certify(task).certified
        is_fals = falsify(model, inp, threat, label, budget=200,
                          seed=i) is not None
        certified_n += is_cert
        falsified_n += is_fals
        conflicts += is_cert and is_fals
    ok = conflicts == 0
    _report(7, ok, f"100 nets: certified {certified_n}, "
                   f"falsified {falsified_n}, conflicts {conflicts}")
    assert ok


# ---------------------------------------------------------------------------
# 8. Frame robustness trend on the trained digit classifier
# ---------------------------------------------------------------------------

def _digits_lp_certified(model, inp, label, eps, frame, n_samples=15):
    elem = build_input_element(model, inp, ThreatModel("linf", eps, frame))
    absn = abstract_forward(
        model, elem,
        CandidatePlaneProvider(seed=0, n_samples=n_samples, full_only=True))
    advs = [j for j in range(10) if j != label]
    return min(lp_bounds(absn, label, advs).values()) > 0.0


def _digits_max_eps(model, inp, label, frame, hi=1.0, tol=0.05):
    if _digits_lp_certified(model, inp, label, hi, frame):
        return hi
    lo = 0.0
    if not _digits_lp_certified(model, inp, label, lo, frame):
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _digits_lp_certified(model, inp, label, mid, frame):
            lo = mid
        else:
            hi = mid
    return lo


def test_criterion_08_frame_trend():
    tol = 0.05
    model = load_model(DIGITS_MODEL)
    images = [load_input(FIXTURES / f"digits_input_{k}.json")
              for k in range(10)]
    monotone = 0
    for inp, label in images:
        row = [_digits_max_eps(model, inp, label, f) for f in range(7)]
        row = [0.0 if r is None else r for r in row]
        # within the bisection tolerance, values are indistinguishable
        monotone += all(row[k + 1] >= row[k] - tol for k in range(6))

    opt_dominates = True
    for inp, label in images:
        lp_eps = _digits_max_eps(model, inp, label, frame=None)
        elem = build_input_element(model, inp,
                                   ThreatModel("linf", lp_eps, None))
        absn = abstract_forward(
            model, elem, CandidatePlaneProvider(seed=0, n_samples=15))
        advs = [j for j in range(10) if j != label]
        task = CertificationTask(absn, label, advs, optimizer="gd",
                                 init="vertex0", max_epoch=30)
        # certifying at the baseline's max eps proves opt max-eps >= lp's
        opt_dominates &= certify(task).certified

    ok = monotone >= 8 and opt_dominates
    _report(8, ok, f"monotone per-frame trend on {monotone}/10 images, "
                   f"opt max-eps >= lp max-eps on all: {opt_dominates}")
    assert monotone >= 8
    assert opt_dominates
    assert ok


# ---------------------------------------------------------------------------
# 9. Polyhedral preprocessing never looser, usually tighter
# ---------------------------------------------------------------------------

def test_criterion_09_preprocessing_precision():
    prep = PreprocSpec(frame_len=16, stride=8, n_mel=4, sample_rate=800.0)
    rng = np.random.default_rng(7)
    model = _random_model(rng, input_dim=4, hidden=2, frames=3, classes=2)
    model = ModelSpec(input_dim=4, frame_count=3, pre_layers=(),
                      lstm_layers=model.lstm_layers,
                      post_layers=model.post_layers, preprocess=prep)
    never_looser = True
    strictly = 0
    for s in range(50):
        sig_rng = np.random.default_rng(100 + s)
        sig = sig_rng.normal(scale=0.3, size=model.signal_length())

        def widths(polyhedral):
            elem = build_input_element(model, sig,
                                       ThreatModel("linf", 0.004, None))
            absn = abstract_forward(
                model, elem,
                CandidatePlaneProvider(seed=s, n_samples=15, full_only=True),
                polyhedral_preproc=polyhedral)
            return np.array([absn.element.box(j).width
                             for j in absn.output_ids])

        poly = widths(True)
        box = widths(False)
        never_looser &= bool((poly <= box + 1e-9).all())
        strictly += bool((poly < box - 1e-12).any())
    ok = never_looser and strictly >= 45
    _report(9, ok, f"never looser on all 50: {never_looser}, "
                   f"strictly tighter on {strictly}/50")
    assert ok


# ---------------------------------------------------------------------------
# 10. Byte-identical reports for identical seed and flags
# ---------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    blobs = []
    for name in ("a.jsonl", "b.jsonl"):
        report = tmp_path / name
        code = main(["certify", "--model", str(TOY_MODEL),
                     "--input", str(TOY_INPUT), "--eps", "1.2",
                     "--method", "opt", "--optimizer", "gd", "--seed", "11",
                     "--report", str(report)])
        assert code in (0, 1)
        blobs.append(report.read_bytes())
    ok = blobs[0] == blobs[1]
    _report(10, ok, f"{len(blobs[0])} byte report, identical={ok}")
    assert ok
