"""Command-line surface: certification, per-frame max-epsilon search,
concrete falsification, and a small benchmark harness.

Reports are JSON lines (one record per example, aggregate footer last) and
are byte-deterministic for a fixed seed and flag set; wall-clock timings are
only included when explicitly requested.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .network import (CandidatePlaneProvider, ModelFormatError, ModelSpec,
                      ThreatModel, abstract_forward, build_input_element,
                      concrete_forward, load_input, load_model)
from .refinement import CertificationTask, certify, lp_bounds

EXIT_CERTIFIED = 0
EXIT_NOT_CERTIFIED = 1
EXIT_ERROR = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--input", required=True, action="append",
                   help="input path (repeatable for batches)")
    p.add_argument("--eps", type=float, default=None,
                   help="L-inf perturbation radius")
    p.add_argument("--db", type=float, default=None,
                   help="perturbation budget in dB relative to signal peak")
    p.add_argument("--frame", type=int, default=None,
                   help="restrict the perturbation to one frame")
    p.add_argument("--method", choices=("lp", "opt"), default="opt")
    p.add_argument("--samples", type=int, default=100,
                   help="sample count per plane synthesis")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=100.0)
    p.add_argument("--lr-decay", type=float, default=0.98)
    p.add_argument("--optimizer", choices=("adam", "gd"), default="adam")
    p.add_argument("--init", choices=("random", "vertex0"), default="random")
    p.add_argument("--seed", type=int,
                   default=int(os.environ.get("POLYCERT_SEED", "0")))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", type=str, default=None,
                   help="write the JSON-lines report here instead of stdout")
    p.add_argument("--csv", type=str, default=None,
                   help="also export per-label rows as CSV")
    p.add_argument("--timing", action="store_true",
                   help="include wall time in the report (breaks byte determinism)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polycert",
        description="Polyhedral robustness certifier for LSTM classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="certify one or more inputs")
    _add_common(p)

    p = sub.add_parser("max-eps", help="binary search for the largest "
                                       "certifiable perturbation")
    _add_common(p)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("falsify", help="search for a concrete counterexample")
    _add_common(p)
    p.add_argument("--budget", type=int, default=200,
                   help="number of random probes before coordinate descent")

    p = sub.add_parser("bench", help="batch certification with an aggregate "
                                     "summary")
    _add_common(p)
    return parser


def make_threat(args) -> ThreatModel:
    if (args.eps is None) == (args.db is None):
        raise ValueError("exactly one of --eps / --db is required")
    if args.eps is not None:
        return ThreatModel("linf", args.eps, args.frame)
    return ThreatModel("db", args.db, args.frame)


def certify_one(model: ModelSpec, inp: np.ndarray, label: int | None,
                threat: ThreatModel, args) -> dict:
    """Certification record for one example.  Misclassified inputs are
    reported but never counted as attempted."""
    logits = concrete_forward(model, inp)
    predicted = int(np.argmax(logits))
    if label is not None and predicted != label:
        return {"verdict": "misclassified", "predicted": predicted,
                "label": label}
    true_label = predicted if label is None else label
    adversaries = [i for i in range(len(logits)) if i != true_label]

    elem = build_input_element(model, inp, threat)
    provider = CandidatePlaneProvider(seed=args.seed, n_samples=args.samples,
                                      full_only=args.method == "lp")
    abstraction = abstract_forward(model, elem, provider)
    record = {"verdict": None, "label": true_label, "method": args.method,
              "bounds": {}, "epochs": {}}
    if args.method == "lp":
        for adv, bound in lp_bounds(abstraction, true_label, adversaries).items():
            record["bounds"][str(adv)] = bound
            record["epochs"][str(adv)] = 0
        certified = all(b > 0.0 for b in record["bounds"].values())
    else:
        task = CertificationTask(
            abstraction, true_label, adversaries, max_epoch=args.epochs,
            lr=args.lr, lr_decay=args.lr_decay, optimizer=args.optimizer,
            init=args.init, seed=args.seed)
        result = certify(task)
        for r in result.labels:
            record["bounds"][str(r.label)] = r.bound
            record["epochs"][str(r.label)] = r.epochs
        certified = result.certified
    record["verdict"] = "certified" if certified else "not_certified"
    return record


# ---------------------------------------------------------------------------
# Falsification
# ---------------------------------------------------------------------------

def _margin(model: ModelSpec, flat: np.ndarray, shape, label: int) -> float:
    logits = concrete_forward(model, flat.reshape(shape))
    others = np.delete(logits, label)
    return float(logits[label] - others.max())


def falsify(model: ModelSpec, inp: np.ndarray, threat: ThreatModel,
            label: int, budget: int = 200, seed: int = 0) -> np.ndarray | None:
    """Random probing followed by endpoint coordinate descent inside the
    perturbation box; returns a misclassified in-region input or None."""
    inp = np.asarray(inp, dtype=float)
    elem = build_input_element(model, inp, threat)
    lo = np.array([elem.box(i).lo for i in range(len(elem))])
    hi = np.array([elem.box(i).hi for i in range(len(elem))])
    shape = inp.shape
    rng = np.random.default_rng(seed)

    best_x = inp.ravel().copy()
    best_m = _margin(model, best_x, shape, label)
    if best_m < 0.0:
        return best_x.reshape(shape)
    for _ in range(max(budget, 1)):
        x = rng.uniform(lo, hi)
        m = _margin(model, x, shape, label)
        if m < best_m:
            best_m, best_x = m, x
            if m < 0.0:
                return x.reshape(shape)
    free = np.nonzero(hi > lo)[0]
    for _ in range(3):
        improved = False
        for i in free:
            base = best_x[i]
            for cand in (lo[i], hi[i]):
                if cand == base:
                    continue
                trial = best_x.copy()
                trial[i] = cand
                m = _margin(model, trial, shape, label)
                if m < best_m:
                    best_m, best_x = m, trial
                    improved = True
                    if m < 0.0:
                        return trial.reshape(shape)
        if not improved:
            break
    return None


# ---------------------------------------------------------------------------
# Subcommand drivers
# ---------------------------------------------------------------------------

def _emit(records: list[dict], footer: dict, args) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    lines.append(json.dumps({"aggregate": footer}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["example", "verdict", "adversary", "bound", "epochs"])
            for k, r in enumerate(records):
                bounds = r.get("bounds") or {"": ""}
                for adv in sorted(bounds):
                    w.writerow([k, r["verdict"], adv, bounds.get(adv, ""),
                                (r.get("epochs") or {}).get(adv, "")])


def _run_batch(args) -> tuple[list[dict], dict]:
    import time
    model = load_model(args.model)
    threat = make_threat(args)
    inputs = [load_input(p) for p in args.input]

    def work(pair):
        inp, label = pair
        start = time.monotonic()
        rec = certify_one(model, inp, label, threat, args)
        if args.timing:
            rec["wall_time_s"] = time.monotonic() - start
        return rec

    if args.jobs > 1 and len(inputs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            records = list(ex.map(work, inputs))  # input order preserved
    else:
        records = [work(pair) for pair in inputs]
    attempted = [r for r in records if r["verdict"] != "misclassified"]
    n_cert = sum(r["verdict"] == "certified" for r in attempted)
    footer = {"attempted": len(attempted),
              "certified": n_cert,
              "certified_pct": (100.0 * n_cert / len(attempted)
                                if attempted else 0.0),
              "misclassified": len(records) - len(attempted)}
    if args.timing:
        footer["mean_time_s"] = (float(np.mean([r["wall_time_s"]
                                                for r in records]))
                                 if records else 0.0)
    return records, footer


def cmd_certify(args) -> int:
    records, footer = _run_batch(args)
    _emit(records, footer, args)
    attempted = [r for r in records if r["verdict"] != "misclassified"]
    if attempted and all(r["verdict"] == "certified" for r in attempted):
        return EXIT_CERTIFIED
    return EXIT_NOT_CERTIFIED


def cmd_bench(args) -> int:
    records, footer = _run_batch(args)
    _emit(records, footer, args)
    return EXIT_CERTIFIED


def _certified_at(model, inp, label, args, eps: float) -> dict:
    probe_args = argparse.Namespace(**vars(args))
    if args.db is not None:
        probe_args.db = eps
    else:
        probe_args.eps = eps
    threat = make_threat(probe_args)
    return certify_one(model, inp, label, threat, probe_args)


def cmd_max_eps(args) -> int:
    if not args.lo < args.hi:
        raise ValueError("--lo must be below --hi")
    model = load_model(args.model)
    inp, label = load_input(args.input[0])
    transcript = []

    def probe(eps: float) -> bool:
        rec = _certified_at(model, inp, label, args, eps)
        if rec["verdict"] == "misclassified":
            raise ValueError("input is misclassified; max-eps is undefined")
        ok = rec["verdict"] == "certified"
        transcript.append({"eps": eps, "certified": ok,
                           "bounds": rec["bounds"]})
        return ok

    lo, hi = args.lo, args.hi
    if probe(hi):
        result = hi              # saturated search
    elif not probe(lo):
        result = None            # nothing certifiable in the bracket
    else:
        while hi - lo > args.tol:
            mid = 0.5 * (lo + hi)
            if probe(mid):
                lo = mid
            else:
                hi = mid
        result = lo
    footer = {"max_eps": result, "lo": args.lo, "hi": args.hi,
              "tol": args.tol, "probes": len(transcript)}
    _emit(transcript, footer, args)
    return EXIT_CERTIFIED if result is not None else EXIT_NOT_CERTIFIED


def cmd_falsify(args) -> int:
    model = load_model(args.model)
    inp, label = load_input(args.input[0])
    threat = make_threat(args)
    if label is None:
        label = int(np.argmax(concrete_forward(model, inp)))
    found = falsify(model, inp, threat, label, budget=args.budget,
                    seed=args.seed)
    if found is None:
        _emit([], {"counterexample": None, "budget": args.budget}, args)
        return EXIT_CERTIFIED
    logits = concrete_forward(model, found)
    rec = {"counterexample": found.ravel().tolist(),
           "predicted": int(np.argmax(logits)), "label": label}
    _emit([rec], {"counterexample": "found", "budget": args.budget}, args)
    return EXIT_NOT_CERTIFIED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"certify": cmd_certify, "max-eps": cmd_max_eps,
                   "falsify": cmd_falsify, "bench": cmd_bench}[args.command]
        return handler(args)
    except (ModelFormatError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
