"""Model representation, LSTM composition into the abstract domain, speech
preprocessing in matrix form, and threat models.

Models are stored as plain JSON ("polycert-model/1") with explicit row-major
weight arrays so fixtures stay bit-exact and diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .domain import AbstractElement, affine_transformer
from .numeric import Interval, LinExpr
from .transformers import (BinaryKind, CandidateSet, Region, apply_binary,
                           apply_unary, candidates, sigmoid)

MODEL_FORMAT = "polycert-model/1"
INPUT_FORMAT = "polycert-input/1"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AffineLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != self.bias.shape[0]:
            raise ModelFormatError("affine weights/bias shape mismatch")


@dataclass(frozen=True)
class ReluLayer:
    pass


@dataclass(frozen=True)
class LSTMWeights:
    """One LSTM layer; kernels are (input_dim + hidden, hidden) with the
    concatenation order [x, h]."""
    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[0] - self.hidden_size

    def __post_init__(self):
        h = self.W_f.shape[1]
        for name in ("W_f", "W_i", "W_o", "W_c"):
            W = getattr(self, name)
            if W.shape != self.W_f.shape:
                raise ModelFormatError(f"{name} shape mismatch")
        for name in ("b_f", "b_i", "b_o", "b_c"):
            if getattr(self, name).shape != (h,):
                raise ModelFormatError(f"{name} must have length {h}")


@dataclass(frozen=True)
class PreprocSpec:
    """Log-Mel front end.  M1 fuses pre-emphasis, Hamming windowing and the
    realified DFT; M2 is the duplicated Mel filterbank applied to the squared
    spectrum.  `delta` floors the pre-log energies (also in the concrete
    semantics) so the log stays defined."""
    frame_len: int
    stride: int
    n_mel: int
    sample_rate: float
    pre_emphasis: float = 0.97
    delta: float = 1e-5

    def frame_starts(self, signal_len: int) -> list[int]:
        starts = list(range(0, signal_len - self.frame_len + 1, self.stride))
        if not starts:
            raise ValueError("signal shorter than one frame")
        return starts

    def pre_square_matrix(self) -> np.ndarray:
        """M1 with shape (frame_len, 2K): frame_row @ M1 = [re | im]."""
        N = self.frame_len
        K = N // 2 + 1
        P = np.eye(N)
        for j in range(1, N):
            P[j, j - 1] = -self.pre_emphasis
        ham = np.hamming(N)
        n = np.arange(N)
        k = np.arange(K)
        ang = 2.0 * np.pi * np.outer(k, n) / N
        C = np.vstack([np.cos(ang), -np.sin(ang)])          # (2K, N)
        return (C @ (ham[:, None] * P)).T                    # (N, 2K)

    def mel_filterbank(self) -> np.ndarray:
        """Triangular Mel filters, shape (n_mel, K)."""
        N = self.frame_len
        K = N // 2 + 1

        def to_mel(f):
            return 2595.0 * np.log10(1.0 + f / 700.0)

        def from_mel(m):
            return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

        pts = from_mel(np.linspace(0.0, to_mel(self.sample_rate / 2.0),
                                   self.n_mel + 2))
        bins = np.arange(K) * self.sample_rate / N
        fb = np.zeros((self.n_mel, K))
        for m in range(self.n_mel):
            lo, cen, hi = pts[m], pts[m + 1], pts[m + 2]
            up = (bins - lo) / max(cen - lo, 1e-12)
            down = (hi - bins) / max(hi - cen, 1e-12)
            fb[m] = np.clip(np.minimum(up, down), 0.0, None)
        return fb

    def pre_log_matrix(self) -> np.ndarray:
        """M2 with shape (2K, n_mel): squared [re | im] @ M2 = Mel energies."""
        fb = self.mel_filterbank()
        return np.vstack([fb.T, fb.T])

    def concrete(self, signal: np.ndarray) -> np.ndarray:
        """Reference log-Mel features, shape (frames, n_mel)."""
        M1 = self.pre_square_matrix()
        M2 = self.pre_log_matrix()
        rows = []
        for s in self.frame_starts(len(signal)):
            y = signal[s:s + self.frame_len] @ M1
            pre_log = (y * y) @ M2
            rows.append(np.log(np.maximum(pre_log, self.delta)))
        return np.array(rows)


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    frame_count: int
    pre_layers: tuple          # per-frame layers before the LSTM
    lstm_layers: tuple[LSTMWeights, ...]
    post_layers: tuple         # layers on the final hidden state
    preprocess: PreprocSpec | None = None

    @property
    def hidden_size(self) -> int:
        return self.lstm_layers[0].hidden_size

    @property
    def num_classes(self) -> int:
        for layer in reversed(self.post_layers):
            if isinstance(layer, AffineLayer):
                return layer.weights.shape[0]
        return self.hidden_size

    def signal_length(self) -> int:
        if self.preprocess is None:
            raise ValueError("model has no preprocessing front end")
        p = self.preprocess
        return p.stride * (self.frame_count - 1) + p.frame_len


@dataclass(frozen=True)
class ThreatModel:
    """L_inf or decibel-relative perturbation, on all frames or a single one."""
    kind: str                  # "linf" | "db"
    eps: float
    frame: int | None = None   # None: perturb everything

    def radius(self, signal: np.ndarray) -> float:
        if self.kind == "linf":
            return float(self.eps)
        if self.kind == "db":
            peak = np.abs(signal).max()
            if peak == 0.0:
                return 0.0
            db_s = 20.0 * np.log10(peak)
            return float(10.0 ** ((self.eps + db_s) / 20.0))
        raise ValueError(f"unknown threat kind {self.kind!r}")


def db_of(signal: np.ndarray) -> float:
    """Peak level in dB: max_i 20*log10|s_i|."""
    peak = np.abs(np.asarray(signal)).max()
    if peak == 0.0:
        return -np.inf
    return float(20.0 * np.log10(peak))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _arr(obj, name):
    try:
        return np.asarray(obj, dtype=float)
    except Exception as exc:
        raise ModelFormatError(f"bad array for {name}") from exc


def model_from_dict(doc: dict) -> ModelSpec:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"expected format {MODEL_FORMAT!r}")
    pre, lstm, post = [], None, []
    for entry in doc["layers"]:
        kind = entry.get("type")
        if kind == "lstm":
            if lstm is not None:
                raise ModelFormatError("only one lstm block supported")
            layers = []
            for lw in entry["layers"]:
                layers.append(LSTMWeights(
                    W_f=_arr(lw["W_f"], "W_f"), W_i=_arr(lw["W_i"], "W_i"),
                    W_o=_arr(lw["W_o"], "W_o"), W_c=_arr(lw["W_c"], "W_c"),
                    b_f=_arr(lw["b_f"], "b_f"), b_i=_arr(lw["b_i"], "b_i"),
                    b_o=_arr(lw["b_o"], "b_o"), b_c=_arr(lw["b_c"], "b_c")))
            lstm = tuple(layers)
        elif kind == "affine":
            layer = AffineLayer(_arr(entry["weights"], "weights"),
                                _arr(entry["bias"], "bias"))
            (post if lstm is not None else pre).append(layer)
        elif kind == "relu":
            (post if lstm is not None else pre).append(ReluLayer())
        else:
            raise ModelFormatError(f"unknown layer type {kind!r}")
    if lstm is None:
        raise ModelFormatError("model contains no lstm block")
    prep = None
    if doc.get("preprocess"):
        p = doc["preprocess"]
        prep = PreprocSpec(frame_len=int(p["frame_len"]), stride=int(p["stride"]),
                           n_mel=int(p["n_mel"]), sample_rate=float(p["sample_rate"]),
                           pre_emphasis=float(p.get("pre_emphasis", 0.97)),
                           delta=float(p.get("delta", 1e-5)))
    return ModelSpec(input_dim=int(doc["input_dim"]),
                     frame_count=int(doc["frame_count"]),
                     pre_layers=tuple(pre), lstm_layers=lstm,
                     post_layers=tuple(post), preprocess=prep)


def model_to_dict(model: ModelSpec) -> dict:
    layers = []
    for layer in model.pre_layers:
        layers.append(_layer_dict(layer))
    layers.append({"type": "lstm", "hidden_size": model.hidden_size,
                   "layers": [{k: getattr(lw, k).tolist()
                               for k in ("W_f", "W_i", "W_o", "W_c",
                                         "b_f", "b_i", "b_o", "b_c")}
                              for lw in model.lstm_layers]})
    for layer in model.post_layers:
        layers.append(_layer_dict(layer))
    doc = {"format": MODEL_FORMAT, "input_dim": model.input_dim,
           "frame_count": model.frame_count, "layers": layers}
    if model.preprocess is not None:
        p = model.preprocess
        doc["preprocess"] = {"frame_len": p.frame_len, "stride": p.stride,
                             "n_mel": p.n_mel, "sample_rate": p.sample_rate,
                             "pre_emphasis": p.pre_emphasis, "delta": p.delta}
    return doc


def _layer_dict(layer):
    if isinstance(layer, AffineLayer):
        return {"type": "affine", "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist()}
    return {"type": "relu"}


def load_model(path: str | Path) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: ModelSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_input(path: str | Path) -> tuple[np.ndarray, int | None]:
    """Returns (values, label).  values is 1-D for raw signals, 2-D (T, d)
    for pre-framed feature inputs.  Raw little-endian float32 vectors are
    accepted via a JSON header next to the .f32 payload."""
    path = Path(path)
    if path.suffix == ".f32":
        header = json.loads(path.with_suffix(".json").read_text())
        data = np.fromfile(path, dtype="<f4").astype(float)
        if header.get("length") is not None and len(data) != int(header["length"]):
            raise ModelFormatError("f32 payload length disagrees with header")
        return data, header.get("label")
    doc = json.loads(path.read_text())
    if doc.get("format") not in (INPUT_FORMAT, None):
        raise ModelFormatError(f"expected input format {INPUT_FORMAT!r}")
    if "signal" in doc:
        return np.asarray(doc["signal"], dtype=float), doc.get("label")
    if "frames" in doc:
        return np.asarray(doc["frames"], dtype=float), doc.get("label")
    raise ModelFormatError("input file must contain 'signal' or 'frames'")


# ---------------------------------------------------------------------------
# Concrete execution (oracle for tests and falsification)
# ---------------------------------------------------------------------------

def _concrete_layers(layers, x: np.ndarray) -> np.ndarray:
    for layer in layers:
        if isinstance(layer, AffineLayer):
            x = layer.weights @ x + layer.bias
        else:
            x = np.maximum(x, 0.0)
    return x


def concrete_forward(model: ModelSpec, inp: np.ndarray) -> np.ndarray:
    """Logits of the concrete network for one input (raw signal or frames)."""
    if model.preprocess is not None:
        frames = model.preprocess.concrete(np.asarray(inp, dtype=float))
    else:
        frames = np.asarray(inp, dtype=float).reshape(model.frame_count, -1)
    T = model.frame_count
    if frames.shape[0] != T:
        raise ValueError(f"expected {T} frames, got {frames.shape[0]}")
    states = [(np.zeros(lw.hidden_size), np.zeros(lw.hidden_size))
              for lw in model.lstm_layers]
    h = None
    for t in range(T):
        x = _concrete_layers(model.pre_layers, frames[t])
        for li, lw in enumerate(model.lstm_layers):
            c_prev, h_prev = states[li]
            xin = np.concatenate([x, h_prev])
            f0 = xin @ lw.W_f + lw.b_f
            i0 = xin @ lw.W_i + lw.b_i
            o0 = xin @ lw.W_o + lw.b_o
            g0 = xin @ lw.W_c + lw.b_c
            c = sigmoid(f0) * c_prev + sigmoid(i0) * np.tanh(g0)
            h = sigmoid(o0) * np.tanh(c)
            states[li] = (c, h)
            x = h
    return _concrete_layers(model.post_layers, h)


# ---------------------------------------------------------------------------
# Abstract construction
# ---------------------------------------------------------------------------

@dataclass
class BinaryRecord:
    neuron_id: int
    kind: BinaryKind
    x_id: int
    y_id: int
    candidate_set: CandidateSet


@dataclass
class NetworkAbstraction:
    """Result of one abstract forward pass: the element, the output neurons,
    and one record per binary operation (for lambda refinement)."""
    element: AbstractElement
    output_ids: list[int]
    binaries: list[BinaryRecord]


class CandidatePlaneProvider:
    """Synthesizes the five-plane candidate set per binary neuron and serves
    one plane pair; pick='k0' serves the full-region plane (the LP method).

    full_only skips the four triangular subregion planes and replicates the
    full-region plane instead; cheaper, and equivalent whenever only the
    served pair is consumed (no refinement)."""

    def __init__(self, seed: int = 0, n_samples: int = 100, pick: int = 0,
                 full_only: bool = False):
        self.seed = seed
        self.n_samples = n_samples
        self.pick = pick
        self.full_only = full_only

    def __call__(self, op_index: int, kind: BinaryKind, region: Region):
        if self.full_only:
            cs = candidates(kind, region, n_samples=self.n_samples,
                            seed=self.seed, neuron_id=op_index, subregions=(0,))
        else:
            cs = candidates(kind, region, n_samples=self.n_samples,
                            seed=self.seed, neuron_id=op_index)
        return cs, cs.lower[self.pick], cs.upper[self.pick]


def build_input_element(model: ModelSpec, inp: np.ndarray,
                        threat: ThreatModel) -> AbstractElement:
    """Input neurons with boxes from the threat model.  Single-frame threats
    widen only the neurons of the targeted frame (its raw-sample window when
    a preprocessing front end is present)."""
    inp = np.asarray(inp, dtype=float)
    if model.preprocess is not None:
        flat = inp.ravel()
        if flat.shape[0] != model.signal_length():
            raise ValueError(
                f"signal length {flat.shape[0]} != {model.signal_length()}")
        radius = threat.radius(flat)
        mask = np.zeros(len(flat), dtype=bool)
        if threat.frame is None:
            mask[:] = True
        else:
            s = threat.frame * model.preprocess.stride
            mask[s:s + model.preprocess.frame_len] = True
    else:
        frames = inp.reshape(model.frame_count, model.input_dim)
        flat = frames.ravel()
        radius = threat.radius(flat)
        mask = np.zeros_like(flat, dtype=bool)
        if threat.frame is None:
            mask[:] = True
        else:
            if not 0 <= threat.frame < model.frame_count:
                raise ValueError(f"frame index {threat.frame} out of range")
            mask.reshape(model.frame_count, -1)[threat.frame] = True
    boxes = [Interval(v - radius, v + radius) if m else Interval.point(v)
             for v, m in zip(flat, mask)]
    return AbstractElement(boxes)


def preprocess_abstract(prep: PreprocSpec, elem: AbstractElement,
                        signal_ids: Sequence[Sequence[int]],
                        polyhedral: bool = True):
    """Push frame windows of signal neurons through the log-Mel stages.

    Returns (element, frame_feature_ids).  With polyhedral=False the square
    and log stages use interval-constant bounds instead of the chord/tangent
    planes (the precision baseline)."""
    M1 = prep.pre_square_matrix()
    M2 = prep.pre_log_matrix()
    frame_ids = []
    for window in signal_ids:
        # pre-square: affine
        elem = affine_transformer(elem, M1.T, np.zeros(M1.shape[1]), list(window))
        y_ids = list(range(len(elem) - M1.shape[1], len(elem)))
        # square, elementwise
        sq_ids = []
        for j in y_ids:
            elem = _unary_or_box(elem, j, "square", prep.delta, polyhedral)
            sq_ids.append(len(elem) - 1)
        # pre-log: affine
        elem = affine_transformer(elem, M2.T, np.zeros(M2.shape[1]), sq_ids)
        pl_ids = list(range(len(elem) - M2.shape[1], len(elem)))
        # delta floor, then log
        feat_ids = []
        for j in pl_ids:
            elem = apply_unary(elem, j, "floor", prep.delta)
            elem = _unary_or_box(elem, len(elem) - 1, "log", prep.delta, polyhedral)
            feat_ids.append(len(elem) - 1)
        frame_ids.append(feat_ids)
    return elem, frame_ids


def _unary_or_box(elem, src, op, delta, polyhedral):
    if polyhedral:
        return apply_unary(elem, src, op, delta)
    # interval-only variant: constant lower/upper expressions from the box
    probe = apply_unary(elem, src, op, delta)
    box = probe.box(len(probe) - 1)
    return elem.append_neurons([(LinExpr.constant(box.lo),
                                 LinExpr.constant(box.hi))], boxes=[box])


def abstract_forward(model: ModelSpec, elem: AbstractElement,
                     provider=None, polyhedral_preproc: bool = True) -> NetworkAbstraction:
    """Unroll the whole model over the abstract element.

    `provider(op_index, kind, region) -> (CandidateSet|None, lower, upper)`
    supplies the planes for every binary operation; the default synthesizes
    candidates and uses the full-region (LP) plane.
    """
    if provider is None:
        provider = CandidatePlaneProvider()
    T = model.frame_count
    if model.preprocess is not None:
        starts = model.preprocess.frame_starts(model.signal_length())
        windows = [list(range(s, s + model.preprocess.frame_len)) for s in starts]
        if len(windows) != T:
            raise ValueError("frame count disagrees with the preprocessing "
                             "configuration")
        elem, frame_ids = preprocess_abstract(model.preprocess, elem, windows,
                                              polyhedral=polyhedral_preproc)
    else:
        if len(elem) != T * model.input_dim:
            raise ValueError("input element size does not match model input")
        frame_ids = [list(range(t * model.input_dim, (t + 1) * model.input_dim))
                     for t in range(T)]

    binaries: list[BinaryRecord] = []
    op_index = 0

    def binary(elem, kind, x_id, y_id):
        nonlocal op_index
        region = Region(elem.box(x_id), elem.box(y_id))
        cs, lo, up = provider(op_index, kind, region)
        elem = apply_binary(elem, x_id, y_id, lo, up, kind)
        nid = len(elem) - 1
        if cs is not None:
            binaries.append(BinaryRecord(nid, kind, x_id, y_id, cs))
        op_index += 1
        return elem, nid

    # previous (cell, hidden) neuron ids per lstm layer; None at t=0
    states: list[tuple[list[int] | None, list[int] | None]] = [
        (None, None) for _ in model.lstm_layers]

    h_ids: list[int] = []
    for t in range(T):
        x_ids = frame_ids[t]
        for layer in model.pre_layers:
            elem, x_ids = _abstract_layer(elem, layer, x_ids)
        for li, lw in enumerate(model.lstm_layers):
            c_prev, h_prev = states[li]
            H = lw.hidden_size
            src = list(x_ids) + (list(h_prev) if h_prev is not None else [])
            gate_ids = {}
            for gname, Wg, bg in (("f", lw.W_f, lw.b_f), ("i", lw.W_i, lw.b_i),
                                  ("o", lw.W_o, lw.b_o), ("c", lw.W_c, lw.b_c)):
                rows = Wg.T if h_prev is not None else Wg[:len(x_ids)].T
                elem = affine_transformer(elem, rows, bg, src)
                gate_ids[gname] = list(range(len(elem) - H, len(elem)))
            c_ids, new_h_ids = [], []
            for n in range(H):
                elem, m2 = binary(elem, BinaryKind.SIGTANH,
                                  gate_ids["i"][n], gate_ids["c"][n])
                if c_prev is None:
                    # initial cell state is exactly zero: the forget-gate
                    # product vanishes and c == sigma(i)tanh(c~)
                    c_id = m2
                else:
                    elem, m1 = binary(elem, BinaryKind.SIGID,
                                      gate_ids["f"][n], c_prev[n])
                    elem = affine_transformer(
                        elem, np.array([[1.0, 1.0]]), np.zeros(1), [m1, m2])
                    c_id = len(elem) - 1
                elem, h_id = binary(elem, BinaryKind.SIGTANH,
                                    gate_ids["o"][n], c_id)
                c_ids.append(c_id)
                new_h_ids.append(h_id)
            states[li] = (c_ids, new_h_ids)
            x_ids = new_h_ids
        h_ids = x_ids
    out_ids = h_ids
    for layer in model.post_layers:
        elem, out_ids = _abstract_layer(elem, layer, out_ids)
    return NetworkAbstraction(elem, list(out_ids), binaries)


def _abstract_layer(elem, layer, src_ids):
    if isinstance(layer, AffineLayer):
        elem = affine_transformer(elem, layer.weights, layer.bias, src_ids)
        return elem, list(range(len(elem) - layer.weights.shape[0], len(elem)))
    out_ids = []
    for j in src_ids:
        elem = apply_unary(elem, j, "relu")
        out_ids.append(len(elem) - 1)
    return elem, out_ids
