"""Train a small LSTM digit classifier and freeze it as a test fixture.

The 8x8 digit images are scaled to [0, 1], zero-padded from 64 to 70 samples
and read as 7 frames of 10 values.  The recurrent cell matches the certifier
semantics exactly (gates f/i/o/c over the concatenation [x, h]).  The frozen
artifacts are the model JSON plus ten correctly classified test inputs.
"""

import argparse
import json
import pathlib
import sys

import numpy as np
import torch
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from polycert.network import (AffineLayer, LSTMWeights, ModelSpec,
                              concrete_forward, save_model)

FRAMES, FRAME_DIM, HIDDEN, CLASSES = 7, 10, 8, 10


class ManualLSTM(torch.nn.Module):
    def __init__(self):
        super().__init__()
        k = (FRAME_DIM + HIDDEN, HIDDEN)
        init = lambda: torch.nn.Parameter(torch.randn(*k) * 0.2)
        self.W_f, self.W_i, self.W_o, self.W_c = (init() for _ in range(4))
        self.b_f = torch.nn.Parameter(torch.ones(HIDDEN))
        self.b_i = torch.nn.Parameter(torch.zeros(HIDDEN))
        self.b_o = torch.nn.Parameter(torch.zeros(HIDDEN))
        self.b_c = torch.nn.Parameter(torch.zeros(HIDDEN))
        self.head = torch.nn.Linear(HIDDEN, CLASSES)

    def forward(self, x):                     # x: (batch, FRAMES, FRAME_DIM)
        h = torch.zeros(x.shape[0], HIDDEN)
        c = torch.zeros(x.shape[0], HIDDEN)
        for t in range(FRAMES):
            z = torch.cat([x[:, t], h], dim=1)
            f = torch.sigmoid(z @ self.W_f + self.b_f)
            i = torch.sigmoid(z @ self.W_i + self.b_i)
            o = torch.sigmoid(z @ self.W_o + self.b_o)
            c = f * c + i * torch.tanh(z @ self.W_c + self.b_c)
            h = o * torch.tanh(c)
        return self.head(h)


def frames_of(images):
    flat = images.reshape(len(images), -1) / 16.0
    padded = np.pad(flat, [(0, 0), (0, FRAMES * FRAME_DIM - flat.shape[1])])
    return padded.reshape(len(images), FRAMES, FRAME_DIM)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve()
                                         .parents[1] / "tests" / "fixtures"))
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    digits = load_digits()
    X = frames_of(digits.images)
    X_tr, X_te, y_tr, y_te = train_test_split(
        X, digits.target, train_size=1000, random_state=args.seed,
        stratify=digits.target)

    net = ManualLSTM()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    xt = torch.tensor(X_tr, dtype=torch.float32)
    yt = torch.tensor(y_tr)
    for epoch in range(args.epochs):
        perm = torch.randperm(len(xt))
        for s in range(0, len(xt), 64):
            idx = perm[s:s + 64]
            opt.zero_grad()
            loss = torch.nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
        with torch.no_grad():
            acc = (net(xt).argmax(1) == yt).float().mean().item()
        if epoch % 10 == 0 or epoch == args.epochs - 1:
            print(f"epoch {epoch:3d}  train acc {acc:.3f}")

    with torch.no_grad():
        pred_te = net(torch.tensor(X_te, dtype=torch.float32)).argmax(1).numpy()
    test_acc = float((pred_te == y_te).mean())
    print(f"test acc {test_acc:.3f}")

    g = lambda p: p.detach().numpy().astype(float)
    lw = LSTMWeights(g(net.W_f), g(net.W_i), g(net.W_o), g(net.W_c),
                     g(net.b_f), g(net.b_i), g(net.b_o), g(net.b_c))
    head = AffineLayer(g(net.head.weight), g(net.head.bias))
    model = ModelSpec(input_dim=FRAME_DIM, frame_count=FRAMES, pre_layers=(),
                      lstm_layers=(lw,), post_layers=(head,))

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "digits_lstm.json")

    # sanity: the serialized model must agree with the torch forward pass
    for k in range(5):
        ref = net(torch.tensor(X_te[k:k + 1], dtype=torch.float32))[0]
        got = concrete_forward(model, X_te[k])
        assert np.allclose(ref.detach().numpy(), got, atol=1e-5), k

    saved = 0
    for k in range(len(X_te)):
        if saved == 10:
            break
        if pred_te[k] != y_te[k]:
            continue
        doc = {"frames": X_te[k].tolist(), "label": int(y_te[k])}
        (out / f"digits_input_{saved}.json").write_text(json.dumps(doc))
        saved += 1
    print(f"wrote model + {saved} inputs to {out}")


if __name__ == "__main__":
    main()
