"""Small LSTM regressor with hand-written backpropagation through time.

The model maps a window ``[w_{k-n}, ..., w_{k-1}]`` of one metric to a
prediction of ``w_k``.  Gates are stacked as (input, forget, output, cell).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InsufficientHistory(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmModel:
    hidden: int
    n_in: int = 1
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, hidden: int = 16, n_in: int = 1, rng: np.random.Generator | None = None) -> "LstmModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        s = 1.0 / np.sqrt(hidden)
        W = rng.uniform(-s, s, size=(4 * hidden, n_in + hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        return cls(hidden, n_in, {
            "W": W, "b": b,
            "Wy": rng.uniform(-s, s, size=hidden), "by": np.zeros(1),
        })

    @classmethod
    def zeros(cls, hidden: int, n_in: int = 1) -> "LstmModel":
        return cls(hidden, n_in, {
            "W": np.zeros((4 * hidden, n_in + hidden)), "b": np.zeros(4 * hidden),
            "Wy": np.zeros(hidden), "by": np.zeros(1),
        })

    def copy(self) -> "LstmModel":
        return LstmModel(self.hidden, self.n_in, {k: v.copy() for k, v in self.params.items()})


def _as_batch(x: np.ndarray, n_in: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :, None] if n_in == 1 else x[None]
    elif x.ndim == 2:
        x = x[:, :, None] if n_in == 1 else x[None]
    return x


def _forward(model: LstmModel, x: np.ndarray):
    p = model.params
    h_dim = model.hidden
    B, n, _ = x.shape
    h = np.zeros((B, h_dim))
    c = np.zeros((B, h_dim))
    cache = []
    for t in range(n):
        z = np.concatenate([x[:, t, :], h], axis=1)
        a = z @ p["W"].T + p["b"]
        i = _sigmoid(a[:, :h_dim])
        f = _sigmoid(a[:, h_dim:2 * h_dim])
        o = _sigmoid(a[:, 2 * h_dim:3 * h_dim])
        g = np.tanh(a[:, 3 * h_dim:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((z, i, f, o, g, c_prev, tc))
    y = h @ p["Wy"] + p["by"][0]
    return y, h, cache


def lstm_forward(model: LstmModel, window) -> float | np.ndarray:
    """Prediction for one window (returns float) or a batch of windows."""
    x = np.asarray(window, dtype=float)
    single = x.ndim == 1 or (x.ndim == 2 and model.n_in > 1)
    xb = _as_batch(x, model.n_in)
    if xb.shape[1] == 0:
        raise InsufficientHistory("empty window")
    y, _, _ = _forward(model, xb)
    return float(y[0]) if single else y


def lstm_loss_and_grads(model: LstmModel, windows, targets) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared one-step error and its gradient via BPTT."""
    x = _as_batch(windows, model.n_in)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    p = model.params
    h_dim = model.hidden
    B = x.shape[0]
    y, h_last, cache = _forward(model, x)
    err = y - targets
    loss = float(np.mean(err ** 2))
    dy = 2.0 * err / B
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    grads["Wy"] = h_last.T @ dy
    grads["by"] = np.array([dy.sum()])
    dh = np.outer(dy, p["Wy"])
    dc = np.zeros((B, h_dim))
    for z, i, f, o, g, c_prev, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = np.concatenate([
            di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g ** 2),
        ], axis=1)
        grads["W"] += da.T @ z
        grads["b"] += da.sum(axis=0)
        dz = da @ p["W"]
        dh = dz[:, model.n_in:]
        dc = dc * f
    return loss, grads


def make_windows(series, n: int) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(series, dtype=float)
    if len(s) <= n:
        raise InsufficientHistory(f"need more than {n} samples, have {len(s)}")
    idx = np.arange(n)[None, :] + np.arange(len(s) - n)[:, None]
    return s[idx], s[n:]


def lstm_train(model: LstmModel, series, n: int, epochs: int, lr: float,
               max_grad_norm: float | None = 5.0) -> list[float]:
    """Full-batch gradient descent on every length-``n`` window; returns per-epoch losses."""
    windows, targets = make_windows(series, n)
    losses = []
    for _ in range(epochs):
        loss, grads = lstm_loss_and_grads(model, windows, targets)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} after {len(losses)} epochs")
        losses.append(loss)
        if lr == 0:
            continue
        if max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > max_grad_norm:
                grads = {k: g * (max_grad_norm / norm) for k, g in grads.items()}
        for k, g in grads.items():
            model.params[k] -= lr * g
    return losses
