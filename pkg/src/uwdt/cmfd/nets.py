"""Small networks with hand-written backpropagation.

Every model keeps its parameters in a ``dict[str, ndarray]`` (float64) so
that optimisers, target copies, hashing and serialisation treat them alike.
Forward passes return a cache; backward passes take the cache and the
upstream gradient and return parameter gradients (and input gradients where
a caller needs them).
"""
from __future__ import annotations

import hashlib

import numpy as np

Params = dict[str, np.ndarray]


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _init(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(max(n_in, 1)), size=(n_out, n_in))


def copy_params(p: Params) -> Params:
    return {k: v.copy() for k, v in p.items()}


def params_hash(p: Params) -> str:
    h = hashlib.sha256()
    for k in sorted(p):
        h.update(k.encode())
        h.update(np.ascontiguousarray(p[k], dtype=np.float64).tobytes())
    return h.hexdigest()


def zeros_like(p: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in p.items()}


class Adam:
    def __init__(self, lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8, clip: float = 10.0):
        self.lr, self.b1, self.b2, self.eps, self.clip = lr, b1, b2, eps, clip
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params, ascent: bool = False) -> None:
        self.t += 1
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = min(1.0, self.clip / norm) if norm > 0 and self.clip else 1.0
        sign = 1.0 if ascent else -1.0
        for k, g in grads.items():
            g = g * scale
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            params[k] += sign * self.lr * mh / (np.sqrt(vh) + self.eps)


# -- recurrent Q network ---------------------------------------------------------------------------

class Drqn:
    """GRU cell followed by a linear head over the discrete actions.

    Inputs are (T, B, d); hidden state is (B, h); output Q is (T, B, A).
    """

    def __init__(self, n_in: int, hidden: int, n_actions: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.hidden, self.n_actions = n_in, hidden, n_actions
        h = hidden
        self.params: Params = {
            "Wz": _init(rng, h, n_in), "Uz": _init(rng, h, h), "bz": np.zeros(h),
            "Wr": _init(rng, h, n_in), "Ur": _init(rng, h, h), "br": np.zeros(h),
            "Wn": _init(rng, h, n_in), "Un": _init(rng, h, h), "bn": np.zeros(h), "bun": np.zeros(h),
            "Wq": _init(rng, n_actions, h) * 0.5, "bq": np.zeros(n_actions),
        }

    def init_hidden(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden))

    def step(self, x: np.ndarray, h: np.ndarray, params: Params | None = None):
        p = params or self.params
        z = _sig(x @ p["Wz"].T + h @ p["Uz"].T + p["bz"])
        r = _sig(x @ p["Wr"].T + h @ p["Ur"].T + p["br"])
        un = h @ p["Un"].T + p["bun"]
        n = np.tanh(x @ p["Wn"].T + p["bn"] + r * un)
        h2 = (1 - z) * n + z * h
        q = h2 @ p["Wq"].T + p["bq"]
        return q, h2, (x, h, z, r, un, n, h2)

    def forward(self, xs: np.ndarray, h0: np.ndarray | None = None, params: Params | None = None):
        T, B, _ = xs.shape
        h = self.init_hidden(B) if h0 is None else h0
        qs, caches = [], []
        for t in range(T):
            q, h, c = self.step(xs[t], h, params)
            qs.append(q)
            caches.append(c)
        return np.stack(qs), caches

    def backward(self, caches, dq: np.ndarray, params: Params | None = None) -> Params:
        p = params or self.params
        g = zeros_like(p)
        dh_next = np.zeros_like(caches[0][1])
        for t in range(len(caches) - 1, -1, -1):
            x, h, z, r, un, n, h2 = caches[t]
            g["Wq"] += dq[t].T @ h2
            g["bq"] += dq[t].sum(0)
            dh2 = dq[t] @ p["Wq"] + dh_next
            dn = dh2 * (1 - z)
            dz = dh2 * (h - n)
            dh = dh2 * z
            dan = dn * (1 - n * n)
            g["Wn"] += dan.T @ x
            g["bn"] += dan.sum(0)
            dr = dan * un
            dun = dan * r
            g["Un"] += dun.T @ h
            g["bun"] += dun.sum(0)
            dh += dun @ p["Un"]
            dar = dr * r * (1 - r)
            g["Wr"] += dar.T @ x
            g["Ur"] += dar.T @ h
            g["br"] += dar.sum(0)
            dh += dar @ p["Ur"]
            daz = dz * z * (1 - z)
            g["Wz"] += daz.T @ x
            g["Uz"] += daz.T @ h
            g["bz"] += daz.sum(0)
            dh += daz @ p["Uz"]
            dh_next = dh
        return g


# -- monotone mixer --------------------------------------------------------------------------------

def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _delu(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class Mixer:
    """Q_tot = elu(q W1 + b1) W2 + b2 with W1, W2 = |hypernet(s)|, so Q_tot is
    nondecreasing in every agent value."""

    def __init__(self, n_agents: int, state_dim: int, embed: int = 8, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(1)
        self.n, self.s, self.e = n_agents, state_dim, embed
        self.params: Params = {
            "Hw1": _init(rng, n_agents * embed, state_dim) * 0.3, "hw1": rng.normal(0, 0.3, n_agents * embed),
            "Hb1": _init(rng, embed, state_dim) * 0.3, "hb1": np.zeros(embed),
            "Hw2": _init(rng, embed, state_dim) * 0.3, "hw2": rng.normal(0, 0.3, embed),
            "V1": _init(rng, embed, state_dim) * 0.3, "v1": np.zeros(embed),
            "V2": _init(rng, 1, embed) * 0.3, "v2": np.zeros(1),
        }

    def weights(self, s: np.ndarray, params: Params | None = None):
        p = params or self.params
        a1 = s @ p["Hw1"].T + p["hw1"]
        a2 = s @ p["Hw2"].T + p["hw2"]
        return np.abs(a1).reshape(-1, self.n, self.e), np.abs(a2)

    def forward(self, q: np.ndarray, s: np.ndarray, params: Params | None = None):
        """q: (B, n), s: (B, S) -> (B,)"""
        p = params or self.params
        a1 = s @ p["Hw1"].T + p["hw1"]
        w1 = np.abs(a1).reshape(-1, self.n, self.e)
        b1 = s @ p["Hb1"].T + p["hb1"]
        pre = np.einsum("bn,bne->be", q, w1) + b1
        hid = _elu(pre)
        a2 = s @ p["Hw2"].T + p["hw2"]
        w2 = np.abs(a2)
        vh_pre = s @ p["V1"].T + p["v1"]
        vh = np.tanh(vh_pre)
        b2 = (vh @ p["V2"].T + p["v2"])[:, 0]
        out = (hid * w2).sum(1) + b2
        return out, (q, s, a1, w1, pre, hid, a2, w2, vh_pre, vh)

    def backward(self, cache, dout: np.ndarray, params: Params | None = None):
        p = params or self.params
        q, s, a1, w1, pre, hid, a2, w2, vh_pre, vh = cache
        g = zeros_like(p)
        dw2 = dout[:, None] * hid
        dhid = dout[:, None] * w2
        da2 = dw2 * np.sign(a2)
        g["Hw2"] = da2.T @ s
        g["hw2"] = da2.sum(0)
        g["V2"] = (dout[:, None] * vh).sum(0)[None, :]
        g["v2"] = np.array([dout.sum()])
        dvh = dout[:, None] * p["V2"][0][None, :] * (1 - vh * vh)
        g["V1"] = dvh.T @ s
        g["v1"] = dvh.sum(0)
        dpre = dhid * _delu(pre)
        g["Hb1"] = dpre.T @ s
        g["hb1"] = dpre.sum(0)
        dw1 = np.einsum("bn,be->bne", q, dpre)
        da1 = (dw1 * np.sign(a1.reshape(w1.shape))).reshape(len(q), -1)
        g["Hw1"] = da1.T @ s
        g["hw1"] = da1.sum(0)
        dq = np.einsum("be,bne->bn", dpre, w1)
        return g, dq


# -- feed-forward nets for the continuous branch -----------------------------------------------------

class Mlp:
    """x -> tanh(W1 x + b1) -> W2 h + b2."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        rng = rng or np.random.default_rng(2)
        self.n_in, self.hidden, self.n_out = n_in, hidden, n_out
        self.params: Params = {"W1": _init(rng, hidden, n_in), "b1": np.zeros(hidden),
                               "W2": _init(rng, n_out, hidden) * out_scale, "b2": np.zeros(n_out)}

    def forward(self, x: np.ndarray, params: Params | None = None):
        p = params or self.params
        h = np.tanh(x @ p["W1"].T + p["b1"])
        return h @ p["W2"].T + p["b2"], (x, h)

    def backward(self, cache, dy: np.ndarray, params: Params | None = None):
        p = params or self.params
        x, h = cache
        g = {"W2": dy.T @ h, "b2": dy.sum(0)}
        dpre = (dy @ p["W2"]) * (1 - h * h)
        g["W1"] = dpre.T @ x
        g["b1"] = dpre.sum(0)
        return g, dpre @ p["W1"]


class Policy:
    """Deterministic policy squashed into the action box [low, high]."""

    def __init__(self, n_in: int, hidden: int, low, high, rng: np.random.Generator | None = None):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.net = Mlp(n_in, hidden, len(self.low), rng, out_scale=0.1)

    @property
    def params(self) -> Params:
        return self.net.params

    @params.setter
    def params(self, p: Params) -> None:
        self.net.params = p

    def forward(self, x: np.ndarray, params: Params | None = None):
        y, c = self.net.forward(x, params)
        t = np.tanh(y)
        return self.low + (self.high - self.low) * (t + 1) / 2, (c, t)

    def backward(self, cache, da: np.ndarray, params: Params | None = None):
        c, t = cache
        dy = da * (self.high - self.low) / 2 * (1 - t * t)
        return self.net.backward(c, dy, params)


class Critic:
    """Centralised value Q_i(joint obs, joint action) -> scalar."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: int, rng: np.random.Generator | None = None):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.net = Mlp(obs_dim + act_dim, hidden, 1, rng)

    @property
    def params(self) -> Params:
        return self.net.params

    @params.setter
    def params(self, p: Params) -> None:
        self.net.params = p

    def forward(self, obs: np.ndarray, act: np.ndarray, params: Params | None = None):
        y, c = self.net.forward(np.concatenate([obs, act], axis=1), params)
        return y[:, 0], c

    def backward(self, cache, dq: np.ndarray, params: Params | None = None):
        g, dx = self.net.backward(cache, dq[:, None], params)
        return g, dx[:, : self.obs_dim], dx[:, self.obs_dim:]
