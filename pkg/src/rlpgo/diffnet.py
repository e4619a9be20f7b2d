"""Small numpy network toolkit: dense and LSTM layers with hand-written backward passes.

Every forward returns a cache; the matching backward consumes it, accumulates
parameter gradients into a :class:`ParameterBlock` and returns input gradients.
Sequences are laid out time-major, ``(T, B, features)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_EPS = 1e-6
CHECKPOINT_FORMAT = "rlpgo-ckpt-1"


class ParameterBlock:
    """Named parameter tensors stored in one flat vector, with a matching gradient vector."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], dtype=np.float64):
        self.shapes = {k: tuple(v) for k, v in shapes.items()}
        self._slices = {}
        off = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = slice(off, off + size)
            off += size
        self.values = np.zeros(off, dtype=dtype)
        self.grads = np.zeros(off, dtype=dtype)

    @property
    def size(self) -> int:
        return self.values.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[self._slices[name]].reshape(self.shapes[name])

    def grad(self, name: str) -> np.ndarray:
        return self.grads[self._slices[name]].reshape(self.shapes[name])

    def __contains__(self, name):
        return name in self.shapes

    def names(self):
        return list(self.shapes)

    def zero_grad(self):
        self.grads[:] = 0.0

    def copy(self) -> ParameterBlock:
        other = ParameterBlock(self.shapes, self.values.dtype)
        other.values[:] = self.values
        return other

    def load_values(self, values: np.ndarray):
        if values.shape != self.values.shape:
            raise ValueError(f"expected {self.values.shape} values, got {values.shape}")
        self.values[:] = values


def kaiming_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """He-normal weights, N(0, 2 / fan_in)."""
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 3.0e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParameterBlock | np.ndarray, **kw) -> AdamState:
        size = params.size
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(params: ParameterBlock, state: AdamState) -> None:
    """Bias-corrected Adam update of ``params.values`` from ``params.grads`` (grads left as is)."""
    g = params.grads
    state.step_count += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1**state.step_count)
    vhat = state.v / (1.0 - state.beta2**state.step_count)
    params.values -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def ema_update(target: ParameterBlock, online: ParameterBlock, tau: float = 1.0e-2) -> None:
    target.values *= 1.0 - tau
    target.values += tau * online.values


# --- activations -------------------------------------------------------------------


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_ACTS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, y: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, y: 1.0 - y * y),
    "identity": (lambda z: z, lambda z, y: np.ones_like(z)),
}


# --- dense -------------------------------------------------------------------------


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, act: str = "identity"):
    """``y = act(x W^T + b)`` over the last axis of ``x``. Returns ``(y, cache)``."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"input has {x.shape[-1]} features, layer expects {W.shape[1]}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {W.shape[0]} outputs")
    fn, _ = _ACTS[act]
    z = x @ W.T + b
    y = fn(z)
    return y, (W, x, z, y, act)


def dense_backward(dy: np.ndarray, cache):
    """Returns ``(dx, dW, db)``."""
    W, x, z, y, act = cache
    dz = dy * _ACTS[act][1](z, y)
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    return dz @ W, dz2.T @ x2, dz2.sum(axis=0)


# --- LSTM --------------------------------------------------------------------------


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, batch: int, hidden: int, dtype=np.float64) -> LSTMState:
        return cls(np.zeros((batch, hidden), dtype), np.zeros((batch, hidden), dtype))

    def copy(self) -> LSTMState:
        return LSTMState(self.h.copy(), self.c.copy())


def lstm_step(Wx, Wh, b, x, state: LSTMState):
    """One LSTM cell step (gate order: input, forget, output, candidate)."""
    L = Wh.shape[0]
    if x.shape[-1] != Wx.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} features, cell expects {Wx.shape[0]}")
    if state.h.shape[-1] != L or state.c.shape[-1] != L:
        raise ValueError("state width does not match the cell")
    z = x @ Wx + state.h @ Wh + b
    i = sigmoid(z[:, :L])
    f = sigmoid(z[:, L:2 * L])
    o = sigmoid(z[:, 2 * L:3 * L])
    g = np.tanh(z[:, 3 * L:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, LSTMState(h, c), (i, f, o, g, tc)


def lstm_forward(Wx, Wh, b, X, state: LSTMState):
    """Unroll over ``X`` of shape (T, B, in). Returns ``(H, final_state, cache)``."""
    T = X.shape[0]
    L = Wh.shape[0]
    H = np.empty((T, X.shape[1], L), dtype=X.dtype)
    gates, hs, cs = [], [state.h], [state.c]
    st = state
    for t in range(T):
        h, st, gate = lstm_step(Wx, Wh, b, X[t], st)
        H[t] = h
        gates.append(gate)
        hs.append(st.h)
        cs.append(st.c)
    return H, st, (Wx, Wh, X, gates, hs, cs)


def lstm_backward(dH, cache, dh_last=None, dc_last=None):
    """BPTT through an unrolled LSTM. Returns ``(dX, dWx, dWh, db, dh0, dc0)``."""
    Wx, Wh, X, gates, hs, cs = cache
    T = X.shape[0]
    dX = np.zeros_like(X)
    dWx, dWh = np.zeros_like(Wx), np.zeros_like(Wh)
    db = np.zeros(Wx.shape[1], dtype=X.dtype)
    dh_next = np.zeros_like(hs[0]) if dh_last is None else dh_last.copy()
    dc_next = np.zeros_like(cs[0]) if dc_last is None else dc_last.copy()
    for t in reversed(range(T)):
        i, f, o, g, tc = gates[t]
        dh = dH[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * cs[t]
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1
        )
        dWx += X[t].T @ dz
        dWh += hs[t].T @ dz
        db += dz.sum(axis=0)
        dX[t] = dz @ Wx.T
        dh_next = dz @ Wh.T
        dc_next = dc * f
    return dX, dWx, dWh, db, dh_next, dc_next


# --- tanh-squashed Gaussian ---------------------------------------------------------


def clamp_log_std(raw):
    return np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)


def tanh_gaussian_logprob(mu, log_std, u):
    """Log-density of ``a = tanh(u)`` for ``u ~ N(mu, exp(log_std)^2)``, summed over the last axis."""
    log_std = clamp_log_std(log_std)
    std = np.exp(log_std)
    z = (u - mu) / std
    gauss = -0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi)
    squash = np.log(1.0 - np.tanh(u) ** 2 + SQUASH_EPS)
    return np.sum(gauss - squash, axis=-1)


def tanh_gaussian_sample(mu, log_std, eps):
    """Reparameterised draw ``u = mu + std * eps``. Returns ``(u, a, logp, cache)``."""
    log_std = clamp_log_std(log_std)
    std = np.exp(log_std)
    u = mu + std * eps
    a = np.tanh(u)
    logp = np.sum(-0.5 * eps * eps - log_std - 0.5 * math.log(2 * math.pi) - np.log(1.0 - a * a + SQUASH_EPS), axis=-1)
    return u, a, logp, (std, eps, a)


def tanh_gaussian_backward(dlogp, da, cache, raw_log_std=None):
    """Gradients w.r.t. ``mu`` and ``log_std`` given upstream grads on ``logp`` and ``a``.

    ``raw_log_std`` (pre-clamp) zeroes the log_std gradient where the clamp is active.
    """
    std, eps, a = cache
    one_m = 1.0 - a * a
    # d logp / du = 2 a (1 - a^2) / (1 - a^2 + eps)
    dlogp_du = 2.0 * a * one_m / (one_m + SQUASH_EPS)
    du = dlogp[..., None] * dlogp_du + da * one_m
    dmu = du
    dlog_std = du * std * eps - dlogp[..., None]
    if raw_log_std is not None:
        dlog_std = dlog_std * ((raw_log_std >= LOG_STD_MIN) & (raw_log_std <= LOG_STD_MAX))
    return dmu, dlog_std


# --- recurrent networks ---------------------------------------------------------------


class RecurrentNet:
    """``dense(hidden, relu) -> LSTM(lstm) -> linear heads`` over a time-major sequence.

    ``heads`` maps head name to output width.
    """

    def __init__(self, in_dim: int, hidden: int, lstm: int, heads: dict[str, int], rng=None):
        self.in_dim, self.hidden, self.lstm = in_dim, hidden, lstm
        self.heads = dict(heads)
        shapes = {
            "fc.W": (hidden, in_dim), "fc.b": (hidden,),
            "lstm.Wx": (hidden, 4 * lstm), "lstm.Wh": (lstm, 4 * lstm), "lstm.b": (4 * lstm,),
        }
        for h, k in self.heads.items():
            shapes[f"{h}.W"] = (k, lstm)
            shapes[f"{h}.b"] = (k,)
        self.params = ParameterBlock(shapes)
        if rng is not None:
            self.init(rng)

    def init(self, rng: np.random.Generator):
        p = self.params
        p["fc.W"][...] = kaiming_init(p.shapes["fc.W"], self.in_dim, rng)
        p["lstm.Wx"][...] = kaiming_init(p.shapes["lstm.Wx"], self.hidden, rng)
        p["lstm.Wh"][...] = kaiming_init(p.shapes["lstm.Wh"], self.lstm, rng)
        for h in self.heads:
            p[f"{h}.W"][...] = kaiming_init(p.shapes[f"{h}.W"], self.lstm, rng)
        for name in p.names():
            if name.endswith(".b"):
                p[name][...] = 0.0

    def initial_state(self, batch: int = 1) -> LSTMState:
        return LSTMState.zeros(batch, self.lstm)

    def forward(self, X: np.ndarray, state: LSTMState | None = None, params: ParameterBlock | None = None):
        """Run the network; ``params`` substitutes another block of the same layout (e.g. a target copy)."""
        p = self.params if params is None else params
        if state is None:
            state = self.initial_state(X.shape[1])
        a1, c1 = dense_forward(p["fc.W"], p["fc.b"], X, "relu")
        H, final, c2 = lstm_forward(p["lstm.Wx"], p["lstm.Wh"], p["lstm.b"], a1, state)
        outs, hc = {}, {}
        for h in self.heads:
            outs[h], hc[h] = dense_forward(p[f"{h}.W"], p[f"{h}.b"], H, "identity")
        return outs, final, (c1, c2, hc)

    def backward(self, douts: dict[str, np.ndarray], cache, accumulate: bool = True) -> np.ndarray:
        """Backprop head gradients; returns dX. Parameter grads are added unless ``accumulate`` is false."""
        p = self.params
        c1, c2, hc = cache
        dH = None
        for h, dy in douts.items():
            dHh, dW, db = dense_backward(dy, hc[h])
            dH = dHh if dH is None else dH + dHh
            if accumulate:
                p.grad(f"{h}.W")[...] += dW
                p.grad(f"{h}.b")[...] += db
        da1, dWx, dWh, db, _, _ = lstm_backward(dH, c2)
        dX, dW, dbf = dense_backward(da1, c1)
        if accumulate:
            p.grad("lstm.Wx")[...] += dWx
            p.grad("lstm.Wh")[...] += dWh
            p.grad("lstm.b")[...] += db
            p.grad("fc.W")[...] += dW
            p.grad("fc.b")[...] += dbf
        return dX


# --- checkpoints ------------------------------------------------------------------------


def save_checkpoint(path, blocks: dict[str, ParameterBlock], meta: dict | None = None) -> None:
    """One ``.npz`` holding each block's flat values, its shape table and a format tag."""
    arrays = {"__format__": np.array(CHECKPOINT_FORMAT)}
    header = {}
    for name, blk in blocks.items():
        arrays[f"{name}/values"] = blk.values
        header[name] = {k: list(v) for k, v in blk.shapes.items()}
    arrays["__shapes__"] = np.array(json.dumps(header))
    arrays["__meta__"] = np.array(json.dumps(meta or {}))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, ParameterBlock], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        fmt = str(z["__format__"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {fmt!r}")
        header = json.loads(str(z["__shapes__"]))
        meta = json.loads(str(z["__meta__"]))
        blocks = {}
        for name, shapes in header.items():
            blk = ParameterBlock({k: tuple(v) for k, v in shapes.items()})
            blk.load_values(z[f"{name}/values"])
            blocks[name] = blk
    return blocks, meta
