"""Branching dueling Q-network with hand-written reverse mode.

Graph, per sample::

    lob seq (T, 20)  --LSTM-->  h_lob  \
    private seq (T, 3) -LSTM->  h_prv   +--> e = [h_lob, h_prv, m]
    macro (16) --MLP(ReLU)-->   m      /
    e --MLP--> V (1),  Adv_price (n_p),  Adv_qty (n_q),  vol_pred (1)
    Q_d = V + Adv_d - mean(Adv_d)

All tensors are float64 numpy arrays; batches are summed, never averaged,
in ``backward``.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .env import LOB_DIM, MACRO_DIM, PRIVATE_DIM, EnvState

CHECKPOINT_MAGIC = b"IRLCKPT1\n"


@dataclass(frozen=True)
class NetworkConfig:
    n_p: int = 5
    n_q: int = 11
    macro_hidden: int = 64
    macro_embed: int = 64
    lstm_hidden: int = 64
    head_hidden: int = 128
    macro_dim: int = MACRO_DIM
    lob_dim: int = LOB_DIM
    private_dim: int = PRIVATE_DIM

    @property
    def embed_dim(self) -> int:
        return 2 * self.lstm_hidden + self.macro_embed

    def shapes(self) -> dict[str, tuple]:
        H, E, Hh = self.lstm_hidden, self.embed_dim, self.head_hidden
        shapes = {
            "macro_w1": (self.macro_dim, self.macro_hidden),
            "macro_b1": (self.macro_hidden,),
            "macro_w2": (self.macro_hidden, self.macro_embed),
            "macro_b2": (self.macro_embed,),
            "lob_w": (self.lob_dim + H, 4 * H),
            "lob_b": (4 * H,),
            "prv_w": (self.private_dim + H, 4 * H),
            "prv_b": (4 * H,),
        }
        for head, out in (("value", 1), ("price", self.n_p), ("qty", self.n_q), ("aux", 1)):
            shapes[f"{head}_w1"] = (E, Hh)
            shapes[f"{head}_b1"] = (Hh,)
            shapes[f"{head}_w2"] = (Hh, out)
            shapes[f"{head}_b2"] = (out,)
        return shapes


Params = dict  # name -> np.ndarray, in NetworkConfig.shapes() order


def init_params(config: NetworkConfig, seed: int) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights and biases, seeded."""
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = None
    for name, shape in config.shapes().items():
        if len(shape) == 2:
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, shape)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


@dataclass
class StateBatch:
    macro: np.ndarray      # (B, 16)
    lob_seq: np.ndarray    # (B, T, 20)
    private_seq: np.ndarray  # (B, T, 3)

    def __len__(self) -> int:
        return self.macro.shape[0]

    @classmethod
    def from_states(cls, states: Sequence[EnvState]) -> "StateBatch":
        return cls(
            np.stack([s.macro for s in states]),
            np.stack([s.micro_lob_seq for s in states]),
            np.stack([s.micro_private_seq for s in states]),
        )

    def take(self, idx) -> "StateBatch":
        return StateBatch(self.macro[idx], self.lob_seq[idx], self.private_seq[idx])


@dataclass
class ForwardOutput:
    q_price: np.ndarray   # (B, n_p)
    q_qty: np.ndarray     # (B, n_q)
    v: np.ndarray         # (B,)
    vol_pred: np.ndarray  # (B,)
    embedding: np.ndarray  # (B, E)
    adv_price: np.ndarray = field(repr=False, default=None)
    adv_qty: np.ndarray = field(repr=False, default=None)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_forward(w, b, xs):
    B, T, n_in = xs.shape
    H = b.shape[0] // 4
    w_h = w[n_in:]
    ax = xs @ w[:n_in] + b  # input projection for every step at once
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        a = ax[:, t] + h @ w_h
        s = _sigmoid(a)
        i, f, o = s[:, :H], s[:, H:2 * H], s[:, 3 * H:]
        g = np.tanh(a[:, 2 * H:3 * H])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        steps.append((h, i, f, g, o, c_prev, tc))
        h = o * tc
    return h, (xs, steps)


def _lstm_backward(w, tape, dh, gw, gb):
    xs, steps = tape
    B, T, n_in = xs.shape
    w_hT = w[n_in:].T
    dc = np.zeros_like(dh)
    da_all = np.empty((B, T, w.shape[1]))
    h_all = np.empty((B, T, dh.shape[1]))
    for t in range(T - 1, -1, -1):
        h_prev, i, f, g, o, c_prev, tc = steps[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dc = dc * f
        da_all[:, t] = da
        h_all[:, t] = h_prev
        dh = da @ w_hT
    da_flat = da_all.reshape(B * T, -1)
    gw[:n_in] += xs.reshape(B * T, n_in).T @ da_flat
    gw[n_in:] += h_all.reshape(B * T, -1).T @ da_flat
    gb += da_flat.sum(axis=0)


def _head_forward(params, name, e):
    pre = e @ params[f"{name}_w1"] + params[f"{name}_b1"]
    hid = np.maximum(pre, 0.0)
    out = hid @ params[f"{name}_w2"] + params[f"{name}_b2"]
    return out, hid


def _head_backward(params, grads, name, e, hid, dout):
    grads[f"{name}_w2"] += hid.T @ dout
    grads[f"{name}_b2"] += dout.sum(axis=0)
    dhid = (dout @ params[f"{name}_w2"].T) * (hid > 0)
    grads[f"{name}_w1"] += e.T @ dhid
    grads[f"{name}_b1"] += dhid.sum(axis=0)
    return dhid @ params[f"{name}_w1"].T


@dataclass
class Tape:
    """Intermediates recorded by ``forward`` for one ``backward``."""

    batch: StateBatch
    m_hid: np.ndarray
    m_emb: np.ndarray
    lob_steps: list
    prv_steps: list
    e: np.ndarray
    head_hidden: dict


def forward(params: Params, batch: StateBatch) -> tuple[ForwardOutput, Tape]:
    macro, lob_seq, prv_seq = batch.macro, batch.lob_seq, batch.private_seq
    if macro.ndim != 2 or macro.shape[1] != params["macro_w1"].shape[0]:
        raise ValueError(f"macro input shape {macro.shape} does not match network")
    H = params["lob_b"].shape[0] // 4
    if lob_seq.ndim != 3 or lob_seq.shape[2] + H != params["lob_w"].shape[0]:
        raise ValueError(f"LOB sequence shape {lob_seq.shape} does not match network")
    Hz = params["prv_b"].shape[0] // 4
    if prv_seq.ndim != 3 or prv_seq.shape[2] + Hz != params["prv_w"].shape[0]:
        raise ValueError(f"private sequence shape {prv_seq.shape} does not match network")

    m_hid = np.maximum(macro @ params["macro_w1"] + params["macro_b1"], 0.0)
    m_emb = np.maximum(m_hid @ params["macro_w2"] + params["macro_b2"], 0.0)
    h_lob, lob_steps = _lstm_forward(params["lob_w"], params["lob_b"], lob_seq)
    h_prv, prv_steps = _lstm_forward(params["prv_w"], params["prv_b"], prv_seq)
    e = np.concatenate([h_lob, h_prv, m_emb], axis=1)

    hidden = {}
    outs = {}
    for name in ("value", "price", "qty", "aux"):
        outs[name], hidden[name] = _head_forward(params, name, e)
    v = outs["value"][:, 0]
    adv_p, adv_q = outs["price"], outs["qty"]
    q_price = v[:, None] + adv_p - adv_p.mean(axis=1, keepdims=True)
    q_qty = v[:, None] + adv_q - adv_q.mean(axis=1, keepdims=True)
    out = ForwardOutput(q_price, q_qty, v, outs["aux"][:, 0], e, adv_p, adv_q)
    return out, Tape(batch, m_hid, m_emb, lob_steps, prv_steps, e, hidden)


def backward(params: Params, tape: Tape, dq_price: np.ndarray, dq_qty: np.ndarray,
             dvol: np.ndarray) -> Params:
    """Gradients of ``sum(dq_price*Q_p) + sum(dq_qty*Q_q) + sum(dvol*vol)``."""
    if tape is None:
        raise RuntimeError("backward called without a recorded forward pass")
    grads = zeros_like_params(params)
    dq_price = np.asarray(dq_price, dtype=float)
    dq_qty = np.asarray(dq_qty, dtype=float)
    dvol = np.asarray(dvol, dtype=float).reshape(-1, 1)

    dv = dq_price.sum(axis=1, keepdims=True) + dq_qty.sum(axis=1, keepdims=True)
    d_adv_p = dq_price - dq_price.mean(axis=1, keepdims=True)
    d_adv_q = dq_qty - dq_qty.mean(axis=1, keepdims=True)

    e, hid = tape.e, tape.head_hidden
    de = _head_backward(params, grads, "value", e, hid["value"], dv)
    de += _head_backward(params, grads, "price", e, hid["price"], d_adv_p)
    de += _head_backward(params, grads, "qty", e, hid["qty"], d_adv_q)
    de += _head_backward(params, grads, "aux", e, hid["aux"], dvol)

    H = params["lob_b"].shape[0] // 4
    Hz = params["prv_b"].shape[0] // 4
    dh_lob, dh_prv, dm = de[:, :H], de[:, H:H + Hz], de[:, H + Hz:]

    dm = dm * (tape.m_emb > 0)
    grads["macro_w2"] += tape.m_hid.T @ dm
    grads["macro_b2"] += dm.sum(axis=0)
    dmh = (dm @ params["macro_w2"].T) * (tape.m_hid > 0)
    grads["macro_w1"] += tape.batch.macro.T @ dmh
    grads["macro_b1"] += dmh.sum(axis=0)

    _lstm_backward(params["lob_w"], tape.lob_steps, dh_lob, grads["lob_w"], grads["lob_b"])
    _lstm_backward(params["prv_w"], tape.prv_steps, dh_prv, grads["prv_w"], grads["prv_b"])
    return grads


class BranchingQNetwork:
    """Parameter holder that remembers its last forward pass."""

    def __init__(self, config: NetworkConfig, params: Optional[Params] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self._tape: Optional[Tape] = None

    def forward(self, batch: StateBatch) -> ForwardOutput:
        out, self._tape = forward(self.params, batch)
        return out

    def predict(self, batch: StateBatch) -> ForwardOutput:
        """Forward pass without recording a tape."""
        return forward(self.params, batch)[0]

    def backward(self, dq_price, dq_qty, dvol) -> Params:
        if self._tape is None:
            raise RuntimeError("backward called without a recorded forward pass")
        grads = backward(self.params, self._tape, dq_price, dq_qty, dvol)
        self._tape = None
        return grads

    def copy(self) -> "BranchingQNetwork":
        return BranchingQNetwork(self.config, copy_params(self.params))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam hyperparameters plus flat first and second moment buffers laid
    out in parameter order."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """Bias-corrected Adam; updates ``params`` and ``state`` in place."""
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ValueError(f"gradient shape {grads[k].shape} != parameter {k} shape {p.shape}")
    g = np.concatenate([grads[k].ravel() for k in params])
    if state.m is None:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    step = state.lr * (state.m / bc1) / (np.sqrt(state.v / bc2) + state.eps)
    offset = 0
    for p in params.values():
        p -= step[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    return params, state


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# ---------------------------------------------------------------------------
# checkpoint container


def dumps_checkpoint(params: Params, meta: dict) -> bytes:
    """Magic line, one JSON header line, then little-endian float64 tensors
    in header order."""
    header = {
        "meta": meta,
        "tensors": [[name, list(arr.shape)] for name, arr in params.items()],
    }
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    buf.write(b"\n")
    for arr in params.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_checkpoint(data: bytes) -> tuple[Params, dict]:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a checkpoint file (bad magic)")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode("utf-8"))
    blob = rest[nl + 1:]
    params, offset = {}, 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        params[name] = arr.astype(np.float64)
        offset += 8 * n
    if offset != len(blob):
        raise ValueError("checkpoint payload size mismatch")
    return params, header["meta"]


def save_checkpoint(path, params: Params, meta: dict) -> str:
    """Write the checkpoint and return its sha256 hex digest."""
    data = dumps_checkpoint(params, meta)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> tuple[Params, dict]:
    return loads_checkpoint(Path(path).read_bytes())


def network_config_dict(config: NetworkConfig) -> dict:
    return asdict(config)
