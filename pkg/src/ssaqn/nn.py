"""Siamese state-action Q-network in plain numpy.

Shared embedding and LSTM trunk, one tanh dense head per branch and a cosine
similarity on top. Sequences arrive as left-padded index matrices of shape
(batch, time); padded steps are run through the LSTM like any other token.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointIOError, FormatVersionMismatch, IndexOutOfVocab, ShapeMismatch
from .textproc import PAD_INDEX, Vocabulary

GATES = ("i", "f", "o", "g")
NORM_GUARD = 1e-8
CHECKPOINT_FORMAT = "ssaqn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    vocab_size: int
    embedding_dim: int = 16
    lstm_dim: int = 32
    dense_dim: int = 8

    def __post_init__(self):
        for name in ("vocab_size", "embedding_dim", "lstm_dim", "dense_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        e, h, d = self.embedding_dim, self.lstm_dim, self.dense_dim
        shapes = {"E": (self.vocab_size, e)}
        for g in GATES:
            shapes[f"W_{g}"] = (e, h)
        for g in GATES:
            shapes[f"U_{g}"] = (h, h)
        for g in GATES:
            shapes[f"b_{g}"] = (h,)
        shapes.update({"W_s": (h, d), "b_s": (d,), "W_a": (h, d), "b_a": (d,)})
        return shapes


class Parameters(dict):
    """Named weight tensors (float64), keyed as in ``NetworkConfig.shapes``."""

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.items()})

    def count(self) -> int:
        return sum(v.size for v in self.values())

    def stacked(self):
        """Gate kernels concatenated along the output axis, order i, f, o, g."""
        W = np.concatenate([self[f"W_{g}"] for g in GATES], axis=1)
        U = np.concatenate([self[f"U_{g}"] for g in GATES], axis=1)
        b = np.concatenate([self[f"b_{g}"] for g in GATES])
        return W, U, b


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _orthogonal(rng, rows, cols):
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_params(config: NetworkConfig, seed) -> Parameters:
    """Glorot-uniform kernels, orthogonal recurrent kernels, forget bias 1."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e, h, d = config.embedding_dim, config.lstm_dim, config.dense_dim
    p = Parameters()
    p["E"] = _glorot(rng, config.vocab_size, e)
    W = _glorot(rng, e, 4 * h)
    U = _orthogonal(rng, h, 4 * h)
    for k, g in enumerate(GATES):
        p[f"W_{g}"] = W[:, k * h:(k + 1) * h].copy()
        p[f"U_{g}"] = U[:, k * h:(k + 1) * h].copy()
        p[f"b_{g}"] = np.ones(h) if g == "f" else np.zeros(h)
    p["W_s"] = _glorot(rng, h, d)
    p["b_s"] = np.zeros(d)
    p["W_a"] = _glorot(rng, h, d)
    p["b_a"] = np.zeros(d)
    return Parameters({k: p[k] for k in config.shapes()})


def zero_grads(params: Parameters) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# LSTM


def lstm_step(params: Parameters, x_t, h_prev, c_prev, stacked=None):
    """One LSTM step on a (batch, embedding) input; returns h, c and gate cache."""
    W, U, b = stacked if stacked is not None else params.stacked()
    n = h_prev.shape[-1]
    z = x_t @ W + h_prev @ U + b
    i = _sigmoid(z[..., :n])
    f = _sigmoid(z[..., n:2 * n])
    o = _sigmoid(z[..., 2 * n:3 * n])
    g = np.tanh(z[..., 3 * n:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g, tc, h_prev, c_prev)


def _check_indices(X, vocab_size):
    if X.size and (X.min() < 0 or X.max() >= vocab_size):
        raise IndexOutOfVocab(f"token index outside [0, {vocab_size})")


def encode_forward(params: Parameters, X: np.ndarray, mask_padding: bool = False):
    """Run index matrix ``X`` (batch, time) through embedding and LSTM."""
    X = np.asarray(X, dtype=np.int64)
    if X.ndim == 1:
        X = X[None, :]
    E = params["E"]
    _check_indices(X, E.shape[0])
    stacked = params.stacked()
    n = params["b_i"].shape[0]
    h = np.zeros((X.shape[0], n))
    c = np.zeros((X.shape[0], n))
    emb = E[X]
    steps = []
    masks = []
    for t in range(X.shape[1]):
        h_new, c_new, gates = lstm_step(params, emb[:, t], h, c, stacked)
        if mask_padding:
            m = (X[:, t] != PAD_INDEX)[:, None].astype(np.float64)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            masks.append(m)
        else:
            h, c = h_new, c_new
        steps.append(gates)
    return h, {"X": X, "emb": emb, "steps": steps, "stacked": stacked, "masks": masks}


def encode_backward(params: Parameters, cache, dh: np.ndarray, grads) -> None:
    """BPTT from the gradient of the final hidden state; accumulates into grads."""
    W, U, _ = cache["stacked"]
    n = dh.shape[1]
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * n)
    dc = np.zeros_like(dh)
    X, emb = cache["X"], cache["emb"]
    dE = grads["E"]
    masks = cache["masks"]
    for t in range(len(cache["steps"]) - 1, -1, -1):
        i, f, o, g, tc, h_prev, c_prev = cache["steps"][t]
        if masks:
            m = masks[t]
            dh_skip, dc_skip = (1.0 - m) * dh, (1.0 - m) * dc
            dh, dc = m * dh, m * dc
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), do * o * (1.0 - o), dc * i * (1.0 - g * g)],
            axis=1,
        )
        dW += emb[:, t].T @ dz
        dU += h_prev.T @ dz
        db += dz.sum(axis=0)
        np.add.at(dE, X[:, t], dz @ W.T)
        dh = dz @ U.T
        dc = dc * f
        if masks:
            dh = dh + dh_skip
            dc = dc + dc_skip
    for k, gate in enumerate(GATES):
        sl = slice(k * n, (k + 1) * n)
        grads[f"W_{gate}"] += dW[:, sl]
        grads[f"U_{gate}"] += dU[:, sl]
        grads[f"b_{gate}"] += db[sl]


# ---------------------------------------------------------------------------
# branches and the cosine head


def branch_forward(params: Parameters, X, head: str, mask_padding: bool = False):
    """Dense tanh head ``head`` ('s' or 'a') on top of the shared trunk."""
    h, enc = encode_forward(params, X, mask_padding)
    out = np.tanh(h @ params[f"W_{head}"] + params[f"b_{head}"])
    return out, {"enc": enc, "h": h, "out": out, "head": head}


def branch_backward(params, cache, dout, grads) -> None:
    head = cache["head"]
    dpre = dout * (1.0 - cache["out"] ** 2)
    grads[f"W_{head}"] += cache["h"].T @ dpre
    grads[f"b_{head}"] += dpre.sum(axis=0)
    encode_backward(params, cache["enc"], dpre @ params[f"W_{head}"].T, grads)


def cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity with an additive guard on each norm."""
    nx = np.sqrt((x * x).sum(axis=-1)) + NORM_GUARD
    ny = np.sqrt((y * y).sum(axis=-1)) + NORM_GUARD
    return (x * y).sum(axis=-1) / (nx * ny)


def _cosine_backward(x, y, dcs):
    rx = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    ry = np.sqrt((y * y).sum(axis=-1, keepdims=True))
    nx, ny = rx + NORM_GUARD, ry + NORM_GUARD
    dot = (x * y).sum(axis=-1, keepdims=True)
    ux = np.divide(x, rx, out=np.zeros_like(x), where=rx > 0)
    uy = np.divide(y, ry, out=np.zeros_like(y), where=ry > 0)
    dcs = dcs[:, None]
    dx = dcs * (y / (nx * ny) - dot * ux / (nx * nx * ny))
    dy = dcs * (x / (nx * ny) - dot * uy / (nx * ny * ny))
    return dx, dy


@dataclass
class ForwardCache:
    state: dict
    action: dict
    x: np.ndarray
    y: np.ndarray
    cs: np.ndarray


def ssaqn_forward_batch(params: Parameters, states, actions, mask_padding: bool = False):
    """Cosine scores for a batch of padded (state, action) index matrices."""
    x, sc = branch_forward(params, states, "s", mask_padding)
    y, ac = branch_forward(params, actions, "a", mask_padding)
    if x.shape[0] != y.shape[0]:
        raise ValueError("state and action batches differ in size")
    cs = cosine(x, y)
    assert np.all(np.abs(cs) <= 1.0), "cosine outside [-1, 1]"
    return cs, ForwardCache(sc, ac, x, y, cs)


def ssaqn_forward(params: Parameters, state_indices, action_indices):
    """Score of a single state/action pair."""
    cs, cache = ssaqn_forward_batch(params, np.atleast_2d(state_indices), np.atleast_2d(action_indices))
    return float(cs[0]), cache


def ssaqn_backward(params: Parameters, cache: ForwardCache, dcs) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dcs * cs)`` with respect to every parameter."""
    dcs = np.broadcast_to(np.asarray(dcs, dtype=np.float64), cache.cs.shape)
    grads = zero_grads(params)
    dx, dy = _cosine_backward(cache.x, cache.y, dcs)
    branch_backward(params, cache.state, dx, grads)
    branch_backward(params, cache.action, dy, grads)
    return grads


def mse_loss(cs: np.ndarray, targets: np.ndarray):
    """Mean squared error against constant targets, plus its gradient in cs."""
    diff = np.asarray(targets, dtype=np.float64) - cs
    return float(np.mean(diff * diff)), -2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    rho: float = 0.9
    eps: float = 1e-7
    accumulators: dict = field(default_factory=dict)


def rmsprop_step(params: Parameters, state: OptimizerState, grads, lr: float) -> Parameters:
    """In-place RMSProp update; returns ``params`` for convenience."""
    for name, g in grads.items():
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(g)
        acc *= state.rho
        acc += (1.0 - state.rho) * g * g
        params[name] -= lr * g / (np.sqrt(acc) + state.eps)
    return params


# ---------------------------------------------------------------------------
# checkpoints


def _encode_tensor(a: np.ndarray) -> dict:
    raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(raw).decode("ascii")}


def _decode_tensor(name, raw) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in raw["shape"])
        data = base64.b64decode(raw["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"tensor {name!r} is malformed") from exc
    expected = int(np.prod(shape)) * 8
    if len(data) != expected:
        raise FormatVersionMismatch(f"tensor {name!r} holds {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(params: Parameters, vocab: Vocabulary, config: NetworkConfig, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "vocabulary": vocab.tokens,
        "tensors": {name: _encode_tensor(params[name]) for name in config.shapes()},
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, expected: Optional[NetworkConfig] = None):
    """Load ``(params, vocab, config)``; optionally require a given config."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatVersionMismatch(f"{path} is not a complete checkpoint") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatVersionMismatch(f"{path} is not an SSAQN checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    try:
        config = NetworkConfig(**doc["config"])
        vocab = Vocabulary.from_tokens(doc["vocabulary"])
        tensors = doc["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"checkpoint {path} is missing fields") from exc
    if vocab.size != config.vocab_size:
        raise ShapeMismatch(f"vocabulary has {vocab.size} entries but config says {config.vocab_size}")

    want = (expected or config).shapes()
    params = Parameters()
    for name, shape in want.items():
        if name not in tensors:
            raise ShapeMismatch(f"tensor {name!r} missing from checkpoint")
        arr = _decode_tensor(name, tensors[name])
        if arr.shape != shape:
            raise ShapeMismatch(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        params[name] = arr
    return params, vocab, config
