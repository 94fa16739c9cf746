"""Fully-connected ReLU classifier on a flat parameter vector.

Flat layout, layer by layer: the ``d_out x d_in`` weight matrix in row-major
order followed by the ``d_out`` bias vector. Hidden layers use ReLU (derivative
0 at 0); the last layer is linear and produces logits.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import make_rng


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    y: int


def param_count(layer_dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass
class MlpModel:
    layer_dims: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer dims {self.layer_dims}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (param_count(self.layer_dims),):
            raise ValueError(
                f"weights have shape {self.weights.shape}, expected ({param_count(self.layer_dims)},)"
            )

    @property
    def p(self) -> int:
        return self.weights.size

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    def layers(self, flat: np.ndarray | None = None):
        """(W, b) views into ``flat`` (defaults to the model weights)."""
        flat = self.weights if flat is None else flat
        out, off = [], 0
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = flat[off : off + d_in * d_out].reshape(d_out, d_in)
            off += d_in * d_out
            b = flat[off : off + d_out]
            off += d_out
            out.append((w, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_dims, self.weights.copy())


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_mlp(layer_dims: Sequence[int], seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = make_rng(seed)
    parts = []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        parts.append(rng.uniform(-limit, limit, size=d_in * d_out))
        parts.append(np.zeros(d_out))
    return MlpModel(tuple(layer_dims), np.concatenate(parts))


def _inputs(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x2 = x[None, :] if x.ndim == 1 else x
    if x2.ndim != 2 or x2.shape[1] != model.n_in:
        raise ValueError(f"input has shape {x.shape}, model expects length {model.n_in}")
    return x2


def _forward_cache(model: MlpModel, x2: np.ndarray):
    acts, pres = [x2], []
    layers = model.layers()
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        pres.append(z)
        acts.append(np.maximum(z, 0.0) if i < len(layers) - 1 else z)
    return acts, pres


def forward(model: MlpModel, x) -> np.ndarray:
    """Logits for one input (1-D) or a batch (rows)."""
    x2 = _inputs(model, x)
    logits = _forward_cache(model, x2)[0][-1]
    return logits[0] if np.ndim(x) == 1 else logits


def predict(model: MlpModel, x) -> np.ndarray:
    return np.argmax(forward(model, _inputs(model, x)), axis=1)


def _backward(model: MlpModel, acts, pres, delta: np.ndarray, per_example: bool) -> np.ndarray:
    """Backpropagate output-layer deltas. Returns (n, p) per-example gradients
    or the (p,) sum over the batch."""
    layers = model.layers()
    n = delta.shape[0]
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_prev = acts[i]
        if per_example:
            gw = (delta[:, :, None] * a_prev[:, None, :]).reshape(n, -1)
            grads.append(np.hstack([gw, delta]))
        else:
            grads.append(np.concatenate([(delta.T @ a_prev).ravel(), delta.sum(axis=0)]))
        if i:
            delta = (delta @ w) * (pres[i - 1] > 0)
    grads.reverse()
    return np.hstack(grads) if per_example else np.concatenate(grads)


def correct_logit_gradients(model: MlpModel, x, y) -> np.ndarray:
    """Rows are d f_{y_i}(x_i) / d w for each example."""
    x2 = _inputs(model, x)
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.shape[0] != x2.shape[0]:
        raise ValueError("x and y disagree on the number of examples")
    if np.any(y < 0) or np.any(y >= model.n_out):
        raise ValueError("label out of range")
    acts, pres = _forward_cache(model, x2)
    delta = np.zeros((x2.shape[0], model.n_out))
    delta[np.arange(x2.shape[0]), y] = 1.0
    return _backward(model, acts, pres, delta, per_example=True)


def correct_logit_gradient(model: MlpModel, ex: LabeledExample) -> np.ndarray:
    """Gradient of the ground-truth logit for one example, in the flat layout."""
    return correct_logit_gradients(model, np.asarray(ex.x)[None, :], [ex.y])[0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_gradient_arrays(model: MlpModel, x, y) -> tuple[float, np.ndarray]:
    x2 = _inputs(model, x)
    y = np.asarray(y, dtype=np.int64).ravel()
    n = x2.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape[0] != n:
        raise ValueError("x and y disagree on the number of examples")
    acts, pres = _forward_cache(model, x2)
    logp = log_softmax(acts[-1])
    loss = -float(np.mean(logp[np.arange(n), y]))
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, _backward(model, acts, pres, delta, per_example=False)


def loss_and_gradient(model: MlpModel, batch: Sequence[LabeledExample]) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over ``batch`` and its gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = np.stack([np.asarray(ex.x, dtype=np.float64) for ex in batch])
    y = np.array([ex.y for ex in batch])
    return loss_and_gradient_arrays(model, x, y)


_WMAGIC = b"MLPW"


def save_weights(model: MlpModel, path) -> None:
    """Header: magic, uint32 layer count, uint32 dims; then p little-endian float64."""
    dims = model.layer_dims
    with open(path, "wb") as fh:
        fh.write(_WMAGIC + struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        fh.write(model.weights.astype("<f8").tobytes())


def load_weights(path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _WMAGIC or len(raw) < 8:
        raise ValueError("not a weight checkpoint (bad magic at byte 0)")
    (n,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{n}I", raw, 8)
    off = 8 + 4 * n
    p = param_count(dims)
    if len(raw) != off + 8 * p:
        raise ValueError(f"weight checkpoint has {len(raw)} bytes, expected {off + 8 * p}")
    return MlpModel(dims, np.frombuffer(raw, "<f8", p, off).astype(np.float64))
