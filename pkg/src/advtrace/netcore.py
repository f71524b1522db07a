"""Minimal dense-network core: forward/backward passes, cross-entropy, Adam,
and checkpoint I/O.

Everything is float64 numpy. Nets are plain layer lists (weight matrix,
bias, activation tag); reverse-mode gradients are exact and checked against
finite differences in the test suite.

Checkpoint format (little-endian throughout):
    magic "DNCK" | u32 version | u32 layer count
    per layer: u32 in_dim | u32 out_dim | u8 activation code
               f64[out*in] weights (row-major) | f64[out] biases
A human-readable JSON twin is written next to the binary file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, ShapeError

ACTIVATIONS = ("identity", "relu", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

_MAGIC = b"DNCK"
_VERSION = 1


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        if self.activation not in _ACT_CODE:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("layer expects 2-d weights and 1-d bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError("bias length must equal weight row count")


@dataclass
class DenseNet:
    layers: list[Layer]
    seed: int | None = None
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [l.weights.shape[0] for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.append(l.weights)
            out.append(l.bias)
        return out

    def packed(self):
        """Flat (params, dims, acts) arrays for the query kernels.

        Cached; nets must not be mutated after the first call.
        """
        if self._packed is None:
            dims = np.asarray(self.dims, dtype=np.int64)
            acts = np.asarray([_ACT_CODE[l.activation] for l in self.layers],
                              dtype=np.int64)
            params = np.concatenate(
                [np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers]
            ).astype(np.float64)
            self._packed = (params, dims, acts)
        return self._packed


def init_dense(dims: list[int], activations: list[str], seed: int) -> DenseNet:
    """Glorot-uniform init (+-sqrt(6/(fan_in+fan_out))) from an explicit seed."""
    if len(activations) != len(dims) - 1:
        raise ShapeError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = dims[i], dims[i + 1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers, seed=seed)


def _apply(act: str, z: np.ndarray) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _apply_grad(act: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Logits for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(
            f"input has shape {x.shape}, net expects ({net.input_dim},)")
    h = x
    for layer in net.layers:
        h = _apply(layer.activation, layer.weights @ h + layer.bias)
    return h


def forward_batch(net: DenseNet, xs: np.ndarray, keep_cache: bool = False):
    """Logits for a batch (n, d). Optionally returns per-layer caches for
    backward_batch."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.input_dim:
        raise ShapeError(
            f"batch has shape {xs.shape}, net expects (n, {net.input_dim})")
    h = xs
    cache = [(None, xs)]
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        h = _apply(layer.activation, z)
        if keep_cache:
            cache.append((z, h))
    return (h, cache) if keep_cache else h


def backward(net: DenseNet, x: np.ndarray, loss_grad: np.ndarray):
    """Parameter gradients for one input, given dLoss/dOutput.

    Returns a list of (dW, db) mirroring net.layers.
    """
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (net.output_dim,):
        raise ShapeError(
            f"loss_grad has shape {loss_grad.shape}, expected ({net.output_dim},)")
    x = np.asarray(x, dtype=np.float64)
    _, cache = forward_batch(net, x[None, :], keep_cache=True)
    return backward_batch(net, cache, loss_grad[None, :])


def backward_batch(net: DenseNet, cache, out_grad: np.ndarray):
    """Batch reverse pass; gradients are summed over the batch."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    g = np.asarray(out_grad, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        z, h = cache[i + 1]
        gz = g * _apply_grad(layer.activation, z, h)
        grads[i] = (gz.T @ cache[i][1], gz.sum(axis=0))
        g = gz @ layer.weights
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_grad(logits: np.ndarray, label: int):
    """(loss, grad) of -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    if not 0 <= label < k:
        raise LabelError(f"label {label} out of range for {k} classes")
    z = logits - logits.max()
    logp = z - np.log(np.exp(z).sum())
    p = np.exp(logp)
    grad = p.copy()
    grad[label] -= 1.0
    return -logp[label], grad


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> AdamState:
    """One in-place Adam update over a parameter list."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def save_checkpoint(net: DenseNet, path: str) -> None:
    """Write the binary checkpoint and its JSON twin (<path>.json)."""
    for layer in net.layers:
        if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
            raise ValueError("refusing to checkpoint non-finite parameters")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(net.layers)))
        for layer in net.layers:
            out_dim, in_dim = layer.weights.shape
            f.write(struct.pack("<IIB", in_dim, out_dim, _ACT_CODE[layer.activation]))
            f.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    twin = {
        "format": "advtrace-densenet",
        "version": _VERSION,
        "dims": net.dims,
        "layers": [
            {
                "activation": l.activation,
                "weights": l.weights.tolist(),
                "bias": l.bias.tolist(),
            }
            for l in net.layers
        ],
    }
    with open(path + ".json", "w") as f:
        json.dump(twin, f, indent=1)


def load_checkpoint(path: str) -> DenseNet:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an advtrace checkpoint")
        version, n_layers = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        layers = []
        for _ in range(n_layers):
            in_dim, out_dim, code = struct.unpack("<IIB", f.read(9))
            w = np.frombuffer(f.read(8 * in_dim * out_dim), dtype="<f8")
            w = w.reshape(out_dim, in_dim).astype(np.float64)
            b = np.frombuffer(f.read(8 * out_dim), dtype="<f8").astype(np.float64)
            layers.append(Layer(w, b, ACTIVATIONS[code]))
    return DenseNet(layers)
