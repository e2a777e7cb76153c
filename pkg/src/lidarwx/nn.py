"""Small dense ReLU networks with exact backprop, SGD and global-norm clipping.

Shared by the surrogate segmenter and the drop-policy Q-network. Everything is
float64 so finite-difference checks can be tight.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, LidarWxError, NumericError, ShapeError
from .rng import make_rng

CHECKPOINT_MAGIC = b"LWXDNET\x00"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class DenseNet:
    """Affine layers with ReLU between them; the last layer emits raw logits.

    ``weights[i]`` has shape (fan_in, fan_out), ``biases[i]`` shape (fan_out,).
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} expects {w.shape[0]} inputs, "
                                 f"previous layer gives {self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def clone(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_net(sizes, seed: int) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"bad layer sizes {sizes}")
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases)


def _check_input(net: DenseNet, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.sizes[0]:
        raise ShapeError(f"net expects width {net.sizes[0]}, got array of shape {x.shape}")
    return x


def forward(net: DenseNet, features) -> np.ndarray:
    h = _check_input(net, features)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def forward_cached(net: DenseNet, features) -> tuple[np.ndarray, list]:
    """Forward pass that also returns each layer's input, for ``backward``."""
    h = _check_input(net, features)
    inputs = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h, inputs


def backward(net: DenseNet, inputs: list, grad_out: np.ndarray) -> list:
    """Gradients [dW0, db0, dW1, db1, ...] given dLoss/dlogits."""
    grads = [None] * (2 * len(net.weights))
    g = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        a = inputs[i]
        grads[2 * i] = a.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = (g @ net.weights[i].T) * (a > 0)
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets, ignore_label: int) -> tuple[float, np.ndarray]:
    """Mean CE over non-ignored rows and its gradient with respect to the logits."""
    targets = np.asarray(targets).reshape(-1)
    if targets.shape[0] != logits.shape[0]:
        raise ShapeError(f"{targets.shape[0]} targets for {logits.shape[0]} rows")
    valid = targets != ignore_label
    m = int(valid.sum())
    if m == 0:
        raise EmptyInputError("every sample carries the ignore label")
    rows = np.flatnonzero(valid)
    tgt = targets[rows].astype(np.int64)
    c = logits.shape[1]
    if tgt.min() < 0 or tgt.max() >= c:
        raise ShapeError(f"target id outside [0, {c})")
    logp = log_softmax(logits[rows])
    loss = -logp[np.arange(m), tgt].sum() / m
    grad = np.zeros_like(logits)
    p = np.exp(logp)
    p[np.arange(m), tgt] -= 1.0
    grad[rows] = p / m
    return float(loss), grad


def loss_and_grad(net: DenseNet, features, targets, ignore_label: int) -> tuple[float, list]:
    logits, inputs = forward_cached(net, features)
    loss, dlogits = cross_entropy(logits, targets, ignore_label)
    return loss, backward(net, inputs, dlogits)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grads(grads, clip_norm: float) -> tuple[list, float]:
    """Scale the whole set so its L2 norm is at most clip_norm. Returns (grads, norm before)."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update rejected")
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def clip_and_step(net: DenseNet, grads, lr: float, clip_norm: float = 100.0,
                  momentum: float = 0.0, velocity: list | None = None) -> DenseNet:
    """In-place SGD step after global-norm clipping.

    With ``momentum > 0`` the caller owns ``velocity`` (same shapes as the
    parameters, updated in place).
    """
    if not lr > 0 or not clip_norm > 0:
        raise ValueError("lr and clip_norm must be positive")
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("gradient set does not match network")
    grads, _ = clip_grads(grads, clip_norm)
    if momentum:
        if velocity is None:
            raise ValueError("momentum needs a velocity buffer")
        for v, g in zip(velocity, grads):
            v *= momentum
            v += g
        grads = velocity
    for p, g in zip(params, grads):
        p -= lr * g
    return net


def zeros_like_params(net: DenseNet) -> list:
    return [np.zeros_like(p) for p in net.params()]


def copy_params(src: DenseNet, dst: DenseNet) -> DenseNet:
    if src.sizes != dst.sizes:
        raise ShapeError(f"architecture mismatch {src.sizes} vs {dst.sizes}")
    for s, d in zip(src.params(), dst.params()):
        d[...] = s
    return dst


# -- checkpoints -------------------------------------------------------------
# magic(8) | version u32 | n_sizes u32 | sizes u32[n] | for each layer: W f64[in*out] row-major, b f64[out]

def save_bytes(net: DenseNet) -> bytes:
    sizes = net.sizes
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(sizes)),
             struct.pack(f"<{len(sizes)}I", *sizes)]
    for p in net.params():
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def load_bytes(data: bytes) -> DenseNet:
    if data[:8] != CHECKPOINT_MAGIC or len(data) < 16:
        raise LidarWxError("not a network checkpoint (bad magic)")
    version, k = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise LidarWxError(f"unsupported checkpoint version {version}")
    off = 16 + 4 * k
    if k < 2 or len(data) < off:
        raise LidarWxError("truncated checkpoint header")
    sizes = struct.unpack_from(f"<{k}I", data, 16)
    need = off + 8 * sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(data) != need:
        raise LidarWxError(f"checkpoint is {len(data)} bytes, layout needs {need}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, "<f8", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, "<f8", fan_out, off)
        off += 8 * fan_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    return DenseNet(weights, biases)
