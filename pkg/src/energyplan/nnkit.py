"""Tiny numpy toolkit for feed-forward nets with hand-written reverse mode.

Everything works on row batches: inputs are (B, in), outputs (B, out).
Parameters are plain float64 arrays that optimisers update in place.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

WEIGHTS_MAGIC = b"NNKW"
WEIGHTS_FORMAT_VERSION = 1
GATE_CLAMP = 30.0


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message, last_finite_loss=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, y):
    # derivative expressed through the activation output
    if name == "tanh":
        return 1.0 - y * y
    return np.ones_like(y)


class FeedForwardNet:
    """Stack of affine layers, each followed by its activation."""

    def __init__(self, sizes, activations=None, rng=None, zero_last=False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["tanh"] * (n_layers - 1) + ["linear"]
        if len(activations) != n_layers:
            raise ValueError("one activation per layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        for i in range(n_layers):
            bound = 1.0 / np.sqrt(sizes[i])
            self.weights.append(rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1])))
            self.biases.append(np.zeros(sizes[i + 1]))
        if zero_last:
            self.weights[-1][...] = 0.0

    @classmethod
    def identity(cls, n):
        net = cls([n, n], ["linear"])
        net.weights[0][...] = np.eye(n)
        return net

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def describe(self):
        return {"sizes": self.sizes, "activations": self.activations}

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got shape {np.shape(x)}")
        return x, single

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x):
        x, single = self._check(x)
        outs = [x]
        h = x
        for w, b, a in zip(self.weights, self.biases, self.activations):
            h = _act(a, h @ w + b)
            outs.append(h)
        return (h[0] if single else h), (outs, single)

    def backward(self, cache, dy):
        """Reverse pass: returns (param grads in ``params()`` order, input grad)."""
        outs, single = cache
        dy = np.asarray(dy, dtype=float)
        if single:
            dy = dy[None, :]
        if dy.shape != outs[-1].shape:
            raise ValueError(f"upstream gradient shape {dy.shape} != output shape {outs[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        g = dy
        for i in range(len(self.weights) - 1, -1, -1):
            g = g * _act_grad(self.activations[i], outs[i + 1])
            grads[2 * i] = outs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if single else g)


def forward(net, x):
    return net.forward(x)


def backward(net, x, upstream):
    _, cache = net.forward_cache(x)
    return net.backward(cache, upstream)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class GateVector:
    """Per-feature gate: features * sigmoid(clamped logits)."""

    def __init__(self, width, init=0.0):
        self.logits = np.full(int(width), float(init))

    def params(self):
        return [self.logits]

    def effective(self):
        return sigmoid(np.clip(self.logits, -GATE_CLAMP, GATE_CLAMP))

    def forward_cache(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.logits.shape[0]:
            raise ValueError(f"gate width {self.logits.shape[0]} != feature width {x.shape[-1]}")
        g = self.effective()
        return x * g, (x, g)

    def backward(self, cache, dy):
        x, g = cache
        inside = np.abs(self.logits) < GATE_CLAMP
        dlogits = (dy * x).reshape(-1, x.shape[-1]).sum(axis=0) * g * (1.0 - g) * inside
        return [dlogits], dy * g


def apply_gate(gate, features):
    out, _ = gate.forward_cache(features)
    return out


@dataclass
class Adam:
    """Adaptive-moment optimiser; all mutable state lives on this object."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Optional[List[np.ndarray]] = None
    v: Optional[List[np.ndarray]] = None

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        return list(self.m or []) + list(self.v or [])

    def load_state_arrays(self, arrays, step_count):
        half = len(arrays) // 2
        self.m = [np.array(a) for a in arrays[:half]] if arrays else None
        self.v = [np.array(a) for a in arrays[half:]] if arrays else None
        self.step_count = int(step_count)


def optimizer_step(state, params, grads):
    state.step(params, grads)
    return params, state


def sgd_step(params, grads, lr):
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
        p -= lr * g


def relative_error(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(loss_fn, params, grads, n_coords=100, h=1e-5, rng=None, floor=1e-7):
    """Compare analytic ``grads`` with central differences of ``loss_fn()``.

    Coordinates are drawn uniformly over all parameter entries. ``loss_fn``
    must read the live parameter arrays. Returns the worst relative error,
    with magnitudes below ``floor`` treated as ``floor``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    for flat in picks:
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = int(flat - offsets[i])
        p = params[i].reshape(-1)
        old = p[j]
        p[j] = old + h
        fp = loss_fn()
        p[j] = old - h
        fm = loss_fn()
        p[j] = old
        num = (fp - fm) / (2.0 * h)
        worst = max(worst, relative_error(float(grads[i].reshape(-1)[j]), num, floor))
    return worst


# -- weights file ------------------------------------------------------------

def save_weights(path, arrays):
    """Versioned little-endian float32 tensor list."""
    payload = struct.pack("<4sII", WEIGHTS_MAGIC, WEIGHTS_FORMAT_VERSION, len(arrays))
    for a in arrays:
        a = np.asarray(a)
        payload += struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    for a in arrays:
        payload += np.asarray(a, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(payload)
    return payload


def load_weights(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, version, count = struct.unpack_from("<4sII", data, 0)
    if magic != WEIGHTS_MAGIC:
        raise ValueError("not a weights file")
    if version != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights format_version {version}")
    off = struct.calcsize("<4sII")
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        shapes.append(tuple(shape))
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(float).reshape(shape))
        off += 4 * n
    return arrays


def config_hash(config):
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_manifest(path, architecture, seed, config, extra=None):
    lines = [f"architecture: {json.dumps(architecture, sort_keys=True)}",
             f"seed: {seed}",
             f"config_hash: {config_hash(config)}"]
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k}: {json.dumps(v, sort_keys=True)}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if ":" in line:
                k, v = line.split(":", 1)
                out[k.strip()] = v.strip()
    return out


def load_into(params, arrays):
    if len(params) != len(arrays):
        raise ValueError(f"weights file holds {len(arrays)} tensors, model expects {len(params)}")
    for p, a in zip(params, arrays):
        if p.shape != a.shape:
            raise ValueError(f"tensor shape {a.shape} != parameter shape {p.shape}")
        p[...] = a
