"""Small dense networks: forward/backward passes, Adam, and a flat checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class InvalidStateError(RuntimeError):
    pass


class TrainingDivergenceError(FloatingPointError):
    pass


class Mlp:
    """Fully connected network with ReLU hidden layers and a linear output.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
    shape ``(B, fan_in)`` maps to ``x @ W + b``.
    """

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = tuple(int(s) for s in sizes)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = self.sizes
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        offset = 0
        for p in self.params:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def forward(self, x):
        return forward(self, x)

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    inputs: list
    preacts: list
    squeeze: bool


def forward(mlp: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    """Return the network output and the activations needed by :func:`backward`."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != mlp.sizes[0]:
        raise ValueError(f"expected input width {mlp.sizes[0]}, got shape {x.shape}")
    inputs, preacts = [], []
    last = len(mlp.weights) - 1
    for layer, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if layer == last else np.maximum(z, 0.0)
    return (h[0] if squeeze else h), ForwardCache(inputs, preacts, squeeze)


def backward(mlp: Mlp, cache: Optional[ForwardCache], grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients of a scalar loss given ``dL/d(output)``.

    Returns the parameter gradients (in ``mlp.params`` order) and ``dL/d(input)``.
    """
    if cache is None or len(cache.inputs) != len(mlp.weights):
        raise InvalidStateError("backward needs the cache of a matching forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    grads: list[np.ndarray] = [None] * (2 * len(mlp.weights))
    last = len(mlp.weights) - 1
    for layer in range(last, -1, -1):
        if layer != last:
            g = g * (cache.preacts[layer] > 0)
        grads[2 * layer] = cache.inputs[layer].T @ g
        grads[2 * layer + 1] = g.sum(axis=0)
        g = g @ mlp.weights[layer].T
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"PQNN"
_VERSION = 1


def save_checkpoint(path: Union[str, Path], sections: dict[str, Sequence[np.ndarray]], meta: Optional[dict] = None) -> None:
    """Write named groups of float64 arrays.

    Layout: ``magic, version (u32), manifest length (u32)``, a JSON manifest
    of names and shapes, then every array as little-endian float64.
    """
    manifest = {"meta": meta or {}, "sections": []}
    blobs = []
    for name, arrays in sections.items():
        manifest["sections"].append([name, [list(np.shape(a)) for a in arrays]])
        blobs.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    encoded = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _MAGIC, _VERSION, len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: Union[str, Path]) -> tuple[dict[str, list[np.ndarray]], dict]:
    raw = Path(path).read_bytes()
    magic, version, n = struct.unpack_from("<4sII", raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} network checkpoint")
    offset = struct.calcsize("<4sII")
    manifest = json.loads(raw[offset : offset + n].decode())
    offset += n
    sections = {}
    for name, shapes in manifest["sections"]:
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape, dtype=np.int64))
            arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
            offset += 8 * count
        sections[name] = arrays
    return sections, manifest["meta"]
