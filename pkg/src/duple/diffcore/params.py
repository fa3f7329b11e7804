"""Named parameter storage, deterministic init, Adam updates and checkpoints."""
from __future__ import annotations

import base64
import json
import zlib
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = 1


def param_rng(seed: int, name: str) -> np.random.Generator:
    """RNG stream for one named parameter; stable across processes."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


class ParamStore:
    """Parameters keyed by name plus adaptive-moment optimizer state.

    Iteration is always in sorted-name order so updates and checkpoints are
    deterministic regardless of creation order.
    """

    def __init__(self, seed: int = 222, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.seed = seed
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return sorted(self.params)

    def items(self):
        return [(n, self.params[n]) for n in self.names()]

    def num_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def glorot(self, name, shape, fan_in, fan_out) -> Tensor:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, param_rng(self.seed, name).uniform(-bound, bound, size=shape))

    def zeros(self, name, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def add(self, name, values) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def update(self, lr: float = 1e-3):
        update_params(self, lr)

    def copy(self) -> "ParamStore":
        other = ParamStore(self.seed, self.beta1, self.beta2, self.eps)
        for n, p in self.items():
            other.add(n, p.data.copy())
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.items()}


def update_params(store: ParamStore, lr: float = 1e-3) -> ParamStore:
    """One bias-corrected Adam step over every parameter that has a gradient.

    Parameters without a gradient (not reached by this step's graph) are left
    untouched, moments included. Gradients are cleared afterwards.
    """
    for name, p in store.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    b1, b2 = store.beta1, store.beta2
    for name, p in store.items():
        g = p.grad
        if g is None:
            continue
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store._m[name], store._v[name] = m, v
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + store.eps)
        p.grad = None
    return store


def _encode(arr: np.ndarray) -> dict:
    raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(raw).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)


def save_checkpoint(store: ParamStore, path, config_hash: str = "", extra: dict | None = None):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "seed": store.seed,
        "params": {n: _encode(p.data) for n, p in store.items()},
        "buffers": {k: _encode(store.buffers[k]) for k in sorted(store.buffers)},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    store = ParamStore(seed=doc.get("seed", 222))
    for name in sorted(doc["params"]):
        store.add(name, _decode(doc["params"][name]))
    store.buffers = {k: _decode(v) for k, v in doc.get("buffers", {}).items()}
    return store, doc
