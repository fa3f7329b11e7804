"""Central-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def _scalar(fn, points) -> float:
    with no_grad():
        out = fn(*points)
    v = float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(-1)[0])
    if not np.isfinite(v):
        raise FloatingPointError("function evaluated to a non-finite value during gradient check")
    return v


def grad_check(fn, point, epsilon: float = 1e-6, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(*points)`` must return a scalar Tensor. ``point`` is one Tensor or a
    sequence of Tensors; they are perturbed in place and restored. The error
    per coordinate is ``|analytic - numeric| / max(1, |numeric|)``. With
    ``max_coords`` only that many randomly chosen coordinates per tensor are
    probed, which keeps large parameter sets tractable.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        p.requires_grad = True
        p.grad = None
    out = fn(*points)
    if out.size != 1:
        raise ValueError(f"gradient check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("function evaluated to a non-finite value at the check point")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in points]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(points, analytic):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_coords is None or max_coords >= n else np.sort(rng.choice(n, max_coords, replace=False))
        af = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = _scalar(fn, points)
            flat[i] = orig - epsilon
            fm = _scalar(fn, points)
            flat[i] = orig
            num = (fp - fm) / (2.0 * epsilon)
            worst = max(worst, abs(af[i] - num) / max(1.0, abs(num)))
    return worst
