"""Adaptive multi-prototype construction and log-sum-exp class matching."""
from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, concat, cosine_similarity, log_sum_exp, matmul, mul, reshape, stack

log = logging.getLogger(__name__)

K_MAX = 3
MAX_ITER = 50
EXACT_LIMIT = 4096  # largest k**(n-1) for which every partition is scored


def choose_k(n_c: int, k_max: int = K_MAX) -> int:
    """Prototype count for a class with ``n_c`` support samples."""
    if n_c < 1:
        raise ValueError(f"class needs at least one support sample, got {n_c}")
    return min(k_max, math.ceil(n_c / 2))


def _canonical_order(points: np.ndarray) -> np.ndarray:
    # lexicographic by coordinate values; np.lexsort treats the last key as primary
    return np.lexsort(points.T[::-1])


def _sqdist(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def cluster_class(embeddings, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic k-means on one class's support embeddings.

    Maximin seeding (first center = point farthest from the mean, then the
    point maximizing distance to its nearest chosen center), ties broken by
    lexicographic order of the vectors, followed by Lloyd iterations. Returns
    ``(centroids (k, D), labels (n,))`` with labels indexing the input order.
    The result does not depend on the order of the input rows.

    Small sets (k**(n-1) <= EXACT_LIMIT, which covers few-shot support
    sizes) are instead solved exactly by scoring every partition, so the
    returned SSE is the global optimum there.
    """
    pts = np.asarray(embeddings, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {pts.shape}")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    order = _canonical_order(pts)
    x = pts[order]
    if k == 1:
        return x.mean(axis=0, keepdims=True), np.zeros(n, dtype=np.int64)
    if k ** (n - 1) <= EXACT_LIMIT:
        labels = _exact_partition(x, k)
    else:
        labels = _lloyd(x, k)
    centers = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
    out = np.empty(n, dtype=np.int64)
    out[order] = labels
    return centers, out


@functools.lru_cache(maxsize=64)
def _partitions(n: int, k: int) -> np.ndarray:
    """Every split of n ordered items into k non-empty groups, as restricted-growth label rows."""
    rows = []
    for tail in itertools.product(range(k), repeat=n - 1):
        row = (0, *tail)
        top = 0
        for v in row:
            if v > top + 1:
                break
            top = max(top, v)
        else:
            if top == k - 1:
                rows.append(row)
    return np.asarray(rows, dtype=np.int64)


def _exact_partition(x: np.ndarray, k: int) -> np.ndarray:
    cands = _partitions(x.shape[0], k)                      # (P, n)
    onehot = cands[:, :, None] == np.arange(k)              # (P, n, k)
    counts = onehot.sum(axis=1)                             # (P, k)
    means = np.einsum("pnk,nd->pkd", onehot, x) / counts[:, :, None]
    resid = x[None] - np.take_along_axis(means, cands[:, :, None], axis=1)
    sse = (resid ** 2).sum(axis=(1, 2))
    return cands[int(np.argmin(sse))]


def _lloyd(x: np.ndarray, k: int) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(np.argmax(((x - x.mean(axis=0)) ** 2).sum(axis=1)))]
    mind = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        cand = mind.copy()
        cand[chosen] = -1.0
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        mind = np.minimum(mind, ((x - x[nxt]) ** 2).sum(axis=1))
    centers = x[chosen].copy()

    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(MAX_ITER):
        new = np.argmin(_sqdist(x, centers), axis=1)
        for j in range(k):
            if not np.any(new == j):
                # reseed with the point lying farthest from its own centroid
                far = ((x - centers[new]) ** 2).sum(axis=1)
                far[np.bincount(new, minlength=k)[new] <= 1] = -1.0
                new[int(np.argmax(far))] = j
        if np.array_equal(new, labels):
            break
        labels = new
        centers = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
    return labels


def within_cluster_sse(points, labels) -> float:
    pts = np.asarray(points, dtype=np.float64)
    total = 0.0
    for j in np.unique(labels):
        m = pts[labels == j]
        total += float(((m - m.mean(axis=0)) ** 2).sum())
    return total


@dataclass
class PrototypeBank:
    """Per-domain, per-class prototype matrices (rows are prototypes)."""

    protos: dict[str, list[Tensor]] = field(default_factory=dict)

    def counts(self, domain: str) -> list[int]:
        return [p.shape[0] for p in self.protos[domain]]

    @property
    def n_way(self) -> int:
        return len(next(iter(self.protos.values())))


def build_prototypes(support: Tensor, labels, n_way: int, multi: bool = True, k_max: int = K_MAX) -> list[Tensor]:
    """Cluster each class's support embeddings; centroids are means of members.

    Assignment is computed on values only; each centroid is a fixed averaging
    matrix applied to the member embeddings, so gradients flow through the
    means but not through the cluster assignment.
    """
    labels = np.asarray(labels)
    z = support.data
    out = []
    for c in range(n_way):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise ValueError(f"class {c} has no support samples")
        k = choose_k(idx.size, k_max) if multi else 1
        _, assign = cluster_class(z[idx], k)
        avg = np.zeros((k, support.shape[0]))
        for j in range(k):
            members = idx[assign == j]
            avg[j, members] = 1.0 / members.size
        out.append(matmul(Tensor(avg), support))
    return out


def class_scores(query: Tensor, prototypes: list[Tensor], lambda_eff) -> Tensor:
    """Log-sum-exp of scaled cosine similarities to each class's prototypes.

    ``query`` is (Q, D); ``lambda_eff`` is a scalar or a (Q,) tensor of
    per-query temperatures. Returns (Q, N).
    """
    sizes = [p.shape[0] for p in prototypes]
    allp = concat(prototypes, axis=0)
    if np.any(np.linalg.norm(query.data, axis=-1) == 0) or np.any(np.linalg.norm(allp.data, axis=-1) == 0):
        log.warning("zero-norm embedding in class scoring; its cosine similarities are set to 0")
    sim = cosine_similarity(query, allp)
    lam = lambda_eff if isinstance(lambda_eff, Tensor) else Tensor(np.asarray(lambda_eff, dtype=np.float64))
    if lam.ndim == 1:
        lam = reshape(lam, (-1, 1))
    scaled = mul(sim, lam)
    cols, start = [], 0
    for k in sizes:
        cols.append(log_sum_exp(scaled[:, start:start + k], axis=1))
        start += k
    return stack(cols, axis=1)
