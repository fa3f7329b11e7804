"""Query-aware prototype attention and dual-domain logit fusion."""
from __future__ import annotations

import numpy as np

from .diffcore import (
    ParamStore,
    Tensor,
    amax,
    as_tensor,
    concat,
    cosine_similarity,
    linear,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    softplus,
    stack,
    tanh,
    tsum,
)
from .encoders import EMBED_DIM
from .sgn import GUIDE_DIM, MARGIN

SUMMARY_DIM = 3
REL_HIDDEN, REL_OUT = 64, 32
H_HIDDEN = 16
TAU_INIT = 5.0


def inverse_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


def logit_summary(logits: Tensor) -> Tensor:
    """(Q, N) -> (Q, 3): max, mean and softmax entropy; independent of N."""
    logits = as_tensor(logits)
    lp = log_softmax(logits, axis=1)
    ent = mul(tsum(mul(softmax(logits, axis=1), lp), axis=1), -1.0)
    cols = [amax(logits, axis=1), mean(logits, axis=1), ent]
    return concat([reshape(c, (-1, 1)) for c in cols], axis=1)


def attend(key: Tensor, prototypes: Tensor, tau) -> Tensor:
    """Softmax over a class's prototypes of tau-scaled cosine similarity to the key.

    key (Q, D) or (D,), prototypes (K, D) -> weights (Q, K) or (K,).
    """
    key, prototypes = as_tensor(key), as_tensor(prototypes)
    single = key.ndim == 1
    if single:
        key = reshape(key, (1, -1))
    sim = cosine_similarity(key, prototypes)
    w = softmax(mul(sim, tau), axis=1)
    return w[0] if single else w


def aggregate(weights: Tensor, prototypes: Tensor) -> Tensor:
    """Convex combination of prototypes: (Q, K) x (K, D) -> (Q, D)."""
    weights, prototypes = as_tensor(weights), as_tensor(prototypes)
    if weights.ndim == 1:
        return matmul(reshape(weights, (1, -1)), prototypes)[0]
    return matmul(weights, prototypes)


class CDM:
    """Key projections (one per embedding domain), relation MLP and decision head."""

    def __init__(self, store: ParamStore, prefix: str = "cdm"):
        self.store, self.prefix = store, prefix
        key_in = EMBED_DIM + GUIDE_DIM + 2 * SUMMARY_DIM
        self._layer("key_t", key_in, EMBED_DIM)
        self._layer("key_f", key_in, EMBED_DIM)
        self._layer("rel0", 2 * EMBED_DIM, REL_HIDDEN)
        self._layer("rel1", REL_HIDDEN, REL_OUT)
        self._layer("h0", REL_OUT + 4, H_HIDDEN)
        self._layer("h1", H_HIDDEN, 1)
        if f"{prefix}.tau_raw" not in store:
            store.add(f"{prefix}.tau_raw", np.array(inverse_softplus(TAU_INIT)))

    def _layer(self, name, fan_in, fan_out):
        key = f"{self.prefix}.{name}"
        if f"{key}.w" not in self.store:
            self.store.glorot(f"{key}.w", (fan_out, fan_in), fan_in, fan_out)
            self.store.zeros(f"{key}.b", (fan_out,))

    def _lin(self, name, x):
        key = f"{self.prefix}.{name}"
        return linear(x, self.store[f"{key}.w"], self.store[f"{key}.b"])

    @property
    def tau(self) -> Tensor:
        return softplus(self.store[f"{self.prefix}.tau_raw"])

    def build_key(self, z_q_t, z_q_f, g, logits_t, logits_f) -> tuple[Tensor, Tensor]:
        """Per-domain query keys from the embedding, guidance and logit summaries."""
        u_t, u_f = logit_summary(logits_t), logit_summary(logits_f)
        k_t = tanh(self._lin("key_t", concat([z_q_t, g, u_t, u_f], axis=1)))
        k_f = tanh(self._lin("key_f", concat([z_q_f, g, u_t, u_f], axis=1)))
        return k_t, k_f

    def relation(self, r_t: Tensor, r_f: Tensor) -> Tensor:
        """(Q, 128) x 2 -> (Q, 32) in (-1, 1)."""
        return tanh(self._lin("rel1", relu(self._lin("rel0", concat([r_t, r_f], axis=1))))) * (1.0 - MARGIN)

    def decision(self, v: Tensor, alpha: Tensor, kappa: Tensor) -> Tensor:
        """h([v; alpha_t; alpha_f; kappa_t; kappa_f]) -> (Q,)."""
        x = concat([v, alpha, kappa], axis=1)
        return self._lin("h1", relu(self._lin("h0", x)))[:, 0]

    def __call__(self, z_q_t, z_q_f, guidance, logits_t, logits_f, protos_t, protos_f, zero_h=False) -> Tensor:
        n_way = len(protos_t)
        base = [final_logit(logits_t[:, c], logits_f[:, c], guidance.alpha) for c in range(n_way)]
        if zero_h:
            return stack(base, axis=1)
        k_t, k_f = self.build_key(z_q_t, z_q_f, guidance.g, logits_t, logits_f)
        tau = self.tau
        cols = []
        for c, (pt, pf) in enumerate(zip(protos_t, protos_f)):
            r_t = aggregate(attend(k_t, pt, tau), pt)
            r_f = aggregate(attend(k_f, pf, tau), pf)
            h = self.decision(self.relation(r_t, r_f), guidance.alpha, guidance.kappa)
            cols.append(base[c] + h)
        return stack(cols, axis=1)


def final_logit(l_t, l_f, alpha, h=None) -> Tensor:
    """alpha_t * l_t + alpha_f * l_f (+ h), per query."""
    alpha = as_tensor(alpha)
    out = mul(alpha[:, 0], l_t) + mul(alpha[:, 1], l_f)
    return out if h is None else out + h

