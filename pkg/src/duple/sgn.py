"""Statistical guidance network.

Two parallel MLP branches read the normalized 26-value statistics. Their
concatenation drives the guidance vector, the prototype sensitivity and
the two confidence scalars; the domain weights read the statistics
directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ParamStore, Tensor, concat, linear, relu, sigmoid, softmax, softplus, tanh
from .featurize import N_FEATURES

GUIDE_DIM = 32
HIDDEN = 32
BRANCH_DIM = 16
BETA_MIN, BETA_MAX = 0.5, 2.0
# squashing functions reach their limits exactly in floating point once saturated;
# this margin keeps g, alpha and beta strictly inside their open ranges
MARGIN = 1e-12


@dataclass
class Guidance:
    g: Tensor       # (Q, 32) in (-1, 1)
    alpha: Tensor   # (Q, 2): time, frequency; rows sum to 1
    beta: Tensor    # (Q,) in (0.5, 2.0)
    kappa: Tensor   # (Q, 2) >= 0

    @property
    def alpha_t(self):
        return self.alpha[:, 0]

    @property
    def alpha_f(self):
        return self.alpha[:, 1]

    @classmethod
    def fixed(cls, n: int) -> "Guidance":
        """Neutral guidance used when the network is ablated."""
        return cls(Tensor(np.zeros((n, GUIDE_DIM))), Tensor(np.full((n, 2), 0.5)),
                   Tensor(np.ones(n)), Tensor(np.zeros((n, 2))))


class SGN:
    def __init__(self, store: ParamStore, prefix: str = "sgn"):
        self.store, self.prefix = store, prefix
        pe = 2 * BRANCH_DIM
        self._layer("phys0", N_FEATURES, HIDDEN)
        self._layer("phys1", HIDDEN, BRANCH_DIM)
        self._layer("env0", N_FEATURES, HIDDEN)
        self._layer("env1", HIDDEN, BRANCH_DIM)
        self._layer("guide", pe, GUIDE_DIM)
        self._layer("alpha", N_FEATURES, 2)
        self._layer("beta", pe, 1)
        self._layer("kappa", pe, 2)

    def _layer(self, name, fan_in, fan_out):
        key = f"{self.prefix}.{name}"
        if f"{key}.w" not in self.store:
            self.store.glorot(f"{key}.w", (fan_out, fan_in), fan_in, fan_out)
            self.store.zeros(f"{key}.b", (fan_out,))

    def _lin(self, name, x):
        key = f"{self.prefix}.{name}"
        return linear(x, self.store[f"{key}.w"], self.store[f"{key}.b"])

    def __call__(self, stats) -> Guidance:
        s = stats if isinstance(stats, Tensor) else Tensor(np.asarray(stats, dtype=np.float64))
        if s.ndim == 1:
            s = Tensor(s.data[None]) if not s.requires_grad else s.reshape(1, -1)
        if s.shape[-1] != N_FEATURES:
            raise ValueError(f"guidance network expects {N_FEATURES} statistics, got {s.shape[-1]}")
        if not np.all(np.isfinite(s.data)):
            raise ValueError("non-finite statistics passed to the guidance network")
        p = relu(self._lin("phys1", relu(self._lin("phys0", s))))
        e = relu(self._lin("env1", relu(self._lin("env0", s))))
        pe = concat([p, e], axis=1)
        g = tanh(self._lin("guide", pe)) * (1.0 - MARGIN)
        alpha = softmax(self._lin("alpha", s), axis=1) * (1.0 - 2 * MARGIN) + MARGIN
        unit = sigmoid(self._lin("beta", pe))[:, 0] * (1.0 - 2 * MARGIN) + MARGIN
        beta = BETA_MIN + (BETA_MAX - BETA_MIN) * unit
        kappa = softplus(self._lin("kappa", pe))
        return Guidance(g, alpha, beta, kappa)


def sgn_forward(net: SGN, s) -> Guidance:
    return net(s)
