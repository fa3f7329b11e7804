"""Full dual-domain model and the single-prototype baseline.

Both expose the same episode interface so one training loop and one
evaluator serve them:

* ``embed(x_time, x_spec)`` -> per-sample embeddings (a dict of tensors)
* ``episode_logits(support, support_labels, query, query_stats, n_way)`` -> (Q, N)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .cdm import CDM, final_logit, inverse_softplus
from .diffcore import ParamStore, Tensor, concat, cosine_similarity, mul, reshape, softplus, square, stack, sub, tsum
from .encoders import FreqEncoder, TimeEncoder
from .fpm import build_prototypes, class_scores
from .sgn import SGN, Guidance

LAMBDA_INIT = 10.0


@dataclass(frozen=True)
class AblationConfig:
    enable_fpm: bool = True
    enable_sgn: bool = True
    enable_cdm: bool = True

    @property
    def label(self) -> str:
        on = [n for n, f in (("FPM", self.enable_fpm), ("SGN", self.enable_sgn), ("CDM", self.enable_cdm)) if f]
        return "+".join(on) if on else "baseline"


# rows of the ablation table: baseline, +FPM, +FPM+SGN, +FPM+CDM, full
ABLATION_GRID = (
    AblationConfig(False, False, False),
    AblationConfig(True, False, False),
    AblationConfig(True, True, False),
    AblationConfig(True, False, True),
    AblationConfig(True, True, True),
)


@dataclass(frozen=True)
class Overrides:
    """Hard settings used to reduce the model to simpler ones in tests."""

    single_prototype: bool = False
    alpha: tuple[float, float] | None = None
    beta: float | None = None
    zero_h: bool = False


REDUCTION = Overrides(single_prototype=True, alpha=(1.0, 0.0), beta=1.0, zero_h=True)


def _lambda_param(store: ParamStore) -> Tensor:
    if "lambda_raw" not in store:
        store.add("lambda_raw", np.array(inverse_softplus(LAMBDA_INIT)))
    return store["lambda_raw"]


class DupleModel:
    kind = "duple"

    def __init__(self, store: ParamStore, length: int, spec_shape: tuple[int, int],
                 ablation: AblationConfig = AblationConfig(), overrides: Overrides = Overrides()):
        self.store = store
        self.ablation = ablation
        self.overrides = overrides
        self.time_encoder = TimeEncoder(store, length)
        self.freq_encoder = FreqEncoder(store, spec_shape)
        self.sgn = SGN(store)
        self.cdm = CDM(store)
        _lambda_param(store)

    @property
    def lam(self) -> Tensor:
        return softplus(self.store["lambda_raw"])

    def describe(self) -> dict:
        return {"kind": self.kind, **asdict(self.ablation), "overrides": asdict(self.overrides)}

    def embed(self, x_time, x_spec) -> dict[str, Tensor]:
        return {"t": self.time_encoder(x_time), "f": self.freq_encoder(x_spec)}

    def guidance(self, stats) -> Guidance:
        n = len(stats)
        gd = self.sgn(stats) if self.ablation.enable_sgn else Guidance.fixed(n)
        ov = self.overrides
        if ov.alpha is not None:
            gd.alpha = Tensor(np.tile(np.asarray(ov.alpha, dtype=np.float64), (n, 1)))
        if ov.beta is not None:
            gd.beta = Tensor(np.full(n, float(ov.beta)))
        return gd

    def prototypes(self, support: dict[str, Tensor], labels, n_way: int) -> dict[str, list[Tensor]]:
        multi = self.ablation.enable_fpm and not self.overrides.single_prototype
        return {d: build_prototypes(support[d], labels, n_way, multi=multi) for d in ("t", "f")}

    def episode_logits(self, support, support_labels, query, query_stats, n_way: int) -> Tensor:
        protos = self.prototypes(support, support_labels, n_way)
        gd = self.guidance(query_stats)
        lam_eff = mul(self.lam, gd.beta)
        l_t = class_scores(query["t"], protos["t"], lam_eff)
        l_f = class_scores(query["f"], protos["f"], lam_eff)
        if not self.ablation.enable_cdm:
            return _stack_fused(l_t, l_f, gd.alpha, n_way)
        return self.cdm(query["t"], query["f"], gd, l_t, l_f, protos["t"], protos["f"],
                        zero_h=self.overrides.zero_h)


def _stack_fused(l_t, l_f, alpha, n_way):
    return stack([final_logit(l_t[:, c], l_f[:, c], alpha) for c in range(n_way)], axis=1)


class ProtoNetModel:
    """Time-domain single-prototype baseline (cosine or squared-euclidean)."""

    kind = "protonet"

    def __init__(self, store: ParamStore, length: int, metric: str = "cosine"):
        if metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric {metric!r}")
        self.store = store
        self.metric = metric
        self.time_encoder = TimeEncoder(store, length)
        _lambda_param(store)

    @property
    def lam(self) -> Tensor:
        return softplus(self.store["lambda_raw"])

    def describe(self) -> dict:
        return {"kind": self.kind, "metric": self.metric}

    def embed(self, x_time, x_spec=None) -> dict[str, Tensor]:
        return {"t": self.time_encoder(x_time)}

    def prototypes(self, support, labels, n_way):
        return {"t": build_prototypes(support["t"], labels, n_way, multi=False)}

    def episode_logits(self, support, support_labels, query, query_stats, n_way: int) -> Tensor:
        means = concat(self.prototypes(support, support_labels, n_way)["t"], axis=0)
        zq = query["t"]
        if self.metric == "cosine":
            return mul(cosine_similarity(zq, means), self.lam)
        diff = sub(reshape(zq, (zq.shape[0], 1, -1)), reshape(means, (1, n_way, -1)))
        return mul(tsum(square(diff), axis=2), -1.0)


def build_model(kind: str, store: ParamStore, length: int, spec_shape, ablation=AblationConfig(),
                overrides=Overrides(), metric: str = "cosine"):
    if kind == "duple":
        return DupleModel(store, length, spec_shape, ablation, overrides)
    if kind == "protonet":
        return ProtoNetModel(store, length, metric)
    raise ValueError(f"unknown model kind {kind!r}")
