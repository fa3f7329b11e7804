"""Domain-generalization episodes, meta-training, evaluation and metrics."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import DatasetManifest, resample_to_length
from .diffcore import ParamStore, Tensor, cross_entropy, no_grad
from .featurize import StatNormalizer, fit_normalizer, stat_features, stft_logmag
from .model import ProtoNetModel

log = logging.getLogger(__name__)

TRAIN_STREAM = 0
EVAL_STREAM = 1


class EpisodeError(ValueError):
    pass


class ProvenanceError(RuntimeError):
    """A target-domain sample reached training or normalizer fitting."""


class TrainingError(RuntimeError):
    pass


@dataclass
class PreparedData:
    """Per-record model inputs, computed once per manifest."""

    x_time: np.ndarray    # (R, L) resampled waveforms
    x_spec: np.ndarray    # (R, frames, bins) log-magnitude spectrograms
    stats: np.ndarray     # (R, 26) raw statistics
    labels: np.ndarray    # (R,) class indices into ``classes``
    domains: np.ndarray   # (R,) domain indices into ``domain_names``
    classes: list[str]
    domain_names: list[str]

    def __len__(self):
        return len(self.labels)

    @property
    def length(self) -> int:
        return self.x_time.shape[1]

    @property
    def spec_shape(self) -> tuple[int, int]:
        return tuple(self.x_spec.shape[1:])

    def domain_ids(self, names: Sequence[str]) -> list[int]:
        out = []
        for n in names:
            if n not in self.domain_names:
                raise EpisodeError(f"unknown domain {n!r}; known: {self.domain_names}")
            out.append(self.domain_names.index(n))
        return out


def prepare_data(manifest: DatasetManifest, window: int = 256, hop: int = 128) -> PreparedData:
    L = manifest.target_length
    xs, specs, stats = [], [], []
    for i in range(len(manifest)):
        rec = manifest.load(i)
        x = resample_to_length(rec.samples, L)
        xs.append(x)
        specs.append(stft_logmag(x, window, hop, rec.sample_rate).values)
        stats.append(stat_features(x, rec.sample_rate).values)
    return PreparedData(np.stack(xs), np.stack(specs), np.stack(stats), manifest.class_index(),
                        manifest.domain_index(), list(manifest.classes), list(manifest.domains))


def fit_source_normalizer(data: PreparedData, source_ids: Sequence[int], target_id: int | None = None) -> StatNormalizer:
    mask = np.isin(data.domains, list(source_ids))
    if target_id is not None and np.any(data.domains[mask] == target_id):
        raise ProvenanceError("target-domain records selected for normalizer fitting")
    return fit_normalizer(data.stats[mask])


# episodes

@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    query: int
    classes: np.ndarray         # global class index per local label
    support_idx: np.ndarray     # record indices, N*K
    support_labels: np.ndarray  # local labels
    query_idx: np.ndarray       # record indices, N*Q
    query_labels: np.ndarray
    index: int = 0
    stream: int = 0

    @property
    def record_idx(self) -> np.ndarray:
        return np.concatenate([self.support_idx, self.query_idx])


def episode_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def eligible_classes(labels, domains, k_shot: int, q_query: int, source_ids, target_id) -> list[int]:
    """Classes with >= K samples in the sources and >= Q in the target (K+Q if they share records)."""
    labels, domains = np.asarray(labels), np.asarray(domains)
    src = np.isin(domains, list(source_ids))
    tgt = domains == target_id
    out = []
    for c in np.unique(labels):
        in_c = labels == c
        ns, nt, nu = np.sum(in_c & src), np.sum(in_c & tgt), np.sum(in_c & (src | tgt))
        if ns >= k_shot and nt >= q_query and nu >= k_shot + q_query:
            out.append(int(c))
    return out


def sample_episode(data, n_way: int, k_shot: int, q_query: int, sources: Sequence, target,
                   rng: np.random.Generator, index: int = 0, stream: int = 0) -> Episode:
    """Draw an N-way K-shot episode: support from sources, Q balanced queries from the target.

    ``data`` is anything with ``labels``/``domains`` index arrays (PreparedData)
    or a DatasetManifest; sources/target may be names or indices.
    """
    if isinstance(data, DatasetManifest):
        labels, domains, names = data.class_index(), data.domain_index(), data.domains
    else:
        labels, domains, names = data.labels, data.domains, data.domain_names
    src_ids = [names.index(s) if isinstance(s, str) else int(s) for s in sources]
    tgt_id = names.index(target) if isinstance(target, str) else int(target)
    pool = eligible_classes(labels, domains, k_shot, q_query, src_ids, tgt_id)
    if len(pool) < n_way:
        raise EpisodeError(f"only {len(pool)} eligible classes for a {n_way}-way episode "
                           f"(need >= {k_shot} source and >= {q_query} target samples per class)")
    chosen = rng.choice(np.asarray(pool), size=n_way, replace=False)
    src_mask = np.isin(domains, src_ids)
    s_idx, s_lab, q_idx, q_lab = [], [], [], []
    for local, c in enumerate(chosen):
        tpool = np.flatnonzero((labels == c) & (domains == tgt_id))
        q = rng.choice(tpool, size=q_query, replace=False)
        spool = np.setdiff1d(np.flatnonzero((labels == c) & src_mask), q)
        s = rng.choice(spool, size=k_shot, replace=False)
        s_idx.append(s)
        q_idx.append(q)
        s_lab.append(np.full(k_shot, local))
        q_lab.append(np.full(q_query, local))
    return Episode(n_way, k_shot, q_query, chosen.astype(np.int64), np.concatenate(s_idx).astype(np.int64),
                   np.concatenate(s_lab).astype(np.int64), np.concatenate(q_idx).astype(np.int64),
                   np.concatenate(q_lab).astype(np.int64), index, stream)


# training

@dataclass
class TrainConfig:
    way: int = 3
    shot: int = 3
    query: int = 4  # queries per class in training episodes (evaluation default is 12)
    episodes: int = 3000
    lr: float = 1e-3
    seed: int = 222
    sources: tuple[str, ...] = ()
    target: str | None = None


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, str]] = field(default_factory=list)
    domains_touched: set[int] = field(default_factory=set)
    seconds: float = 0.0

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def smoothed(self, window: int = 50) -> np.ndarray:
        x = self.losses
        if x.size < window:
            return x.copy()
        return np.convolve(x, np.ones(window) / window, mode="valid")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "loss", "accuracy", "pseudo_target"])
            for ep, loss, acc, pt in self.rows:
                w.writerow([ep, repr(loss), repr(acc), pt])


def _inputs(data: PreparedData, idx):
    return data.x_time[idx], data.x_spec[idx]


def train_step(model, data: PreparedData, ep: Episode, norm_stats: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Forward one episode and return (loss, logits values)."""
    idx = ep.record_idx
    emb = model.embed(*_inputs(data, idx))
    ns = len(ep.support_idx)
    support = {d: z[:ns] for d, z in emb.items()}
    query = {d: z[ns:] for d, z in emb.items()}
    logits = model.episode_logits(support, ep.support_labels, query, norm_stats[ep.query_idx], ep.way)
    return cross_entropy(logits, ep.query_labels), logits.data


def meta_train(model, data: PreparedData, cfg: TrainConfig, progress=None) -> TrainLog:
    """Episodic training over source domains only.

    Each episode holds out one source as a pseudo-target (rotating); with a
    single source both sets come from it without overlap. The normalizer is
    fit on source statistics and kept in ``model.store.buffers``.
    """
    if not cfg.sources:
        raise EpisodeError("meta_train needs at least one source domain")
    src_ids = data.domain_ids(cfg.sources)
    tgt_id = data.domain_ids([cfg.target])[0] if cfg.target is not None else None
    if tgt_id is not None and tgt_id in src_ids:
        raise ProvenanceError(f"target domain {cfg.target!r} listed among sources")
    norm = fit_source_normalizer(data, src_ids, tgt_id)
    store: ParamStore = model.store
    store.buffers["stat_mean"], store.buffers["stat_std"] = norm.mean, norm.std
    norm_stats = norm.apply_matrix(data.stats)
    out = TrainLog()
    t0 = time.perf_counter()
    for i in range(cfg.episodes):
        pseudo = src_ids[i % len(src_ids)]
        supp = [s for s in src_ids if s != pseudo] or [pseudo]
        ep = sample_episode(data, cfg.way, cfg.shot, cfg.query, supp, pseudo,
                            episode_rng(cfg.seed, TRAIN_STREAM, i), index=i, stream=TRAIN_STREAM)
        touched = set(np.unique(data.domains[ep.record_idx]).tolist())
        if tgt_id is not None and tgt_id in touched:
            raise ProvenanceError(f"episode {i} drew target-domain samples")
        out.domains_touched |= touched
        try:
            loss, logits = train_step(model, data, ep, norm_stats)
            loss.backward()
        except FloatingPointError as e:
            raise TrainingError(f"non-finite value at training episode {i}: {e}") from None
        lv = loss.item()
        if not np.isfinite(lv):
            raise TrainingError(f"non-finite loss at training episode {i}")
        store.update(cfg.lr)
        acc = float(np.mean(np.argmax(logits, axis=1) == ep.query_labels))
        out.rows.append((i, lv, acc, data.domain_names[pseudo]))
        if progress is not None:
            progress(i, lv, acc)
    out.seconds = time.perf_counter() - t0
    return out


# evaluation

@dataclass
class EvalConfig:
    way: int = 3
    shot: int = 3
    query: int = 12
    episodes: int = 1000
    seed: int = 222
    sources: tuple[str, ...] = ()
    target: str = ""
    workers: int = 1


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_accuracy: list[float]
    episodes: int
    confusion: list[list[int]]
    classes: list[str]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_accuracy": self.per_class_accuracy,
            "episodes": self.episodes,
            "confusion": self.confusion,
            "classes": self.classes,
        }


def compute_metrics(confusion, episodes: int = 0, classes=None) -> MetricsReport:
    """Metrics from a confusion matrix (rows = true, columns = predicted).

    Computed in exact rational arithmetic, so accuracy and macro-recall
    coincide bit-for-bit whenever every class has the same query count.
    Per-class 0/0 is taken as 0.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    n = cm.shape[0]
    total = int(cm.sum())
    diag = [int(cm[i, i]) for i in range(n)]
    rows = [int(v) for v in cm.sum(axis=1)]
    cols = [int(v) for v in cm.sum(axis=0)]

    def frac(a, b):
        return Fraction(a, b) if b else Fraction(0)

    recall = [frac(diag[i], rows[i]) for i in range(n)]
    precision = [frac(diag[i], cols[i]) for i in range(n)]
    f1 = [2 * p * r / (p + r) if p + r else Fraction(0) for p, r in zip(precision, recall)]
    return MetricsReport(
        accuracy=float(frac(sum(diag), total)),
        macro_precision=float(sum(precision) / n),
        macro_recall=float(sum(recall) / n),
        macro_f1=float(sum(f1) / n),
        per_class_accuracy=[float(r) for r in recall],
        episodes=episodes,
        confusion=cm.tolist(),
        classes=list(classes) if classes is not None else [str(i) for i in range(n)],
    )


class ModelPredictor:
    """Frozen-model predictor; embeddings are computed once per record."""

    def __init__(self, model, batch: int = 64):
        self.model = model
        self.batch = batch
        self._emb = None
        self._stats = None

    def prepare(self, data: PreparedData, record_idx: np.ndarray, source_ids: Sequence[int] = ()):
        b = self.model.store.buffers
        if "stat_mean" in b:
            norm = StatNormalizer(b["stat_mean"], b["stat_std"])
        else:
            # untrained model: fit on the source records only
            norm = fit_source_normalizer(data, source_ids)
        self._stats = norm.apply_matrix(data.stats)
        emb = {}
        with no_grad():
            for start in range(0, len(record_idx), self.batch):
                idx = record_idx[start:start + self.batch]
                for d, z in self.model.embed(*_inputs(data, idx)).items():
                    emb.setdefault(d, np.zeros((len(data), z.shape[1])))[idx] = z.data
        self._emb = emb

    def logits(self, ep: Episode) -> np.ndarray:
        with no_grad():
            support = {d: Tensor(z[ep.support_idx]) for d, z in self._emb.items()}
            query = {d: Tensor(z[ep.query_idx]) for d, z in self._emb.items()}
            return self.model.episode_logits(support, ep.support_labels, query,
                                             self._stats[ep.query_idx], ep.way).data

    def predict(self, ep: Episode) -> np.ndarray:
        return np.argmax(self.logits(ep), axis=1)


class PerfectPredictor:
    def prepare(self, data, record_idx, source_ids=()):
        pass

    def predict(self, ep: Episode) -> np.ndarray:
        return ep.query_labels.copy()


class RandomPredictor:
    def __init__(self, seed: int = 0):
        self.seed = seed

    def prepare(self, data, record_idx, source_ids=()):
        pass

    def predict(self, ep: Episode) -> np.ndarray:
        return episode_rng(self.seed, 99, ep.index).integers(0, ep.way, size=len(ep.query_idx))


def eval_episodes(data: PreparedData, cfg: EvalConfig):
    src_ids = data.domain_ids(cfg.sources)
    tgt_id = data.domain_ids([cfg.target])[0]
    if tgt_id in src_ids:
        raise EpisodeError(f"target domain {cfg.target!r} must be disjoint from the sources")
    for e in range(cfg.episodes):
        yield sample_episode(data, cfg.way, cfg.shot, cfg.query, src_ids, tgt_id,
                             episode_rng(cfg.seed, EVAL_STREAM, e), index=e, stream=EVAL_STREAM)


def evaluate(predictor, data: PreparedData, cfg: EvalConfig) -> MetricsReport:
    """Aggregate a confusion matrix over global classes across all episodes."""
    src_ids = data.domain_ids(cfg.sources)
    tgt_id = data.domain_ids([cfg.target])[0]
    predictor.prepare(data, np.flatnonzero(np.isin(data.domains, src_ids + [tgt_id])), src_ids)
    episodes = list(eval_episodes(data, cfg))
    n = len(data.classes)

    def run(chunk):
        cm = np.zeros((n, n), dtype=np.int64)
        for ep in chunk:
            pred = predictor.predict(ep)
            np.add.at(cm, (ep.classes[ep.query_labels], ep.classes[pred]), 1)
        return cm

    with no_grad():
        if cfg.workers <= 1:
            cm = run(episodes)
        else:
            chunks = [episodes[i::cfg.workers] for i in range(cfg.workers)]
            with ThreadPoolExecutor(cfg.workers) as pool:
                cm = sum(pool.map(run, chunks))
    return compute_metrics(cm, len(episodes), data.classes)


def protonet_eval(store: ParamStore, data: PreparedData, cfg: EvalConfig, metric: str = "cosine") -> MetricsReport:
    return evaluate(ModelPredictor(ProtoNetModel(store, data.length, metric)), data, cfg)


def write_confusion_csv(report: MetricsReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *report.classes])
        for name, row in zip(report.classes, report.confusion):
            w.writerow([name, *row])


def read_training_log(path) -> list[dict]:
    with open(Path(path)) as fh:
        return list(csv.DictReader(fh))
