import itertools
import math

import numpy as np
import pytest

from conftest import label_only_data
from duple.diffcore import ParamStore
from duple.episodic import (
    EpisodeError,
    EvalConfig,
    ModelPredictor,
    PerfectPredictor,
    ProvenanceError,
    RandomPredictor,
    TrainConfig,
    TrainingError,
    compute_metrics,
    eligible_classes,
    episode_rng,
    eval_episodes,
    evaluate,
    meta_train,
    protonet_eval,
    sample_episode,
    train_step,
)
from duple.model import REDUCTION, AblationConfig, DupleModel, ProtoNetModel
from oracles import hand_metrics

SRC, TGT = ("d00", "d01"), "d02"


def _grid(per_cell=20, classes=3, domains=3):
    lab, dom = np.meshgrid(np.arange(classes), np.arange(domains), indexing="ij")
    return label_only_data(np.repeat(lab.ravel(), per_cell), np.repeat(dom.ravel(), per_cell))


def test_episode_sizes_and_invariants():
    data = _grid()
    ep = sample_episode(data, 3, 3, 12, SRC, TGT, episode_rng(222, 1, 0))
    assert len(ep.support_idx) == 9 and len(ep.query_idx) == 36
    assert np.all(np.bincount(ep.query_labels) == 12)
    assert set(ep.support_labels.tolist()) == set(ep.query_labels.tolist())
    assert not set(ep.support_idx.tolist()) & set(ep.query_idx.tolist())
    assert set(data.domains[ep.support_idx].tolist()) <= {0, 1}
    assert set(data.domains[ep.query_idx].tolist()) == {2}
    np.testing.assert_array_equal(data.labels[ep.query_idx], ep.classes[ep.query_labels])


def test_same_stream_same_episode():
    data = _grid()
    a = sample_episode(data, 3, 3, 12, SRC, TGT, episode_rng(222, 1, 7))
    b = sample_episode(data, 3, 3, 12, SRC, TGT, episode_rng(222, 1, 7))
    for f in ("classes", "support_idx", "query_idx", "support_labels", "query_labels"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def _brute_force_eligible(labels, domains, k, q, src, tgt):
    """Enumerate every (support set, query set) choice per class; eligible if any legal pair exists."""
    out = []
    for c in sorted(set(labels)):
        recs = [i for i in range(len(labels)) if labels[i] == c]
        s_pool = [i for i in recs if domains[i] in src]
        t_pool = [i for i in recs if domains[i] == tgt]
        ok = any(not set(s) & set(qq)
                 for qq in itertools.combinations(t_pool, q)
                 for s in itertools.combinations(s_pool, k))
        if ok:
            out.append(c)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_eligibility_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    k, q = 2, 3
    # 5 classes, per-class random source / target counts around the thresholds
    labels, domains = [], []
    for c in range(5):
        ns, nt = rng.integers(0, 4, size=2)
        labels += [c] * (ns + nt)
        domains += [int(rng.integers(0, 2)) for _ in range(ns)] + [2] * nt
    got = eligible_classes(labels, domains, k, q, [0, 1], 2)
    assert got == _brute_force_eligible(labels, domains, k, q, {0, 1}, 2)


def test_class_with_q_minus_one_target_samples_is_excluded():
    labels = [0] * 10 + [1] * 10
    domains = [0] * 5 + [2] * 5 + [0] * 5 + [2] * 4
    domains += [0]
    assert eligible_classes(labels, domains, 3, 5, [0], 2) == [0]
    data = label_only_data(labels, domains)
    with pytest.raises(EpisodeError, match="only 1 eligible"):
        sample_episode(data, 2, 3, 5, [0], 2, episode_rng(0, 0, 0))


def test_hand_computed_metrics():
    cm = [[10, 2], [6, 6]]
    r = compute_metrics(cm, 1, ["a", "b"])
    assert r.accuracy == pytest.approx(0.6667, abs=5e-5) and r.accuracy == 16 / 24
    assert r.macro_recall == r.accuracy
    assert r.macro_precision == 0.6875
    assert r.macro_f1 == pytest.approx(0.6571, abs=5e-5)
    assert r.macro_f1 == pytest.approx((0.7142857142857143 + 0.6) / 2, abs=1e-15)
    acc, p, rec, f1 = hand_metrics(cm)
    assert (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1) == (float(acc), float(p), float(rec), float(f1))


def test_zero_division_convention():
    r = compute_metrics([[3, 0], [3, 0]])
    assert r.per_class_accuracy == [1.0, 0.0]
    assert r.macro_precision == 0.25  # (3/6 + 0/0 -> 0) / 2


def test_perfect_predictor():
    r = evaluate(PerfectPredictor(), _grid(), EvalConfig(episodes=20, sources=SRC, target=TGT))
    assert r.accuracy == r.macro_precision == r.macro_recall == r.macro_f1 == 1.0
    cm = np.array(r.confusion)
    assert np.all(cm == np.diag(np.diag(cm))) and cm.sum() == 20 * 3 * 12


def test_random_predictor_is_at_chance():
    data = _grid(per_cell=20, classes=4)
    r = evaluate(RandomPredictor(5), data, EvalConfig(way=4, episodes=1000, sources=SRC, target=TGT))
    assert abs(r.accuracy - 0.25) <= 0.02
    assert r.accuracy == r.macro_recall
    assert np.sum(r.confusion) == 1000 * 4 * 12


def test_parallel_evaluation_matches_serial():
    data = _grid()
    cfg = dict(episodes=40, sources=SRC, target=TGT)
    a = evaluate(RandomPredictor(1), data, EvalConfig(**cfg))
    b = evaluate(RandomPredictor(1), data, EvalConfig(workers=3, **cfg))
    assert a.to_dict() == b.to_dict()


def test_target_in_sources_is_rejected():
    with pytest.raises(EpisodeError):
        evaluate(PerfectPredictor(), _grid(), EvalConfig(episodes=1, sources=("d00", "d02"), target="d02"))


def test_initial_loss_near_log_n(small_data):
    model = DupleModel(ParamStore(222), small_data.length, small_data.spec_shape)
    norm = np.zeros_like(small_data.stats)
    losses = [train_step(model, small_data, sample_episode(small_data, 3, 2, 3, ["d00"], "d01",
                                                          episode_rng(1, 0, i)), norm)[0].item()
              for i in range(5)]
    assert abs(np.mean(losses) - math.log(3)) <= 0.5


def _short_train(data, seed=222, episodes=6, ablation=AblationConfig()):
    model = DupleModel(ParamStore(seed), data.length, data.spec_shape, ablation)
    tlog = meta_train(model, data, TrainConfig(shot=2, query=2, episodes=episodes, seed=seed, sources=SRC, target=TGT))
    return model, tlog


def test_training_is_deterministic_and_source_only(small_data):
    m1, log1 = _short_train(small_data)
    m2, log2 = _short_train(small_data)
    for n in m1.store.names():
        np.testing.assert_array_equal(m1.store[n].data, m2.store[n].data)
    assert log1.rows == log2.rows
    assert log1.domains_touched == {0, 1}
    assert {r[3] for r in log1.rows} == set(SRC)
    # normalizer fit on sources only
    src = np.isin(small_data.domains, [0, 1])
    np.testing.assert_array_equal(m1.store.buffers["stat_mean"], small_data.stats[src].mean(axis=0))


def test_target_listed_as_source_is_a_provenance_error(small_data):
    model = DupleModel(ParamStore(1), small_data.length, small_data.spec_shape)
    with pytest.raises(ProvenanceError):
        meta_train(model, small_data, TrainConfig(episodes=1, sources=("d00", "d02"), target="d02"))


def test_non_finite_loss_halts_with_episode_index(small_data):
    model = DupleModel(ParamStore(1), small_data.length, small_data.spec_shape)
    model.store["lambda_raw"].data[...] = np.inf
    with pytest.raises(TrainingError, match="episode 0"):
        meta_train(model, small_data, TrainConfig(episodes=3, sources=SRC, target=TGT))


def test_reduction_mode_matches_cosine_protonet(small_data):
    store = ParamStore(3)
    duple = DupleModel(store, small_data.length, small_data.spec_shape, overrides=REDUCTION)
    proto = ProtoNetModel(store, small_data.length, "cosine")
    cfg = EvalConfig(shot=3, query=5, episodes=30, sources=SRC, target=TGT)
    pd, pp = ModelPredictor(duple), ModelPredictor(proto)
    src = np.flatnonzero(np.isin(small_data.domains, [0, 1, 2]))
    pd.prepare(small_data, src, [0, 1])
    pp.prepare(small_data, src, [0, 1])
    for ep in eval_episodes(small_data, cfg):
        a, b = pd.logits(ep), pp.logits(ep)
        assert np.abs(a - b).max() <= 1e-9
        np.testing.assert_array_equal(np.argmax(a, 1), np.argmax(b, 1))


def test_protonet_metric_options(small_data):
    store = ParamStore(4)
    cfg = EvalConfig(episodes=10, query=5, sources=SRC, target=TGT)
    for metric in ("cosine", "euclidean"):
        r = protonet_eval(store, small_data, cfg, metric)
        assert 0 <= r.accuracy <= 1 and r.accuracy == r.macro_recall
        assert np.sum(r.confusion) == 10 * 3 * 5
