import math

import numpy as np
import pytest

from stagewise_hfl.config import ScenarioConfig
from stagewise_hfl.cost import round_cost, pair_cost_matrix
from stagewise_hfl.engine import (METRIC_COLUMNS, LearnerSpec, SoftmaxRegression, edge_aggregate,
                                  global_aggregate, local_sgd, run_experiment, synthetic_task,
                                  train_round)
from stagewise_hfl.scenario import generate_scenario


def _toy(seed=0, n=40, dim=5, k=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, dim)), rng.integers(0, k, n), rng


def test_zero_learning_rate_leaves_the_model_unchanged():
    X, y, rng = _toy()
    w = rng.normal(size=18)
    spec = LearnerSpec(5, 3, 0.0, 4, 0.5)
    assert np.array_equal(local_sgd(w, (X, y), spec, rng), w)
    with pytest.raises(ValueError):
        local_sgd(w, (X[:0], y[:0]), spec, rng)
    with pytest.raises(ValueError):
        LearnerSpec(5, 3, 0.1, 0)


def _fd_grad(learner, w, X, y, h=1e-6):
    g = np.zeros_like(w)
    for k in range(len(w)):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (learner.loss(w + e, X, y) - learner.loss(w - e, X, y)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    X, y, rng = _toy(seed)
    learner = SoftmaxRegression(5, 3)
    w = rng.normal(scale=0.5, size=18)
    g = learner.grad(w, X, y)
    assert np.linalg.norm(g - _fd_grad(learner, w, X, y)) <= 1e-6 * np.linalg.norm(g)


def test_one_full_batch_step_is_a_gradient_step():
    X, y, rng = _toy(3)
    learner = SoftmaxRegression(5, 3)
    w = rng.normal(size=18)
    spec = LearnerSpec(5, 3, 0.3, 1, 1.0)
    new = local_sgd(w, (X, y), spec, np.random.default_rng(0), learner)
    assert np.allclose(new, w - 0.3 * learner.grad(w, X, y), rtol=0, atol=1e-15)


def test_local_sgd_is_reproducible():
    X, y, _ = _toy(4)
    spec = LearnerSpec(5, 3, 0.1, 5, 0.3)
    w = np.zeros(18)
    a = local_sgd(w, (X, y), spec, np.random.default_rng(9))
    b = local_sgd(w, (X, y), spec, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_aggregation_examples():
    w = np.array([1.0, -2.0, 3.5])
    assert np.allclose(edge_aggregate([w, w, w], [3, 5, 7]), w)
    assert np.allclose(edge_aggregate([w, 3 * w], [2, 2]), 2 * w)
    assert edge_aggregate([np.array([0.0]), np.array([4.0])], [1, 3])[0] == pytest.approx(3.0)
    assert np.array_equal(global_aggregate([w], [10.0]), w)
    assert np.allclose(global_aggregate([w, 3 * w, 100 * w], [5.0, 5.0, 0.0]), 2 * w)


@pytest.mark.parametrize("seed", range(10))
def test_aggregation_stays_in_the_convex_hull(seed):
    rng = np.random.default_rng(seed)
    models = rng.normal(size=(6, 8))
    weights = rng.uniform(0.1, 5.0, size=6)
    out = edge_aggregate(list(models), weights)
    assert np.allclose(out, weights @ models / weights.sum(), rtol=0, atol=1e-12)
    assert (out >= models.min(axis=0) - 1e-12).all() and (out <= models.max(axis=0) + 1e-12).all()


def test_synthetic_task_shapes(small_config):
    sc = generate_scenario(small_config)
    shards, (X_test, y_test) = synthetic_task(sc, small_config, 0)
    assert [len(s[1]) for s in shards] == sc.data.tolist()
    for s, c in zip(shards, sc.clients):
        assert np.array_equal(np.bincount(s[1], minlength=sc.n_labels), c.label_counts)
    assert np.array_equal(np.bincount(y_test), np.full(sc.n_labels, small_config.test_per_label))
    assert X_test.shape[1] == small_config.feature_dim


def test_centralized_training_reaches_the_sanity_ceiling():
    cfg = ScenarioConfig(n_clients=30, n_edges=2, n_labels=10, cluster_separation=4.0, seed=1)
    sc = generate_scenario(cfg)
    shards, (X_test, y_test) = synthetic_task(sc, cfg, 1)
    X = np.concatenate([s[0] for s in shards])
    y = np.concatenate([s[1] for s in shards])
    learner = SoftmaxRegression(cfg.feature_dim, 10)
    spec = LearnerSpec(cfg.feature_dim, 10, 0.5, 300, 1.0)
    w = local_sgd(learner.init(), (X, y), spec, np.random.default_rng(0), learner)
    assert learner.accuracy(w, X_test, y_test) >= 0.95


def test_identical_shards_follow_the_centralized_trajectory():
    X, y, _ = _toy(5)
    shards = [(X, y)] * 4
    spec = LearnerSpec(5, 3, 0.2, 3, 1.0)
    learner = SoftmaxRegression(5, 3)
    model = learner.init()
    central = learner.init()
    edge_of = np.array([0, 0, 1, 1])
    for g in range(3):
        model = train_round(model, edge_of, np.ones(4), shards, spec, 0, g, 2, 2, learner)
        central = local_sgd(central, (X, y), LearnerSpec(5, 3, 0.2, 6, 1.0), np.random.default_rng(0), learner)
    assert np.allclose(model, central, rtol=0, atol=1e-12)


def test_no_rounds_returns_the_initial_model(small_config):
    res = run_experiment(small_config.replace(global_rounds=0))
    assert res.metrics == [] and not res.model.any()


def test_run_records_consistent_metrics(small_config):
    res = run_experiment(small_config, seed=2)
    assert len(res.metrics) == small_config.global_rounds
    cfg = small_config.replace(seed=2)
    sc = generate_scenario(cfg)
    T, E, _ = pair_cost_matrix(sc, cfg.local_steps)
    for m, rec in zip(res.metrics, res.rounds):
        assert list(m.row()) == METRIC_COLUMNS
        delay, energy = round_cost(np.array(rec["edge_of"]), np.array(rec["xi"]), T, E, sc.backhaul_delay,
                                   sc.backhaul_energy, cfg.edge_rounds)
        assert m.cost == pytest.approx(cfg.lambda_t * delay + cfg.lambda_e * energy, rel=1e-12)
        assert min(m.delay, m.energy, m.cost, m.decision_time) >= 0
        assert 0 <= m.accuracy <= 1
    assert res.rounds_to_target(2.0) == math.inf


def test_full_participation_keeps_plan_a(small_config):
    cfg = small_config.replace(online_prob_min=1.0, online_prob_max=1.0)
    res = run_experiment(cfg, seed=1)
    hat = res.plan_a.assoc.edge_of.tolist()
    assert all(r["edge_of"] == hat for r in res.rounds)
    assert all(m.n_substitutions == 0 and m.n_dropouts == 0 for m in res.metrics)


def test_unknown_policy_is_rejected(small_config):
    with pytest.raises(ValueError):
        run_experiment(small_config, policy="oracle")
