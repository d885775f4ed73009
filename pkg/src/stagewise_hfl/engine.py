"""Hierarchical training loop: Plan A once, per-round policy decision, then
local SGD -> edge averaging -> global averaging."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines
from .association import AssociationMatrix
from .config import ScenarioConfig
from .cost import pair_cost_matrix, round_cost
from .participation import ParticipationTrace, estimate_online_prob, sample_trace
from .plan_a import li_long_client_d
from .plan_b import ccu
from .scenario import generate_scenario, resample_channel

STAGEWISE = "stagewise"
POLICY_NAMES = (STAGEWISE,) + tuple(baselines.POLICIES)
P_FLOOR = 0.01  # estimated probabilities are kept inside (0, 1]


# ---------------------------------------------------------------- learner


@dataclass(frozen=True)
class LearnerSpec:
    dim: int
    n_classes: int
    learning_rate: float
    local_steps: int
    batch_fraction: float = 1.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError("batch_fraction must lie in (0, 1]")

    @property
    def model_size(self) -> int:
        return (self.dim + 1) * self.n_classes


class SoftmaxRegression:
    """Multinomial logistic regression on a flat parameter vector (weights then biases)."""

    def __init__(self, dim: int, n_classes: int):
        self.dim = dim
        self.n_classes = n_classes

    def init(self) -> np.ndarray:
        return np.zeros((self.dim + 1) * self.n_classes)

    def _split(self, w):
        W = w[: self.dim * self.n_classes].reshape(self.dim, self.n_classes)
        return W, w[self.dim * self.n_classes:]

    def logits(self, w, X):
        W, b = self._split(w)
        return X @ W + b

    def loss(self, w, X, y) -> float:
        z = self.logits(w, X)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(len(y)), y].mean())

    def grad(self, w, X, y) -> np.ndarray:
        z = self.logits(w, X)
        z = z - z.max(axis=1, keepdims=True)
        prob = np.exp(z)
        prob /= prob.sum(axis=1, keepdims=True)
        prob[np.arange(len(y)), y] -= 1.0
        prob /= len(y)
        return np.concatenate([(X.T @ prob).ravel(), prob.sum(axis=0)])

    def accuracy(self, w, X, y) -> float:
        return float((self.logits(w, X).argmax(axis=1) == y).mean())


def local_sgd(model, shard, spec: LearnerSpec, rng, learner: SoftmaxRegression | None = None):
    """``spec.local_steps`` minibatch SGD steps; batches drawn without replacement."""
    X, y = shard
    if len(y) == 0:
        raise ValueError("cannot train on an empty shard")
    learner = learner or SoftmaxRegression(spec.dim, spec.n_classes)
    w = np.array(model, dtype=float, copy=True)
    batch = math.ceil(spec.batch_fraction * len(y))
    for _ in range(spec.local_steps):
        idx = rng.choice(len(y), size=batch, replace=False)
        w = w - spec.learning_rate * learner.grad(w, X[idx], y[idx])
    return w


def weighted_average(models, weights) -> np.ndarray:
    """Sum of w_k / sum(w) * model_k, accumulated in the given order."""
    weights = np.asarray(weights, dtype=float)
    if len(weights) == 0:
        raise ValueError("nothing to aggregate")
    total = weights.sum()
    if not total > 0:
        raise ValueError("aggregation weights must have a positive sum")
    out = np.zeros_like(np.asarray(models[0], dtype=float))
    for m, wt in zip(models, weights):
        out = out + (wt / total) * np.asarray(m, dtype=float)
    return out


def edge_aggregate(models, data_sizes) -> np.ndarray:
    return weighted_average(models, data_sizes)


def global_aggregate(edge_models, edge_data) -> np.ndarray:
    """Average of edge models weighted by edge data; edges without data are skipped."""
    edge_data = np.asarray(edge_data, dtype=float)
    keep = [k for k in range(len(edge_data)) if edge_data[k] > 0]
    return weighted_average([edge_models[k] for k in keep], edge_data[keep])


def client_rng(seed, g, l, i):
    return np.random.default_rng([int(seed), int(g), int(l), int(i)])


# ---------------------------------------------------------------- data


def synthetic_task(scenario, config: ScenarioConfig, seed):
    """Gaussian-mixture classification data realising every client's label counts.

    Returns ``(shards, (X_test, y_test))`` with one ``(X, y)`` shard per client
    and ``config.test_per_label`` test points per label.
    """
    rng = np.random.default_rng([int(seed), 7])
    z, dim = scenario.n_labels, config.feature_dim
    means = rng.normal(size=(z, dim))
    means *= config.cluster_separation / np.linalg.norm(means, axis=1, keepdims=True) * math.sqrt(dim) / 2

    def draw(counts):
        y = np.repeat(np.arange(z), counts)
        X = means[y] + rng.normal(size=(len(y), dim))
        return X, y

    shards = [draw(np.asarray(c.label_counts)) for c in scenario.clients]
    test = draw(np.full(z, config.test_per_label))
    return shards, test


# ---------------------------------------------------------------- metrics


@dataclass
class RoundMetrics:
    round: int
    policy: str
    delay: float
    energy: float
    cost: float
    decision_time: float
    accuracy: float
    feasible: bool
    n_selected: int
    n_participants: int
    n_dropouts: int
    n_substitutions: int
    fallback: bool

    def row(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = [f.name for f in RoundMetrics.__dataclass_fields__.values()]


@dataclass
class ExperimentResult:
    policy: str
    metrics: list
    model: np.ndarray
    plan_a: object = None
    plan_a_time: float = 0.0
    decisions: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)

    def rounds_to_target(self, target: float):
        for m in self.metrics:
            if m.accuracy >= target:
                return m.round + 1
        return math.inf


# ---------------------------------------------------------------- engine


def train_round(model, edge_of, xi, shards, spec: LearnerSpec, seed, g, n_edges, edge_rounds,
                learner=None):
    """One global round of hierarchical training; returns the new global model."""
    learner = learner or SoftmaxRegression(spec.dim, spec.n_classes)
    xi = np.asarray(xi).astype(bool)
    members = [[int(i) for i in np.flatnonzero((edge_of == j) & xi)] for j in range(n_edges)]
    sizes = [np.array([len(shards[i][1]) for i in m], dtype=float) for m in members]
    edge_models = [model for _ in range(n_edges)]
    for l in range(edge_rounds):
        for j in range(n_edges):
            if not members[j]:
                continue
            local = [local_sgd(edge_models[j], shards[i], spec, client_rng(seed, g, l, i), learner)
                     for i in members[j]]
            edge_models[j] = edge_aggregate(local, sizes[j])
    edge_data = np.array([s.sum() for s in sizes])
    if not (edge_data > 0).any():
        return np.array(model, copy=True)
    return global_aggregate(edge_models, edge_data)


def _plan_a(scenario, history, config, log):
    p_est = np.clip(estimate_online_prob(history, config.window_len, config.window_count), P_FLOOR, 1.0)
    t0 = time.perf_counter()
    out = li_long_client_d(scenario.with_online_prob(p_est), config, log=log)
    return out, time.perf_counter() - t0


def run_experiment(config: ScenarioConfig, policy: str = STAGEWISE, seed=None, *, trace=None,
                   keep_models=False, log_decisions=True) -> ExperimentResult:
    """Run ``config.global_rounds`` rounds of hierarchical training under one policy.

    The participation trace holds ``window_len * window_count`` warm-up rounds
    (the history Plan A estimates probabilities from) followed by the
    training rounds. Decision time covers only the per-round policy call.
    """
    if policy not in POLICY_NAMES:
        raise ValueError(f"unknown policy {policy!r}; choose from {', '.join(POLICY_NAMES)}")
    seed = config.seed if seed is None else int(seed)
    config = config.replace(seed=seed)
    scenario = generate_scenario(config)
    warm = config.window_len * config.window_count
    rounds = config.global_rounds
    if trace is None:
        trace = sample_trace(scenario.online_prob, warm + max(rounds, 1), [seed, 1])
    elif not isinstance(trace, ParticipationTrace):
        trace = ParticipationTrace(trace)
    if trace.rounds < warm + rounds:
        raise ValueError(f"trace has {trace.rounds} rounds, need {warm + rounds}")
    shards, (X_test, y_test) = synthetic_task(scenario, config, seed)
    spec = LearnerSpec(config.feature_dim, scenario.n_labels, config.learning_rate, config.local_steps,
                       config.batch_fraction)
    learner = SoftmaxRegression(spec.dim, spec.n_classes)
    model = learner.init()
    result = ExperimentResult(policy, [], model)
    if rounds == 0:
        return result

    pair_costs = pair_cost_matrix(scenario, config.local_steps)[:2]
    channel_rng = np.random.default_rng([seed, 2])
    plan = None
    if policy == STAGEWISE:
        plan, result.plan_a_time = _plan_a(scenario, trace.xi[:, :warm], config,
                                           result.decisions if log_decisions else None)
        result.plan_a = plan

    for g in range(rounds):
        if config.dynamic_channels and g > 0:
            scenario = resample_channel(scenario, config, channel_rng)
            pair_costs = pair_cost_matrix(scenario, config.local_steps)[:2]
        xi = trace.column(warm + g)
        if policy == STAGEWISE and config.replan_period and g > 0 and g % config.replan_period == 0:
            plan, dt = _plan_a(scenario, trace.xi[:, :warm + g], config,
                               result.decisions if log_decisions else None)
            result.plan_a_time += dt
        t0 = time.perf_counter()
        if policy == STAGEWISE:
            out = ccu(plan.assoc, xi, scenario, config, seed=seed, round_index=g, pair_costs=pair_costs)
        else:
            out = baselines.POLICIES[policy](scenario, xi, config, seed=seed * 100003 + g,
                                             pair_costs=pair_costs)
        decision_time = time.perf_counter() - t0

        edge_of = out.assoc.edge_of
        model = train_round(model, edge_of, xi, shards, spec, seed, g, scenario.n_edges,
                            config.edge_rounds, learner)
        T, E = pair_costs
        delay, energy = round_cost(edge_of, xi, T, E, scenario.backhaul_delay,
                                   scenario.backhaul_energy, config.edge_rounds)
        w = config.weights
        participants = int(((edge_of >= 0) & xi).sum())
        result.metrics.append(RoundMetrics(
            round=g, policy=policy, delay=delay, energy=energy,
            cost=w.lambda_t * delay + w.lambda_e * energy, decision_time=decision_time,
            accuracy=learner.accuracy(model, X_test, y_test), feasible=bool(out.feasible),
            n_selected=int((edge_of >= 0).sum()), n_participants=participants,
            n_dropouts=int(out.stats.get("n_dropouts", 0)),
            n_substitutions=int(out.stats.get("n_substitutions", 0)),
            fallback=bool(out.stats.get("fallback_triggered", False))))
        record = {"round": g, "policy": policy, "edge_of": edge_of.tolist(),
                  "xi": xi.astype(int).tolist(), "feasible": bool(out.feasible)}
        if "repair" in out.stats:
            record["repair"] = out.stats["repair"]
        result.rounds.append(record)
        if keep_models:
            result.trajectory.append(model.copy())
    result.model = model
    return result
