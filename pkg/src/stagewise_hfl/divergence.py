"""Label-distribution arithmetic and the KLD / data-size constraints.

Everything here is written directly from the formulas with plain numpy so
it can serve as the independent checker for the accelerated solver
kernels. Natural logarithms throughout; ``0 * log 0 == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .association import AssociationMatrix
from .config import ConfigError, ConstraintThresholds

MAX_ENUM_CLIENTS = 20


@dataclass(frozen=True)
class LabelDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("label distribution must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)


def _probs(dist):
    return dist.probs if isinstance(dist, LabelDistribution) else np.asarray(dist, dtype=float)


def edge_distribution(edge_of, xi, labels, j):
    """Normalised label histogram of the participating clients on edge ``j``.

    Returns ``None`` (the EMPTY marker) when no data reaches the edge.
    """
    mask = (np.asarray(edge_of) == j) & np.asarray(xi).astype(bool)
    counts = np.asarray(labels, dtype=float)[mask].sum(axis=0)
    total = counts.sum()
    if total <= 0:
        return None
    return LabelDistribution(counts / total)


def kld(p, q) -> float:
    """KL divergence KLD(p || q); ``inf`` when ``p`` is EMPTY."""
    if p is None:
        return math.inf
    p, q = _probs(p), _probs(q)
    if (q <= 0).any():
        raise ValueError("reference distribution must be strictly positive")
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kld_of_counts(counts, q) -> float:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        return math.inf
    return kld(counts / total, q)


def _as_edge_of(assoc):
    return assoc.edge_of if isinstance(assoc, AssociationMatrix) else np.asarray(assoc, dtype=np.int64)


@dataclass
class FeasibilityReport:
    kld: np.ndarray
    data: np.ndarray
    kld_ok: np.ndarray
    data_ok: np.ndarray
    unique_ok: bool = True
    capacity_ok: bool = True
    offline_ok: bool = True
    reach_ok: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(self.kld_ok.all() and self.data_ok.all() and self.unique_ok
                    and self.capacity_ok and self.offline_ok and self.reach_ok
                    and all(self.extra.values()))

    def problems(self) -> list:
        out = [f"edge {j}: KLD {v:.4g} too high" for j, v in enumerate(self.kld) if not self.kld_ok[j]]
        out += [f"edge {j}: data {v:.6g} too low" for j, v in enumerate(self.data) if not self.data_ok[j]]
        for name in ("unique_ok", "capacity_ok", "offline_ok", "reach_ok"):
            if not getattr(self, name):
                out.append(name.replace("_ok", "") + " violated")
        out += [k for k, v in self.extra.items() if not v]
        return out


def check_p0_constraints(assoc, xi, scenario, thresholds: ConstraintThresholds,
                         use_kld: bool = True) -> FeasibilityReport:
    """Deterministic per-round constraints (KLD, data size, uniqueness, capacity, offline)."""
    if isinstance(assoc, AssociationMatrix):
        matrix = assoc.matrix
    else:
        matrix = np.asarray(assoc)
        if matrix.ndim == 1:
            matrix = AssociationMatrix(matrix, scenario.n_edges).matrix
    xi = np.asarray(xi).astype(bool)
    unique_ok = bool((matrix.sum(axis=1) <= 1).all())
    capacity_ok = bool((matrix.sum(axis=0) <= scenario.capacity).all())
    offline_ok = bool((matrix[~xi] == 0).all())
    reach_ok = bool((matrix[~scenario.reach] == 0).all())
    active = matrix * xi[:, None]
    counts = active.T @ scenario.labels  # (S, Z)
    data = active.T @ scenario.data
    klds = np.array([kld_of_counts(c, scenario.reference) for c in counts])
    kld_ok = klds <= thresholds.kld_max if use_kld else np.ones(len(klds), dtype=bool)
    return FeasibilityReport(klds, data, kld_ok, data >= thresholds.d_min,
                             unique_ok, capacity_ok, offline_ok, reach_ok)


def check_p2_constraints(assoc_tilde, assoc_hat, xi, scenario, thresholds) -> FeasibilityReport:
    """Plan-B constraints: the deterministic set plus 'keep every online long-term client'."""
    report = check_p0_constraints(assoc_tilde, xi, scenario, thresholds)
    xi = np.asarray(xi).astype(bool)
    hat, tilde = _as_edge_of(assoc_hat), _as_edge_of(assoc_tilde)
    keep = (hat >= 0) & xi
    report.extra["long-term clients kept"] = bool((tilde[keep] == hat[keep]).all())
    return report


def U(rho, q_h):
    """rho * ln(rho / q_h) with U(0) = 0."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rho > 0, rho * np.log(np.where(rho > 0, rho, 1.0) / q_h), 0.0)
    return out if out.ndim else float(out)


def piecewise_bound_G(labels, data, q, h) -> float:
    """Upper bound of U over every mixture ratio the given clients can realise for label h."""
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    data = np.atleast_1d(np.asarray(data, dtype=float))
    if len(data) == 0:
        raise ValueError("piecewise bound needs at least one client")
    ratios = labels[:, h] / data
    lo, hi = ratios.min(), ratios.max()
    q_h = float(_probs(q)[h])
    stationary = q_h / math.e
    if stationary >= hi:
        return U(lo, q_h)
    if stationary <= lo:
        return U(hi, q_h)
    return max(U(lo, q_h), U(hi, q_h))


def markov_kld_bound(online_prob, labels, data, q, thresholds: ConstraintThresholds) -> float:
    """Left-hand side of the Plan-A KLD chance constraint for one edge.

    An edge with no clients is always empty, so its bound is 1.
    """
    limit = thresholds.kld_max - thresholds.delta_k
    if limit <= 0:
        raise ConfigError("kld_max", "must exceed delta_k")
    p = np.atleast_1d(np.asarray(online_prob, dtype=float))
    if len(p) == 0:
        return 1.0
    all_off = float(np.prod(1.0 - p))
    g_total = sum(piecewise_bound_G(labels, data, q, h) for h in range(len(_probs(q))))
    return all_off + (1.0 - all_off) * g_total / limit


def markov_data_bound(online_prob, data, thresholds: ConstraintThresholds) -> bool:
    expected = float(np.dot(np.asarray(online_prob, dtype=float), np.asarray(data, dtype=float)))
    return expected >= thresholds.data_limit * (1.0 - thresholds.epsilon_risk)


def _patterns(k: int) -> np.ndarray:
    idx = np.arange(2 ** k)[:, None]
    return ((idx >> np.arange(k)[None, :]) & 1).astype(bool)


def exact_violation_prob(online_prob, labels, data, q, kind: str, thresholds: ConstraintThresholds) -> float:
    """Exact probability, over all 2^k participation patterns, that an edge violates.

    ``kind='kld'``: KLD > kld_max - delta_k (an empty edge counts as a violation).
    ``kind='data'``: total data < d_min + delta_d.
    """
    p = np.atleast_1d(np.asarray(online_prob, dtype=float))
    k = len(p)
    if k > MAX_ENUM_CLIENTS:
        raise ValueError(f"exact enumeration limited to {MAX_ENUM_CLIENTS} clients, got {k}")
    labels = np.asarray(labels, dtype=float).reshape(k, len(_probs(q)))
    data = np.asarray(data, dtype=float).reshape(k)
    pats = _patterns(k)
    weight = np.prod(np.where(pats, p, 1.0 - p), axis=1)
    if kind == "data":
        bad = pats @ data < thresholds.data_limit
    elif kind == "kld":
        q = _probs(q)
        counts = pats.astype(float) @ labels
        totals = counts.sum(axis=1)
        bad = np.array([kld_of_counts(c, q) > thresholds.kld_limit for c in counts])
        bad |= totals <= 0
    else:
        raise ValueError(f"unknown violation kind {kind!r}")
    return float(weight[bad].sum())


@dataclass
class PlanAReport:
    kld_bound: np.ndarray
    expected_data: np.ndarray
    kld_ok: np.ndarray
    data_ok: np.ndarray
    capacity_ok: bool
    reach_ok: bool

    @property
    def feasible(self) -> bool:
        return bool(self.kld_ok.all() and self.data_ok.all() and self.capacity_ok and self.reach_ok)


def check_plan_a_constraints(assoc, scenario, thresholds: ConstraintThresholds,
                             kld_mode: str = "markov") -> PlanAReport:
    """Capacity plus the two Plan-A chance constraints, evaluated edge by edge.

    ``kld_mode='markov'`` uses the closed-form Markov surrogate;
    ``kld_mode='exact'`` enumerates participation patterns and checks the
    underlying probabilities directly.
    """
    edge_of = _as_edge_of(assoc)
    s = scenario.n_edges
    p, d, y = scenario.online_prob, scenario.data, scenario.labels
    bound = np.zeros(s)
    expected = np.zeros(s)
    kld_ok = np.zeros(s, dtype=bool)
    data_ok = np.zeros(s, dtype=bool)
    for j in range(s):
        m = edge_of == j
        expected[j] = float(p[m] @ d[m])
        if kld_mode == "markov":
            bound[j] = markov_kld_bound(p[m], y[m], d[m], scenario.reference, thresholds)
            data_ok[j] = markov_data_bound(p[m], d[m], thresholds)
        elif kld_mode == "exact":
            bound[j] = exact_violation_prob(p[m], y[m], d[m], scenario.reference, "kld", thresholds)
            data_ok[j] = exact_violation_prob(p[m], y[m], d[m], scenario.reference, "data",
                                              thresholds) <= thresholds.epsilon_risk
        else:
            raise ValueError(f"unknown kld_mode {kld_mode!r}")
        kld_ok[j] = bound[j] <= thresholds.delta_risk
    counts = np.bincount(edge_of[edge_of >= 0], minlength=s)
    sel = np.flatnonzero(edge_of >= 0)
    reach_ok = bool(scenario.reach[sel, edge_of[sel]].all())
    return PlanAReport(bound, expected, kld_ok, data_ok, bool((counts <= scenario.capacity).all()),
                       reach_ok)


def estimate_violation_rate(assoc, scenario, thresholds: ConstraintThresholds, trials: int, seed):
    """Monte-Carlo violation rates (delta_hat, eps_hat), averaged over edges."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    edge_of = _as_edge_of(assoc)
    rng = np.random.default_rng(seed)
    xi = rng.random((trials, scenario.n_clients)) < scenario.online_prob[None, :]
    kld_bad = np.zeros(scenario.n_edges)
    data_bad = np.zeros(scenario.n_edges)
    for j in range(scenario.n_edges):
        m = (edge_of == j).astype(float)
        active = xi * m[None, :]
        counts = active @ scenario.labels
        totals = active @ scenario.data
        kl = np.array([kld_of_counts(c, scenario.reference) for c in counts])
        kld_bad[j] = np.mean(kl > thresholds.kld_limit)
        data_bad[j] = np.mean(totals < thresholds.data_limit)
    return float(kld_bad.mean()), float(data_bad.mean())
