"""Brute-force exact solvers for desk-scale instances.

Every client either stays out or joins one reachable edge; all such
assignment vectors are enumerated in lexicographic order (client 0 most
significant, option order: unselected, then edges ascending) and the first
optimum is returned. Per-subset quantities (KLD, data size, bounds) are
tabulated over client bitmasks so each candidate costs a few lookups. None of
this code shares logic with the solver kernels.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .association import AssociationMatrix, SolverOutcome
from .config import ScenarioConfig
from .cost import COST_SENTINEL, pair_cost_matrix
from .divergence import exact_violation_prob

MAX_CLIENTS = 12
MAX_COMBOS = 10 ** 7
CHUNK = 1 << 16


class OracleSizeError(ValueError):
    pass


def _subset_table(values, combine, init):
    """Table over all 2^n client subsets built by adding clients one at a time."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    shape = (1 << n,) + values.shape[1:]
    tab = np.empty(shape)
    tab[0] = init
    for k in range(n):
        lo = 1 << k
        tab[lo:2 * lo] = combine(tab[:lo], values[k])
    return tab


def _kld_rows(counts, q):
    totals = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = counts / totals[:, None]
        terms = np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0) / q), 0.0)
    out = terms.sum(axis=1)
    out[totals <= 0] = np.inf
    return out


def _u(r, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0) / q), 0.0)


class _Tables:
    """Per-subset quantities for one instance (lazily built)."""

    def __init__(self, scenario, ids):
        self.ids = ids
        self.scenario = scenario
        self.labels = scenario.labels[ids].astype(float)
        self.data = scenario.data[ids].astype(float)
        self.p = scenario.online_prob[ids].astype(float)
        self.q = scenario.reference
        add = lambda a, b: a + b
        self.counts = _subset_table(self.labels, add, 0.0)
        self.total = _subset_table(self.data, add, 0.0)
        self.kld = _kld_rows(self.counts, self.q)

    def markov(self, thr):
        ratios = self.labels / self.data[:, None]
        lo = _subset_table(ratios, np.minimum, np.inf)
        hi = _subset_table(ratios, np.maximum, -np.inf)
        off = _subset_table(1.0 - self.p, lambda a, b: a * b, 1.0)
        exp_data = _subset_table(self.p * self.data, lambda a, b: a + b, 0.0)
        stat = self.q / math.e
        u_lo, u_hi = _u(lo, self.q), _u(hi, self.q)
        g = np.where(stat >= hi, u_lo, np.where(stat <= lo, u_hi, np.maximum(u_lo, u_hi)))
        g[0] = 0.0
        bound = off + (1.0 - off) * g.sum(axis=1) / thr.kld_limit
        bound[0] = 1.0
        kld_ok = bound <= thr.delta_risk
        data_ok = exp_data >= thr.data_limit * (1.0 - thr.epsilon_risk)
        return kld_ok, data_ok

    def exact(self, thr):
        n = len(self.ids)
        kld_ok = np.zeros(1 << n, dtype=bool)
        data_ok = np.zeros(1 << n, dtype=bool)
        bits = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
        for m in range(1 << n):
            sel = bits[m].astype(bool)
            kld_ok[m] = exact_violation_prob(self.p[sel], self.labels[sel], self.data[sel], self.q,
                                             "kld", thr) <= thr.delta_risk
            data_ok[m] = exact_violation_prob(self.p[sel], self.labels[sel], self.data[sel], self.q,
                                              "data", thr) <= thr.epsilon_risk
        return kld_ok, data_ok


def _options(scenario, ids, usable):
    return [np.concatenate([[-1], np.flatnonzero(usable[i])]).astype(np.int64) for i in ids]


def _enumerate(scenario, ids, opts, T, E, config, feas_fn, obj_extra=None):
    """Scan every assignment, return (best_edge_of_over_ids, best_obj, n_feasible)."""
    n = len(ids)
    s = scenario.n_edges
    radix = np.array([len(o) for o in opts], dtype=np.int64)
    total = int(np.prod(radix)) if n else 1
    place = np.ones(n, dtype=np.int64)
    for k in range(n - 2, -1, -1):
        place[k] = place[k + 1] * radix[k + 1]
    opt_mat = np.full((n, int(radix.max()) if n else 1), -1, dtype=np.int64)
    for k, o in enumerate(opts):
        opt_mat[k, :len(o)] = o
    L = config.edge_rounds
    w = config.weights
    Tsub = T[ids]
    Esub = E[ids]
    pow2 = (1 << np.arange(n)).astype(np.int64)
    best_obj, best_vec, n_feasible = math.inf, None, 0
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
        digits = (idx[:, None] // place[None, :]) % radix[None, :]
        A = opt_mat[np.arange(n)[None, :], digits]  # (B, n) edge or -1
        onehot = A[:, :, None] == np.arange(s)[None, None, :]  # (B, n, s)
        masks = (onehot * pow2[None, :, None]).sum(axis=1)  # (B, s)
        counts = onehot.sum(axis=1)
        ok = (counts <= scenario.capacity[None, :]).all(axis=1)
        ok &= feas_fn(masks)
        if not ok.any():
            continue
        delay_edge = np.where(onehot, Tsub[None, :, :], 0.0).max(axis=1)
        energy_edge = np.where(onehot, Esub[None, :, :], 0.0).sum(axis=1)
        delay = (L * delay_edge + scenario.backhaul_delay[None, :]).max(axis=1)
        energy = (L * energy_edge + scenario.backhaul_energy[None, :]).sum(axis=1)
        obj = w.lambda_t * delay + w.lambda_e * energy
        if obj_extra is not None:
            obj = obj - obj_extra(A)
        obj = np.where(ok, obj, np.inf)
        n_feasible += int(ok.sum())
        b = int(np.argmin(obj))
        if obj[b] < best_obj:
            best_obj, best_vec = float(obj[b]), A[b].copy()
    return best_vec, best_obj, n_feasible, total


def _check_size(ids, opts):
    if len(ids) > MAX_CLIENTS:
        raise OracleSizeError(f"oracle limited to {MAX_CLIENTS} clients, got {len(ids)}")
    combos = 1
    for o in opts:
        combos *= len(o)
    if combos > MAX_COMBOS:
        raise OracleSizeError(f"{combos} assignment vectors exceed the limit of {MAX_COMBOS}")


def _outcome(scenario, ids, vec, obj, n_feasible, total, t0, role):
    edge_of = np.full(scenario.n_clients, -1, dtype=np.int64)
    feasible = vec is not None
    if feasible:
        edge_of[ids] = vec
    return SolverOutcome(AssociationMatrix(edge_of, scenario.n_edges, role), obj if feasible else math.inf,
                         feasible, {"assignments": total, "n_feasible": n_feasible,
                                    "proven_infeasible": not feasible,
                                    "wall_time": time.perf_counter() - t0})


def solve_exact_p0(scenario, xi, config: ScenarioConfig, pair_costs=None) -> SolverOutcome:
    """Exact per-round optimum: deterministic KLD and data constraints, online clients only."""
    t0 = time.perf_counter()
    T, E = pair_costs if pair_costs is not None else pair_cost_matrix(scenario, config.local_steps)[:2]
    ids = np.flatnonzero(np.asarray(xi).astype(bool))
    usable = scenario.reach & (T < COST_SENTINEL)
    opts = _options(scenario, ids, usable)
    _check_size(ids, opts)
    thr = config.thresholds
    tab = _Tables(scenario, ids)
    good = (tab.kld <= thr.kld_max) & (tab.total >= thr.d_min)
    vec, obj, nf, total = _enumerate(scenario, ids, opts, T, E, config,
                                     lambda masks: good[masks].all(axis=1))
    return _outcome(scenario, ids, vec, obj, nf, total, t0, "ground_truth")


def solve_exact_p1(scenario, config: ScenarioConfig, pair_costs=None, kld_mode: str | None = None) -> SolverOutcome:
    """Exact Plan-A optimum over all clients (every client treated as online).

    ``kld_mode`` selects the Markov surrogate constraints or the exact
    chance constraints, defaulting to ``config.kld_chance_mode``.
    """
    t0 = time.perf_counter()
    T, E = pair_costs if pair_costs is not None else pair_cost_matrix(scenario, config.local_steps)[:2]
    ids = np.arange(scenario.n_clients)
    usable = scenario.reach & (T < COST_SENTINEL)
    opts = _options(scenario, ids, usable)
    _check_size(ids, opts)
    thr = config.thresholds
    tab = _Tables(scenario, ids)
    mode = kld_mode or config.kld_chance_mode
    kld_ok, data_ok = tab.markov(thr) if mode == "markov" else tab.exact(thr)
    good = kld_ok & data_ok
    lam_c = config.weights.lambda_c
    p_log = np.log(tab.p)

    def continuity(A):
        sel = A >= 0
        k = sel.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.exp((sel * p_log[None, :]).sum(axis=1) / np.maximum(k, 1))
        return lam_c * np.where(k > 0, c, 0.0)

    vec, obj, nf, total = _enumerate(scenario, ids, opts, T, E, config,
                                     lambda masks: good[masks].all(axis=1), continuity)
    return _outcome(scenario, ids, vec, obj, nf, total, t0, "plan_a")
