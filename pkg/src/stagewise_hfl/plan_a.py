"""Long-term pre-decision: GoC association (greedy + backtracking) inside an
Add / Remove / Exchange local search over the selected client set."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .association import AssociationMatrix, SolverOutcome
from .config import ConfigError, ConstraintThresholds, CostWeights, ScenarioConfig
from .cost import pair_cost_matrix


class InfeasibleStart(RuntimeError):
    """No feasible initial selection within the attempt budget."""

    def __init__(self, message, best_mask=None):
        super().__init__(message)
        self.best_mask = best_mask


@dataclass
class PackedProblem:
    """Array form of one association problem, ready for the kernels.

    ``pool`` marks the clients the search may select (all clients for Plan A,
    the online ones for per-round solvers).
    """

    p: np.ndarray
    d: np.ndarray
    Y: np.ndarray
    q: np.ndarray
    T: np.ndarray
    E: np.ndarray
    reach: np.ndarray
    cap: np.ndarray
    tb: np.ndarray
    eb: np.ndarray
    params: np.ndarray
    modes: np.ndarray
    pool: np.ndarray
    role: str = "plan_a"

    @property
    def n_clients(self):
        return len(self.p)

    @property
    def n_edges(self):
        return len(self.cap)

    def evaluate(self, edge_of):
        obj, viol = K.evaluate(np.asarray(edge_of, dtype=np.int64), self.p, self.d, self.Y, self.q,
                               self.T, self.E, self.reach, self.cap, self.tb, self.eb,
                               self.params, self.modes)
        return float(obj), float(viol)

    def goc(self, selected, budget):
        out = np.full(self.n_clients, -1, dtype=np.int64)
        feasible, obj, viol, nodes = K.goc_associate(
            np.asarray(selected, dtype=np.bool_), self.p, self.d, self.Y, self.q, self.T, self.E,
            self.reach, self.cap, self.tb, self.eb, self.params, self.modes, int(budget), out)
        return bool(feasible), float(obj), float(viol), int(nodes), out


def _params(config, weights, *, kld_thr, delta, data_thr, eps, q):
    params = np.zeros(K.N_PARAMS)
    params[K.P_ROUNDS] = config.edge_rounds
    params[K.P_LT] = weights.lambda_t
    params[K.P_LE] = weights.lambda_e
    params[K.P_LC] = weights.lambda_c
    params[K.P_KLD_THR] = kld_thr
    params[K.P_DELTA] = delta
    params[K.P_DATA_THR] = data_thr
    params[K.P_EPS] = eps
    # an edge without data is scored above any attainable divergence
    params[K.P_KLD_EMPTY] = max(math.log(1.0 / q.min()), kld_thr) + 1.0
    return params


def _base_arrays(scenario, config, pair_costs):
    T, E = pair_costs if pair_costs is not None else pair_cost_matrix(scenario, config.local_steps)[:2]
    return dict(
        p=np.ascontiguousarray(scenario.online_prob, dtype=float),
        d=np.ascontiguousarray(scenario.data, dtype=float),
        Y=np.ascontiguousarray(scenario.labels, dtype=float),
        q=np.ascontiguousarray(scenario.reference, dtype=float),
        T=np.ascontiguousarray(T, dtype=float),
        E=np.ascontiguousarray(E, dtype=float),
        cap=np.ascontiguousarray(scenario.capacity, dtype=np.int64),
        tb=np.ascontiguousarray(scenario.backhaul_delay, dtype=float),
        eb=np.ascontiguousarray(scenario.backhaul_energy, dtype=float),
    )


def pack_plan_a(scenario, config: ScenarioConfig, weights: CostWeights | None = None,
                thresholds: ConstraintThresholds | None = None, kld_mode: str | None = None,
                pair_costs=None) -> PackedProblem:
    """P1: every client assumed online, chance constraints on KLD and data size."""
    weights = weights or config.weights
    thr = thresholds or config.thresholds
    kld_mode = kld_mode or config.kld_chance_mode
    a = _base_arrays(scenario, config, pair_costs)
    if kld_mode == "markov":
        modes = np.array([K.OBJ_COST, K.KLD_MARKOV, K.DATA_MARKOV], dtype=np.int64)
        data_thr = thr.data_limit * (1.0 - thr.epsilon_risk)
    elif kld_mode == "exact":
        modes = np.array([K.OBJ_COST, K.KLD_EXACT, K.DATA_EXACT], dtype=np.int64)
        data_thr = thr.data_limit
    else:
        raise ConfigError("kld_chance_mode", f"unknown mode {kld_mode!r}")
    params = _params(config, weights, kld_thr=thr.kld_limit, delta=thr.delta_risk,
                     data_thr=data_thr, eps=thr.epsilon_risk, q=a["q"])
    return PackedProblem(reach=np.ascontiguousarray(scenario.reach, dtype=np.bool_), params=params,
                         modes=modes, pool=np.ones(scenario.n_clients, dtype=bool), role="plan_a", **a)


def pack_p0(scenario, xi, config: ScenarioConfig, weights: CostWeights | None = None,
            thresholds: ConstraintThresholds | None = None, *, use_kld=True, objective="cost",
            role="ground_truth", pair_costs=None) -> PackedProblem:
    """Per-round problem over the online clients with deterministic constraints.

    The continuity term is dropped (lambda_c = 0); offline clients lose every
    reachable edge so no solver can pick them.
    """
    w = weights or config.weights
    w = CostWeights(w.lambda_t, w.lambda_e, 0.0)
    thr = thresholds or config.thresholds
    a = _base_arrays(scenario, config, pair_costs)
    xi = np.asarray(xi).astype(bool)
    reach = np.ascontiguousarray(scenario.reach & xi[:, None], dtype=np.bool_)
    modes = np.array([K.OBJ_COST if objective == "cost" else K.OBJ_KLD,
                      K.KLD_DET if use_kld else K.KLD_NONE, K.DATA_DET], dtype=np.int64)
    params = _params(config, w, kld_thr=thr.kld_max, delta=thr.delta_risk, data_thr=thr.d_min,
                     eps=thr.epsilon_risk, q=a["q"])
    return PackedProblem(reach=reach, params=params, modes=modes, pool=xi.copy(), role=role, **a)


def _key(viol, obj):
    return (viol, obj)


def goc_min_c2e(selected, scenario=None, config: ScenarioConfig | None = None, *, problem=None,
                budget=None) -> SolverOutcome:
    """Associate the given client set with edges by gain-of-cost minimisation.

    ``selected`` is a boolean mask or an iterable of client ids. Either a
    packed ``problem`` or ``scenario`` + ``config`` must be supplied.
    """
    if problem is None:
        problem = pack_plan_a(scenario, config)
    n = problem.n_clients
    mask = np.zeros(n, dtype=bool)
    sel = np.asarray(selected)
    if sel.dtype == bool:
        mask[:] = sel
    else:
        mask[sel.astype(int)] = True
    if not mask.any():
        raise ValueError("goc_min_c2e needs a non-empty client set")
    if budget is None:
        budget = config.backtrack_budget if config is not None else 10 ** 6
    t0 = time.perf_counter()
    feasible, obj, viol, nodes, edge_of = problem.goc(mask, budget)
    return SolverOutcome(AssociationMatrix(edge_of, problem.n_edges, problem.role), obj, feasible,
                         {"violation": viol, "backtrack_nodes": nodes,
                          "wall_time": time.perf_counter() - t0})


class Associator:
    """Callable wrapper turning a selection mask into (feasible, objective, violation, edge_of).

    The default rule is GoC; subclasses in ``baselines`` swap in random or
    greedy association.
    """

    def __init__(self, problem: PackedProblem, budget: int):
        self.problem = problem
        self.budget = int(budget)
        self.calls = 0
        self.nodes = 0

    def associate(self, mask):
        return self.problem.goc(mask, self.budget)

    def __call__(self, mask):
        self.calls += 1
        feasible, obj, viol, nodes, edge_of = self.associate(mask)
        self.nodes += nodes
        return feasible, obj, viol, edge_of


def initial_selection(problem: PackedProblem, seed, attempts: int = 20, associator=None,
                      budget: int = 2000) -> np.ndarray:
    """Randomised greedy start: add pool clients in random order until the association is feasible.

    Raises :class:`InfeasibleStart` (carrying the least-violating attempt) when
    no attempt succeeds.
    """
    assoc = associator or Associator(problem, budget)
    rng = np.random.default_rng(seed)
    pool = np.flatnonzero(problem.pool)
    room = int(problem.cap.sum())
    best_mask, best_key = None, None
    for _ in range(max(1, attempts)):
        mask = np.zeros(problem.n_clients, dtype=bool)
        for i in rng.permutation(pool):
            if mask.sum() >= room:
                break
            mask[i] = True
            feasible, obj, viol, _ = assoc(mask)
            key = _key(viol, obj)
            if best_key is None or key < best_key:
                best_key, best_mask = key, mask.copy()
            if feasible:
                return mask
    raise InfeasibleStart(f"no feasible initial selection in {attempts} attempts", best_mask)


def local_search(problem: PackedProblem, start_mask, associator, max_sweeps: int = 50,
                 log: list | None = None, locked=None):
    """Add -> Remove -> Exchange sweeps over the pool, accepting strict improvements.

    Candidates are compared on (violation, objective), so a feasible set
    always beats an infeasible one and, among feasible sets, lower cost
    wins. ``locked`` clients are never removed. Returns
    ``(mask, (feasible, obj, viol, edge_of), sweeps)``.
    """
    pool = problem.pool
    locked = np.zeros(problem.n_clients, dtype=bool) if locked is None else np.asarray(locked, bool)
    room = int(problem.cap.sum())
    cur_mask = np.asarray(start_mask, dtype=bool).copy()
    cur = associator(cur_mask)
    cur_key = _key(cur[2], cur[1])
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        improved = False
        for op in ("add", "remove", "exchange"):
            base = cur_mask.copy()
            inside = np.flatnonzero(base & ~locked)
            outside = np.flatnonzero(pool & ~base)
            if op == "add":
                if base.sum() >= room:
                    continue
                moves = [((), (int(i),)) for i in outside]
            elif op == "remove":
                if base.sum() <= 1:
                    continue
                moves = [((int(i),), ()) for i in inside]
            else:
                moves = [((int(i),), (int(k),)) for i in inside for k in outside]
            best = None
            best_key = cur_key
            ref_obj = cur[1]
            for out_ids, in_ids in moves:
                cand = base.copy()
                cand[list(out_ids)] = False
                cand[list(in_ids)] = True
                res = associator(cand)
                key = _key(res[2], res[1])
                better = key < best_key
                if log is not None:
                    log.append({"op": op, "remove": list(out_ids), "add": list(in_ids),
                                "delta_f": res[1] - ref_obj, "violation": res[2],
                                "feasible": bool(res[0]), "accepted": False})
                if better:
                    best, best_key = (cand, res, len(log) - 1 if log is not None else None), key
            if best is not None:
                cur_mask, cur, idx = best
                cur_key = best_key
                improved = True
                if log is not None:
                    log[idx]["accepted"] = True
        if not improved:
            break
    return cur_mask, cur, sweeps


def li_long_client_d(scenario=None, config: ScenarioConfig | None = None, init_seed=None, *,
                     problem: PackedProblem | None = None, associator=None, log: list | None = None,
                     budget: int | None = None) -> SolverOutcome:
    """Local-iteration long-term client determination.

    Starts from :func:`initial_selection` and improves the selected set with
    Add/Remove/Exchange sweeps, each candidate associated by GoC. When no
    feasible start exists the search still runs from the least-violating
    start and the outcome is marked infeasible.
    """
    t0 = time.perf_counter()
    if problem is None:
        problem = pack_plan_a(scenario, config)
    cfg = config or ScenarioConfig()
    budget = cfg.search_backtrack_budget if budget is None else budget
    assoc = associator or Associator(problem, budget)
    seed = cfg.seed if init_seed is None else init_seed
    stats = {"init_feasible": True}
    if not problem.pool.any():
        return SolverOutcome(AssociationMatrix.empty(problem.n_clients, problem.n_edges, problem.role),
                             math.inf, False, {"reason": "empty client pool",
                                               "wall_time": time.perf_counter() - t0})
    try:
        start = initial_selection(problem, seed, cfg.init_attempts, assoc)
    except InfeasibleStart as exc:
        start = exc.best_mask
        stats["init_feasible"] = False
    mask, (feasible, obj, viol, edge_of), sweeps = local_search(
        problem, start, assoc, cfg.max_sweeps, log)
    stats.update({"sweeps": sweeps, "violation": viol, "goc_calls": assoc.calls,
                  "backtrack_nodes": assoc.nodes, "n_selected": int(mask.sum()),
                  "wall_time": time.perf_counter() - t0})
    return SolverOutcome(AssociationMatrix(edge_of, problem.n_edges, problem.role), obj, feasible, stats)
