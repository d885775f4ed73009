"""Benchmark per-round decision policies.

Every policy has the signature ``policy(scenario, xi, config, seed=None,
pair_costs=None) -> SolverOutcome`` and only ever selects online clients.
Apart from ``orig_prob_solver`` and ``kld_minimization`` the policies do not
enforce the KLD constraint.
"""

from __future__ import annotations

import time

import networkx as nx
import numpy as np

from .association import AssociationMatrix, SolverOutcome
from .config import ScenarioConfig
from .cost import COST_SENTINEL, pair_cost_matrix
from .plan_a import Associator, li_long_client_d, pack_p0

FLOW_SCALE = 1e6  # delay resolution used for integer min-cost flow weights


def _pairs(scenario, config, pair_costs):
    return pair_costs if pair_costs is not None else pair_cost_matrix(scenario, config.local_steps)[:2]


def _no_clients(scenario, role="ground_truth"):
    return SolverOutcome(AssociationMatrix.empty(scenario.n_clients, scenario.n_edges, role),
                         float("inf"), False, {"reason": "no online client"})


def _finish(problem, edge_of, t0, **stats):
    obj, viol = problem.evaluate(edge_of)
    stats.update(violation=viol, wall_time=time.perf_counter() - t0)
    return SolverOutcome(AssociationMatrix(edge_of, problem.n_edges), obj, viol == 0.0, stats)


def orig_prob_solver(scenario, xi, config: ScenarioConfig, seed=None, pair_costs=None) -> SolverOutcome:
    """Solve the per-round problem directly with the Plan-A search over online clients."""
    if not np.any(xi):
        return _no_clients(scenario)
    problem = pack_p0(scenario, xi, config, pair_costs=_pairs(scenario, config, pair_costs))
    return li_long_client_d(config=config, problem=problem, init_seed=seed)


def kld_minimization(scenario, xi, config: ScenarioConfig, seed=None, pair_costs=None) -> SolverOutcome:
    """Minimise the mean edge KLD subject to the data-size constraint.

    ``objective`` of the outcome is the mean KLD; the round cost is in
    ``stats['cost']``.
    """
    if not np.any(xi):
        return _no_clients(scenario)
    pc = _pairs(scenario, config, pair_costs)
    problem = pack_p0(scenario, xi, config, use_kld=False, objective="kld", pair_costs=pc)
    out = li_long_client_d(config=config, problem=problem, init_seed=seed)
    cost_problem = pack_p0(scenario, xi, config, use_kld=False, pair_costs=pc)
    out.stats["cost"] = cost_problem.evaluate(out.assoc.edge_of)[0]
    return out


class RandomAssociator(Associator):
    """Associates a client set uniformly at random among reachable, non-full edges.

    The draw depends only on (seed, client set), so re-evaluating a set
    returns the same association.
    """

    def __init__(self, problem, seed):
        super().__init__(problem, 0)
        self.seed = int(seed)

    def associate(self, mask):
        ids = np.flatnonzero(mask)
        rng = np.random.default_rng([self.seed, *ids.tolist()])
        edge_of = np.full(self.problem.n_clients, -1, dtype=np.int64)
        counts = np.zeros(self.problem.n_edges, dtype=np.int64)
        for i in ids:
            free = np.flatnonzero(self.problem.reach[i] & (counts < self.problem.cap)
                                  & (self.problem.T[i] < COST_SENTINEL))
            if len(free):
                j = int(rng.choice(free))
                edge_of[i] = j
                counts[j] += 1
        obj, viol = self.problem.evaluate(edge_of)
        viol += float(len(ids) - counts.sum())  # clients left without an edge
        return viol == 0.0, obj, viol, 0, edge_of


class GreedyLatencyAssociator(Associator):
    """Each client, in id order, joins its lowest-upload-delay edge that still has room."""

    def __init__(self, problem, t_com):
        super().__init__(problem, 0)
        self.t_com = t_com

    def associate(self, mask):
        ids = np.flatnonzero(mask)
        edge_of = np.full(self.problem.n_clients, -1, dtype=np.int64)
        counts = np.zeros(self.problem.n_edges, dtype=np.int64)
        for i in ids:
            ok = self.problem.reach[i] & (counts < self.problem.cap) & (self.t_com[i] < COST_SENTINEL)
            if ok.any():
                cand = np.flatnonzero(ok)
                j = int(cand[np.argmin(self.t_com[i, cand])])
                edge_of[i] = j
                counts[j] += 1
        obj, viol = self.problem.evaluate(edge_of)
        viol += float(len(ids) - counts.sum())
        return viol == 0.0, obj, viol, 0, edge_of


def client_sel_only(scenario, xi, config: ScenarioConfig, seed=None, pair_costs=None) -> SolverOutcome:
    """Local search over the client set; association drawn at random."""
    if not np.any(xi):
        return _no_clients(scenario)
    seed = config.seed if seed is None else seed
    problem = pack_p0(scenario, xi, config, use_kld=False, pair_costs=_pairs(scenario, config, pair_costs))
    return li_long_client_d(config=config, problem=problem, init_seed=seed,
                            associator=RandomAssociator(problem, seed))


def c2e_greedy_assoc(scenario, xi, config: ScenarioConfig, seed=None, pair_costs=None) -> SolverOutcome:
    """Local search over the client set; each client greedily joins its fastest-upload edge."""
    if not np.any(xi):
        return _no_clients(scenario)
    T, E, t_com = pair_cost_matrix(scenario, config.local_steps)
    if pair_costs is not None:
        T, E = pair_costs
    problem = pack_p0(scenario, xi, config, use_kld=False, pair_costs=(T, E))
    return li_long_client_d(config=config, problem=problem, init_seed=seed,
                            associator=GreedyLatencyAssociator(problem, t_com))


def c2e_assoc_only(scenario, xi, config: ScenarioConfig, seed=None, pair_costs=None) -> SolverOutcome:
    """Random client set (size uniform in [1, total capacity], clipped), associated by GoC."""
    if not np.any(xi):
        return _no_clients(scenario)
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    online = np.flatnonzero(xi)
    size = min(int(rng.integers(1, int(scenario.capacity.sum()) + 1)), len(online))
    chosen = rng.choice(online, size=size, replace=False)
    problem = pack_p0(scenario, xi, config, use_kld=False, pair_costs=_pairs(scenario, config, pair_costs))
    mask = np.zeros(scenario.n_clients, dtype=bool)
    mask[chosen] = True
    feasible, obj, viol, nodes, edge_of = problem.goc(mask, config.backtrack_budget)
    return SolverOutcome(AssociationMatrix(edge_of, scenario.n_edges), obj, feasible,
                         {"violation": viol, "backtrack_nodes": nodes, "n_selected": size,
                          "wall_time": time.perf_counter() - t0})


def fed_cs(scenario, xi, config: ScenarioConfig, seed=None, pair_costs=None) -> SolverOutcome:
    """As many online clients as the edges can host (maximum b-matching), fastest pairs preferred."""
    if not np.any(xi):
        return _no_clients(scenario)
    t0 = time.perf_counter()
    T, E = _pairs(scenario, config, pair_costs)
    problem = pack_p0(scenario, xi, config, use_kld=False, pair_costs=(T, E))
    g = nx.DiGraph()
    for i in np.flatnonzero(xi):
        g.add_edge("src", ("c", int(i)), capacity=1, weight=0)
        for j in np.flatnonzero(problem.reach[i] & (T[i] < COST_SENTINEL)):
            g.add_edge(("c", int(i)), ("e", int(j)), capacity=1, weight=int(round(T[i, j] * FLOW_SCALE)))
    for j in range(scenario.n_edges):
        g.add_edge(("e", j), "sink", capacity=int(scenario.capacity[j]), weight=0)
    edge_of = np.full(scenario.n_clients, -1, dtype=np.int64)
    if g.has_node("sink") and g.has_node("src"):
        flow = nx.max_flow_min_cost(g, "src", "sink")
        for node, out in flow.items():
            if isinstance(node, tuple) and node[0] == "c":
                for target, f in out.items():
                    if f > 0:
                        edge_of[node[1]] = target[1]
    return _finish(problem, edge_of, t0, n_selected=int((edge_of >= 0).sum()))


POLICIES = {
    "orig_prob_solver": orig_prob_solver,
    "kld_minimization": kld_minimization,
    "client_sel_only": client_sel_only,
    "c2e_assoc_only": c2e_assoc_only,
    "c2e_greedy_assoc": c2e_greedy_assoc,
    "fed_cs": fed_cs,
}
