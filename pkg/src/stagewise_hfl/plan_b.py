"""Per-round repair of the long-term association (cluster-based client update).

Online long-term clients are always kept. On an edge that misses its KLD or
data-size target, each offline long-term client is replaced by the most
similar online spare client from its DBSCAN cluster. Edges that are still
short fall back to random backups refined by a small local search.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .association import AssociationMatrix, SolverOutcome
from .config import ScenarioConfig
from .cost import COST_SENTINEL, pair_cost_matrix
from .divergence import kld_of_counts
from .plan_a import pack_p0

NOISE = -1


class SimilarityError(ValueError):
    pass


def similarity_matrix(features) -> np.ndarray:
    """Pairwise cosine similarity of the rows of ``features``."""
    u = np.asarray(features, dtype=float)
    norms = np.linalg.norm(u, axis=1)
    if (norms == 0).any():
        raise SimilarityError("cosine similarity undefined for a zero feature vector")
    unit = u / norms[:, None]
    psi = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(psi, 1.0)
    return psi


def dbscan_clusters(similarity, psi_min: float, p_min: int) -> np.ndarray:
    """DBSCAN on a similarity matrix; returns one cluster label per point, ``NOISE`` for noise.

    A point is a core point when at least ``p_min`` points (itself included)
    have similarity >= ``psi_min`` with it. Clusters are numbered in order of
    their lowest-index core point.
    """
    psi = np.asarray(similarity, dtype=float)
    n = len(psi)
    neigh = psi >= psi_min
    core = neigh.sum(axis=1) >= p_min
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        labels[start] = cluster
        stack = [start]
        while stack:
            i = stack.pop()
            if not core[i]:
                continue
            for k in np.flatnonzero(neigh[i]):
                if labels[k] == NOISE:
                    labels[k] = cluster
                    stack.append(k)
        cluster += 1
    return labels


@dataclass
class EdgeClusters:
    clients: np.ndarray  # client ids covered by the edge
    labels: np.ndarray  # cluster label per covered client
    similarity: np.ndarray

    def index(self, client_id: int) -> int:
        return int(np.flatnonzero(self.clients == client_id)[0])


def edge_features(scenario, j, T, E, clients, scaling="mean") -> np.ndarray:
    u = np.column_stack([scenario.data[clients], T[clients, j], E[clients, j]]).astype(float)
    if scaling == "mean" and len(u):
        u = u / u.mean(axis=0)
    return u


def cluster_edge(scenario, j, T, E, config: ScenarioConfig) -> EdgeClusters:
    covered = np.flatnonzero(scenario.reach[:, j] & (T[:, j] < COST_SENTINEL))
    if len(covered) == 0:
        return EdgeClusters(covered, np.zeros(0, dtype=np.int64), np.zeros((0, 0)))
    psi = similarity_matrix(edge_features(scenario, j, T, E, covered, config.feature_scaling))
    return EdgeClusters(covered, dbscan_clusters(psi, config.psi_min, config.p_min_points), psi)


@dataclass
class RepairReport:
    round: int | None
    dropouts: list = field(default_factory=list)
    substitutions: list = field(default_factory=list)
    fallback: dict = field(default_factory=dict)
    feasible: bool = True
    problems: list = field(default_factory=list)

    @property
    def fallback_triggered(self) -> bool:
        return bool(self.fallback)

    def to_dict(self) -> dict:
        return {"round": self.round, "dropouts": self.dropouts, "substitutions": self.substitutions,
                "fallback_triggered": self.fallback_triggered,
                "fallback": {str(k): v for k, v in self.fallback.items()},
                "feasible": self.feasible, "problems": self.problems}


def _edge_ok(edge_of, j, xi, scenario, thresholds) -> bool:
    m = (edge_of == j) & xi
    counts = scenario.labels[m].sum(axis=0)
    return (kld_of_counts(counts, scenario.reference) <= thresholds.kld_max
            and scenario.data[m].sum() >= thresholds.d_min)


def _fallback_search(edge_of, j, backups, pool, room, problem, max_sweeps):
    """Add/Remove/Exchange over the backup set of edge j, keyed on (violation, objective)."""
    backups = set(int(i) for i in backups)

    def score(bset):
        trial = edge_of.copy()
        trial[list(bset)] = j
        obj, viol = problem.evaluate(trial)
        return (viol, obj)

    cur = score(backups)
    for _ in range(max_sweeps):
        improved = False
        for op in ("add", "remove", "exchange"):
            outside = [i for i in pool if i not in backups]
            if op == "add":
                moves = [(None, k) for k in outside] if len(backups) < room else []
            elif op == "remove":
                moves = [(i, None) for i in sorted(backups)]
            else:
                moves = [(i, k) for i in sorted(backups) for k in outside]
            best, best_key = None, cur
            for out_id, in_id in moves:
                cand = set(backups)
                if out_id is not None:
                    cand.discard(out_id)
                if in_id is not None:
                    cand.add(in_id)
                key = score(cand)
                if key < best_key:
                    best, best_key = cand, key
            if best is not None:
                backups, cur, improved = best, best_key, True
        if not improved:
            break
    return sorted(backups)


def ccu(assoc_hat: AssociationMatrix, xi, scenario, config: ScenarioConfig, *, seed=None,
        round_index=None, pair_costs=None, clusters=None) -> SolverOutcome:
    """Repair the long-term association for one round's participation ``xi``.

    ``clusters`` may carry precomputed per-edge :class:`EdgeClusters` (they
    depend only on the scenario, not on ``xi``). The repair report is
    returned in ``outcome.stats['repair']``.
    """
    t0 = time.perf_counter()
    xi = np.asarray(xi).astype(bool)
    thr = config.thresholds
    if pair_costs is None:
        pair_costs = pair_cost_matrix(scenario, config.local_steps)[:2]
    T, E = pair_costs
    problem = pack_p0(scenario, xi, config, pair_costs=pair_costs, role="plan_b")
    hat = assoc_hat.edge_of
    edge_of = np.where(xi, hat, -1)
    rng = np.random.default_rng([config.seed if seed is None else seed,
                                 0 if round_index is None else round_index])
    report = RepairReport(round_index)
    counts = np.bincount(edge_of[edge_of >= 0], minlength=scenario.n_edges)
    taken = (hat >= 0) | (edge_of >= 0)
    spare = xi & ~taken

    for j in range(scenario.n_edges):
        dropouts = [int(i) for i in np.flatnonzero((hat == j) & ~xi)]
        report.dropouts += dropouts
        if not dropouts or _edge_ok(edge_of, j, xi, scenario, thr):
            continue
        if clusters is not None:
            cl = clusters[j]
        else:
            cl = cluster_edge(scenario, j, T, E, config)
        unrepaired = 0
        for i in dropouts:
            if _edge_ok(edge_of, j, xi, scenario, thr):
                break
            pos = cl.index(i)
            label = cl.labels[pos]
            if label == NOISE or counts[j] >= scenario.capacity[j]:
                unrepaired += 1
                continue
            peers = [(float(cl.similarity[pos, k]), int(c)) for k, c in enumerate(cl.clients)
                     if cl.labels[k] == label and c != i and spare[c]]
            if not peers:
                unrepaired += 1
                continue
            if config.substitute_order == "descending":
                peers.sort(key=lambda t: (-t[0], t[1]))
            else:
                peers.sort(key=lambda t: (t[0], t[1]))
            psi, sub = peers[0]
            edge_of[sub] = j
            spare[sub] = False
            counts[j] += 1
            report.substitutions.append({"edge": j, "dropout": i, "substitute": sub, "psi": psi})
        if _edge_ok(edge_of, j, xi, scenario, thr):
            continue
        # fallback: random backups, then local refinement
        pool = [int(c) for c in np.flatnonzero(spare & problem.reach[:, j])]
        room = int(scenario.capacity[j] - counts[j])
        n_backup = min(unrepaired, len(pool), room)
        backups = sorted(int(c) for c in rng.choice(pool, size=n_backup, replace=False)) if n_backup else []
        final = _fallback_search(edge_of, j, backups, pool, room, problem, config.max_sweeps)
        edge_of[final] = j
        spare[final] = False
        counts[j] += len(final)
        report.fallback[j] = {"initial": backups, "final": final}

    obj, viol = problem.evaluate(edge_of)
    report.feasible = viol == 0.0
    report.problems = [f"edge {j}: constraints unmet" for j in range(scenario.n_edges)
                       if not _edge_ok(edge_of, j, xi, scenario, thr)]
    stats = {"violation": viol, "n_dropouts": len(report.dropouts),
             "n_substitutions": len(report.substitutions),
             "fallback_triggered": report.fallback_triggered,
             "repair": report.to_dict(), "wall_time": time.perf_counter() - t0}
    return SolverOutcome(AssociationMatrix(edge_of, scenario.n_edges, "plan_b"), obj, report.feasible, stats)
