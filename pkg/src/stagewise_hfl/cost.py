"""Latency/energy models and the per-round objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import AssociationMatrix
from .config import CostWeights

# Stand-in for an unusable link (zero channel gain or unreachable edge).
# Finite on purpose so that arithmetic on it never produces inf/nan.
COST_SENTINEL = 1e30


@dataclass(frozen=True)
class PairCost:
    delay: float
    energy: float

    @property
    def admissible(self) -> bool:
        return self.delay < COST_SENTINEL


def local_compute_cost(client):
    """Delay and energy of one local SGD update."""
    work = client.cycles_per_datapoint * client.batch_fraction * client.data_size
    return work / client.cpu_freq, client.capacitance * client.cpu_freq ** 2 * work


def uplink_rate(tx_power, gain, bandwidth, noise_psd):
    return bandwidth * np.log2(1.0 + tx_power * gain / (noise_psd * bandwidth))


def uplink_cost(client, edge, channel):
    gain = float(channel.gain[client.id, edge.id])
    if gain <= 0:
        return COST_SENTINEL, COST_SENTINEL
    rate = uplink_rate(client.tx_power, gain, edge.bandwidth_per_client, channel.noise_psd)
    t = channel.model_bits / rate
    return float(t), float(client.tx_power * t)


def pair_cost(client, edge, channel, local_steps: int) -> PairCost:
    if local_steps < 1:
        raise ValueError("local_steps must be >= 1")
    t_com, e_com = uplink_cost(client, edge, channel)
    if t_com >= COST_SENTINEL:
        return PairCost(COST_SENTINEL, COST_SENTINEL)
    t_cmp, e_cmp = local_compute_cost(client)
    return PairCost(local_steps * t_cmp + t_com, local_steps * e_cmp + e_com)


def pair_cost_matrix(scenario, local_steps: int):
    """Vectorised ``pair_cost`` over all (client, edge) pairs.

    Unreachable pairs and zero-gain pairs carry ``COST_SENTINEL``.
    Returns ``(T, E, t_com)`` arrays of shape (n_clients, n_edges).
    """
    if local_steps < 1:
        raise ValueError("local_steps must be >= 1")
    cl = scenario.clients
    v = np.array([c.cpu_freq for c in cl])
    work = np.array([c.cycles_per_datapoint * c.batch_fraction * c.data_size for c in cl])
    alpha = np.array([c.capacitance for c in cl])
    q = np.array([c.tx_power for c in cl])
    bw = np.array([e.bandwidth_per_client for e in scenario.edges])
    gain = np.asarray(scenario.channel.gain, dtype=float)

    t_cmp = work / v
    e_cmp = alpha * v ** 2 * work
    usable = scenario.reach & (gain > 0)
    with np.errstate(divide="ignore"):
        rate = uplink_rate(q[:, None], gain, bw[None, :], scenario.channel.noise_psd)
        t_com = np.where(usable, scenario.channel.model_bits / np.where(usable, rate, 1.0), COST_SENTINEL)
    e_com = q[:, None] * t_com
    T = np.where(usable, local_steps * t_cmp[:, None] + t_com, COST_SENTINEL)
    E = np.where(usable, local_steps * e_cmp[:, None] + e_com, COST_SENTINEL)
    return T, E, t_com


def _edge_of(assoc) -> np.ndarray:
    if isinstance(assoc, AssociationMatrix):
        return assoc.edge_of
    return np.asarray(assoc, dtype=np.int64)


def round_cost(assoc, participation, T, E, backhaul_delay, backhaul_energy, edge_rounds: int):
    """Overall delay and energy of one global round.

    Every edge always pays its backhaul terms; an edge without participating
    clients contributes nothing else.
    """
    edge_of = _edge_of(assoc)
    xi = np.asarray(participation).astype(bool)
    s = len(backhaul_delay)
    worst = np.zeros(s)
    energy = np.zeros(s)
    for i in np.flatnonzero((edge_of >= 0) & xi):
        j = edge_of[i]
        worst[j] = max(worst[j], T[i, j])
        energy[j] += E[i, j]
    total_delay = float(np.max(edge_rounds * worst + np.asarray(backhaul_delay)))
    total_energy = float(np.sum(edge_rounds * energy + np.asarray(backhaul_energy)))
    return total_delay, total_energy


def continuity(assoc, online_prob) -> float:
    """Geometric mean of the participation probabilities of selected clients.

    Defined as 0 for an empty selection.
    """
    edge_of = _edge_of(assoc)
    p = np.asarray(online_prob, dtype=float)[edge_of >= 0]
    if p.size == 0:
        return 0.0
    return float(np.exp(np.mean(np.log(p))))


def objective_p0(assoc, participation, scenario, weights: CostWeights, local_steps, edge_rounds,
                 pair_costs=None) -> float:
    T, E = pair_costs if pair_costs is not None else pair_cost_matrix(scenario, local_steps)[:2]
    t, e = round_cost(assoc, participation, T, E, scenario.backhaul_delay, scenario.backhaul_energy,
                      edge_rounds)
    return weights.lambda_t * t + weights.lambda_e * e


def objective_plan_a(assoc, scenario, weights: CostWeights, local_steps, edge_rounds,
                     pair_costs=None) -> float:
    """Plan-A cost: every client treated as online, minus the continuity reward."""
    ones = np.ones(scenario.n_clients, dtype=bool)
    base = objective_p0(assoc, ones, scenario, weights, local_steps, edge_rounds, pair_costs)
    return base - weights.lambda_c * continuity(assoc, scenario.online_prob)


def feature_vector(client, edge, channel, local_steps) -> np.ndarray:
    pc = pair_cost(client, edge, channel, local_steps)
    return np.array([float(client.data_size), pc.delay, pc.energy])
