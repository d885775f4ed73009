import numpy as np
import pytest

from stagewise_hfl.config import ScenarioConfig
from stagewise_hfl.scenario import ChannelState, ClientProfile, EdgeProfile, Scenario


def make_scenario(label_counts, reach, capacity=None, online_prob=None, *, cpu=2e9, cycles=50.0,
                  power=0.5, gain=5e-9, bandwidth=1e6, backhaul_delay=0.18, backhaul_energy=0.15,
                  model_bits=21840 * 32, noise=10 ** -20.4):
    """Hand-built scenario; scalars broadcast over clients / edges."""
    counts = np.asarray(label_counts, dtype=np.int64)
    reach = np.asarray(reach, dtype=bool)
    n, s = reach.shape
    capacity = np.broadcast_to(np.asarray(n if capacity is None else capacity), (s,))
    online_prob = np.broadcast_to(np.asarray(1.0 if online_prob is None else online_prob, float), (n,))
    cpu = np.broadcast_to(np.asarray(cpu, float), (n,))
    power = np.broadcast_to(np.asarray(power, float), (n,))
    gain = np.broadcast_to(np.asarray(gain, float), (n, s)).copy()
    bh_d = np.broadcast_to(np.asarray(backhaul_delay, float), (s,))
    bh_e = np.broadcast_to(np.asarray(backhaul_energy, float), (s,))
    clients = [ClientProfile(i, counts[i], int(counts[i].sum()), float(cpu[i]), cycles, 1e-28,
                             float(power[i]), 1.0, float(online_prob[i]),
                             frozenset(int(j) for j in np.flatnonzero(reach[i])))
               for i in range(n)]
    edges = [EdgeProfile(j, bandwidth, int(capacity[j]), float(bh_d[j]), float(bh_e[j])) for j in range(s)]
    return Scenario(clients, edges, ChannelState(gain, noise, model_bits))


# Micro instances for oracle comparisons. P0: 8 clients, 2 edges, 4 labels.
MICRO_P0 = dict(n_clients=8, n_edges=2, n_labels=4, max_clients_min=3, max_clients_max=5,
                d_min=1000.0, kld_max=0.3, coverage_radius_m=350.0)
# P1 in Markov mode needs two-label clients and a loose KLD limit to be satisfiable.
MICRO_P1 = dict(n_clients=8, n_edges=2, n_labels=2, labels_per_client_min=2, labels_per_client_max=2,
                max_clients_min=3, max_clients_max=5, d_min=1000.0, kld_max=1.0, delta_risk=0.5,
                coverage_radius_m=350.0, kld_chance_mode="markov")


def micro_config(kind="p0", **overrides):
    base = dict(MICRO_P0 if kind == "p0" else MICRO_P1)
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture
def small_config():
    return ScenarioConfig(n_clients=20, n_edges=2, n_labels=4, max_clients_min=6, max_clients_max=8,
                          d_min=1500.0, kld_max=0.3, global_rounds=3, feature_dim=8,
                          test_per_label=50)
