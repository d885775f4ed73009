"""Domain entities and seeded synthetic scenario generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .config import ConfigError, ScenarioConfig


@dataclass(frozen=True)
class ClientProfile:
    id: int
    label_counts: np.ndarray
    data_size: int
    cpu_freq: float
    cycles_per_datapoint: float
    capacitance: float
    tx_power: float
    batch_fraction: float
    online_prob: float
    reachable_edges: frozenset

    def __post_init__(self):
        counts = np.asarray(self.label_counts)
        if counts.ndim != 1 or (counts < 0).any():
            raise ValueError(f"client {self.id}: label_counts must be a non-negative vector")
        if int(counts.sum()) != self.data_size:
            raise ValueError(f"client {self.id}: data_size != sum(label_counts)")
        if not 0 < self.online_prob <= 1:
            raise ValueError(f"client {self.id}: online_prob outside (0, 1]")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError(f"client {self.id}: batch_fraction outside (0, 1]")
        for name in ("cpu_freq", "cycles_per_datapoint", "capacitance", "tx_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"client {self.id}: {name} must be positive")
        if not self.reachable_edges:
            raise ValueError(f"client {self.id}: no reachable edge server")


@dataclass(frozen=True)
class EdgeProfile:
    id: int
    bandwidth_per_client: float
    max_clients: int
    backhaul_delay: float
    backhaul_energy: float

    def __post_init__(self):
        if self.max_clients < 1:
            raise ValueError(f"edge {self.id}: max_clients must be >= 1")
        if not self.bandwidth_per_client > 0:
            raise ValueError(f"edge {self.id}: bandwidth must be positive")
        if self.backhaul_delay < 0 or self.backhaul_energy < 0:
            raise ValueError(f"edge {self.id}: backhaul costs must be >= 0")


@dataclass(frozen=True)
class ChannelState:
    gain: np.ndarray  # (n_clients, n_edges)
    noise_psd: float
    model_bits: float

    def __post_init__(self):
        if (np.asarray(self.gain) < 0).any():
            raise ValueError("channel gains must be >= 0")
        if not self.noise_psd > 0:
            raise ValueError("noise_psd must be positive")
        if not self.model_bits > 0:
            raise ValueError("model_bits must be positive")


@dataclass
class Scenario:
    """Clients, edge servers and channel, plus cached array views.

    The array views (``labels``, ``data``, ``reach`` ...) are what the solvers
    consume; the profile lists are the validated source of truth.
    """

    clients: list
    edges: list
    channel: ChannelState
    reference: np.ndarray = None  # reference label distribution Q
    positions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reference is None:
            z = len(self.clients[0].label_counts)
            self.reference = np.full(z, 1.0 / z)
        self.reference = np.asarray(self.reference, dtype=float)
        if (self.reference <= 0).any() or abs(self.reference.sum() - 1) > 1e-12:
            raise ValueError("reference distribution must be strictly positive and sum to 1")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_labels(self) -> int:
        return len(self.reference)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([c.label_counts for c in self.clients], dtype=float)

    @cached_property
    def data(self) -> np.ndarray:
        return np.array([c.data_size for c in self.clients], dtype=float)

    @cached_property
    def online_prob(self) -> np.ndarray:
        return np.array([c.online_prob for c in self.clients], dtype=float)

    @cached_property
    def reach(self) -> np.ndarray:
        out = np.zeros((self.n_clients, self.n_edges), dtype=bool)
        for c in self.clients:
            out[c.id, sorted(c.reachable_edges)] = True
        return out

    @cached_property
    def capacity(self) -> np.ndarray:
        return np.array([e.max_clients for e in self.edges], dtype=np.int64)

    @cached_property
    def backhaul_delay(self) -> np.ndarray:
        return np.array([e.backhaul_delay for e in self.edges], dtype=float)

    @cached_property
    def backhaul_energy(self) -> np.ndarray:
        return np.array([e.backhaul_energy for e in self.edges], dtype=float)

    def with_channel(self, channel: ChannelState) -> "Scenario":
        return Scenario(self.clients, self.edges, channel, self.reference, self.positions)

    def with_online_prob(self, probs) -> "Scenario":
        """Copy with participation probabilities replaced (e.g. by estimates)."""
        probs = np.clip(np.asarray(probs, dtype=float), 1e-6, 1.0)
        clients = [_replace_prob(c, float(p)) for c, p in zip(self.clients, probs)]
        return Scenario(clients, self.edges, self.channel, self.reference, self.positions)


def _replace_prob(client: ClientProfile, p: float) -> ClientProfile:
    import dataclasses
    return dataclasses.replace(client, online_prob=p)


def _label_sets(rng, config: ScenarioConfig) -> list:
    n, z = config.n_clients, config.n_labels
    k = rng.integers(config.labels_per_client_min, config.labels_per_client_max + 1, size=n)
    # guarantee enough label slots to cover every label at least once
    while k.sum() < z:
        room = np.flatnonzero(k < config.labels_per_client_max)
        k[rng.choice(room)] += 1
    n_decks = -(-int(k.sum()) // z)
    deck = np.concatenate([rng.permutation(z) for _ in range(n_decks)])
    sets, pos = [], 0
    for ki in k:
        chosen = []
        for label in deck[pos:pos + ki]:
            if label in chosen:
                # duplicate at a deck seam; the earlier occurrence already covers it
                label = rng.choice([h for h in range(z) if h not in chosen])
            chosen.append(int(label))
        sets.append(sorted(chosen))
        pos += ki
    return sets


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Draw a scenario; a pure function of ``config`` (including its seed)."""
    if config.n_clients < 1 or config.n_edges < 1:
        raise ConfigError("n_clients", "scenario needs at least one client and one edge")
    rng = np.random.default_rng(config.seed)
    n, s, z = config.n_clients, config.n_edges, config.n_labels

    edge_xy = rng.uniform(0, config.area_m, size=(s, 2))
    client_xy = rng.uniform(0, config.area_m, size=(n, 2))
    dist = np.linalg.norm(client_xy[:, None, :] - edge_xy[None, :, :], axis=2)
    reach = dist <= config.coverage_radius_m
    orphans = ~reach.any(axis=1)
    reach[orphans, dist[orphans].argmin(axis=1)] = True

    label_sets = _label_sets(rng, config)
    sizes = rng.integers(config.data_size_min, config.data_size_max + 1, size=n)
    freq = rng.uniform(config.cpu_freq_min, config.cpu_freq_max, size=n)
    cycles = rng.uniform(config.cycles_min, config.cycles_max, size=n)
    power = rng.uniform(config.tx_power_min, config.tx_power_max, size=n)
    if config.online_prob_min == config.online_prob_max:
        probs = np.full(n, config.online_prob_min)
    else:
        probs = rng.uniform(config.online_prob_min, config.online_prob_max, size=n)

    clients = []
    for i in range(n):
        labs = label_sets[i]
        counts = np.zeros(z, dtype=np.int64)
        # every chosen label receives at least one datapoint
        size = max(int(sizes[i]), len(labs))
        counts[labs] = 1 + rng.multinomial(size - len(labs), np.full(len(labs), 1.0 / len(labs)))
        clients.append(ClientProfile(
            id=i,
            label_counts=counts,
            data_size=int(counts.sum()),
            cpu_freq=float(freq[i]),
            cycles_per_datapoint=float(cycles[i]),
            capacitance=config.capacitance,
            tx_power=float(power[i]),
            batch_fraction=config.batch_fraction,
            online_prob=float(probs[i]),
            reachable_edges=frozenset(int(j) for j in np.flatnonzero(reach[i])),
        ))

    capacity = rng.integers(config.max_clients_min, config.max_clients_max + 1, size=s)
    delay = rng.uniform(config.backhaul_delay_min, config.backhaul_delay_max, size=s)
    energy = rng.uniform(config.backhaul_energy_min, config.backhaul_energy_max, size=s)
    edges = [EdgeProfile(j, config.bandwidth_hz, int(capacity[j]), float(delay[j]), float(energy[j]))
             for j in range(s)]

    channel = ChannelState(sample_gains(rng, config, n, s), config.noise_psd_w_per_hz, config.model_bits)
    return Scenario(clients, edges, channel, positions={"clients": client_xy, "edges": edge_xy})


def sample_gains(rng, config: ScenarioConfig, n: int, s: int) -> np.ndarray:
    return rng.uniform(config.gain_min, config.gain_max, size=(n, s))


def resample_channel(scenario: Scenario, config: ScenarioConfig, rng) -> Scenario:
    gains = sample_gains(rng, config, scenario.n_clients, scenario.n_edges)
    return scenario.with_channel(ChannelState(gains, config.noise_psd_w_per_hz, config.model_bits))
