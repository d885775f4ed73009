"""Experiment configuration.

Configuration files are flat TOML documents (``key = value`` lines, no
tables). Every key is optional; omitted keys fall back to the defaults
below, which follow the simulation settings used for the MNIST-style
experiments (93 clients, 4 edge servers, 1-3 labels per client).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration; names the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class CostWeights:
    lambda_t: float = 1.0
    lambda_e: float = 1.0
    lambda_c: float = 1.0

    def __post_init__(self):
        for name in ("lambda_t", "lambda_e", "lambda_c"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "weights must be non-negative")


@dataclass(frozen=True)
class ConstraintThresholds:
    kld_max: float = 0.2
    d_min: float = 2500.0
    delta_k: float = 0.05
    delta_d: float = 200.0
    delta_risk: float = 0.15
    epsilon_risk: float = 0.15

    def __post_init__(self):
        if not self.delta_k > 0:
            raise ConfigError("delta_k", "must be > 0")
        if not self.kld_max > self.delta_k:
            raise ConfigError("kld_max", "must exceed delta_k")
        if not self.d_min > 0:
            raise ConfigError("d_min", "must be > 0")
        if not self.delta_d > 0:
            raise ConfigError("delta_d", "must be > 0")
        for name in ("delta_risk", "epsilon_risk"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(name, "must lie in (0, 1)")

    @property
    def kld_limit(self) -> float:
        """Threshold used inside the Plan-A chance constraint."""
        return self.kld_max - self.delta_k

    @property
    def data_limit(self) -> float:
        return self.d_min + self.delta_d


# (min_key, max_key) pairs that must form non-empty ranges
_RANGES = [
    ("labels_per_client_min", "labels_per_client_max"),
    ("data_size_min", "data_size_max"),
    ("cpu_freq_min", "cpu_freq_max"),
    ("cycles_min", "cycles_max"),
    ("tx_power_min", "tx_power_max"),
    ("online_prob_min", "online_prob_max"),
    ("max_clients_min", "max_clients_max"),
    ("backhaul_delay_min", "backhaul_delay_max"),
    ("backhaul_energy_min", "backhaul_energy_max"),
    ("gain_min", "gain_max"),
]

_CHOICES = {
    "kld_chance_mode": ("markov", "exact"),
    "substitute_order": ("descending", "ascending"),
    "feature_scaling": ("mean", "none"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    # population
    n_clients: int = 93
    n_edges: int = 4
    n_labels: int = 10
    labels_per_client_min: int = 1
    labels_per_client_max: int = 3
    data_size_min: int = 255
    data_size_max: int = 1013
    # client hardware; cycles are per datapoint
    cpu_freq_min: float = 1e9
    cpu_freq_max: float = 1e10
    cycles_min: float = 30.0
    cycles_max: float = 100.0
    capacitance: float = 1e-28
    batch_fraction: float = 1.0
    tx_power_min: float = 0.2
    tx_power_max: float = 0.8
    online_prob_min: float = 0.5
    online_prob_max: float = 1.0
    # edge servers
    bandwidth_hz: float = 1e6
    max_clients_min: int = 8
    max_clients_max: int = 12
    backhaul_delay_min: float = 0.16
    backhaul_delay_max: float = 0.20
    backhaul_energy_min: float = 0.1
    backhaul_energy_max: float = 0.2
    # radio / geometry
    noise_psd_w_per_hz: float = 10 ** (-20.4)
    model_bits: float = 21840 * 32
    gain_min: float = 1e-9
    gain_max: float = 1e-8
    area_m: float = 500.0
    coverage_radius_m: float = 300.0
    dynamic_channels: bool = False
    # objective weights and thresholds
    lambda_t: float = 1.0
    lambda_e: float = 1.0
    lambda_c: float = 1.0
    kld_max: float = 0.2
    d_min: float = 2500.0
    delta_k: float = 0.05
    delta_d: float = 200.0
    delta_risk: float = 0.15
    epsilon_risk: float = 0.15
    kld_chance_mode: str = "exact"
    # training schedule
    local_steps: int = 5
    edge_rounds: int = 3
    global_rounds: int = 50
    learning_rate: float = 0.05
    feature_dim: int = 20
    cluster_separation: float = 1.5
    test_per_label: int = 100
    target_accuracy: float = 0.9
    # Plan B clustering
    psi_min: float = 0.99
    p_min_points: int = 2
    substitute_order: str = "descending"
    feature_scaling: str = "mean"
    # participation estimation
    window_len: int = 10
    window_count: int = 5
    # solver budgets
    max_sweeps: int = 50
    backtrack_budget: int = 1_000_000
    search_backtrack_budget: int = 500
    init_attempts: int = 20
    seed: int = 0
    replan_period: int = 0

    def __post_init__(self):
        self._validate()

    def _validate(self):
        for key in ("n_clients", "n_edges", "n_labels", "local_steps", "edge_rounds",
                    "p_min_points", "window_len", "window_count", "max_sweeps",
                    "backtrack_budget", "search_backtrack_budget", "init_attempts",
                    "feature_dim", "test_per_label"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.global_rounds < 0:
            raise ConfigError("global_rounds", "must be >= 0")
        if self.replan_period < 0:
            raise ConfigError("replan_period", "must be >= 0")
        for lo_key, hi_key in _RANGES:
            lo, hi = getattr(self, lo_key), getattr(self, hi_key)
            if lo > hi:
                raise ConfigError(lo_key, f"empty range [{lo}, {hi}]")
        positive = ("cpu_freq_min", "cycles_min", "capacitance", "tx_power_min",
                    "online_prob_min", "bandwidth_hz", "noise_psd_w_per_hz", "model_bits",
                    "gain_min", "area_m", "coverage_radius_m", "learning_rate",
                    "data_size_min", "labels_per_client_min")
        for key in positive:
            v = getattr(self, key)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(key, "must be a positive finite number")
        if self.max_clients_min < 1:
            raise ConfigError("max_clients", "edge capacity must be >= 1")
        if self.online_prob_max > 1:
            raise ConfigError("online_prob_max", "must be <= 1")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigError("batch_fraction", "must lie in (0, 1]")
        if self.backhaul_delay_min < 0 or self.backhaul_energy_min < 0:
            raise ConfigError("backhaul_delay_min", "backhaul costs must be >= 0")
        if self.labels_per_client_max > self.n_labels:
            raise ConfigError("labels_per_client_max", "exceeds n_labels")
        if self.n_clients * self.labels_per_client_max < self.n_labels:
            raise ConfigError("n_labels", "too many labels to cover with the configured clients")
        if not 0 <= self.psi_min <= 1:
            raise ConfigError("psi_min", "must lie in [0, 1]")
        if not 0 < self.target_accuracy <= 1:
            raise ConfigError("target_accuracy", "must lie in (0, 1]")
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(key, f"must be one of {allowed}")
        # surface weight/threshold errors under their own key names
        self.weights
        self.thresholds

    @property
    def weights(self) -> CostWeights:
        return CostWeights(self.lambda_t, self.lambda_e, self.lambda_c)

    @property
    def thresholds(self) -> ConstraintThresholds:
        return ConstraintThresholds(self.kld_max, self.d_min, self.delta_k, self.delta_d,
                                    self.delta_risk, self.epsilon_risk)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_ALIASES = {"max_clients": ("max_clients_min", "max_clients_max")}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def config_from_mapping(data: dict) -> ScenarioConfig:
    values = {}
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(key, "nested tables are not supported")
        if key in _ALIASES:
            for target in _ALIASES[key]:
                values[target] = _coerce(key, value, _FIELDS[target].default)
            continue
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _coerce(key, value, _FIELDS[key].default)
    return ScenarioConfig(**values)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("path", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("path", f"{path} is not valid TOML: {exc}") from exc
    return config_from_mapping(data)


def dump_config(config: ScenarioConfig) -> str:
    """Render a config as flat TOML that `load_config` reads back unchanged."""
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            lines.append(f"{key} = {'true' if value else 'false'}")
        elif isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        elif isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
