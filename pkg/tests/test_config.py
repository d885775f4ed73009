import pytest

from stagewise_hfl.config import (ConfigError, ConstraintThresholds, CostWeights, ScenarioConfig,
                                  config_from_mapping, dump_config, load_config)


def test_defaults_match_simulation_settings():
    cfg = ScenarioConfig()
    assert (cfg.n_clients, cfg.n_edges, cfg.n_labels) == (93, 4, 10)
    assert (cfg.local_steps, cfg.edge_rounds) == (5, 3)
    assert cfg.d_min == 2500 and cfg.kld_max == 0.2
    assert cfg.thresholds.kld_limit == pytest.approx(0.15)
    assert cfg.thresholds.data_limit == 2700


def test_roundtrip_through_toml(tmp_path):
    cfg = ScenarioConfig(n_clients=17, kld_chance_mode="markov", dynamic_channels=True, lambda_c=0.25)
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_max_clients_alias_sets_both_bounds():
    cfg = config_from_mapping({"max_clients": 7})
    assert cfg.max_clients_min == cfg.max_clients_max == 7


@pytest.mark.parametrize("data, key", [
    ({"n_clientz": 3}, "n_clientz"),
    ({"n_clients": "many"}, "n_clients"),
    ({"n_clients": 2.5}, "n_clients"),
    ({"max_clients": 0}, "max_clients"),
    ({"kld_max": 0.01}, "kld_max"),
    ({"kld_chance_mode": "chebyshev"}, "kld_chance_mode"),
    ({"online_prob_max": 1.5}, "online_prob_max"),
    ({"labels_per_client_max": 11}, "labels_per_client_max"),
    ({"section": {"a": 1}}, "section"),
])
def test_invalid_values_name_the_key(data, key):
    with pytest.raises(ConfigError) as info:
        config_from_mapping(data)
    assert info.value.key == key


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("n_clients = = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_weights_and_thresholds_validation():
    with pytest.raises(ConfigError):
        CostWeights(lambda_t=-1)
    with pytest.raises(ConfigError):
        ConstraintThresholds(delta_risk=1.0)
