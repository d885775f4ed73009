import numpy as np
import pytest
from conftest import make_scenario, micro_config

from stagewise_hfl.config import ScenarioConfig
from stagewise_hfl.divergence import check_plan_a_constraints
from stagewise_hfl.oracle import solve_exact_p1
from stagewise_hfl.plan_a import (Associator, InfeasibleStart, goc_min_c2e, initial_selection,
                                  li_long_client_d, local_search, pack_p0, pack_plan_a)
from stagewise_hfl.scenario import generate_scenario

LOOSE = ScenarioConfig(kld_max=0.5, d_min=10.0, delta_d=10.0)


def _backtrack_instance():
    """Client 0 is cheaper on edge 1, but only edge 0 can then reach the data threshold."""
    sc = make_scenario([[250, 250], [250, 250], [50, 50], [50, 50]],
                       [[True, True], [False, True], [True, False], [False, True]],
                       capacity=3, gain=[[1e-9, 1e-8], [5e-9, 5e-9], [5e-9, 5e-9], [5e-9, 5e-9]])
    cfg = ScenarioConfig(kld_max=0.5, d_min=400.0, delta_d=200.0, lambda_c=0.0)
    return sc, cfg


def test_single_client_is_assigned():
    sc = make_scenario([[50, 50]], [[True]])
    out = goc_min_c2e([0], sc, LOOSE)
    assert out.feasible and out.assoc.edge_of.tolist() == [0]
    assert out.assoc.role == "plan_a"
    with pytest.raises(ValueError):
        goc_min_c2e([], sc, LOOSE)


def test_pigeonhole_is_an_infeasible_outcome():
    sc = make_scenario([[50, 50], [50, 50]], [[True, False], [True, False]], capacity=1)
    out = goc_min_c2e([0, 1], sc, LOOSE)
    assert not out.feasible and out.stats["violation"] > 0


def test_backtracking_recovers_the_oracle_association():
    sc, cfg = _backtrack_instance()
    prob = pack_plan_a(sc, cfg)
    # the greedy choice alone is infeasible
    greedy = np.array([1, 1, 0, 1])
    assert prob.evaluate(greedy)[1] > 0
    out = goc_min_c2e(np.ones(4, dtype=bool), sc, cfg)
    assert out.feasible and out.stats["backtrack_nodes"] > 0
    exact = solve_exact_p1(sc, cfg)
    assert exact.feasible
    assert out.assoc == exact.assoc
    assert out.assoc.edge_of.tolist() == [0, 1, 0, 1]


def test_forced_full_selection():
    sc, cfg = _backtrack_instance()
    out = li_long_client_d(sc, cfg, init_seed=0)
    assert out.feasible
    assert out.assoc.selected.all()
    assert check_plan_a_constraints(out.assoc, sc, cfg.thresholds, kld_mode="exact").feasible


def test_continuity_weight_prefers_the_reliable_client():
    sc = make_scenario([[300, 300], [300, 300]], [[True], [True]], capacity=1, online_prob=[0.5, 0.9])
    cfg = ScenarioConfig(kld_max=0.5, d_min=200.0, delta_d=100.0, delta_risk=0.9, epsilon_risk=0.6,
                         kld_chance_mode="markov", lambda_c=50.0)
    prob = pack_plan_a(sc, cfg)
    log = []
    mask, (feasible, obj, viol, edge_of), _ = local_search(prob, np.array([True, False]),
                                                           Associator(prob, 1000), log=log)
    assert feasible and mask.tolist() == [False, True]
    assert [e["op"] for e in log if e["accepted"]] == ["exchange"]
    # the two-point comparison the exchange relied on
    a, b = prob.evaluate(np.array([0, -1])), prob.evaluate(np.array([-1, 0]))
    assert b[0] < a[0] and a[1] == b[1] == 0


@pytest.mark.parametrize("seed", range(4))
def test_accepted_steps_strictly_decrease(seed):
    cfg = ScenarioConfig(n_clients=16, n_edges=2, n_labels=4, max_clients_min=5, max_clients_max=7,
                         d_min=800.0, kld_max=0.6, delta_risk=0.5, epsilon_risk=0.5, seed=seed)
    sc = generate_scenario(cfg)
    log = []
    out = li_long_client_d(sc, cfg, init_seed=seed, log=log)
    assert out.stats["init_feasible"] and out.feasible
    accepted = [e for e in log if e["accepted"]]
    assert all(e["feasible"] and e["delta_f"] < 0 for e in accepted)
    for e in log:
        assert set(e) == {"op", "remove", "add", "delta_f", "violation", "feasible", "accepted"}
    assert check_plan_a_constraints(out.assoc, sc, cfg.thresholds, kld_mode="exact").feasible


@pytest.mark.parametrize("mode", ["markov", "exact"])
@pytest.mark.parametrize("seed", range(8))
def test_heuristic_never_beats_the_oracle(mode, seed):
    cfg = micro_config("p1", seed=seed, kld_chance_mode=mode)
    sc = generate_scenario(cfg)
    exact = solve_exact_p1(sc, cfg)
    out = li_long_client_d(sc, cfg, init_seed=seed)
    if out.feasible:
        assert exact.feasible
        assert out.objective >= exact.objective - 1e-9
        assert check_plan_a_constraints(out.assoc, sc, cfg.thresholds, kld_mode=mode).feasible
        assert out.assoc.structural_violations(sc.reach, sc.capacity) == []


def test_initial_selection_examples():
    sc = make_scenario([[50, 50]] * 5, [[True]] * 5)
    prob = pack_plan_a(sc, LOOSE)
    mask = initial_selection(prob, seed=3)
    assert mask.sum() == 1
    cfg = micro_config("p1", seed=2)
    sc = generate_scenario(cfg)
    prob = pack_plan_a(sc, cfg)
    a, b = initial_selection(prob, seed=9), initial_selection(prob, seed=9)
    assert np.array_equal(a, b)
    assert prob.goc(a, 10 ** 6)[0]


def test_initial_selection_reports_the_least_violating_attempt():
    sc = make_scenario([[50, 50]] * 3, [[True]] * 3)
    prob = pack_plan_a(sc, ScenarioConfig(d_min=5000.0))
    with pytest.raises(InfeasibleStart) as info:
        initial_selection(prob, seed=0, attempts=3)
    assert info.value.best_mask is not None and info.value.best_mask.any()
    out = li_long_client_d(problem=prob, config=ScenarioConfig(d_min=5000.0))
    assert not out.feasible and out.stats["init_feasible"] is False


def test_plan_a_ignores_participation():
    cfg = micro_config("p0", seed=1)
    sc = generate_scenario(cfg)
    prob = pack_plan_a(sc, cfg)
    assert prob.pool.all()
    p0 = pack_p0(sc, np.zeros(sc.n_clients, dtype=bool), cfg)
    assert not p0.reach.any() and not p0.pool.any()
