import numpy as np
import pytest
from conftest import make_scenario
from sklearn.cluster import DBSCAN

from stagewise_hfl.association import AssociationMatrix
from stagewise_hfl.config import ScenarioConfig
from stagewise_hfl.divergence import check_p2_constraints
from stagewise_hfl.plan_a import li_long_client_d, pack_p0
from stagewise_hfl.plan_b import NOISE, SimilarityError, ccu, dbscan_clusters, similarity_matrix
from stagewise_hfl.scenario import generate_scenario

CFG = ScenarioConfig(kld_max=0.3, d_min=500.0, delta_d=100.0)


def test_similarity_examples():
    psi = similarity_matrix([[1, 2, 3], [1, 2, 3], [1, 0, 0], [0, 1, 0], [2, 4, 6]])
    assert psi[0, 1] == pytest.approx(1.0)
    assert psi[2, 3] == pytest.approx(0.0)
    assert psi[0, 4] == pytest.approx(1.0)
    assert np.allclose(psi, psi.T) and np.allclose(np.diag(psi), 1.0)
    with pytest.raises(SimilarityError):
        similarity_matrix([[1, 0], [0, 0]])


def test_dbscan_examples():
    same = similarity_matrix(np.ones((3, 3)))
    assert dbscan_clusters(same, 0.99, 2).tolist() == [0, 0, 0]
    apart = similarity_matrix(np.eye(3))
    assert dbscan_clusters(apart, 0.99, 2).tolist() == [NOISE] * 3


def _partition(labels, mask):
    groups = {}
    for i in np.flatnonzero(mask):
        groups.setdefault(labels[i], set()).add(int(i))
    return {frozenset(g) for g in groups.values()}


@pytest.mark.parametrize("seed", range(25))
def test_dbscan_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    centres = rng.normal(size=(int(rng.integers(1, 4)), 3)) + 3.0
    u = centres[rng.integers(0, len(centres), n)] + rng.normal(scale=0.05, size=(n, 3))
    psi = np.round(similarity_matrix(u), 6)
    psi_min, p_min = 0.995, int(rng.integers(1, 4))
    ours = dbscan_clusters(psi, psi_min, p_min)
    ref = DBSCAN(eps=round(1 - psi_min, 6) + 1e-9, min_samples=p_min, metric="precomputed").fit(
        np.clip(1 - psi, 0, None))
    assert np.array_equal(ours == NOISE, ref.labels_ == -1)
    core = np.zeros(n, dtype=bool)
    core[ref.core_sample_indices_] = True
    assert _partition(ours, core) == _partition(ref.labels_, core)


def _twin_instance():
    # edge 0: clients 0 and 3 are long-term; 1 is 0's twin; 2 has a different profile
    return make_scenario([[150, 150], [150, 150], [20, 30], [150, 150]], [[True]] * 4,
                         gain=[[5e-9], [5e-9], [1e-9], [5e-9]], cpu=[2e9, 2e9, 1e9, 2e9])


def test_no_dropout_keeps_plan_a():
    sc = _twin_instance()
    hat = AssociationMatrix([0, -1, -1, 0], 1, "plan_a")
    xi = np.ones(4, dtype=bool)
    out = ccu(hat, xi, sc, CFG)
    assert out.assoc == hat.masked(xi)
    assert out.stats["n_substitutions"] == 0 and not out.stats["fallback_triggered"]
    assert out.objective == pytest.approx(pack_p0(sc, xi, CFG).evaluate(hat.edge_of)[0])


def test_twin_substitutes_for_the_dropout():
    sc = _twin_instance()
    hat = AssociationMatrix([0, -1, -1, 0], 1, "plan_a")
    xi = np.array([False, True, True, True])
    out = ccu(hat, xi, sc, CFG, seed=0, round_index=4)
    rep = out.stats["repair"]
    assert rep["substitutions"] == [{"edge": 0, "dropout": 0, "substitute": 1,
                                     "psi": pytest.approx(1.0)}]
    assert out.feasible and not out.stats["fallback_triggered"]
    assert out.assoc.edge_of.tolist() == [-1, 0, -1, 0]
    assert check_p2_constraints(out.assoc, hat, xi, sc, CFG.thresholds).feasible
    assert rep["round"] == 4 and rep["dropouts"] == [0]


def test_all_candidates_offline_is_infeasible():
    sc = _twin_instance()
    hat = AssociationMatrix([0, -1, -1, 0], 1, "plan_a")
    out = ccu(hat, np.array([False, False, False, True]), sc, CFG, seed=0)
    assert not out.feasible
    assert out.stats["repair"]["problems"] == ["edge 0: constraints unmet"]
    assert out.stats["fallback_triggered"]


def test_ascending_order_is_selectable():
    sc = make_scenario([[150, 150], [150, 150], [150, 190], [150, 150]], [[True]] * 4)
    hat = AssociationMatrix([0, -1, -1, 0], 1, "plan_a")
    xi = np.array([False, True, True, True])
    cfg = CFG.replace(psi_min=0.9)
    desc = ccu(hat, xi, sc, cfg, seed=0).stats["repair"]["substitutions"][0]
    asc = ccu(hat, xi, sc, cfg.replace(substitute_order="ascending"), seed=0).stats["repair"]["substitutions"][0]
    assert desc["substitute"] == 1 and asc["substitute"] == 2
    assert desc["psi"] > asc["psi"]


@pytest.mark.parametrize("seed", range(6))
def test_online_long_term_clients_are_always_kept(seed):
    cfg = ScenarioConfig(n_clients=30, n_edges=3, n_labels=4, max_clients_min=5, max_clients_max=7,
                         d_min=1200.0, kld_max=0.4, delta_risk=0.5, epsilon_risk=0.5, seed=seed)
    sc = generate_scenario(cfg)
    hat = li_long_client_d(sc, cfg, init_seed=seed).assoc
    rng = np.random.default_rng(seed)
    for g in range(5):
        xi = rng.random(sc.n_clients) < sc.online_prob
        out = ccu(hat, xi, sc, cfg, seed=seed, round_index=g)
        keep = hat.selected & xi
        assert np.array_equal(out.assoc.edge_of[keep], hat.edge_of[keep])
        assert not out.assoc.selected[~xi].any()
        assert out.assoc.structural_violations(sc.reach, sc.capacity) == []
        rep = check_p2_constraints(out.assoc, hat, xi, sc, cfg.thresholds)
        assert rep.unique_ok and rep.capacity_ok and rep.offline_ok
        assert rep.extra["long-term clients kept"]
        assert rep.feasible == out.feasible
