import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import t3_system
from gridattack.errors import RelaxationUnsolvedError
from gridattack.experiments import random_instances
from gridattack.graphcut import cut_of_partition, detectable_predicate, enumerate_optimal_cut
from gridattack.grid import MeasurementGraph
from gridattack.sdp import FEASIBILITY_TOL, GramFactor, build_laplacians, gw_round, solve_sdp


def test_unprotected_triangle_laplacians():
    pair = build_laplacians(t3_system().to_graph())
    k4 = 4 * np.eye(4) - np.ones((4, 4))
    assert np.array_equal(pair.L1, k4)
    assert np.array_equal(pair.L2, -k4)


def test_protected_edge_flips_sign():
    L2 = build_laplacians(t3_system(protected=[3]).to_graph()).L2
    assert L2[0, 3] == -1 and L2[3, 0] == -1
    off = ~np.eye(4, dtype=bool)
    off[0, 3] = off[3, 0] = False
    assert np.all(L2[off] == 1)


def test_single_protected_edge_inner_product():
    g = MeasurementGraph.from_edges(1, [(0, 1)], protected=[0])
    s = np.array([1.0, -1.0])
    assert s @ build_laplacians(g).L2 @ s == 4


def test_parallel_edges_accumulate():
    g = MeasurementGraph.from_edges(1, [(0, 1), (0, 1), (1, 0)], protected=[2])
    pair = build_laplacians(g)
    assert pair.L1[0, 1] == -3 and pair.L2[0, 1] == 1


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_laplacian_identities(seed):
    rng = np.random.default_rng(seed)
    g = next(iter(random_instances(seed, 1))).to_graph()
    pair = build_laplacians(g)
    for L in (pair.L1, pair.L2):
        assert np.allclose(L, L.T) and np.allclose(L.sum(axis=1), 0)
    assert np.linalg.eigvalsh(pair.L1)[0] > -1e-9
    s = np.where(rng.random(g.n_nodes) < 0.5, 1.0, -1.0)
    if np.all(s == s[0]):
        return
    S = [v for v in range(g.n) if s[v] != s[g.ref]]
    cut = cut_of_partition(g, S)
    assert s @ pair.L1 @ s == pytest.approx(4 * cut.size)
    assert s @ pair.L2 @ s == pytest.approx(4 * (cut.c_m - (cut.size - cut.c_m)))


def test_unprotected_triangle_objective_bounded():
    factor = solve_sdp(build_laplacians(t3_system().to_graph()))
    assert factor.objective <= 12 + 1e-6
    assert factor.diag_residual <= 1e-6 and factor.constraint_value <= -4 + 1e-6
    X = factor.X
    assert np.allclose(np.diag(X), 1, atol=1e-6)


def test_fully_protected_relaxation_is_unsolved():
    with pytest.raises(RelaxationUnsolvedError) as info:
        solve_sdp(build_laplacians(t3_system(protected=range(6)).to_graph()), restarts=3)
    assert info.value.residual > FEASIBILITY_TOL


def test_single_corruptible_edge():
    g = MeasurementGraph.from_edges(1, [(0, 1)])
    factor = solve_sdp(build_laplacians(g))
    assert factor.objective <= 4 + 1e-6
    cut = gw_round(factor, g, trials=50, seed=1)
    assert cut.edges == (0,) and cut.size == 1


def test_rounding_on_unprotected_triangle():
    g = t3_system().to_graph()
    factor = solve_sdp(build_laplacians(g))
    for seed in range(10):
        assert gw_round(factor, g, 200, seed).size == 3


def test_zero_trials_returns_none():
    g = t3_system().to_graph()
    assert gw_round(solve_sdp(build_laplacians(g), restarts=1), g, trials=0) is None


def test_rounding_is_deterministic():
    g = t3_system(protected=[3]).to_graph()
    factor = solve_sdp(build_laplacians(g), seed=4)
    assert gw_round(factor, g, 100, seed=9) == gw_round(factor, g, 100, seed=9)


def test_zero_projection_labels_plus_one():
    # node 0 has a zero column, so its projection is 0 and it joins the +1 side
    g = MeasurementGraph.from_edges(2, [(0, 1), (1, 2), (0, 2)])
    B = np.array([[0.0, 1.0, -1.0]])
    factor = GramFactor(B, 0.0, 0.0, 0.0, 0.0)
    cut = gw_round(factor, g, trials=5, seed=0)
    assert cut is not None
    labels_equal = {0, 1} <= set(cut.partition) or not ({0, 1} & set(cut.partition))
    assert labels_equal


def test_relaxation_bound_and_rounded_feasibility():
    checked = 0
    for k, system in enumerate(random_instances(31, 40, max_buses=7, max_meters=14)):
        g = system.to_graph()
        oracle = enumerate_optimal_cut(g, detectable_predicate)
        if oracle is None:
            continue
        factor = solve_sdp(build_laplacians(g), restarts=5, seed=k)
        assert factor.objective <= 4 * oracle.size * (1 + 1e-3) + 1e-3
        cut = gw_round(factor, g, 100, seed=k)
        if cut is not None:
            assert 2 * cut.c_m < cut.size
            assert cut.size >= oracle.size
        checked += 1
    assert checked >= 20
