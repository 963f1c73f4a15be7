import math

import numpy as np
import pytest
from pydantic import ValidationError

from services.errors import DenseGraphTooLargeError, InvalidParametersError
from services.graph_core import Graph, volume
from services.l1pr_solver import PageRankProblem, solve
from services.random_model import (
    ErdosRenyiBackground,
    LocalModelParams,
    SbmBackground,
    _triangle_pairs,
    expected_degrees,
    find_good_seed,
    generate,
    good_seed_probability,
    population_graph,
    q_for_gamma,
    rho_at,
    theory,
)


@pytest.fixture
def population_params() -> LocalModelParams:
    return LocalModelParams(n=200, k=20, p=0.5, q=0.01, background=ErdosRenyiBackground(q_bg=0.05))


def test_params_validation():
    with pytest.raises(ValidationError):
        LocalModelParams(n=5, k=10, p=0.5, q=0.1)
    with pytest.raises(ValidationError):
        LocalModelParams(n=30, k=10, p=0.5, q=0.1, background=SbmBackground(cluster_sizes=[10, 5], p_in=0.5, p_out=0.1))
    with pytest.raises(ValidationError):
        LocalModelParams(n=30, k=10, p=0.0, q=0.1)


def test_background_is_parsed_from_its_kind():
    params = LocalModelParams.model_validate(
        {"n": 50, "k": 10, "p": 0.5, "q": 0.1, "background": {"kind": "erdos_renyi", "q_bg": 0.2}}
    )
    assert isinstance(params.background, ErdosRenyiBackground)


def test_d_bar_and_gamma():
    params = LocalModelParams(n=200, k=20, p=0.5, q=0.01)
    assert params.d_bar == pytest.approx(9.5 + 1.8)
    assert params.gamma == pytest.approx(9.5 / 11.3)


@pytest.mark.parametrize("size", [2, 3, 7, 31])
def test_triangle_pairs_enumerates_upper_triangle_in_row_major_order(size):
    total = size * (size - 1) // 2
    i, j = _triangle_pairs(np.arange(total), size)
    expected = [(a, b) for a in range(size) for b in range(a + 1, size)]
    assert list(zip(i.tolist(), j.tolist())) == expected


def test_generate_is_deterministic_per_seed(population_params):
    g1, t1 = generate(population_params, seed=3)
    g2, t2 = generate(population_params, seed=3)
    g3, _ = generate(population_params, seed=4)
    assert g1 == g2 and t1 == t2
    assert g1 != g3


def test_canonical_target_is_the_prefix(population_params):
    _, target = generate(population_params, seed=0)
    assert target == tuple(range(20))


def test_permuted_target_keeps_its_size():
    params = LocalModelParams(n=100, k=10, p=1.0, q=0.0, permute=True)
    g, target = generate(params, seed=1)
    assert len(target) == 10
    assert volume(g, target) == 10 * 9
    assert g.num_edges == 45


def test_extreme_probabilities():
    g, target = generate(LocalModelParams(n=30, k=6, p=1.0, q=0.0), seed=2)
    assert g.num_edges == 15
    assert all(g.degree(i) == 5 for i in target)
    assert all(g.degree(i) == 0 for i in range(6, 30))


def test_without_background_every_edge_touches_the_target():
    g, target = generate(LocalModelParams(n=300, k=30, p=0.3, q=0.05), seed=5)
    members = set(target)
    for i in range(g.n):
        if i in members:
            continue
        assert all(j in members for j in g.neighbors(i)[0])


def test_edge_density_matches_p():
    params = LocalModelParams(n=400, k=100, p=0.3, q=0.0)
    g, target = generate(params, seed=9)
    pairs = 100 * 99 / 2
    sigma = math.sqrt(pairs * 0.3 * 0.7)
    assert abs(g.num_edges - 0.3 * pairs) < 5 * sigma


def test_sbm_background_blocks():
    params = LocalModelParams.sbm_setup(4, 10, p=1.0, q=0.0)
    g, _ = generate(params, seed=0)
    assert g.n == 40
    assert g.n_components == 4
    assert g.num_edges == 4 * 45


def test_expected_degrees(population_params):
    degrees = expected_degrees(population_params)
    assert degrees[0] == pytest.approx(population_params.d_bar)
    assert degrees[-1] == pytest.approx(0.01 * 20 + 0.05 * 179)


def test_population_graph_weights(population_params):
    g = population_graph(population_params)
    assert g.degree(0) == pytest.approx(population_params.d_bar)
    assert g.neighbors(0)[1][0] == pytest.approx(0.5)


def test_population_graph_size_limit():
    with pytest.raises(DenseGraphTooLargeError):
        population_graph(LocalModelParams(n=6000, k=20, p=0.5, q=0.001))


def test_theory_constants(population_params):
    model = theory(population_params, alpha=0.5, delta=0.1)
    assert model.rho_natural == pytest.approx(1.286e-3, rel=1e-3)
    assert model.rho_sharp == pytest.approx(4.43e-5, rel=1e-2)
    assert model.rho_sharp < model.rho_natural
    assert model.v(model.rho_natural) == pytest.approx(0.0, abs=1e-15)
    assert model.expected_conductance == pytest.approx(1 - model.gamma)


def test_theory_regime_ordering_on_a_large_sparse_model():
    n = 10000
    params = LocalModelParams(n=n, k=20, p=0.5, q=2 / n, background=ErdosRenyiBackground(q_bg=10 / n))
    model = theory(params, alpha=0.5, delta=0.1)
    assert model.rho_sharp < model.rho_delta < model.rho_natural
    assert model.rho_delta == pytest.approx(rho_at(params, 0.5, 0.1))


def test_rho_sharp_vanishes_without_exterior_edges():
    assert theory(LocalModelParams(n=50, k=10, p=0.5, q=0.0), 0.3, 0.1).rho_sharp == 0.0
    assert theory(LocalModelParams(n=10, k=10, p=0.5, q=0.0), 0.3, 0.1).rho_sharp == 0.0


def test_theory_rejects_bad_alpha_and_delta(population_params):
    with pytest.raises(InvalidParametersError):
        theory(population_params, alpha=1.0, delta=0.1)
    with pytest.raises(InvalidParametersError):
        theory(population_params, alpha=0.5, delta=0.0)


def test_false_positive_bounds(population_params):
    model = theory(population_params, alpha=0.5, delta=0.1)
    vol_k = 20 * model.d_bar
    assert 0 < model.fp_volume_bound(vol_k) < model.appr_fp_volume_bound(vol_k)
    assert model.support_volume_cap(0.01) == pytest.approx(100.0)
    assert model.degree_threshold(2.0) == pytest.approx(2.0 / (model.gamma * 0.5))


def test_q_for_gamma_inverts_gamma():
    q = q_for_gamma(0.65, 200, 20, 0.5)
    assert LocalModelParams(n=200, k=20, p=0.5, q=q).gamma == pytest.approx(0.65)
    with pytest.raises(InvalidParametersError):
        q_for_gamma(0.0, 200, 20, 0.5)


def test_good_seed_probability():
    assert good_seed_probability(1.0, 20) == pytest.approx(0.9936, abs=1e-4)


def test_find_good_seed():
    g = Graph.from_edges(5, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (0, 3, 1.0), (3, 4, 1.0)])
    assert find_good_seed(g, (0, 1, 2)) == 1
    assert find_good_seed(g, (0, 3)) is None


def test_population_solution_matches_the_closed_form(population_params):
    alpha = 0.5
    model = theory(population_params, alpha, delta=0.1)
    g = population_graph(population_params)
    target = tuple(range(population_params.k))
    for rho in np.geomspace(1.5 * model.rho_sharp, 0.8 * model.rho_natural, 5):
        x, _ = solve(PageRankProblem.single_seed(g, 0, alpha, float(rho)), tol=1e-10)
        expected = model.population_solution(0, target, float(rho))
        assert x.support() == target
        assert x.max_abs_diff(expected) < 1e-6


def test_population_support_collapses_to_the_seed_above_rho_natural(population_params):
    alpha = 0.5
    model = theory(population_params, alpha, delta=0.1)
    g = population_graph(population_params)
    x, _ = solve(PageRankProblem.single_seed(g, 0, alpha, 1.2 * model.rho_natural), tol=1e-10)
    assert x.support() == (0,)


def test_gamma_rises_with_p_and_falls_with_q():
    for p in (0.2, 0.5, 0.8):
        gammas = [LocalModelParams(n=500, k=25, p=p, q=q).gamma for q in (0.001, 0.01, 0.05)]
        assert gammas == sorted(gammas, reverse=True)
    gammas = [LocalModelParams(n=500, k=25, p=p, q=0.01).gamma for p in (0.2, 0.5, 0.8)]
    assert gammas == sorted(gammas)


def test_stagewise_sbm_setup_has_a_thousand_nodes():
    params = LocalModelParams.sbm_setup(50, 20, p=0.5, q=0.002)
    assert (params.n, params.k) == (1000, 20)
    assert params.d_bar == pytest.approx(11.46)
    assert params.gamma == pytest.approx(9.5 / 11.46)
    g, target = generate(params, seed=0)
    assert g.n == 1000 and target == tuple(range(20))
