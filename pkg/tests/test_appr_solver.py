import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from services.analysis import check_sandwich
from services.appr_solver import ApprState, appr_residual_report, appr_solve
from services.errors import InvalidParametersError, LocalityBudgetExceeded
from services.l1pr_solver import PageRankProblem, gradient
from tests.oracles import dense_pagerank
from tests.strategies import problems


@given(problems(max_rho_fraction=0.95), st.sampled_from(["fifo", "lifo"]))
def test_appr_terminates_with_small_gradients(prob, order):
    x, stats = appr_solve(prob, order=order)
    report = appr_residual_report(prob, x)
    assert report.passed
    assert report.max_scaled_gradient < prob.rho * prob.alpha
    assert stats.algorithm == "appr"
    assert stats.max_kkt_violation < 1.0
    assert x.min_value() >= 0


@given(problems(max_rho_fraction=0.95))
def test_appr_stays_below_pagerank(prob):
    x, _ = appr_solve(prob)
    exact = dense_pagerank(prob)
    assert all(v <= exact[i] + 1e-12 for i, v in x.items())


@given(problems(max_rho_fraction=0.95), st.sampled_from(["fifo", "lifo"]))
def test_appr_support_is_sandwiched_between_l1_supports(prob, order):
    seed = prob.seed_nodes[0]
    report = check_sandwich(prob.graph, seed, prob.alpha, prob.rho, tol=1e-10, order=order)
    assert report.passed, report


def test_no_push_when_rho_exceeds_inverse_seed_degree(dumbbell):
    x, stats = appr_solve(PageRankProblem.single_seed(dumbbell, 2, 0.15, 0.5))
    assert len(x) == 0
    assert stats.iterations == 0


def test_first_push_moves_alpha_over_degree(dumbbell):
    prob = PageRankProblem.single_seed(dumbbell, 2, 0.5, 0.3)
    state = ApprState(prob)
    state.push(2)
    assert state.x == {2: pytest.approx(0.5 / 3)}
    assert state.grad[2] == pytest.approx(-0.5 * 0.25)
    assert state.grad[0] == pytest.approx(-0.25 * 0.5 / 3)
    assert state.max_cache_error() < 1e-15


def test_cached_gradients_track_recomputed_ones(two_cliques):
    prob = PageRankProblem.single_seed(two_cliques, 0, 0.15, 1e-3)
    state = ApprState(prob, refresh_interval=0)
    state.run()
    assert state.max_cache_error() < 1e-12
    for i in state.touched:
        assert state.grad[i] == pytest.approx(gradient(prob, state.x, i), abs=1e-12)


def test_frequent_refreshes_are_counted(two_cliques):
    prob = PageRankProblem.single_seed(two_cliques, 0, 0.15, 1e-3)
    _, stats = appr_solve(prob, refresh_interval=5)
    assert stats.refreshes >= stats.iterations // 5


def test_bad_arguments(path3):
    with pytest.raises(InvalidParametersError):
        appr_solve(PageRankProblem.single_seed(path3, 0, 0.5, 0.0))
    with pytest.raises(InvalidParametersError):
        appr_solve(PageRankProblem.single_seed(path3, 0, 0.5, 0.1), order="random")


def test_max_touch_budget(two_cliques):
    prob = PageRankProblem.single_seed(two_cliques, 0, 0.15, 1e-4)
    with pytest.raises(LocalityBudgetExceeded) as info:
        appr_solve(prob, max_touch=4)
    assert len(info.value.partial) >= 1


def test_mass_pushed_is_at_most_one(local_instance):
    _, g, target = local_instance
    prob = PageRankProblem.single_seed(g, max(target, key=g.degree), 0.15, 1e-4)
    x, _ = appr_solve(prob)
    assert x.weighted_sum(g.degrees) <= 1.0 + 1e-12
    assert np.isfinite(x.l1_norm())


def test_residual_report_flags_the_seed_of_a_zero_vector(dumbbell):
    prob = PageRankProblem.single_seed(dumbbell, 0, 0.2, 0.1)
    report = appr_residual_report(prob, {})
    assert not report.passed
    assert report.flagged == [0]
    assert report.threshold == pytest.approx(0.02)
