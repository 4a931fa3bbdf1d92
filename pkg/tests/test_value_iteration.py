from __future__ import annotations

import numpy as np
import pytest

from static_cvar.augmentation import BudgetGrid, RoundingMode
from static_cvar.bellman import greedy_values, sweep_T_e
from static_cvar.mdp import TabularMdp
from static_cvar.value_iteration import NonConvergenceError, default_max_iters, solve


def test_absorbing_state_solves_to_zero():
    mdp = TabularMdp(np.ones((1, 2, 1)), np.zeros((1, 2)), 0.9, 1.0, 0, frozenset({0}))
    report = solve(mdp, BudgetGrid.uniform(mdp.r_gamma, 5))
    assert np.all(report.q_star.values == 0.0)
    assert report.iterations <= 2


def test_geometric_chain_value_at_zero_budget():
    mdp = TabularMdp(np.ones((1, 1, 1)), -np.ones((1, 1)), 0.5, 1.0)
    grid = BudgetGrid.uniform(mdp.r_gamma, 8)
    report = solve(mdp, grid, epsilon=1e-8)
    assert report.q_star.values[0, grid.zero_index, 0] == pytest.approx(-2.0, abs=report.certified_error + 1e-12)


@pytest.mark.parametrize("mode", [RoundingMode.LOWER, RoundingMode.UPPER])
def test_crater_walk_1001_points(crater, mode):
    grid = BudgetGrid.for_mdp(crater, 1001)
    report = solve(crater, grid, mode, epsilon=1e-4)
    assert report.final_delta < 1e-4
    assert report.certified_error == pytest.approx(0.9 * report.final_delta / 0.1)
    # order of log(eps) / log(gamma)
    assert report.iterations < 3 * np.log(1e-4) / np.log(0.9)
    _, extra = sweep_T_e(crater, grid, mode, report.q_star)
    assert extra < 1e-4
    assert np.abs(report.q_star.values).max() <= crater.r_gamma


def test_solution_monotone_in_budget(crater_201):
    for report in crater_201.values():
        v = greedy_values(report.q_star)
        assert np.all(np.diff(v, axis=1) >= -1e-9)


def test_non_convergence_is_reported(crater):
    grid = BudgetGrid.for_mdp(crater, 3)
    with pytest.raises(NonConvergenceError) as info:
        solve(crater, grid, max_iters=3)
    assert info.value.iterations == 3 and info.value.last_delta > 1e-4


def test_degenerate_grid_still_solves(crater):
    report = solve(crater, BudgetGrid.for_mdp(crater, 3), RoundingMode.UPPER)
    assert report.final_delta < 1e-4


def test_default_max_iters():
    assert default_max_iters(0.9, 1e-4, 100.0) == int(np.ceil(np.log(1e-4 * 0.1 / 200) / np.log(0.9))) + 100


def test_positive_rewards_warn():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5, 1.0)
    with pytest.warns(UserWarning):
        solve(mdp, BudgetGrid.uniform(mdp.r_gamma, 4))


def test_callback_progress(crater):
    seen = []
    solve(crater, BudgetGrid.for_mdp(crater, 21), callback=lambda k, d: seen.append(k), report_every=10)
    assert seen and all(k % 10 == 0 for k in seen)


def test_report_to_dict(crater_201):
    doc = crater_201[RoundingMode.LOWER].to_dict()
    assert doc["mode"] == "lower" and doc["grid"]["n_points"] == 201
    assert doc["certified_error"] == pytest.approx(9 * doc["final_delta"])
