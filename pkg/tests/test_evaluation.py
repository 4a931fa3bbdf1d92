from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chain_mdp, coin_flip_mdp
from static_cvar.augmentation import BudgetGrid, RoundingMode
from static_cvar.evaluation import (
    DEFAULT_ALPHAS,
    PathBudgetExceeded,
    alpha_sweep,
    cvar_standard_error,
    discounted_crater_entries,
    distribution_cvar,
    empirical_cvar,
    exact_policy_cvar,
    simulate_rollouts,
    write_rollouts_csv,
    write_sweep_csv,
)
from static_cvar.mdp import risk_neutral_value_iteration
from static_cvar.policy import RolloutRecord, greedy_policy, outer_optimize, psi_supremum

LOWER = RoundingMode.LOWER


def test_empirical_cvar_examples():
    x = np.array([3.0, -1.0, 2.5, 7.0])
    assert empirical_cvar(x, 1.0) == pytest.approx(x.mean())
    assert empirical_cvar([-10, -1, -1, -1], 0.25) == -10
    assert empirical_cvar([-4, -3, -2, -1], 0.5) == -3.5
    with pytest.raises(ValueError):
        empirical_cvar([], 0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_empirical_cvar_monotone_in_alpha(xs, a, b):
    a, b = min(a, b), max(a, b)
    assert empirical_cvar(xs, a) <= empirical_cvar(xs, b) + 1e-9


def test_standard_error_shrinks_with_samples():
    rng = np.random.default_rng(0)
    small = cvar_standard_error(rng.normal(size=1000), 0.1)
    large = cvar_standard_error(rng.normal(size=100_000), 0.1)
    assert large < small / 5


def test_distribution_cvar_fractional_atom():
    assert distribution_cvar([-10, 0], [0.5, 0.5], 0.25) == -10
    assert distribution_cvar([-10, 0], [0.5, 0.5], 0.75) == pytest.approx(-20 / 3)


def test_oracle_deterministic_chain():
    mdp = chain_mdp([-1.0, -2.0, -1.0], gamma=0.5, r_max=2.0)
    grid = BudgetGrid.uniform(mdp.r_gamma, 8)
    policy = np.zeros((mdp.n_states, grid.n_points), dtype=int)
    for alpha in (0.1, 0.5, 1.0):
        res = exact_policy_cvar(mdp, policy, grid, LOWER, grid.zero_index, alpha, horizon=10)
        assert res.exact_cvar == pytest.approx(-1.0 - 1.0 - 0.25)
    assert res.truncation_bound == 0.5**10 * 2.0 / 0.5


def test_oracle_coin_flip():
    mdp = coin_flip_mdp()
    grid = BudgetGrid.uniform(mdp.r_gamma, 10)
    policy = np.zeros((mdp.n_states, grid.n_points), dtype=int)
    res = exact_policy_cvar(mdp, policy, grid, LOWER, grid.zero_index, 0.5, horizon=5)
    assert res.exact_cvar == pytest.approx(-10 * mdp.gamma)
    assert res.probs.sum() == pytest.approx(1.0)


def test_oracle_refuses_to_truncate(crater):
    grid = BudgetGrid.for_mdp(crater, 21)
    policy = np.zeros((crater.n_states, grid.n_points), dtype=int)
    with pytest.raises(PathBudgetExceeded):
        exact_policy_cvar(crater, policy, grid, LOWER, 10, 0.5, horizon=60, max_paths=1000)


def test_oracle_in_sandwich_on_mini_grid():
    from static_cvar.mdp import CraterWalkConfig, build_crater_walk
    from static_cvar.value_iteration import solve

    cfg = CraterWalkConfig(width=2, height=2, crater_cells=((0, 1),), start_cell=(0, 0), goal_cell=(1, 1), gamma=0.5)
    mdp = build_crater_walk(cfg)
    grid = BudgetGrid.for_mdp(mdp, 81)
    lo, up = solve(mdp, grid, LOWER, 1e-8), solve(mdp, grid, RoundingMode.UPPER, 1e-8)
    for alpha in (0.1, 0.5, 1.0):
        sol = outer_optimize(lo.q_star, alpha, mdp.initial_state)
        psi_u = psi_supremum(up.q_star, mdp, alpha)[0]
        res = exact_policy_cvar(mdp, greedy_policy(lo.q_star), grid, LOWER, sol.z_star, alpha, horizon=15)
        slack = res.truncation_bound + lo.certified_error + up.certified_error
        assert sol.psi_hat - slack <= res.exact_cvar <= psi_u + slack


def test_discounted_crater_entries():
    rec = RolloutRecord(rewards=[-1.0, -1.0, -1.0], gamma=0.9)
    assert discounted_crater_entries(rec, -10) == 0
    rec = RolloutRecord(rewards=[-10.0, -1.0], gamma=0.9)
    assert discounted_crater_entries(rec, -10) == 1
    rec = RolloutRecord(rewards=[-1.0, -1.0, -10.0, -1.0], gamma=0.9)
    assert discounted_crater_entries(rec, -10) == pytest.approx(0.81)


def test_returns_stay_in_bounds(crater, crater_201):
    q = crater_201[LOWER].q_star
    batch = simulate_rollouts(crater, greedy_policy(q), q.grid, LOWER, q.grid.zero_index, 500, rng=0)
    assert np.all(np.abs(batch.returns) <= crater.r_gamma)


def test_sweep_alpha_one_is_risk_neutral(crater, crater_201):
    q = crater_201[LOWER].q_star
    res = alpha_sweep(q, crater, [1.0], n_rollouts=4000, seed=1)
    assert len(res.rows) == 1
    row = res.rows[0]
    v = risk_neutral_value_iteration(crater)[crater.initial_state]
    se = np.std(res.samples[1.0].returns, ddof=1) / math.sqrt(4000)
    assert abs(row.mean_return - v) <= 4 * se
    assert row.cvar_empirical == pytest.approx(row.mean_return)


def test_sweep_default_alphas_and_determinism(tmp_path, crater, crater_201):
    q = crater_201[LOWER].q_star
    a = alpha_sweep(q, crater, DEFAULT_ALPHAS, n_rollouts=200, seed=4, q_upper=crater_201[RoundingMode.UPPER].q_star)
    b = alpha_sweep(q, crater, DEFAULT_ALPHAS, n_rollouts=200, seed=4, q_upper=crater_201[RoundingMode.UPPER].q_star)
    assert len(a.rows) == 12
    write_sweep_csv(a.rows, tmp_path / "a.csv")
    write_sweep_csv(b.rows, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = next(csv.reader(open(tmp_path / "a.csv")))
    assert header == ["alpha", "z_star", "psi_lower", "psi_upper", "cvar_empirical", "mean_return",
                      "crater_entries_mean", "n_rollouts", "bins", "seed"]
    assert all(r.psi_lower <= r.psi_upper for r in a.rows)


def test_rollouts_csv(tmp_path, crater, crater_201):
    q = crater_201[LOWER].q_star
    batch = simulate_rollouts(crater, greedy_policy(q), q.grid, LOWER, q.grid.zero_index, 5, rng=0)
    write_rollouts_csv(batch, 9, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 5 and rows[0]["seed"] == "9"
    assert set(rows[0]) == {"seed", "episode", "return", "steps", "crater_entries_discounted"}
