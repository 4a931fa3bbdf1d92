from __future__ import annotations

import numpy as np
import pytest

from conftest import random_mdp
from static_cvar.augmentation import BudgetGrid, RoundingMode
from static_cvar.bellman import (
    QTable,
    greedy_values,
    load_qtable,
    save_qtable,
    sweep_bauerle,
    sweep_T_e,
)
from static_cvar.mdp import TabularMdp

MODES = [RoundingMode.LOWER, RoundingMode.UPPER]


def naive_sweep(mdp, grid, mode, q, dense=True):
    """Entry-by-entry evaluation with a linear scan for the rounded budget."""
    z = list(grid.values)
    out = np.empty_like(q)
    for s in range(mdp.n_states):
        for i, zi in enumerate(z):
            for a in range(mdp.n_actions):
                r = mdp.reward[s, a]
                x = min(max((r + zi) / mdp.gamma, z[0]), z[-1])
                tol = 1e-9 * max(1.0, abs(x))
                if mode is RoundingMode.LOWER:
                    j = max(k for k, v in enumerate(z) if v <= x + tol)
                else:
                    j = min(k for k, v in enumerate(z) if v >= x - tol)
                future = sum(
                    mdp.transition[s, a, t] * max(q[t, j]) for t in range(mdp.n_states)
                )
                step = (min(0.0, r + zi) - min(0.0, zi)) if dense else 0.0
                out[s, i, a] = step + mdp.gamma * future
    return out


@pytest.mark.parametrize("mode", MODES)
def test_sweep_matches_naive_oracle(mode):
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, n_states=3, n_actions=2, gamma=0.8)
    grid = BudgetGrid.uniform(mdp.r_gamma, 7)
    q = rng.uniform(-5, 0, (3, grid.n_points, 2))
    fast, _ = sweep_T_e(mdp, grid, mode, q)
    np.testing.assert_allclose(fast, naive_sweep(mdp, grid, mode, q), atol=1e-12)
    fast_b, _ = sweep_bauerle(mdp, grid, mode, q)
    np.testing.assert_allclose(fast_b, naive_sweep(mdp, grid, mode, q, dense=False), atol=1e-12)


@pytest.mark.parametrize("mode", MODES)
def test_sweep_of_zero_is_transformed_reward(crater, mode):
    grid = BudgetGrid.for_mdp(crater, 41)
    q0 = np.zeros((crater.n_states, grid.n_points, crater.n_actions))
    q1, delta = sweep_T_e(crater, grid, mode, q0)
    z = grid.values[None, :, None]
    r = crater.reward[:, None, :]
    np.testing.assert_array_equal(q1, np.minimum(0, r + z) - np.minimum(0, z))
    goal = next(iter(crater.absorbing_states))
    assert np.all(q1[goal] == 0.0)
    assert delta == np.max(np.abs(q1))


def test_bauerle_zero_and_constant(crater):
    grid = BudgetGrid.for_mdp(crater, 41)
    shape = (crater.n_states, grid.n_points, crater.n_actions)
    q_zero, delta = sweep_bauerle(crater, grid, RoundingMode.LOWER, np.zeros(shape))
    assert np.all(q_zero == 0.0) and delta == 0.0
    q_c, _ = sweep_bauerle(crater, grid, RoundingMode.UPPER, np.full(shape, -3.0))
    np.testing.assert_allclose(q_c, crater.gamma * -3.0, rtol=1e-14)


def test_bauerle_decays_geometrically(crater):
    grid = BudgetGrid.for_mdp(crater, 41)
    rng = np.random.default_rng(0)
    q = rng.uniform(-50, 50, (crater.n_states, grid.n_points, crater.n_actions))
    start = np.max(np.abs(q))
    for _ in range(200):
        q, _ = sweep_bauerle(crater, grid, RoundingMode.LOWER, q)
    assert np.max(np.abs(q)) <= crater.gamma**200 * start * (1 + 1e-9)


@pytest.mark.parametrize("mode", MODES)
def test_contraction_random_pairs(crater, mode):
    grid = BudgetGrid.for_mdp(crater, 61)
    rng = np.random.default_rng(1)
    shape = (crater.n_states, grid.n_points, crater.n_actions)
    for _ in range(20):
        q1, q2 = rng.uniform(-100, 100, shape), rng.uniform(-100, 100, shape)
        t1, _ = sweep_T_e(crater, grid, mode, q1)
        t2, _ = sweep_T_e(crater, grid, mode, q2)
        assert np.max(np.abs(t1 - t2)) <= crater.gamma * np.max(np.abs(q1 - q2)) + 1e-12


def test_lower_below_upper_from_zero(crater):
    grid = BudgetGrid.for_mdp(crater, 61)
    shape = (crater.n_states, grid.n_points, crater.n_actions)
    lo, up = np.zeros(shape), np.zeros(shape)
    for _ in range(30):
        lo, _ = sweep_T_e(crater, grid, RoundingMode.LOWER, lo)
        up, _ = sweep_T_e(crater, grid, RoundingMode.UPPER, up)
        assert np.all(lo <= up + 1e-12)


@pytest.mark.parametrize("mode", MODES)
def test_sweep_preserves_monotonicity_in_budget(crater, mode):
    grid = BudgetGrid.for_mdp(crater, 61)
    rng = np.random.default_rng(2)
    for _ in range(10):
        steps = rng.uniform(0, 1, (crater.n_states, grid.n_points, crater.n_actions))
        q = np.cumsum(steps, axis=1) - 50.0
        out, _ = sweep_T_e(crater, grid, mode, q)
        assert np.all(np.diff(greedy_values(out), axis=1) >= -1e-12)


def test_greedy_values():
    q = np.array([[[1.0, 3.0], [2.0, -1.0]]])
    np.testing.assert_array_equal(greedy_values(q), [[3.0, 2.0]])
    single = np.arange(6.0).reshape(2, 3, 1)
    np.testing.assert_array_equal(greedy_values(single), single[..., 0])


@pytest.mark.parametrize("suffix", [".json", ".npz", ".bin"])
def test_qtable_roundtrip(tmp_path, suffix):
    grid = BudgetGrid.uniform(10.0, 3)
    q = QTable(np.random.default_rng(0).normal(size=(2, 7, 3)), grid, 0.9, "upper", "abc")
    path = tmp_path / f"q{suffix}"
    save_qtable(q, path)
    back = load_qtable(path)
    np.testing.assert_array_equal(back.values, q.values)
    assert back.grid == grid and back.mode is RoundingMode.UPPER
    assert back.gamma == 0.9 and back.mdp_fingerprint == "abc"


def test_qtable_rejects_wrong_shape():
    with pytest.raises(ValueError):
        QTable(np.zeros((2, 5, 1)), BudgetGrid.uniform(1.0, 1), 0.5)


def test_single_state_sweep_by_hand():
    mdp = TabularMdp(np.ones((1, 1, 1)), -np.ones((1, 1)), 0.5, 1.0)
    grid = BudgetGrid.uniform(mdp.r_gamma, 2)  # points -2, -1, 0, 1, 2
    q = np.zeros((1, 5, 1))
    out, _ = sweep_T_e(mdp, grid, RoundingMode.LOWER, q)
    # r~ = min(0, z - 1) - min(0, z)
    np.testing.assert_array_equal(out[0, :, 0], [-1.0, -1.0, -1.0, 0.0, 0.0])
