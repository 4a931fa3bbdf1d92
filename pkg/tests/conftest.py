from __future__ import annotations

import numpy as np
import pytest

from static_cvar.augmentation import BudgetGrid, RoundingMode
from static_cvar.mdp import TabularMdp, build_crater_walk
from static_cvar.value_iteration import solve


def chain_mdp(rewards, gamma=0.5, r_max=None):
    """Deterministic single-action chain 0 -> 1 -> ... -> n (absorbing)."""
    n = len(rewards) + 1
    transition = np.zeros((n, 1, n))
    reward = np.zeros((n, 1))
    for s, r in enumerate(rewards):
        transition[s, 0, s + 1] = 1.0
        reward[s, 0] = r
    transition[n - 1, 0, n - 1] = 1.0
    r_max = r_max if r_max is not None else max(1.0, max(abs(r) for r in rewards))
    return TabularMdp(transition, reward, gamma, r_max, 0, frozenset({n - 1}))


def coin_flip_mdp(gamma=0.9):
    """State 0 moves to 1 (reward 0 next) or 2 (reward -10 next) with equal odds."""
    transition = np.zeros((4, 1, 4))
    transition[0, 0, 1] = transition[0, 0, 2] = 0.5
    transition[1, 0, 3] = transition[2, 0, 3] = 1.0
    transition[3, 0, 3] = 1.0
    reward = np.array([[0.0], [0.0], [-10.0], [0.0]])
    return TabularMdp(transition, reward, gamma, 10.0, 0, frozenset({3}))


def random_mdp(rng, n_states=4, n_actions=2, gamma=0.9, r_max=1.0):
    transition = rng.random((n_states, n_actions, n_states))
    transition /= transition.sum(axis=2, keepdims=True)
    reward = -r_max * rng.random((n_states, n_actions))
    return TabularMdp(transition, reward, gamma, r_max, 0)


@pytest.fixture(scope="session")
def crater():
    return build_crater_walk()


@pytest.fixture(scope="session")
def crater_201(crater):
    grid = BudgetGrid.for_mdp(crater, 201)
    return {
        mode: solve(crater, grid, mode) for mode in (RoundingMode.LOWER, RoundingMode.UPPER)
    }


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
