"""Outer budget optimization and budget-tracked execution of augmented policies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augmentation import (
    BudgetGrid,
    RoundingMode,
    next_budget,
    next_budget_raw,
    transformed_reward,
)
from .bellman import QTable, greedy_values
from .mdp import TabularMdp, sample_transition


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha} must lie in (0, 1]")
    return alpha


@dataclass(frozen=True)
class OuterSolution:
    z_star: int
    z_value: float
    psi_hat: float
    mode: RoundingMode
    alpha: float


def outer_objective(q: QTable, alpha: float, initial_state: int) -> np.ndarray:
    """``-z + (-z_- + max_a q(s0, z, a)) / alpha`` at every grid point."""
    alpha = check_alpha(alpha)
    z = q.grid.values
    z_neg = -np.minimum(z, 0.0)
    return -z + (-z_neg + q.values[initial_state].max(axis=1)) / alpha


def outer_optimize(q: QTable, alpha: float, initial_state: int) -> OuterSolution:
    """Exhaustive scan of the grid for the best initial budget.

    Ties go to the smallest ``|z|``, then to the smaller position.
    """
    objective = outer_objective(q, alpha, initial_state)
    best = objective.max()
    candidates = np.flatnonzero(objective == best)
    z = q.grid.values
    i = int(min(candidates, key=lambda j: (abs(z[j]), j)))
    return OuterSolution(i, float(z[i]), float(best), q.mode, float(alpha))


def psi_supremum(q: QTable, mdp: TabularMdp, alpha: float, initial_state: int | None = None) -> tuple[float, float]:
    """Supremum over all real budgets of the outer objective, and a budget attaining it.

    Uses the off-grid extension ``max_a [r~(z, r) + gamma E v(s', e((r + z) / gamma))]``
    of the table at the initial state. Between consecutive breakpoints (where
    ``(r + z) / gamma`` crosses a grid point, or ``z`` crosses ``0`` or ``-r``)
    every action term is linear in ``z``, so the supremum is attained as a
    limit at a piece endpoint. The grid scan of :func:`outer_optimize` never
    exceeds this value.
    """
    alpha = check_alpha(alpha)
    grid, mode, gamma = q.grid, q.mode, mdp.gamma
    s0 = mdp.initial_state if initial_state is None else initial_state
    v = greedy_values(q)
    rewards = mdp.reward[s0]
    # expected discounted successor value per action and successor grid position
    ev = gamma * mdp.transition[s0] @ v

    k = np.arange(grid.k_min, grid.k_max + 1)
    cuts = [np.array([grid.z_low, grid.z_high, 0.0]), -rewards]
    cuts += [gamma * k * grid.delta - r for r in rewards]
    b = np.unique(np.clip(np.concatenate(cuts), grid.z_low, grid.z_high))
    left, right = b[:-1], b[1:]
    mid = 0.5 * (left + right)

    best_val, best_z = -np.inf, 0.0
    for x_end in (left, right):
        vals = np.full(mid.shape, -np.inf)
        for a, r in enumerate(rewards):
            idx = next_budget_raw(grid, mode, mid, r, gamma)
            vals = np.maximum(vals, transformed_reward(x_end, r) + ev[a, idx])
        objective = (vals + np.minimum(x_end, 0.0)) / alpha - x_end
        j = int(np.argmax(objective))
        if objective[j] > best_val:
            best_val, best_z = float(objective[j]), float(x_end[j])
    return best_val, best_z


def greedy_policy(q) -> np.ndarray:
    """Action map over ``(state, budget position)``; ties go to the lowest action."""
    values = q.values if isinstance(q, QTable) else np.asarray(q)
    return np.argmax(values, axis=2)


@dataclass
class BudgetTracker:
    """Running budget ``zeta`` of a trajectory, kept on the grid."""

    grid: BudgetGrid
    mode: RoundingMode
    gamma: float
    index: int

    @property
    def value(self) -> float:
        return self.grid.value(self.index)

    def update(self, reward: float) -> int:
        self.index = next_budget(self.grid, self.mode, self.index, reward, self.gamma)
        return self.index


@dataclass
class RolloutRecord:
    states: list[int] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    budgets: list[int] = field(default_factory=list)
    budget_values: list[float] = field(default_factory=list)
    discounted_return: float = 0.0
    gamma: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.actions)


def execute(
    mdp: TabularMdp,
    policy_map: np.ndarray,
    tracker: BudgetTracker,
    start_state: int | None = None,
    step_cap: int = 150,
    rng: np.random.Generator | int | None = None,
) -> RolloutRecord:
    """Run one episode of the augmented policy in the nominal MDP.

    ``states`` and ``budgets`` hold one entry per visited augmented state,
    including the final one; ``actions``/``rewards`` one per step taken.
    """
    rng = np.random.default_rng(rng)
    s = mdp.initial_state if start_state is None else start_state
    rec = RolloutRecord(gamma=mdp.gamma)
    rec.states.append(s)
    rec.budgets.append(tracker.index)
    rec.budget_values.append(tracker.value)
    discount = 1.0
    for _ in range(step_cap):
        if mdp.is_absorbing(s):
            break
        a = int(policy_map[s, tracker.index])
        s, r = sample_transition(mdp, s, a, rng)
        tracker.update(r)
        rec.actions.append(a)
        rec.rewards.append(r)
        rec.states.append(s)
        rec.budgets.append(tracker.index)
        rec.budget_values.append(tracker.value)
        rec.discounted_return += discount * r
        discount *= mdp.gamma
    return rec


def replay_budgets(grid: BudgetGrid, mode: RoundingMode, gamma: float, start: int, rewards) -> list[int]:
    """Budget positions obtained by feeding ``rewards`` through a fresh tracker."""
    tracker = BudgetTracker(grid, mode, gamma, start)
    return [start] + [tracker.update(r) for r in rewards]


def evaluate_offgrid(
    q: QTable, mdp: TabularMdp, grid: BudgetGrid, mode: RoundingMode, s: int, z_raw: float
) -> float:
    """One operator application at an arbitrary real budget, reading successors off ``q``."""
    v = greedy_values(q)
    best = -np.inf
    for a in range(mdp.n_actions):
        r = mdp.reward[s, a]
        z_next = next_budget_raw(grid, mode, z_raw, r, mdp.gamma)
        value = float(transformed_reward(z_raw, r)) + mdp.gamma * float(
            mdp.transition[s, a] @ v[:, z_next]
        )
        best = max(best, value)
    return best
