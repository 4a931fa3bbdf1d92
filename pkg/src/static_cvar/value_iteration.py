"""Static CVaR Q-value iteration on the discretized augmented MDP."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .augmentation import BudgetGrid, RoundingMode
from .bellman import BellmanOperator, QTable
from .mdp import TabularMdp

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4


class NonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, last_delta: float) -> None:
        super().__init__(
            f"value iteration stopped after {iterations} sweeps with delta={last_delta:.3g}"
        )
        self.iterations = iterations
        self.last_delta = last_delta


@dataclass
class SolveReport:
    q_star: QTable
    iterations: int
    final_delta: float
    epsilon: float
    mode: RoundingMode
    wall_time: float

    @property
    def certified_error(self) -> float:
        """Sup-norm distance bound to the exact fixed point."""
        gamma = self.q_star.gamma
        return gamma * self.final_delta / (1.0 - gamma)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "iterations": self.iterations,
            "final_delta": self.final_delta,
            "epsilon": self.epsilon,
            "certified_error": self.certified_error,
            "wall_time": self.wall_time,
            "gamma": self.q_star.gamma,
            "grid": self.q_star.grid.summary(),
            "mdp_fingerprint": self.q_star.mdp_fingerprint,
        }


def default_max_iters(gamma: float, epsilon: float, r_gamma: float) -> int:
    if gamma == 0.0:
        return 102
    worst = math.log(epsilon * (1.0 - gamma) / (2.0 * r_gamma)) / math.log(gamma)
    return max(1, math.ceil(worst)) + 100


def assumption_holds(mdp: TabularMdp) -> bool:
    """True when every reward is non-positive."""
    return bool(np.all(mdp.reward <= 0.0))


def solve(
    mdp: TabularMdp,
    grid: BudgetGrid,
    mode: RoundingMode = RoundingMode.LOWER,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int | None = None,
    callback: Callable[[int, float], None] | None = None,
    report_every: int = 50,
) -> SolveReport:
    """Iterate the operator from the zero table until the sweep change drops below ``epsilon``.

    Raises :class:`NonConvergenceError` if ``max_iters`` sweeps are not enough.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mode = RoundingMode(mode)
    if not assumption_holds(mdp):
        warnings.warn(
            "MDP has positive rewards; lower/upper ordering guarantees do not apply",
            stacklevel=2,
        )
    if max_iters is None:
        max_iters = default_max_iters(mdp.gamma, epsilon, grid.r_gamma)

    start = time.perf_counter()
    op = BellmanOperator(mdp, grid, mode)
    q = np.zeros((mdp.n_states, grid.n_points, mdp.n_actions))
    delta = math.inf
    for k in range(1, max_iters + 1):
        q, delta = op.sweep(q)
        if callback is not None and k % report_every == 0:
            callback(k, delta)
        if delta < epsilon:
            break
    else:
        raise NonConvergenceError(max_iters, delta)

    elapsed = time.perf_counter() - start
    logger.debug("solved %s in %d sweeps (delta=%.3g, %.2fs)", mode.value, k, delta, elapsed)
    table = QTable(q, grid, mdp.gamma, mode, mdp.fingerprint())
    return SolveReport(table, k, delta, epsilon, mode, elapsed)
