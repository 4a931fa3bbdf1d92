"""Model-free static CVaR Q-learning with budget-relabeled block updates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augmentation import BudgetGrid, RoundingMode, next_budget, transformed_reward
from .bellman import QTable
from .mdp import TabularMdp


@dataclass(frozen=True)
class StepSizeSchedule:
    """``beta(n) = max(kappa_min, kappa / (1 + lam * n))`` for visit count ``n``.

    Set ``kappa_min = 0`` for a schedule with square-summable steps.
    """

    kappa: float = 1.0
    kappa_min: float = 1e-4
    lam: float = 0.01

    def __post_init__(self) -> None:
        if self.kappa <= 0 or self.kappa_min < 0 or self.lam < 0 or self.kappa_min > self.kappa:
            raise ValueError(f"invalid step-size schedule {self}")

    @classmethod
    def robbins_monro(cls, kappa: float = 1.0, lam: float = 0.01) -> StepSizeSchedule:
        return cls(kappa=kappa, kappa_min=0.0, lam=lam)

    def __call__(self, n: int) -> float:
        return float(max(self.kappa_min, self.kappa / (1.0 + self.lam * n)))


@dataclass(frozen=True)
class ExplorationSchedule:
    """Linear decay from ``eps_start`` to ``eps_end`` over ``decay_steps`` global steps."""

    eps_start: float = 1.0
    eps_end: float = 0.1
    decay_steps: int = 10**8

    def __post_init__(self) -> None:
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0) or self.decay_steps < 1:
            raise ValueError(f"invalid exploration schedule {self}")

    def __call__(self, k: int) -> float:
        frac = min(1.0, k / self.decay_steps)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class LearnState:
    q: QTable
    visit_counts: np.ndarray
    rng: np.random.Generator
    global_step: int = 0
    episode: int = 0


@dataclass
class Checkpoint:
    step: int
    episode: int
    epsilon: float
    mean_beta: float
    sup_error: float | None


@dataclass
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    beta: float


@dataclass
class Episode:
    """Transitions of one training episode, kept for replay checks."""

    start_budget: int
    transitions: list[Transition] = field(default_factory=list)


class _RelabelCache:
    """Per-reward successor rows and transformed-reward rows over the whole grid."""

    def __init__(self, grid: BudgetGrid, mode: RoundingMode, gamma: float) -> None:
        self.grid, self.mode, self.gamma = grid, mode, gamma
        self.z = grid.values
        self._rows: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        rows = self._rows.get(r)
        if rows is None:
            idx = np.arange(self.grid.n_points)
            succ = next_budget(self.grid, self.mode, idx, r, self.gamma)
            rows = (succ, transformed_reward(self.z, r))
            self._rows[r] = rows
        return rows


def block_update(
    q: np.ndarray,
    s: int,
    a: int,
    r: float,
    s_next: int,
    beta: float,
    successors: np.ndarray,
    relabeled_reward: np.ndarray,
    gamma: float,
) -> None:
    """In-place TD update of ``q[s, :, a]`` for every budget on the grid."""
    row = q[s, :, a]
    bootstrap = q[s_next].max(axis=1)[successors]
    q[s, :, a] = row + beta * (relabeled_reward + gamma * bootstrap - row)


def single_update(
    q: np.ndarray,
    grid: BudgetGrid,
    mode: RoundingMode,
    s: int,
    i: int,
    a: int,
    r: float,
    s_next: int,
    beta: float,
    gamma: float,
) -> tuple[float, int]:
    """Scalar TD update of the one entry ``(s, i, a)``, as plain Q-learning on the
    augmented MDP would do. Returns the new value and the successor budget."""
    z = float(grid.values[i])
    i_next = next_budget(grid, mode, i, r, gamma)
    r_tilde = min(0.0, r + z) - min(0.0, z)
    old = float(q[s, i, a])
    target = r_tilde + gamma * float(np.max(q[s_next, i_next]))
    return old + beta * (target - old), i_next


def learn(
    mdp: TabularMdp,
    grid: BudgetGrid,
    mode: RoundingMode = RoundingMode.LOWER,
    episodes: int = 75_000,
    step_size: StepSizeSchedule | None = None,
    exploration: ExplorationSchedule | None = None,
    step_cap: int = 150,
    seed: int | None = 0,
    reset_states: Sequence[int] | None = None,
    reference: np.ndarray | QTable | None = None,
    checkpoint_every: int = 1000,
    checkpoint_growth: float = 1.0,
    record_episodes: bool = False,
    callback: Callable[[Checkpoint], None] | None = None,
) -> tuple[QTable, list[Checkpoint], LearnState, list[Episode]]:
    """Run ``episodes`` episodes of block-update Q-learning.

    Each episode starts from a state drawn uniformly from ``reset_states``
    (default: the MDP's initial state) with a behaviour budget drawn
    uniformly from the grid. Every environment step updates the Q-row of the
    visited ``(state, action)`` pair at all budgets at once. Returns the
    learned table, the checkpoint trace, the final learner state, and the
    recorded episodes (empty unless ``record_episodes``).

    Checkpoints fall every ``checkpoint_every`` steps; with
    ``checkpoint_growth > 1`` the gaps grow geometrically instead (first
    checkpoint at ``checkpoint_every``), which suits plotting against log-steps.
    """
    if episodes < 1 or step_cap < 1:
        raise ValueError("episodes and step_cap must be at least 1")
    if checkpoint_every < 1 or checkpoint_growth < 1.0:
        raise ValueError("checkpoint_every must be >= 1 and checkpoint_growth >= 1")
    step_size = step_size or StepSizeSchedule()
    exploration = exploration or ExplorationSchedule()
    mode = RoundingMode(mode)
    starts = np.asarray(reset_states if reset_states is not None else [mdp.initial_state])
    ref = None
    if reference is not None:
        ref = reference.values if isinstance(reference, QTable) else np.asarray(reference)

    gamma = mdp.gamma
    n_actions = mdp.n_actions
    cdf = np.cumsum(mdp.transition, axis=2)
    cdf[..., -1] = 1.0
    absorbing = np.zeros(mdp.n_states, dtype=bool)
    absorbing[list(mdp.absorbing_states)] = True

    q = np.zeros((mdp.n_states, grid.n_points, n_actions))
    counts = np.zeros((mdp.n_states, n_actions), dtype=np.int64)
    rng = np.random.default_rng(seed)
    relabel = _RelabelCache(grid, mode, gamma)
    trace: list[Checkpoint] = []
    recorded: list[Episode] = []
    k = 0
    beta_sum = 0.0
    beta_n = 0
    next_checkpoint = checkpoint_every

    def checkpoint(episode: int) -> None:
        nonlocal beta_sum, beta_n, next_checkpoint
        err = float(np.max(np.abs(q - ref))) if ref is not None else None
        mean_beta = beta_sum / beta_n if beta_n else math.nan
        cp = Checkpoint(k, episode, exploration(k), mean_beta, err)
        trace.append(cp)
        beta_sum, beta_n = 0.0, 0
        if k >= next_checkpoint:
            if checkpoint_growth > 1.0:
                next_checkpoint = max(next_checkpoint + 1, math.ceil(next_checkpoint * checkpoint_growth))
            else:
                next_checkpoint += checkpoint_every
        if callback is not None:
            callback(cp)

    checkpoint(0)
    for ep in range(1, episodes + 1):
        s = int(starts[rng.integers(len(starts))])
        z = int(rng.integers(grid.n_points))
        record = Episode(z) if record_episodes else None
        for _ in range(step_cap):
            if absorbing[s]:
                break
            eps = exploration(k)
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = int(np.argmax(q[s, z]))
            s_next = int(np.searchsorted(cdf[s, a], rng.random(), side="right"))
            r = float(mdp.reward[s, a])

            beta = step_size(counts[s, a])
            counts[s, a] += 1
            successors, relabeled = relabel(r)
            block_update(q, s, a, r, s_next, beta, successors, relabeled, gamma)
            if record is not None:
                record.transitions.append(Transition(s, a, r, s_next, beta))

            z = int(successors[z])
            s = s_next
            k += 1
            beta_sum += beta
            beta_n += 1
            if k == next_checkpoint:
                checkpoint(ep)
        if record is not None:
            recorded.append(record)
    if trace[-1].step != k:
        checkpoint(episodes)

    table = QTable(q, grid, gamma, mode, mdp.fingerprint())
    state = LearnState(table, counts, rng, k, episodes)
    return table, trace, state, recorded


def write_trace(trace: Sequence[Checkpoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "episode", "epsilon", "mean_beta", "sup_error_vs_ref"])
        for cp in trace:
            writer.writerow(
                [
                    cp.step,
                    cp.episode,
                    repr(cp.epsilon),
                    "" if math.isnan(cp.mean_beta) else repr(cp.mean_beta),
                    "" if cp.sup_error is None else repr(cp.sup_error),
                ]
            )


def smoothed(series: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average (valid part only)."""
    x = np.asarray(series, dtype=float)
    if len(x) < window:
        return x.copy()
    kernel = np.ones(window) / window
    return np.convolve(x, kernel, mode="valid")
