"""The discretized budget dimension of the augmented MDP.

Budgets live on the lattice ``k * delta``. A :class:`BudgetGrid` keeps the
integer range ``[k_min, k_max]`` (by default ``[-K, K]`` with
``delta = r_gamma / K``), and arrays over the grid are indexed by position
``i = k - k_min``. All functions here are pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# relative slack so that exact grid multiples survive the division by gamma
FP_REL_TOL = 1e-9


class RoundingMode(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class BudgetGrid:
    delta: float
    k_min: int
    k_max: int
    r_gamma: float

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.k_min > 0 or self.k_max < 0:
            raise ValueError("the grid must contain 0")

    @classmethod
    def uniform(cls, r_gamma: float, K: int) -> BudgetGrid:
        """The ``2K + 1`` points ``k * r_gamma / K`` for ``k = -K..K``."""
        if K < 1:
            raise ValueError("K must be at least 1")
        if r_gamma <= 0:
            raise ValueError("r_gamma must be positive")
        return cls(delta=r_gamma / K, k_min=-K, k_max=K, r_gamma=float(r_gamma))

    @classmethod
    def from_bins(cls, r_gamma: float, bins: int) -> BudgetGrid:
        """Grid with ``2 * (bins // 2) + 1`` points; even counts round up to odd."""
        return cls.uniform(r_gamma, bins // 2)

    @classmethod
    def for_mdp(cls, mdp, bins: int) -> BudgetGrid:
        return cls.from_bins(mdp.r_gamma, bins)

    def with_range(self, z_min: float, z_max: float) -> BudgetGrid:
        """Restrict the lattice to ``[z_min, z_max]`` (snapped outward to grid points)."""
        k_lo = math.floor(z_min / self.delta + FP_REL_TOL)
        k_hi = math.ceil(z_max / self.delta - FP_REL_TOL)
        return BudgetGrid(self.delta, min(k_lo, 0), max(k_hi, 0), self.r_gamma)

    @property
    def K(self) -> int:
        return max(-self.k_min, self.k_max)

    @property
    def n_points(self) -> int:
        return self.k_max - self.k_min + 1

    @property
    def z_low(self) -> float:
        return self.k_min * self.delta

    @property
    def z_high(self) -> float:
        return self.k_max * self.delta

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1) * self.delta

    @property
    def zero_index(self) -> int:
        return -self.k_min

    def value(self, i: int) -> float:
        return (self.k_min + i) * self.delta

    def summary(self) -> dict:
        return {
            "delta": self.delta,
            "K": self.K,
            "r_gamma": self.r_gamma,
            "n_points": self.n_points,
            "z_min": self.z_low,
            "z_max": self.z_high,
        }


def project(grid: BudgetGrid, x):
    """Clamp ``x`` to the grid's interval (``[-r_gamma, r_gamma]`` by default)."""
    return np.clip(x, grid.z_low, grid.z_high)


def _lattice_index(grid: BudgetGrid, mode: RoundingMode, x):
    x = np.asarray(x, dtype=float)
    eps = FP_REL_TOL * np.maximum(1.0, np.abs(x))
    if RoundingMode(mode) is RoundingMode.LOWER:
        k = np.floor((x + eps) / grid.delta)
    else:
        k = np.ceil((x - eps) / grid.delta)
    return k


def round_to_grid(grid: BudgetGrid, mode: RoundingMode, x):
    """Position of ``l_delta(x)`` (LOWER) or ``u_delta(x)`` (UPPER) on the grid.

    ``x`` is expected inside the grid interval; results are clamped so that
    callers that skip projection still receive a valid position.
    """
    k = np.clip(_lattice_index(grid, mode, x), grid.k_min, grid.k_max)
    idx = (k - grid.k_min).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx


def next_budget(grid: BudgetGrid, mode: RoundingMode, i, r, gamma: float):
    """Grid position of ``p(e((r + z_i) / gamma))``.

    Accepts scalars or broadcastable arrays for ``i`` and ``r``.
    """
    z = (np.asarray(i) + grid.k_min) * grid.delta
    return next_budget_raw(grid, mode, z, r, gamma)


def next_budget_raw(grid: BudgetGrid, mode: RoundingMode, z, r, gamma: float):
    """As :func:`next_budget` but for an arbitrary real budget ``z``."""
    x = (np.asarray(r, dtype=float) + z) / gamma
    # rounding and clamping commute on the lattice since both ends are grid points
    return round_to_grid(grid, mode, x)


def transformed_reward(z, r):
    """Dense per-step reward ``min(0, r + z) - min(0, z)``."""
    return np.minimum(0.0, np.add(r, z)) - np.minimum(0.0, z)


def bauerle_reward(z, r):
    """Per-step reward of the sparse augmentation: identically zero."""
    return np.zeros(np.broadcast(np.asarray(z), np.asarray(r)).shape)


def successor_table(grid: BudgetGrid, mode: RoundingMode, rewards: np.ndarray, gamma: float):
    """``next_budget`` for every reward value and grid position.

    Returns an integer array of shape ``rewards.shape + (n_points,)``.
    """
    rewards = np.asarray(rewards, dtype=float)
    idx = np.arange(grid.n_points)
    return next_budget(grid, mode, idx, rewards[..., None], gamma)
