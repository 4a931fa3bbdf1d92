"""Discretized CVaR Bellman operators acting on Q-tables over ``S x Z x A``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augmentation import (
    BudgetGrid,
    RoundingMode,
    successor_table,
    transformed_reward,
)
from .mdp import TabularMdp


@dataclass
class QTable:
    """Action values indexed ``(state, budget position, action)``."""

    values: np.ndarray
    grid: BudgetGrid
    gamma: float
    mode: RoundingMode = RoundingMode.LOWER
    mdp_fingerprint: str | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.mode = RoundingMode(self.mode)
        if self.values.ndim != 3 or self.values.shape[1] != self.grid.n_points:
            raise ValueError(
                f"values shape {self.values.shape} incompatible with {self.grid.n_points} grid points"
            )

    @classmethod
    def zeros(cls, mdp: TabularMdp, grid: BudgetGrid, mode: RoundingMode) -> QTable:
        return cls(
            np.zeros((mdp.n_states, grid.n_points, mdp.n_actions)),
            grid,
            mdp.gamma,
            mode,
            mdp.fingerprint(),
        )

    @property
    def bound(self) -> float:
        return self.grid.r_gamma

    def copy(self) -> QTable:
        return QTable(self.values.copy(), self.grid, self.gamma, self.mode, self.mdp_fingerprint)

    def header(self) -> dict:
        n_states, n_points, n_actions = self.values.shape
        return {
            "n_states": n_states,
            "n_points": n_points,
            "n_actions": n_actions,
            "delta": self.grid.delta,
            "k_min": self.grid.k_min,
            "k_max": self.grid.k_max,
            "r_gamma": self.grid.r_gamma,
            "gamma": self.gamma,
            "mode": self.mode.value,
            "mdp_fingerprint": self.mdp_fingerprint,
        }


def save_qtable(q: QTable, path: str | Path) -> None:
    """Write ``q`` as JSON (``.json``) or as an ``.npz`` archive (anything else).

    Both layouts carry the same header followed by row-major values.
    """
    path = Path(path)
    if path.suffix == ".json":
        doc = {"header": q.header(), "values": q.values.ravel().tolist()}
        path.write_text(json.dumps(doc))
    else:
        with open(path, "wb") as fh:
            np.savez(fh, header=json.dumps(q.header()), values=q.values.ravel())


def load_qtable(path: str | Path) -> QTable:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        header, flat = doc["header"], np.asarray(doc["values"], dtype=float)
    else:
        with np.load(path) as data:
            header, flat = json.loads(str(data["header"])), data["values"]
    grid = BudgetGrid(header["delta"], header["k_min"], header["k_max"], header["r_gamma"])
    shape = (header["n_states"], header["n_points"], header["n_actions"])
    return QTable(
        flat.reshape(shape), grid, header["gamma"], header["mode"], header.get("mdp_fingerprint")
    )


class BellmanOperator:
    """One synchronous sweep of a discretized augmented Bellman operator.

    With ``dense=True`` the per-step reward is ``min(0, r + z) - min(0, z)``;
    with ``dense=False`` it is zero (the sparse baseline operator). Budget
    successors are precomputed once per distinct reward value.
    """

    def __init__(
        self, mdp: TabularMdp, grid: BudgetGrid, mode: RoundingMode, dense: bool = True
    ) -> None:
        self.mdp = mdp
        self.grid = grid
        self.mode = RoundingMode(mode)
        self.dense = dense
        self.gamma = mdp.gamma

        unique, inverse = np.unique(mdp.reward, return_inverse=True)
        self.reward_values = unique
        self.reward_class = inverse.reshape(mdp.reward.shape)
        # (n_unique, n_points)
        self.successors = successor_table(grid, self.mode, unique, mdp.gamma)
        if dense:
            self.step_reward = transformed_reward(grid.values[None, None, :], mdp.reward[..., None])
        else:
            self.step_reward = np.zeros(mdp.reward.shape + (grid.n_points,))
        # (S, A, n_points) -> stored as (S, n_points, A) to match Q layout
        self.step_reward = np.ascontiguousarray(self.step_reward.transpose(0, 2, 1))

    def successor(self, s: int, a: int) -> np.ndarray:
        return self.successors[self.reward_class[s, a]]

    def expected_next_value(self, v: np.ndarray) -> np.ndarray:
        """``sum_s' P(s'|s,a) v(s', z'(s,a,z))`` for every ``(s, z, a)``."""
        # gathered[s', u, i] = v[s', successors[u, i]]
        gathered = v[:, self.successors]
        per_class = np.einsum("sap,pun->saun", self.mdp.transition, gathered)
        n_s, n_a = self.reward_class.shape
        picked = per_class[np.arange(n_s)[:, None], np.arange(n_a)[None, :], self.reward_class]
        return picked.transpose(0, 2, 1)

    def apply(self, q: np.ndarray) -> np.ndarray:
        return self.step_reward + self.gamma * self.expected_next_value(q.max(axis=2))

    def sweep(self, q: np.ndarray) -> tuple[np.ndarray, float]:
        q_out = self.apply(q)
        return q_out, float(np.max(np.abs(q_out - q)))


def _as_array(q) -> np.ndarray:
    return q.values if isinstance(q, QTable) else np.asarray(q, dtype=float)


def sweep_T_e(mdp: TabularMdp, grid: BudgetGrid, mode: RoundingMode, q_in):
    """Apply the dense-reward operator once; returns ``(q_out, sup-norm change)``."""
    q_out, delta = BellmanOperator(mdp, grid, mode, dense=True).sweep(_as_array(q_in))
    if isinstance(q_in, QTable):
        q_out = QTable(q_out, grid, mdp.gamma, mode, q_in.mdp_fingerprint)
    return q_out, delta


def sweep_bauerle(mdp: TabularMdp, grid: BudgetGrid, mode: RoundingMode, q_in):
    """Apply the zero-reward augmented operator once."""
    q_out, delta = BellmanOperator(mdp, grid, mode, dense=False).sweep(_as_array(q_in))
    if isinstance(q_in, QTable):
        q_out = QTable(q_out, grid, mdp.gamma, mode, q_in.mdp_fingerprint)
    return q_out, delta


def greedy_values(q) -> np.ndarray:
    """State-budget values ``max_a q(s, z, a)``, shape ``(n_states, n_points)``."""
    return _as_array(q).max(axis=2)
