"""Nominal tabular MDPs: representation, validation, builders and a risk-neutral solver."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12

# Action order for grid worlds: up, down, left, right as (drow, dcol).
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
BACKWARD = (1, 0, 3, 2)
LATERAL = ((2, 3), (2, 3), (0, 1), (0, 1))


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite discounted MDP with dense transition and reward arrays.

    ``transition`` has shape ``(n_states, n_actions, n_states)`` and
    ``reward`` has shape ``(n_states, n_actions)``. Instances are treated as
    immutable; the arrays are marked read-only on construction.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    r_max: float
    initial_state: int = 0
    absorbing_states: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        transition = np.array(self.transition, dtype=float)
        reward = np.array(self.reward, dtype=float)
        if transition.ndim != 3 or reward.ndim != 2:
            raise ValueError("transition must be 3-d and reward 2-d")
        if transition.shape[:2] != reward.shape or transition.shape[0] != transition.shape[2]:
            raise ValueError(
                f"shape mismatch: transition {transition.shape}, reward {reward.shape}"
            )
        transition.setflags(write=False)
        reward.setflags(write=False)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(
            self, "absorbing_states", frozenset(int(s) for s in self.absorbing_states)
        )

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def r_gamma(self) -> float:
        """Bound on the absolute discounted return, ``r_max / (1 - gamma)``."""
        return self.r_max / (1.0 - self.gamma)

    def is_absorbing(self, s: int) -> bool:
        return s in self.absorbing_states

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "r_max": self.r_max,
            "initial_state": self.initial_state,
            "absorbing": sorted(self.absorbing_states),
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TabularMdp:
        mdp = cls(
            transition=np.asarray(doc["transition"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            gamma=doc["gamma"],
            r_max=doc["r_max"],
            initial_state=doc.get("initial_state", 0),
            absorbing_states=frozenset(doc.get("absorbing", ())),
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValueError("declared n_states/n_actions do not match the arrays")
        return mdp

    def fingerprint(self) -> str:
        """Stable short hash of the model, used to match tables to environments."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def save_mdp(mdp: TabularMdp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def load_mdp(path: str | Path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def validate(mdp: TabularMdp) -> list[str]:
    """Return a description of every broken model invariant (empty if valid)."""
    problems = []
    if not 0.0 <= mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma} outside [0, 1)")
    if mdp.r_max < 0:
        problems.append(f"r_max={mdp.r_max} is negative")
    if not 0 <= mdp.initial_state < mdp.n_states:
        problems.append(f"initial_state={mdp.initial_state} out of range")
    for s in sorted(mdp.absorbing_states):
        if not 0 <= s < mdp.n_states:
            problems.append(f"absorbing state {s} out of range")
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = mdp.transition[s, a]
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                problems.append(f"transition({s},{a}) has negative or non-finite entries")
            elif abs(row.sum() - 1.0) > ROW_TOL:
                problems.append(f"transition({s},{a}) sums to {row.sum():.15g}, not 1")
            r = mdp.reward[s, a]
            if not np.isfinite(r) or abs(r) > mdp.r_max:
                problems.append(f"reward({s},{a})={r} exceeds r_max={mdp.r_max}")
            if s in mdp.absorbing_states and 0 <= s < mdp.n_states:
                if row[s] != 1.0:
                    problems.append(f"absorbing state {s}: transition({s},{a}) leaves the state")
                if r != 0.0:
                    problems.append(f"absorbing state {s}: reward({s},{a})={r} is not 0")
    return problems


@dataclass(frozen=True)
class CraterWalkConfig:
    """Parameters of the 4x5 crater-walk grid world.

    Cells are ``(row, col)`` with row 0 at the top. In the default layout the
    start and goal sit at the two ends of row 2 with a crater between them:
    the short way round runs along the bottom corridor next to the crater,
    the long way along the top row.
    """

    width: int = 5
    height: int = 4
    slip_probability: float = 0.25
    step_penalty: float = -1.0
    crater_penalty: float = -10.0
    crater_cells: tuple[tuple[int, int], ...] = ((2, 2),)
    start_cell: tuple[int, int] = (2, 0)
    goal_cell: tuple[int, int] = (2, 4)
    gamma: float = 0.9

    def check(self) -> None:
        if not 0.0 <= self.slip_probability < 1.0:
            raise ValueError(f"slip_probability={self.slip_probability} outside [0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma={self.gamma} outside [0, 1)")
        if self.step_penalty > 0 or self.crater_penalty > 0:
            raise ValueError("crater-walk penalties must be non-positive")
        cells = [self.start_cell, self.goal_cell, *self.crater_cells]
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell {(r, c)} outside the {self.height}x{self.width} grid")
        if self.goal_cell in self.crater_cells or self.start_cell in self.crater_cells:
            raise ValueError("start and goal must not be crater cells")
        if self.start_cell == self.goal_cell:
            raise ValueError("start and goal must differ")

    def cell_index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.width + cell[1]

    def safe_states(self) -> list[int]:
        """Non-crater, non-goal states (training reset distribution)."""
        skip = {self.cell_index(c) for c in self.crater_cells}
        skip.add(self.cell_index(self.goal_cell))
        return [s for s in range(self.width * self.height) if s not in skip]

    def crater_states(self) -> list[int]:
        return sorted(self.cell_index(c) for c in self.crater_cells)


def build_crater_walk(config: CraterWalkConfig | None = None) -> TabularMdp:
    config = config or CraterWalkConfig()
    config.check()
    h, w, omega = config.height, config.width, config.slip_probability
    n = h * w
    goal = config.cell_index(config.goal_cell)
    craters = set(config.crater_states())

    transition = np.zeros((n, 4, n))
    reward = np.zeros((n, 4))
    for r in range(h):
        for c in range(w):
            s = r * w + c
            if s == goal:
                transition[s, :, s] = 1.0
                continue
            for a in range(4):
                outcomes = [(a, 1.0 - omega), (BACKWARD[a], omega / 9.0)]
                outcomes += [(d, 4.0 * omega / 9.0) for d in LATERAL[a]]
                for d, p in outcomes:
                    nr, nc = r + MOVES[d][0], c + MOVES[d][1]
                    # blocked component stays in place
                    nxt = nr * w + nc if 0 <= nr < h and 0 <= nc < w else s
                    transition[s, a, nxt] += p
                reward[s, a] = config.crater_penalty if s in craters else config.step_penalty

    r_max = max(abs(config.step_penalty), abs(config.crater_penalty))
    return TabularMdp(
        transition=transition,
        reward=reward,
        gamma=config.gamma,
        r_max=r_max,
        initial_state=config.cell_index(config.start_cell),
        absorbing_states=frozenset({goal}),
    )


def risk_neutral_value_iteration(
    mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 100_000
) -> np.ndarray:
    """Optimal expected-return state values by synchronous value iteration."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        new_v = np.max(mdp.reward + mdp.gamma * mdp.transition @ v, axis=1)
        delta = np.max(np.abs(new_v - v))
        v = new_v
        if delta < tol:
            return v
    raise RuntimeError(f"risk-neutral value iteration did not converge (delta={delta:.3g})")


def sample_transition(
    mdp: TabularMdp, s: int, a: int, rng: np.random.Generator
) -> tuple[int, float]:
    """Draw ``(next_state, reward)`` from the model using one uniform variate."""
    cdf = np.cumsum(mdp.transition[s, a])
    u = rng.random()
    s_next = int(np.searchsorted(cdf, u, side="right"))
    # guard against cdf[-1] rounding below u
    s_next = min(s_next, mdp.n_states - 1)
    while mdp.transition[s, a, s_next] == 0.0:
        s_next -= 1
    return s_next, float(mdp.reward[s, a])
