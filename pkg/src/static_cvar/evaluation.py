"""CVaR estimation, an exact enumeration oracle, and risk-level sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .augmentation import BudgetGrid, RoundingMode, successor_table
from .bellman import QTable
from .mdp import TabularMdp
from .policy import RolloutRecord, check_alpha, greedy_policy, outer_optimize, psi_supremum

DEFAULT_ALPHAS = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


class PathBudgetExceeded(RuntimeError):
    pass


@dataclass
class ReturnSample:
    returns: np.ndarray
    seeds: list[int] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _returns(sample) -> np.ndarray:
    x = sample.returns if isinstance(sample, ReturnSample) else sample
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty return sample")
    return x


def empirical_cvar(sample, alpha: float) -> float:
    """Mean of the ``max(1, ceil(alpha * N))`` smallest returns."""
    alpha = check_alpha(alpha)
    x = np.sort(_returns(sample))
    m = max(1, math.ceil(alpha * x.size - 1e-9))
    return float(x[:m].mean())


def cvar_standard_error(sample, alpha: float) -> float:
    """Plug-in asymptotic standard error of :func:`empirical_cvar`.

    Uses ``sd((VaR - X)_+) / (alpha * sqrt(N))`` with VaR the largest
    return kept by the estimator.
    """
    alpha = check_alpha(alpha)
    x = np.sort(_returns(sample))
    m = max(1, math.ceil(alpha * x.size - 1e-9))
    shortfall = np.maximum(x[m - 1] - x, 0.0)
    return float(shortfall.std(ddof=1) / (alpha * math.sqrt(x.size))) if x.size > 1 else math.inf


def distribution_cvar(values, probs, alpha: float) -> float:
    """Lower-tail CVaR of a finite distribution, splitting the atom at VaR."""
    alpha = check_alpha(alpha)
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(values, kind="stable")
    total, remaining = 0.0, alpha
    for x, p in zip(values[order], probs[order]):
        take = min(p, remaining)
        total += take * x
        remaining -= take
        if remaining <= 0.0:
            break
    # probability mass may sum to slightly under 1; the last atom absorbs the slack
    if remaining > 0.0:
        total += remaining * values[order[-1]]
    return total / alpha


@dataclass
class OracleResult:
    exact_cvar: float
    truncation_horizon: int
    truncation_bound: float
    enumerated_paths: int
    values: np.ndarray
    probs: np.ndarray


def exact_policy_cvar(
    mdp: TabularMdp,
    policy_map: np.ndarray,
    grid: BudgetGrid,
    mode: RoundingMode,
    z_start: int,
    alpha: float,
    horizon: int = 60,
    start_state: int | None = None,
    max_paths: int = 200_000,
) -> OracleResult:
    """Exact return distribution of a budget-tracked policy, truncated at ``horizon``.

    Enumerates trajectories layer by layer, merging paths that agree on
    state, budget and accumulated return. The infinite-horizon CVaR lies
    within ``truncation_bound`` of ``exact_cvar``. Raises
    :class:`PathBudgetExceeded` rather than dropping branches.
    """
    alpha = check_alpha(alpha)
    succ = successor_table(grid, mode, mdp.reward, mdp.gamma)
    s0 = mdp.initial_state if start_state is None else start_state
    layer = {(s0, z_start, 0.0): 1.0}
    finished: dict[float, float] = {}
    discount = 1.0
    enumerated = 0
    for _ in range(horizon):
        nxt: dict[tuple[int, int, float], float] = {}
        for (s, i, ret), p in layer.items():
            if mdp.is_absorbing(s):
                finished[ret] = finished.get(ret, 0.0) + p
                enumerated += 1
                continue
            a = int(policy_map[s, i])
            r = float(mdp.reward[s, a])
            i_next = int(succ[s, a, i])
            ret_next = ret + discount * r
            for s_next in np.flatnonzero(mdp.transition[s, a]):
                key = (int(s_next), i_next, ret_next)
                nxt[key] = nxt.get(key, 0.0) + p * mdp.transition[s, a, s_next]
        if len(nxt) + len(finished) > max_paths:
            raise PathBudgetExceeded(
                f"more than {max_paths} distinct partial trajectories; refusing to truncate"
            )
        layer = nxt
        discount *= mdp.gamma
        if not layer:
            break
    for (_, _, ret), p in layer.items():
        finished[ret] = finished.get(ret, 0.0) + p
        enumerated += 1

    values = np.fromiter(finished.keys(), dtype=float)
    probs = np.fromiter(finished.values(), dtype=float)
    bound = mdp.gamma**horizon * mdp.r_max / (1.0 - mdp.gamma)
    return OracleResult(
        distribution_cvar(values, probs, alpha), horizon, bound, enumerated, values, probs
    )


def discounted_crater_entries(record: RolloutRecord, crater_reward_threshold: float = -10.0) -> float:
    """``sum_t gamma^t [r_t <= threshold]`` along a recorded rollout."""
    total, discount = 0.0, 1.0
    for r in record.rewards:
        if r <= crater_reward_threshold:
            total += discount
        discount *= record.gamma
    return total


@dataclass
class RolloutBatch:
    returns: np.ndarray
    steps: np.ndarray
    crater_entries: np.ndarray


def simulate_rollouts(
    mdp: TabularMdp,
    policy_map: np.ndarray,
    grid: BudgetGrid,
    mode: RoundingMode,
    z_start: int,
    n_rollouts: int,
    step_cap: int = 150,
    rng: np.random.Generator | int | None = None,
    start_state: int | None = None,
    crater_reward_threshold: float = -10.0,
) -> RolloutBatch:
    """Run ``n_rollouts`` independent budget-tracked episodes side by side."""
    rng = np.random.default_rng(rng)
    succ = successor_table(grid, mode, mdp.reward, mdp.gamma)
    cdf = np.cumsum(mdp.transition, axis=2)
    cdf[..., -1] = 1.0
    absorbing = np.zeros(mdp.n_states, dtype=bool)
    absorbing[list(mdp.absorbing_states)] = True

    s = np.full(n_rollouts, mdp.initial_state if start_state is None else start_state)
    z = np.full(n_rollouts, z_start)
    returns = np.zeros(n_rollouts)
    craters = np.zeros(n_rollouts)
    steps = np.zeros(n_rollouts, dtype=np.int64)
    discount = 1.0
    for _ in range(step_cap):
        live = ~absorbing[s]
        if not live.any():
            break
        idx = np.flatnonzero(live)
        si, zi = s[idx], z[idx]
        a = policy_map[si, zi]
        r = mdp.reward[si, a]
        u = rng.random(idx.size)
        s_next = (u[:, None] >= cdf[si, a]).sum(axis=1)
        returns[idx] += discount * r
        craters[idx] += discount * (r <= crater_reward_threshold)
        steps[idx] += 1
        z[idx] = succ[si, a, zi]
        s[idx] = s_next
        discount *= mdp.gamma
    return RolloutBatch(returns, steps, craters)


@dataclass
class SweepRow:
    alpha: float
    z_star: float
    psi_lower: float | None
    psi_upper: float | None
    cvar_empirical: float
    cvar_standard_error: float
    mean_return: float
    crater_entries_mean: float
    crater_entries_se: float
    n_rollouts: int
    bins: int
    seed: int


SWEEP_COLUMNS = (
    "alpha",
    "z_star",
    "psi_lower",
    "psi_upper",
    "cvar_empirical",
    "mean_return",
    "crater_entries_mean",
    "n_rollouts",
    "bins",
    "seed",
)


@dataclass
class SweepResult:
    rows: list[SweepRow]
    samples: dict[float, ReturnSample]
    batches: dict[float, RolloutBatch]


def alpha_sweep(
    q: QTable,
    mdp: TabularMdp,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    n_rollouts: int = 10_000,
    seed: int = 0,
    step_cap: int = 150,
    q_upper: QTable | None = None,
    crater_reward_threshold: float = -10.0,
) -> SweepResult:
    """Outer optimization and rollouts for each risk level from a single table.

    ``q`` drives the executed policy; ``q_upper`` (optional) only contributes
    the upper bound column. ``psi_lower`` is the grid-scan value of the
    executed start budget; ``psi_upper`` is the supremum over all real
    budgets (see :func:`psi_supremum`), since a grid scan of the upper table
    can fall below the optimum.
    """
    alphas = [check_alpha(a) for a in alphas]
    policy_map = greedy_policy(q)
    rows, samples, batches = [], {}, {}
    for j, alpha in enumerate(alphas):
        sol = outer_optimize(q, alpha, mdp.initial_state)
        upper_table = q if q.mode is RoundingMode.UPPER else q_upper
        psi_upper = psi_supremum(upper_table, mdp, alpha)[0] if upper_table is not None else None
        rng = np.random.default_rng([seed, j])
        batch = simulate_rollouts(
            mdp, policy_map, q.grid, q.mode, sol.z_star, n_rollouts, step_cap, rng,
            crater_reward_threshold=crater_reward_threshold,
        )
        se_craters = batch.crater_entries.std(ddof=1) / math.sqrt(n_rollouts) if n_rollouts > 1 else math.inf
        rows.append(
            SweepRow(
                alpha=alpha,
                z_star=sol.z_value,
                psi_lower=sol.psi_hat if q.mode is RoundingMode.LOWER else None,
                psi_upper=psi_upper,
                cvar_empirical=empirical_cvar(batch.returns, alpha),
                cvar_standard_error=cvar_standard_error(batch.returns, alpha),
                mean_return=float(batch.returns.mean()),
                crater_entries_mean=float(batch.crater_entries.mean()),
                crater_entries_se=float(se_craters),
                n_rollouts=n_rollouts,
                bins=q.grid.n_points,
                seed=seed,
            )
        )
        samples[alpha] = ReturnSample(
            batch.returns, [seed], {"alpha": alpha, "mode": q.mode.value, "bins": q.grid.n_points}
        )
        batches[alpha] = batch
    return SweepResult(rows, samples, batches)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in SWEEP_COLUMNS])


def write_returns_csv(sample: ReturnSample, path: str | Path) -> None:
    np.savetxt(path, sample.returns, fmt="%.17g", header="return", comments="")


def write_rollouts_csv(batch: RolloutBatch, seed: int, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "episode", "return", "steps", "crater_entries_discounted"])
        for i, (ret, n, c) in enumerate(zip(batch.returns, batch.steps, batch.crater_entries)):
            writer.writerow([seed, i, repr(float(ret)), int(n), repr(float(c))])
