"""Command-line front end: ``static-cvar {solve,learn,evaluate,compare-bounds}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .augmentation import BudgetGrid, RoundingMode
from .bellman import QTable, load_qtable, save_qtable
from .evaluation import (
    DEFAULT_ALPHAS,
    alpha_sweep,
    write_returns_csv,
    write_rollouts_csv,
    write_sweep_csv,
)
from .mdp import CraterWalkConfig, TabularMdp, build_crater_walk, load_mdp, validate
from .policy import outer_optimize, psi_supremum
from .qlearning import ExplorationSchedule, StepSizeSchedule, learn, write_trace
from .value_iteration import DEFAULT_EPSILON, NonConvergenceError, solve

logger = logging.getLogger("static_cvar")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_MISMATCH = 0, 2, 3, 4
OUT_ENV = "STATIC_CVAR_OUT"
WORKERS_ENV = "STATIC_CVAR_WORKERS"


class ConfigError(ValueError):
    pass


class ArtifactMismatch(RuntimeError):
    pass


@dataclass
class RunConfig:
    environment: dict
    bins: int
    range_override: tuple[float, float] | None
    modes: list[RoundingMode]
    solver: str
    solver_params: dict
    alphas: list[float]
    n_rollouts: int
    eval_step_cap: int
    seeds: list[int]
    output: Path
    compare_bins: list[int] = field(default_factory=lambda: [100, 500, 1000, 5000])
    table_format: str = "npz"
    evaluation: dict = field(default_factory=dict)

    def build_mdp(self) -> tuple[TabularMdp, CraterWalkConfig | None]:
        env = self.environment
        if "file" in env:
            return load_mdp(env["file"]), None
        cfg = CraterWalkConfig(**_crater_params(env.get("params", {})))
        return build_crater_walk(cfg), cfg

    def grid_for(self, mdp: TabularMdp, bins: int | None = None) -> BudgetGrid:
        grid = BudgetGrid.for_mdp(mdp, bins or self.bins)
        if self.range_override:
            grid = grid.with_range(*self.range_override)
        return grid

    def table_path(self, mode: RoundingMode, directory: Path | None = None) -> Path:
        return (directory or self.output) / f"q_{mode.value}.{self.table_format}"


def _crater_params(params: dict) -> dict:
    out = dict(params)
    for key in ("crater_cells",):
        if key in out:
            out[key] = tuple(tuple(c) for c in out[key])
    for key in ("start_cell", "goal_cell"):
        if key in out:
            out[key] = tuple(out[key])
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    _require(isinstance(doc, dict), f"{source}: top level must be an object")
    _require(
        doc.get("schema_version") == SCHEMA_VERSION,
        f"{source}: schema_version must be {SCHEMA_VERSION}",
    )
    base_dir = base_dir or Path.cwd()

    env = doc.get("environment", {"name": "crater_walk"})
    if "file" in env:
        path = Path(env["file"])
        path = path if path.is_absolute() else base_dir / path
        _require(path.exists(), f"{source}: environment file {path} does not exist")
        env = {**env, "file": str(path)}
    else:
        _require(env.get("name", "crater_walk") == "crater_walk", f"{source}: unknown environment {env.get('name')!r}")
        try:
            CraterWalkConfig(**_crater_params(env.get("params", {}))).check()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: environment.params: {exc}") from None

    grid = doc.get("grid", {})
    if "K" in grid:
        _require(int(grid["K"]) >= 1, f"{source}: grid.K must be >= 1")
        bins = 2 * int(grid["K"]) + 1
    else:
        bins = int(grid.get("bins", 5001))
        _require(bins >= 2, f"{source}: grid.bins must be >= 2")
        bins = 2 * (bins // 2) + 1
    rng = grid.get("range")
    if rng is not None:
        _require(len(rng) == 2 and rng[0] <= 0 <= rng[1], f"{source}: grid.range must bracket 0")
        rng = (float(rng[0]), float(rng[1]))

    mode = doc.get("mode", "both")
    _require(mode in ("lower", "upper", "both"), f"{source}: mode must be lower|upper|both")
    modes = [RoundingMode.LOWER, RoundingMode.UPPER] if mode == "both" else [RoundingMode(mode)]

    solver = doc.get("solver", {"vi": {}})
    _require(len(solver) == 1 and next(iter(solver)) in ("vi", "qlearn"),
             f"{source}: solver must contain exactly one of 'vi' or 'qlearn'")
    solver_name, solver_params = next(iter(solver.items()))
    solver_params = dict(solver_params or {})
    if solver_name == "vi":
        _require(float(solver_params.get("epsilon", DEFAULT_EPSILON)) > 0, f"{source}: solver.vi.epsilon must be > 0")
    else:
        try:
            _step_size(solver_params)
            _exploration(solver_params)
        except ValueError as exc:
            raise ConfigError(f"{source}: solver.qlearn: {exc}") from None
        _require(int(solver_params.get("episodes", 75_000)) >= 1, f"{source}: solver.qlearn.episodes must be >= 1")

    evaluation = dict(doc.get("evaluation", {}))
    alphas = [float(a) for a in evaluation.get("alphas", DEFAULT_ALPHAS)]
    _require(all(0 < a <= 1 for a in alphas), f"{source}: evaluation.alphas must lie in (0, 1]")
    for key in ("table", "upper_table"):
        if key in evaluation:
            p = Path(evaluation[key])
            evaluation[key] = str(p if p.is_absolute() else base_dir / p)

    seeds = [int(s) for s in doc.get("seeds", [0])]
    _require(len(seeds) >= 1, f"{source}: seeds must not be empty")
    compare_bins = [int(b) for b in doc.get("compare_bounds", {}).get("bins", [100, 500, 1000, 5000])]
    table_format = doc.get("table_format", "npz")
    _require(table_format in ("npz", "json"), f"{source}: table_format must be npz or json")

    return RunConfig(
        environment=env,
        bins=bins,
        range_override=rng,
        modes=modes,
        solver=solver_name,
        solver_params=solver_params,
        alphas=alphas,
        n_rollouts=int(evaluation.get("n_rollouts", 10_000)),
        eval_step_cap=int(evaluation.get("step_cap", 150)),
        seeds=seeds,
        output=Path(doc.get("output", "out")),
        compare_bins=compare_bins,
        table_format=table_format,
        evaluation=evaluation,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path), path.parent)


def _step_size(p: dict) -> StepSizeSchedule:
    return StepSizeSchedule(
        kappa=float(p.get("kappa", 1.0)),
        kappa_min=float(p.get("kappa_min", 1e-4)),
        lam=float(p.get("lambda", 0.01)),
    )


def _exploration(p: dict) -> ExplorationSchedule:
    return ExplorationSchedule(
        eps_start=float(p.get("eps_start", 1.0)),
        eps_end=float(p.get("eps_end", 0.1)),
        decay_steps=int(p.get("decay_steps", 10**8)),
    )


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _workers(requested: int | None) -> int:
    if requested:
        return max(1, requested)
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def _pmap(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _solve_one(mdp: TabularMdp, grid: BudgetGrid, mode: RoundingMode, epsilon: float, max_iters):
    return solve(mdp, grid, mode, epsilon=epsilon, max_iters=max_iters)


def cmd_solve(config: RunConfig, workers: int = 1) -> int:
    mdp, _ = config.build_mdp()
    grid = config.grid_for(mdp)
    eps = float(config.solver_params.get("epsilon", DEFAULT_EPSILON))
    max_iters = config.solver_params.get("max_iters")
    config.output.mkdir(parents=True, exist_ok=True)
    jobs = [(mdp, grid, mode, eps, max_iters) for mode in config.modes]
    reports = _pmap(_solve_one, jobs, workers)
    for report in reports:
        save_qtable(report.q_star, config.table_path(report.mode))
        _write_json(config.output / f"report_{report.mode.value}.json", report.to_dict())
        logger.info(
            "%s: %d sweeps, delta=%.3g, certified error %.3g",
            report.mode.value, report.iterations, report.final_delta, report.certified_error,
        )
    return EXIT_OK


def _learn_one(config: RunConfig, seed: int, mode: RoundingMode, reference: QTable | None) -> str:
    mdp, crater = config.build_mdp()
    grid = config.grid_for(mdp)
    p = config.solver_params
    resets = crater.safe_states() if crater is not None else None
    table, trace, state, _ = learn(
        mdp,
        grid,
        mode,
        episodes=int(p.get("episodes", 75_000)),
        step_size=_step_size(p),
        exploration=_exploration(p),
        step_cap=int(p.get("step_cap", 150)),
        seed=seed,
        reset_states=resets,
        reference=reference,
        checkpoint_every=int(p.get("checkpoint_every", 1000)),
        checkpoint_growth=float(p.get("checkpoint_growth", 1.0)),
    )
    out = config.output / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    save_qtable(table, config.table_path(mode, out))
    write_trace(trace, out / f"trace_{mode.value}.csv")
    _write_json(
        out / f"report_{mode.value}.json",
        {
            "seed": seed,
            "mode": mode.value,
            "steps": state.global_step,
            "episodes": state.episode,
            "grid": grid.summary(),
            "final_sup_error": trace[-1].sup_error,
            "min_visit_count": int(state.visit_counts.min()),
            "mdp_fingerprint": mdp.fingerprint(),
        },
    )
    return str(out)


def _check_table(table: QTable, mdp: TabularMdp, path, grid: BudgetGrid | None = None) -> None:
    if table.mdp_fingerprint not in (None, mdp.fingerprint()):
        raise ArtifactMismatch(f"table {path} was computed for a different environment")
    if table.values.shape[0] != mdp.n_states or table.values.shape[2] != mdp.n_actions:
        raise ArtifactMismatch(f"table {path} has shape {table.values.shape}, incompatible with the MDP")
    if grid is not None and table.grid != grid:
        raise ArtifactMismatch(f"table {path} uses a {table.grid.n_points}-point grid, config asks for {grid.n_points}")


def cmd_learn(config: RunConfig, reference: str | None = None, workers: int = 1) -> int:
    _require(config.solver == "qlearn", "learn requires a solver.qlearn block")
    mdp, _ = config.build_mdp()
    ref = None
    if reference:
        ref = load_qtable(reference)
        _check_table(ref, mdp, reference, config.grid_for(mdp))
    jobs = [(config, seed, mode, ref) for seed in config.seeds for mode in config.modes]
    for out in _pmap(_learn_one, jobs, workers):
        logger.info("wrote %s", out)
    return EXIT_OK


def cmd_evaluate(config: RunConfig, table: str | None = None) -> int:
    mdp, crater = config.build_mdp()
    path = Path(table or config.evaluation.get("table") or config.table_path(config.modes[0]))
    if not path.exists():
        raise ConfigError(f"table {path} does not exist")
    q = load_qtable(path)
    _check_table(q, mdp, path, config.grid_for(mdp))
    q_upper = None
    upper_path = config.evaluation.get("upper_table")
    if upper_path is None and q.mode is RoundingMode.LOWER:
        candidate = path.with_name(path.name.replace("lower", "upper"))
        upper_path = candidate if candidate != path and candidate.exists() else None
    if upper_path:
        q_upper = load_qtable(upper_path)
        _check_table(q_upper, mdp, upper_path, q.grid)
    threshold = crater.crater_penalty if crater is not None else -mdp.r_max
    config.output.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in config.seeds:
        result = alpha_sweep(
            q, mdp, config.alphas, config.n_rollouts, seed, config.eval_step_cap,
            q_upper=q_upper, crater_reward_threshold=threshold,
        )
        rows.extend(result.rows)
        for alpha, sample in result.samples.items():
            write_returns_csv(sample, config.output / f"returns_seed{seed}_alpha{alpha:g}.csv")
            write_rollouts_csv(result.batches[alpha], seed, config.output / f"rollouts_seed{seed}_alpha{alpha:g}.csv")
    write_sweep_csv(rows, config.output / "sweep.csv")
    return EXIT_OK


BOUNDS_COLUMNS = (
    "bins", "n_points", "delta", "alpha", "psi_lower", "psi_upper", "gap", "gap_bound", "psi_lower_grid", "z_star",
)


def cmd_compare_bounds(config: RunConfig, workers: int = 1) -> int:
    mdp, _ = config.build_mdp()
    eps = float(config.solver_params.get("epsilon", DEFAULT_EPSILON)) if config.solver == "vi" else DEFAULT_EPSILON
    max_iters = config.solver_params.get("max_iters") if config.solver == "vi" else None
    config.output.mkdir(parents=True, exist_ok=True)
    jobs = [
        (mdp, config.grid_for(mdp, bins), mode, eps, max_iters)
        for bins in config.compare_bins
        for mode in (RoundingMode.LOWER, RoundingMode.UPPER)
    ]
    reports = _pmap(_solve_one, jobs, workers)
    gamma = mdp.gamma
    with open(config.output / "bounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BOUNDS_COLUMNS)
        for j, bins in enumerate(config.compare_bins):
            lower, upper = reports[2 * j].q_star, reports[2 * j + 1].q_star
            slack = 2 * gamma * lower.grid.delta / (1 - gamma)
            for alpha in config.alphas:
                psi_l = psi_supremum(lower, mdp, alpha)[0]
                psi_u = psi_supremum(upper, mdp, alpha)[0]
                scan = outer_optimize(lower, alpha, mdp.initial_state)
                writer.writerow(
                    [bins, lower.grid.n_points, repr(lower.grid.delta), repr(alpha),
                     repr(psi_l), repr(psi_u), repr(psi_u - psi_l), repr(slack / alpha),
                     repr(scan.psi_hat), repr(scan.z_value)]
                )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="static-cvar", description=__doc__)
    parser.add_argument("command", choices=["solve", "learn", "evaluate", "compare-bounds"])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    parser.add_argument("--reference", help="VI table used for the learning error trace")
    parser.add_argument("--table", help="table to evaluate (evaluate only)")
    parser.add_argument("--out", help="output directory (overrides config and environment)")
    parser.add_argument("--workers", type=int, help="max worker processes")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config)
        out = args.out or os.environ.get(OUT_ENV)
        if out:
            config.output = Path(out)
        config.seeds = [s + args.seed_offset for s in config.seeds]
        workers = _workers(args.workers)
        if args.command == "solve":
            return cmd_solve(config, workers)
        if args.command == "learn":
            return cmd_learn(config, args.reference, workers)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.table)
        return cmd_compare_bounds(config, workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ArtifactMismatch as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
