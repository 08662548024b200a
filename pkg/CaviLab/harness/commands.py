"""
Bodies of the command-line subcommands.

Each command takes a validated ``ExperimentConfig`` (or oracle options), writes its output
and returns the process exit code.
"""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Any, Dict, List, Optional, Sequence, TextIO

from CaviLab.config import Config
from CaviLab.core.analysis import (
    ContractionReport,
    Verdict,
    contraction_report,
    gcorr_bound,
    gcorr_empirical_detail,
    kappa,
    meanprec_radius,
    schedule_rate_bound,
    spectral_radius_mean_dynamics,
    two_stage_rates,
)
from CaviLab.core.exceptions import ConfigError, DegenerateTrajectoryError, UnsupportedModelError
from CaviLab.core.logging import get_logger
from CaviLab.core.logging.utils import LogTimer, MetricsCollector, log_context
from CaviLab.core.models import GMM2, GaussMeanPrec, MeanFieldState, TargetModel, fixed_point
from CaviLab.core.oracle import check_corpus
from CaviLab.core.scheduler import Parallel, Randomized, Sequential, Trajectory, run
from CaviLab.harness.config import ExperimentConfig
from CaviLab.harness.emit import dumps, report_json, rows_csv, trajectory_csv, write_text

logger = get_logger(__name__)

# Sweeps stop runs whose total has stopped moving
SWEEP_STAGNATION_WINDOW = 25


class ExitCode(IntEnum):
    OK = 0
    ERROR = 1
    DIVERGED = 2
    INCONCLUSIVE = 3


VERDICT_EXIT = {
    Verdict.CONVERGED: ExitCode.OK,
    Verdict.DIVERGED: ExitCode.DIVERGED,
    Verdict.INCONCLUSIVE: ExitCode.INCONCLUSIVE,
}


@dataclass(frozen=True)
class RunResult:
    model: TargetModel
    qstar: MeanFieldState
    trajectory: Trajectory
    report: ContractionReport


def execute_run(config: ExperimentConfig, overrides: Optional[Dict[str, Any]] = None) -> RunResult:
    """Build the model, find q*, iterate the schedule and compare with the analytic constants."""
    model = config.build_model(overrides)
    qstar = fixed_point(model)
    init = config.build_init(model, qstar)
    with log_context(f"{config.schedule.describe()} run of {model.family.value}", logger):
        trajectory = run(
            model, config.schedule, init, qstar,
            max_iter=config.max_iter,
            stop_tol=config.stop_tol,
            stagnation_window=config.stagnation_window,
        )
    report = contraction_report(model, trajectory, qstar, config.schedule)
    return RunResult(model, qstar, trajectory, report)


def cmd_run(config: ExperimentConfig, out: Optional[TextIO] = None) -> int:
    """Write the trajectory CSV and the report JSON; the exit code follows the verdict."""
    with LogTimer("run", logger, logging.INFO):
        result = execute_run(config)
    write_text(config.output_dir, Config.TRAJECTORY_FILE, trajectory_csv(result.trajectory))
    report_path = write_text(config.output_dir, Config.REPORT_FILE, report_json(result.report))
    (out or sys.stdout).write(report_json(result.report))

    verdict = result.report.verdict
    if verdict is Verdict.CONVERGED:
        logger.info(
            "%s converged in %d iterations; report at %s",
            result.model.family.value, result.report.iterations, report_path
        )
    else:
        logger.error(
            "%s run ended %s after %d iterations (D=%.3e)",
            result.model.family.value, verdict.value, result.report.iterations,
            result.report.terminal_divergence
        )
    return int(VERDICT_EXIT[verdict])


def _two_stage(config: ExperimentConfig, model: TargetModel, qstar: MeanFieldState) -> Optional[Dict[str, float]]:
    first, second = model.default_order()
    trajectory = run(
        model, Sequential(), config.build_init(model, qstar), qstar,
        max_iter=config.max_iter, stop_tol=config.stop_tol,
    )
    try:
        kappa_1, kappa_2 = two_stage_rates(trajectory, first=first, second=second)
    except DegenerateTrajectoryError as e:
        logger.warning("No two-stage rates: %s", e)
        return None
    return {"kappa_1": kappa_1, "kappa_2": kappa_2, "product": kappa_1 * kappa_2}


def gcorr_summary(config: ExperimentConfig) -> Dict[str, Any]:
    """Analytic bound, empirical search, kappa and spectral radius where each is defined."""
    model = config.build_model()
    qstar = fixed_point(model)
    summary: Dict[str, Any] = {"family": model.family.value, "blocks": model.block_count}

    bound = gcorr_bound(model, qstar)
    if bound is not None:
        kappa_value = kappa(bound, model.block_count)
        summary["gcorr_bound"] = bound
        summary["kappa"] = kappa_value
        summary["schedule_rate_bounds"] = {
            schedule.kind: schedule_rate_bound(kappa_value, schedule)
            for schedule in (Parallel(), Sequential(), Randomized(0))
        }
    try:
        summary["spectral_radius"] = spectral_radius_mean_dynamics(model)
    except UnsupportedModelError:
        logger.debug("No spectral radius for %s", model.family.value)

    options = config.gcorr
    r0 = options.r0
    if r0 is None and isinstance(model, GaussMeanPrec):
        r0 = meanprec_radius(Config.MEANPREC_OMEGA, model.n)
    search = gcorr_empirical_detail(model, qstar, r0, options.alphas, options.budget, options.seed or 0)
    summary["gcorr_empirical"] = search.value
    summary["gcorr_empirical_blocks"] = list(search.block_values)
    summary["search"] = {
        "r0": r0,
        "alphas": list(search.alphas),
        "budget": options.budget,
        "accepted": search.accepted,
        "seed": options.seed or 0,
    }
    if isinstance(model, GMM2):
        two_stage = _two_stage(config, model, qstar)
        if two_stage is not None:
            summary["two_stage"] = two_stage
    return summary


def cmd_gcorr(config: ExperimentConfig, out: Optional[TextIO] = None) -> int:
    with LogTimer("gcorr", logger, logging.INFO):
        summary = gcorr_summary(config)
    (out or sys.stdout).write(dumps(summary))
    return int(ExitCode.OK)


def sweep_rows(config: ExperimentConfig, threads: Optional[int] = None) -> List[List[Any]]:
    """
    One row per grid point, in grid order: parameter values, verdict, tail ratio, kappa
    bound, iterations and terminal divergence.

    Raises:
        ConfigError: missing, empty or oversized grid
    """
    if config.sweep is None:
        raise ConfigError("the sweep command needs a grid", "sweep")
    grid = config.sweep
    if grid.size == 0:
        raise ConfigError("the grid is empty", "sweep.parameters")
    if grid.size > grid.max_points:
        raise ConfigError(
            f"grid has {grid.size} points, above the cap of {grid.max_points}", "sweep.max_points"
        )
    window = config.stagnation_window or SWEEP_STAGNATION_WINDOW
    point_config = replace(config, stagnation_window=window)
    points = grid.points()
    metrics = MetricsCollector(logger)

    def evaluate(point: Dict[str, Any]) -> List[Any]:
        with LogTimer(f"sweep point {point}", logger) as timer:
            report = execute_run(point_config, point).report
        metrics.record_timing("point", timer.duration or 0.0)
        return [point[name] for name in grid.names] + [
            report.verdict.value,
            report.empirical_tail_ratio,
            report.kappa,
            report.iterations,
            report.terminal_divergence,
        ]

    workers = max(1, min(threads or Config.threads(), len(points)))
    with LogTimer(f"sweep over {len(points)} points", logger, logging.INFO):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, points))
    for row in rows:
        metrics.increment(f"verdict {row[len(grid.names)]}")
    metrics.log_summary()
    return rows


def sweep_header(names: Sequence[str]) -> List[str]:
    return list(names) + ["verdict", "tail_ratio", "kappa_bound", "iterations", "terminal_divergence"]


def cmd_sweep(config: ExperimentConfig, out: Optional[TextIO] = None) -> int:
    table = rows_csv(sweep_header(config.sweep.names if config.sweep else ()), sweep_rows(config))
    path = write_text(config.output_dir, Config.SWEEP_FILE, table)
    (out or sys.stdout).write(table)
    logger.info("Sweep table written to %s", path)
    return int(ExitCode.OK)


def cmd_oracle_check(options: Dict[str, Any], seed: int = 0, out: Optional[TextIO] = None) -> int:
    """Exit 0 when every closed form agrees with its oracle, 2 on any mismatch."""
    summary = check_corpus(
        seed=seed,
        pairs=int(options.get("pairs", 200)),
        delta_pairs=int(options.get("delta_pairs", 200)),
        rtol=float(options.get("rtol", 1e-6)),
        atol=float(options.get("atol", 1e-8)),
    )
    (out or sys.stdout).write(dumps(summary.to_dict()))
    if not summary.passed:
        logger.error("%d closed-form values disagree with the oracle", len(summary.mismatches))
        return int(ExitCode.DIVERGED)
    return int(ExitCode.OK)


__all__ = [
    'ExitCode',
    'RunResult',
    'SWEEP_STAGNATION_WINDOW',
    'cmd_gcorr',
    'cmd_oracle_check',
    'cmd_run',
    'cmd_sweep',
    'execute_run',
    'gcorr_summary',
    'sweep_header',
    'sweep_rows',
]
