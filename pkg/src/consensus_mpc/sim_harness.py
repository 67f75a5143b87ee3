"""Closed-loop episode execution, parameter sweeps, and result files.

An episode runs the receding-horizon loop: estimate, plan, apply the first
input, propagate the true mode's dynamics, repeat.  Safety is checked on
every visited state; success additionally requires the final position to be
within the scenario's tolerance of the reference.  Sweeps fan episodes out
over a worker pool; output ordering is canonicalized by configuration key so
the result CSVs are byte-identical regardless of worker count.  Wall-clock
metrics live in separate timing files for the same reason.
"""

from __future__ import annotations

import csv
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptive_planner import Planner, PlannerConfig, PlannerKind, PlanStepReport
from .hybrid_oracle import OracleSchedule, estimate, true_mode
from .jmls_core import step_truth
from .safety_barriers import is_safe
from .scenario_lib import (
    EpisodeSpec,
    ScenarioBundle,
    build_rendezvous,
    bundle_with_start,
    build_mineshaft,
    default_grid,
)

__all__ = [
    "EpisodeConfig",
    "EpisodeRecord",
    "SweepResult",
    "run_episode",
    "run_sweep",
    "emit_results",
]


@dataclass(frozen=True)
class EpisodeConfig:
    bundle: ScenarioBundle
    schedule: OracleSchedule
    planner: PlannerConfig
    seed: int = 0  # reserved; the pipeline is deterministic

    def __post_init__(self):
        M = self.bundle.model.n_modes
        if not (1 <= self.schedule.initial_mode <= M and 1 <= self.schedule.switched_mode <= M):
            raise ValueError("schedule mode indices invalid for the bundle's model")


@dataclass
class EpisodeRecord:
    """Closed-loop trace and verdicts for one episode."""

    states: list[np.ndarray]
    controls: list[np.ndarray]
    step_reports: list[PlanStepReport]
    safe: bool
    reached_goal: bool
    success: bool
    avg_cost: float
    control_rate_hz: float
    first_violation_step: int | None = None
    max_kkt_residual: float = 0.0
    max_duality_gap: float = 0.0
    planning_time_s: float = 0.0


def _stage_cost(bundle: ScenarioBundle, x: np.ndarray, u: np.ndarray) -> float:
    err = x - bundle.x_ref
    return float(err @ bundle.ocp.Q @ err + u @ bundle.ocp.R @ u)


def run_episode(config: EpisodeConfig) -> EpisodeRecord:
    """Run the receding-horizon loop for one episode."""
    bundle = config.bundle
    planner = Planner(bundle.ocp, config.planner)
    M = bundle.model.n_modes
    x = np.asarray(bundle.x0, dtype=float)
    states = [x.copy()]
    controls: list[np.ndarray] = []
    reports: list[PlanStepReport] = []
    for t in range(bundle.episode_steps):
        est = estimate(config.schedule, t, x, M)
        report = planner.plan_step(est)
        reports.append(report)
        u = np.asarray(report.applied_u, dtype=float)
        controls.append(u)
        x = step_truth(bundle.model, x, true_mode(config.schedule, t), u)
        states.append(x.copy())

    first_violation = None
    for t, xt in enumerate(states):
        if not is_safe(bundle.barriers, xt):
            first_violation = t
            break
    safe = first_violation is None
    pos_err = states[-1][:3] - bundle.x_ref[:3]
    reached = bool(np.linalg.norm(pos_err) <= bundle.success_tolerance)
    if bundle.episode_steps == 0:
        reached = False
    T = max(len(controls), 1)
    avg_cost = (
        sum(_stage_cost(bundle, states[t], controls[t]) for t in range(len(controls)))
        / T
    )
    planning_time = sum(r.solve_time for r in reports)
    rate = len(controls) / planning_time if planning_time > 0 else float("inf")
    return EpisodeRecord(
        states=states,
        controls=controls,
        step_reports=reports,
        safe=safe,
        reached_goal=reached,
        success=safe and reached,
        avg_cost=avg_cost,
        control_rate_hz=rate,
        first_violation_step=first_violation,
        max_kkt_residual=max((r.max_kkt_residual for r in reports), default=0.0),
        max_duality_gap=max((r.max_duality_gap for r in reports), default=0.0),
        planning_time_s=planning_time,
    )


# -- sweep machinery ----------------------------------------------------------

_PLANNER_NAMES = {
    PlannerKind.ADAPTIVE: "adaptive",
    PlannerKind.FIRST_STEP: "first",
    PlannerKind.FULL_STEP: "full",
    PlannerKind.NON_ROBUST: "nonrobust",
}

_bundle_cache: dict = {}


def _bundle_for_cell(cell: EpisodeSpec) -> ScenarioBundle:
    if cell.scenario == "rendezvous":
        key = ("rendezvous", cell.n_offnominal)
        if key not in _bundle_cache:
            _bundle_cache[key] = build_rendezvous(cell.n_offnominal)
        return _bundle_cache[key]
    if cell.scenario == "mineshaft":
        key = ("mineshaft",)
        if key not in _bundle_cache:
            _bundle_cache[key] = build_mineshaft()
        base = _bundle_cache[key]
        if cell.x0_xy is None:
            return base
        x0 = np.asarray(base.x0, dtype=float).copy()
        x0[0], x0[1] = cell.x0_xy
        return bundle_with_start(base, x0)
    raise ValueError(f"unknown scenario '{cell.scenario}'")


def _episode_config(cell: EpisodeSpec, planner: PlannerConfig) -> EpisodeConfig:
    bundle = _bundle_for_cell(cell)
    schedule = OracleSchedule(
        initial_mode=cell.initial_mode,
        switched_mode=cell.switched_mode,
        switch_step=cell.switch_step,
        detection_delay=cell.detection_delay,
    )
    return EpisodeConfig(bundle=bundle, schedule=schedule, planner=planner)


@dataclass
class EpisodeRow:
    """Flat per-episode result used for CSV output and aggregation."""

    cell: EpisodeSpec
    planner: str
    executed: bool
    safe: bool = False
    reached_goal: bool = False
    success: bool = False
    avg_cost: float = np.nan
    steps: int = 0
    infeasible_steps: int = 0
    max_fallback_level: int = 0
    min_chosen_h: int | None = None
    probe_count: int = 0
    first_violation_step: int | None = None
    max_kkt_residual: float = 0.0
    max_duality_gap: float = 0.0
    control_rate_hz: float = np.nan
    planning_time_s: float = np.nan
    error: str = ""
    trajectory: list | None = None


def _episode_row(
    cell: EpisodeSpec, planner: PlannerConfig, keep_trajectory: bool
) -> EpisodeRow:
    name = _PLANNER_NAMES[planner.kind]
    try:
        record = run_episode(_episode_config(cell, planner))
    except Exception:  # noqa: BLE001 - partial failures must not abort sweeps
        return EpisodeRow(
            cell=cell, planner=name, executed=False, error=traceback.format_exc(limit=3)
        )
    chosen = [r.chosen_h for r in record.step_reports if r.chosen_h is not None]
    row = EpisodeRow(
        cell=cell,
        planner=name,
        executed=True,
        safe=record.safe,
        reached_goal=record.reached_goal,
        success=record.success,
        avg_cost=record.avg_cost,
        steps=len(record.controls),
        infeasible_steps=sum(1 for r in record.step_reports if not r.feasible),
        max_fallback_level=max(
            (r.fallback_level for r in record.step_reports), default=0
        ),
        min_chosen_h=min(chosen) if chosen else None,
        probe_count=sum(r.feasibility_probe_count for r in record.step_reports),
        first_violation_step=record.first_violation_step,
        max_kkt_residual=record.max_kkt_residual,
        max_duality_gap=record.max_duality_gap,
        control_rate_hz=record.control_rate_hz,
        planning_time_s=record.planning_time_s,
    )
    if keep_trajectory:
        traj = []
        for t, u in enumerate(record.controls):
            rep = record.step_reports[t]
            traj.append(
                (t, record.states[t].tolist(), u.tolist(), rep.chosen_h, rep.fallback_level)
            )
        traj.append((len(record.controls), record.states[-1].tolist(), None, None, None))
        row.trajectory = traj
    return row


def _run_task(args) -> EpisodeRow:
    cell, planner, keep_trajectory = args
    return _episode_row(cell, planner, keep_trajectory)


@dataclass
class SweepResult:
    scenario: str
    rows: list[EpisodeRow]
    aggregates: dict

    @property
    def all_executed(self) -> bool:
        return all(r.executed for r in self.rows)


def _aggregate(rows: list[EpisodeRow]) -> dict:
    out = {}
    for planner in sorted({r.planner for r in rows}):
        sub = [r for r in rows if r.planner == planner]
        executed = [r for r in sub if r.executed]
        costs = [r.avg_cost for r in executed]
        rates = [r.control_rate_hz for r in executed if np.isfinite(r.control_rate_hz)]
        out[planner] = {
            "trials": len(sub),
            "executed": len(executed),
            "successes": sum(1 for r in executed if r.success),
            "success_pct": (
                100.0 * sum(1 for r in executed if r.success) / len(executed)
                if executed
                else 0.0
            ),
            "avg_cost": float(np.mean(costs)) if costs else float("nan"),
            "rate_mean_hz": float(np.mean(rates)) if rates else float("nan"),
            "rate_std_hz": float(np.std(rates)) if rates else float("nan"),
            "unsafe": sum(1 for r in executed if not r.safe),
            "max_kkt_residual": max((r.max_kkt_residual for r in executed), default=0.0),
            "max_duality_gap": max((r.max_duality_gap for r in executed), default=0.0),
        }
    return out


def run_sweep(
    scenario: str,
    planners: list[PlannerConfig],
    grid: list[EpisodeSpec] | None = None,
    workers: int = 1,
    keep_trajectories: bool = True,
) -> SweepResult:
    """Run every (cell, planner) episode; deterministic output ordering."""
    if grid is None:
        grid = default_grid(scenario)
    tasks = [
        (cell, planner, keep_trajectories)
        for planner in sorted(planners, key=lambda p: p.kind.value)
        for cell in sorted(grid, key=EpisodeSpec.key)
    ]
    if workers <= 1:
        rows = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=4))
    rows.sort(key=lambda r: (r.planner, r.cell.key()))
    return SweepResult(scenario=scenario, rows=rows, aggregates=_aggregate(rows))


# -- output files --------------------------------------------------------------

_RESULT_COLUMNS = [
    "scenario",
    "planner",
    "n_offnominal",
    "x0_x",
    "x0_y",
    "switch_step",
    "detection_delay",
    "switched_mode",
    "executed",
    "steps",
    "safe",
    "reached_goal",
    "success",
    "avg_cost",
    "infeasible_steps",
    "max_fallback_level",
    "min_chosen_h",
    "probe_count",
    "first_violation_step",
    "max_kkt_residual",
    "max_duality_gap",
    "error",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _result_row(row: EpisodeRow) -> list[str]:
    cell = row.cell
    return [
        _fmt(v)
        for v in (
            cell.scenario,
            row.planner,
            cell.n_offnominal,
            cell.x0_xy[0] if cell.x0_xy else None,
            cell.x0_xy[1] if cell.x0_xy else None,
            cell.switch_step,
            cell.detection_delay,
            cell.switched_mode,
            row.executed,
            row.steps,
            row.safe,
            row.reached_goal,
            row.success,
            row.avg_cost,
            row.infeasible_steps,
            row.max_fallback_level,
            row.min_chosen_h,
            row.probe_count,
            row.first_violation_step,
            row.max_kkt_residual,
            row.max_duality_gap,
            row.error.replace("\n", " | ") if row.error else "",
        )
    ]


def _cell_slug(cell: EpisodeSpec, planner: str) -> str:
    parts = [cell.scenario, planner]
    if cell.n_offnominal is not None:
        parts.append(f"np{cell.n_offnominal}")
    if cell.x0_xy is not None:
        parts.append(f"x{cell.x0_xy[0]}_y{cell.x0_xy[1]}")
    parts.append(f"s{cell.switch_step}")
    parts.append(f"d{cell.detection_delay}")
    return "__".join(parts).replace("-", "m").replace(".", "p")


def emit_results(result: SweepResult, out_dir: str | Path) -> dict[str, Path]:
    """Write results.csv, timing.csv, summary.json and trajectory dumps.

    results.csv carries no wall-clock columns, so repeated runs are
    byte-identical; timing metrics live in timing.csv and in the summary's
    rate block.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not result.rows:
        raise ValueError("empty sweep result")

    results_path = out / "results.csv"
    with results_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_RESULT_COLUMNS)
        for row in result.rows:
            writer.writerow(_result_row(row))

    timing_path = out / "timing.csv"
    with timing_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["scenario", "planner", "n_offnominal", "x0_x", "x0_y", "switch_step",
             "detection_delay", "planning_time_s", "control_rate_hz"]
        )
        for row in result.rows:
            cell = row.cell
            writer.writerow(
                [
                    _fmt(v)
                    for v in (
                        cell.scenario,
                        row.planner,
                        cell.n_offnominal,
                        cell.x0_xy[0] if cell.x0_xy else None,
                        cell.x0_xy[1] if cell.x0_xy else None,
                        cell.switch_step,
                        cell.detection_delay,
                        row.planning_time_s,
                        row.control_rate_hz,
                    )
                ]
            )

    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(
            {"scenario": result.scenario, "planners": result.aggregates}, indent=1
        )
    )

    traj_dir = out / "trajectories"
    wrote_traj = False
    for row in result.rows:
        if row.trajectory is None:
            continue
        if not wrote_traj:
            traj_dir.mkdir(exist_ok=True)
            wrote_traj = True
        n = len(row.trajectory[0][1])
        m = len(row.trajectory[0][2]) if row.trajectory[0][2] is not None else 0
        path = traj_dir / f"{_cell_slug(row.cell, row.planner)}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["t"]
                + [f"x{i}" for i in range(n)]
                + [f"u{i}" for i in range(m)]
                + ["chosen_h", "fallback_level"]
            )
            for t, xs, us, h, level in row.trajectory:
                writer.writerow(
                    [str(t)]
                    + [repr(v) for v in xs]
                    + ([repr(v) for v in us] if us is not None else [""] * m)
                    + [_fmt(h), _fmt(level)]
                )
    paths = {
        "results": results_path,
        "timing": timing_path,
        "summary": summary_path,
    }
    if wrote_traj:
        paths["trajectories"] = traj_dir
    return paths
