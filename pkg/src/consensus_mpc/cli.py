"""Command-line interface for sweeps, scenario validation and grid listing."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adaptive_planner import PlannerConfig, PlannerKind
from .scenario_lib import (
    EpisodeSpec,
    ScenarioFormatError,
    default_grid,
    load_scenario,
)
from .sim_harness import emit_results, run_sweep

_PLANNER_CHOICES = {
    "adaptive": PlannerKind.ADAPTIVE,
    "first": PlannerKind.FIRST_STEP,
    "full": PlannerKind.FULL_STEP,
    "nonrobust": PlannerKind.NON_ROBUST,
}


_SCENARIO_DT = {"rendezvous": 10.0, "mineshaft": 0.05}


def _seconds_to_steps(value: float, dt: float, what: str) -> int:
    steps = max(int(round(value / dt)), 0)
    if abs(steps * dt - value) > 1e-9:
        print(
            f"warning: {what} {value} s is not a multiple of dt={dt} s; "
            f"rounded to {steps} steps"
        )
    return steps


def _load_grid_file(path: str, scenario: str) -> list[EpisodeSpec]:
    """Parse a grid JSON list.  Switch/delay may be given in control steps
    (switch_step / detection_delay) or in seconds (switch_time_s /
    delay_time_s), the latter rounded to the nearest step with a warning."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{path}: grid file must be a non-empty JSON list")
    dt = _SCENARIO_DT[scenario]
    cells = []
    for k, entry in enumerate(raw):
        try:
            if "switch_step" in entry:
                switch = int(entry["switch_step"])
            else:
                switch = _seconds_to_steps(
                    float(entry["switch_time_s"]), dt, f"entry {k} switch time"
                )
            if "detection_delay" in entry:
                delay = int(entry["detection_delay"])
            else:
                delay = _seconds_to_steps(
                    float(entry["delay_time_s"]), dt, f"entry {k} delay time"
                )
            cells.append(
                EpisodeSpec(
                    scenario=scenario,
                    switch_step=switch,
                    detection_delay=delay,
                    initial_mode=int(entry.get("initial_mode", 1)),
                    switched_mode=int(entry.get("switched_mode", 2)),
                    n_offnominal=(
                        float(entry["n_offnominal"])
                        if "n_offnominal" in entry
                        else None
                    ),
                    x0_xy=tuple(entry["x0_xy"]) if "x0_xy" in entry else None,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: bad grid entry {k}: {exc}") from exc
    return cells


def _cmd_simulate(args) -> int:
    if args.planner == "all":
        kinds = list(_PLANNER_CHOICES.values())
    else:
        kinds = [_PLANNER_CHOICES[args.planner]]
    planners = [
        PlannerConfig(
            kind=kind,
            incremental=args.incremental,
            time_budget_ms=args.time_budget_ms,
        )
        for kind in kinds
    ]
    if args.sweep == "default":
        grid = default_grid(args.scenario)
    else:
        grid = _load_grid_file(args.sweep, args.scenario)
    result = run_sweep(
        scenario=args.scenario,
        planners=planners,
        grid=grid,
        workers=args.workers,
        keep_trajectories=not args.no_trajectories,
    )
    paths = emit_results(result, args.out)
    for planner, agg in result.aggregates.items():
        print(
            f"{planner:>10}: {agg['successes']}/{agg['trials']} successes "
            f"({agg['success_pct']:.1f}%), mean cost {agg['avg_cost']:.4g}, "
            f"rate {agg['rate_mean_hz']:.2f} Hz"
        )
    print(f"results written to {paths['results'].parent}")
    return 0 if result.all_executed else 1


def _cmd_validate_scenario(args) -> int:
    try:
        bundle = load_scenario(args.file)
    except (ScenarioFormatError, FileNotFoundError) as exc:
        print(f"INVALID: {exc}")
        return 1
    print(
        f"OK: scenario '{bundle.name}' with {bundle.model.n_modes} modes, "
        f"{bundle.model.n_states} states, {bundle.model.n_controls} controls, "
        f"H={bundle.ocp.horizon_steps}, episode {bundle.episode_steps} steps"
    )
    return 0


def _cmd_show_grid(args) -> int:
    grid = default_grid(args.scenario)
    for cell in grid:
        fields = [f"switch={cell.switch_step}", f"delay={cell.detection_delay}"]
        if cell.n_offnominal is not None:
            fields.insert(0, f"n_p={cell.n_offnominal}")
        if cell.x0_xy is not None:
            fields.insert(0, f"x0=({cell.x0_xy[0]}, {cell.x0_xy[1]})")
        print("  ".join(fields))
    print(f"total trials per planner: {len(grid)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="consensus-mpc",
        description="Feasibility-guided consensus-horizon MPC benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a closed-loop sweep")
    sim.add_argument("--scenario", required=True, choices=["rendezvous", "mineshaft"])
    sim.add_argument(
        "--planner",
        default="all",
        choices=sorted(_PLANNER_CHOICES) + ["all"],
    )
    sim.add_argument("--sweep", default="default", help="'default' or a grid JSON file")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--incremental", action="store_true",
                     help="incremental horizon search instead of binary search")
    sim.add_argument("--time-budget-ms", type=float, default=None,
                     help="wall-clock budget for the incremental search")
    sim.add_argument("--no-trajectories", action="store_true",
                     help="skip per-episode trajectory dumps")
    sim.set_defaults(func=_cmd_simulate)

    val = sub.add_parser("validate-scenario", help="validate a scenario file")
    val.add_argument("file")
    val.set_defaults(func=_cmd_validate_scenario)

    show = sub.add_parser("show-grid", help="print the default sweep grid")
    show.add_argument("--scenario", required=True, choices=["rendezvous", "mineshaft"])
    show.set_defaults(func=_cmd_show_grid)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
