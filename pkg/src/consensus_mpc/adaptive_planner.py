"""Feasibility-guided consensus-horizon planners and baselines.

Four planner variants share one receding-horizon step contract:

* ``ADAPTIVE``   -- binary-search the largest consensus horizon whose
  feasibility LP is solvable, then solve the QP there and apply the first
  consensus input.
* ``FIRST_STEP`` -- fixed consensus horizon h = 1.
* ``FULL_STEP``  -- fixed consensus horizon h = H - 1 (consensus over every
  free input).
* ``NON_ROBUST`` -- no consensus: plan a single-mode OCP for the most likely
  mode (ties break to the lowest index).

When the designated problem is infeasible the planner descends a fallback
ladder: (1) the no-consensus OCP, applying the most likely mode's first
input; (2) the same problem with all CBF rows dropped (pure tracking);
(3) the previous step's second planned input if one exists, else zero
clamped to the control bounds.  Every rung is reported via
``fallback_level``.  The non-robust variant starts at rung 2 since rung 1 is
not part of its policy.

A ``Planner`` instance carries only per-episode state (the previous plan for
rung 3); distinct episodes can run concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .consensus_ocp import (
    OcpInstance,
    OcpSolution,
    OcpSpec,
    build_feasibility_lp,
    build_qp,
    build_tracking_qp,
    solve,
)
from .hybrid_oracle import HybridEstimate
from .jmls_core import JumpLinearModel, ModeBelief
from .safety_barriers import BarrierSet
from .solvers import SolveStatus

__all__ = [
    "PlannerKind",
    "PlannerConfig",
    "PlanStepReport",
    "Planner",
    "bisect_max_feasible",
    "incremental_max_feasible",
    "max_feasible_horizon",
    "plan_step",
]


class PlannerKind(Enum):
    ADAPTIVE = "adaptive"
    FIRST_STEP = "first"
    FULL_STEP = "full"
    NON_ROBUST = "nonrobust"


@dataclass(frozen=True)
class PlannerConfig:
    kind: PlannerKind
    gamma_override: float | None = None
    incremental: bool = False
    time_budget_ms: float | None = None
    prune_threshold: float = 0.0


@dataclass
class PlanStepReport:
    """Outcome of one receding-horizon planning step.

    ``chosen_h`` is the consensus horizon of the successful constrained
    solve (None when no consensus OCP was solved: the non-robust variant,
    or fallback rungs 2-3).  ``solve_time`` is the wall time of the whole
    planning step including feasibility probes.
    """

    chosen_h: int | None
    feasible: bool
    applied_u: np.ndarray
    fallback_level: int
    feasibility_probe_count: int
    solve_time: float
    objective: float = np.nan
    max_kkt_residual: float = 0.0
    max_duality_gap: float = 0.0
    solver_failures: int = 0


def bisect_max_feasible(
    feasible: Callable[[int], bool], H: int
) -> tuple[int | None, int]:
    """Largest feasible h in {0,...,H-1} for a monotone predicate.

    Implements the maximally-feasible-horizon binary search: bisect on
    [0, H-1] tracking the best feasible value, then re-check the upper
    bound before settling for the tracked best.  Probes are memoized so the
    oracle is invoked at most ceil(log2 H) + 1 times.  Returns (h*, probe
    count), with h* None when even h = 0 is infeasible.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    calls = 0
    memo: dict[int, bool] = {}

    def probe(h: int) -> bool:
        nonlocal calls
        if h not in memo:
            calls += 1
            memo[h] = bool(feasible(h))
        return memo[h]

    h_max = H - 1
    h_min = 0
    h_best = 0
    while h_min < h_max:
        h = (h_min + h_max) // 2
        if probe(h):
            h_min = h + 1
            h_best = h
        else:
            h_max = h - 1
    if h_max >= 0 and probe(h_max):
        h_star = h_max
    else:
        h_star = h_best
    if h_star == 0 and memo.get(0) is False:
        return None, calls
    return h_star, calls


def incremental_max_feasible(
    feasible: Callable[[int], bool],
    H: int,
    time_budget_s: float | None = None,
) -> tuple[int | None, int]:
    """Start at h = 1 and increment until h* is found or the budget runs out.

    Intended for tight planning-time limits; returns the best feasible h
    found so far when the wall-clock budget is exhausted.  Falls back to
    probing h = 0 when h = 1 is infeasible or nothing was established.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    t0 = time.perf_counter()
    calls = 0
    best: int | None = None
    for h in range(1, H):
        if time_budget_s is not None and time.perf_counter() - t0 > time_budget_s:
            break
        calls += 1
        if feasible(h):
            best = h
        else:
            break
    if best is not None:
        return best, calls
    calls += 1
    return (0 if feasible(0) else None), calls


def _lp_probe(spec: OcpSpec, x0: np.ndarray, mu: ModeBelief):
    """Feasibility-LP oracle over h; solver failures count as infeasible."""
    failures = [0]

    def feasible(h: int) -> bool:
        sol = solve(build_feasibility_lp(OcpInstance(spec, x0, mu, h)))
        if sol.status is SolveStatus.SOLVER_FAILURE:
            failures[0] += 1
            return False
        return sol.status is SolveStatus.OPTIMAL

    return feasible, failures


def max_feasible_horizon(
    spec: OcpSpec,
    x0: np.ndarray,
    mu_hat: ModeBelief,
    incremental: bool = False,
    time_budget_ms: float | None = None,
) -> int | None:
    """Largest h in {0,...,H-1} whose feasibility LP is solvable, or None."""
    feasible, _ = _lp_probe(spec, x0, mu_hat)
    if incremental:
        budget = time_budget_ms / 1000.0 if time_budget_ms is not None else None
        h, _ = incremental_max_feasible(feasible, spec.H, budget)
    else:
        h, _ = bisect_max_feasible(feasible, spec.H)
    return h


def _restrict_modes(model: JumpLinearModel, indices: tuple[int, ...]) -> JumpLinearModel:
    """Submodel over the given 1-based modes; transition becomes identity."""
    modes = tuple(model.modes[i - 1] for i in indices)
    return JumpLinearModel(
        modes=modes,
        transition=np.eye(len(modes)),
        u_min=model.u_min,
        u_max=model.u_max,
    )


class Planner:
    """Per-episode planner: holds the previous plan for fallback rung 3."""

    def __init__(self, spec: OcpSpec, config: PlannerConfig | PlannerKind):
        if isinstance(config, PlannerKind):
            config = PlannerConfig(kind=config)
        self.config = config
        if config.gamma_override is not None:
            barriers = BarrierSet(
                barriers=spec.barriers.barriers, gamma=config.gamma_override
            )
            spec = OcpSpec(
                model=spec.model,
                barriers=barriers,
                horizon_steps=spec.horizon_steps,
                Q=spec.Q,
                R=spec.R,
                x_ref=spec.x_ref,
                terminal_weight=spec.terminal_weight,
            )
        self.spec = spec
        self._reduced_specs: dict[tuple[int, ...], OcpSpec] = {}
        self._prev_plan: np.ndarray | None = None

    # -- spec restriction helpers ------------------------------------------

    def _spec_for(self, indices: tuple[int, ...]) -> OcpSpec:
        if len(indices) == self.spec.model.n_modes:
            return self.spec
        spec = self._reduced_specs.get(indices)
        if spec is None:
            spec = OcpSpec(
                model=_restrict_modes(self.spec.model, indices),
                barriers=self.spec.barriers,
                horizon_steps=self.spec.horizon_steps,
                Q=self.spec.Q,
                R=self.spec.R,
                x_ref=self.spec.x_ref,
                terminal_weight=self.spec.terminal_weight,
            )
            self._reduced_specs[indices] = spec
        return spec

    def _active_view(self, mu: ModeBelief) -> tuple[OcpSpec, ModeBelief, np.ndarray]:
        """Apply the optional pruning threshold; returns (spec, belief, map).

        ``map`` holds the original 1-based indices of the retained modes.
        The default threshold 0 retains everything (the planner never prunes
        unless asked to).
        """
        thr = self.config.prune_threshold
        M = self.spec.model.n_modes
        if thr <= 0.0:
            return self.spec, mu, np.arange(1, M + 1)
        keep = [i for i in range(M) if mu.probs[i] >= thr]
        if not keep or len(keep) == M:
            return self.spec, mu, np.arange(1, M + 1)
        indices = tuple(i + 1 for i in keep)
        sub = np.asarray(mu.probs)[keep]
        return (
            self._spec_for(indices),
            ModeBelief(sub / sub.sum()),
            np.array(indices),
        )

    # -- planning ------------------------------------------------------------

    def plan_step(self, estimate: HybridEstimate) -> PlanStepReport:
        t0 = time.perf_counter()
        x0 = np.asarray(estimate.x_hat, dtype=float)
        spec, mu, mode_map = self._active_view(estimate.mu_hat)
        kind = self.config.kind
        H = spec.H

        report = PlanStepReport(
            chosen_h=None,
            feasible=False,
            applied_u=None,
            fallback_level=0,
            feasibility_probe_count=0,
            solve_time=0.0,
        )

        def track(sol: OcpSolution):
            if sol.status is SolveStatus.OPTIMAL:
                report.max_kkt_residual = max(report.max_kkt_residual, sol.kkt_residual)
                report.max_duality_gap = max(report.max_duality_gap, sol.duality_gap_rel)
            elif sol.status is SolveStatus.SOLVER_FAILURE:
                report.solver_failures += 1

        argmax_idx = mu.argmax_mode()  # 1-based within the active view

        def adopt(sol: OcpSolution, h: int, level: int):
            """Record a successful constrained or tracking solve."""
            if h >= 1 and sol.first_input is not None:
                report.applied_u = sol.first_input
                mode_for_plan = argmax_idx - 1
            else:
                mode_for_plan = argmax_idx - 1
                report.applied_u = sol.controls[mode_for_plan][0].copy()
            report.objective = sol.objective
            report.fallback_level = level
            report.feasible = level == 0
            self._prev_plan = sol.controls[mode_for_plan].copy()

        designated: OcpSolution | None = None
        if kind is PlannerKind.ADAPTIVE:
            feasible, failures = _lp_probe(spec, x0, mu)
            if self.config.incremental:
                budget = (
                    self.config.time_budget_ms / 1000.0
                    if self.config.time_budget_ms is not None
                    else None
                )
                h_star, probes = incremental_max_feasible(feasible, H, budget)
            else:
                h_star, probes = bisect_max_feasible(feasible, H)
            report.feasibility_probe_count = probes
            report.solver_failures += failures[0]
            if h_star is not None:
                designated = solve(build_qp(OcpInstance(spec, x0, mu, h_star)))
                track(designated)
                if designated.status is SolveStatus.OPTIMAL:
                    adopt(designated, h_star, level=0)
                    report.chosen_h = h_star
                else:
                    self._fallback(spec, x0, mu, report, start_level=1)
            else:
                # The search itself certified that even h = 0 is infeasible,
                # so rung 1 is skipped.
                self._fallback(spec, x0, mu, report, start_level=2)
        elif kind in (PlannerKind.FIRST_STEP, PlannerKind.FULL_STEP):
            h = min(1, H - 1) if kind is PlannerKind.FIRST_STEP else H - 1
            designated = solve(build_qp(OcpInstance(spec, x0, mu, h)))
            track(designated)
            if designated.status is SolveStatus.OPTIMAL:
                adopt(designated, h, level=0)
                report.chosen_h = h
            else:
                self._fallback(spec, x0, mu, report, start_level=1)
        elif kind is PlannerKind.NON_ROBUST:
            single = self._spec_for((int(mode_map[argmax_idx - 1]),))
            one = ModeBelief(np.array([1.0]))
            designated = solve(build_qp(OcpInstance(single, x0, one, 0)))
            track(designated)
            if designated.status is SolveStatus.OPTIMAL:
                report.applied_u = designated.controls[0][0].copy()
                report.objective = designated.objective
                report.feasible = True
                self._prev_plan = designated.controls[0].copy()
            else:
                self._fallback(spec, x0, mu, report, start_level=2)
        else:  # pragma: no cover
            raise ValueError(f"unknown planner kind {kind}")

        report.solve_time = time.perf_counter() - t0
        return report

    def _fallback(
        self,
        spec: OcpSpec,
        x0: np.ndarray,
        mu: ModeBelief,
        report: PlanStepReport,
        start_level: int,
    ) -> None:
        """Descend the ladder; always produces an applied input."""
        argmax_idx = mu.argmax_mode()

        def track(sol: OcpSolution):
            if sol.status is SolveStatus.OPTIMAL:
                report.max_kkt_residual = max(report.max_kkt_residual, sol.kkt_residual)
                report.max_duality_gap = max(report.max_duality_gap, sol.duality_gap_rel)
            elif sol.status is SolveStatus.SOLVER_FAILURE:
                report.solver_failures += 1

        if start_level <= 1:
            sol = solve(build_qp(OcpInstance(spec, x0, mu, 0)))
            track(sol)
            if sol.status is SolveStatus.OPTIMAL:
                report.applied_u = sol.controls[argmax_idx - 1][0].copy()
                report.objective = sol.objective
                report.fallback_level = 1
                self._prev_plan = sol.controls[argmax_idx - 1].copy()
                return
        sol = solve(build_tracking_qp(OcpInstance(spec, x0, mu, 0)))
        track(sol)
        if sol.status is SolveStatus.OPTIMAL:
            report.applied_u = sol.controls[argmax_idx - 1][0].copy()
            report.objective = sol.objective
            report.fallback_level = 2
            self._prev_plan = sol.controls[argmax_idx - 1].copy()
            return
        # Rung 3: no solve succeeded this step.
        model = spec.model
        if self._prev_plan is not None and self._prev_plan.shape[0] >= 2:
            u = np.clip(self._prev_plan[1], model.u_min, model.u_max)
        else:
            u = np.clip(np.zeros(model.n_controls), model.u_min, model.u_max)
        report.applied_u = u
        report.fallback_level = 3
        self._prev_plan = None


def plan_step(
    kind: PlannerKind | PlannerConfig, spec: OcpSpec, estimate: HybridEstimate
) -> PlanStepReport:
    """One-shot planning step with no episode state (rung 3 sees no history)."""
    return Planner(spec, kind).plan_step(estimate)
