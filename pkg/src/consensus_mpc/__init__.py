"""Feasibility-guided consensus-horizon MPC for jump Markov linear systems.

The planner solves a multi-mode optimal control problem whose leading
control inputs are shared across all dynamics modes (the consensus
horizon), adapts that horizon every step by a binary search over a
linear-program feasibility oracle, and enforces safety with discrete
control barrier function constraints per mode.  A benchmark harness runs
the spacecraft-rendezvous and hexacopter mineshaft-inspection scenarios
against first-step, full-step, and non-robust baselines.
"""

from .adaptive_planner import (
    Planner,
    PlannerConfig,
    PlannerKind,
    PlanStepReport,
    bisect_max_feasible,
    incremental_max_feasible,
    max_feasible_horizon,
    plan_step,
)
from .consensus_ocp import (
    OcpInstance,
    OcpSolution,
    OcpSpec,
    build_feasibility_lp,
    build_qp,
    solve,
)
from .hybrid_oracle import HybridEstimate, OracleSchedule, estimate, true_mode
from .jmls_core import (
    ContinuousModel,
    JumpLinearModel,
    ModeBelief,
    ModeDynamics,
    discretize,
    propagate_belief,
    step_truth,
)
from .safety_barriers import (
    AffineBarrier,
    BarrierSet,
    barrier_value,
    cbf_row,
    is_safe,
)
from .scenario_lib import (
    ScenarioBundle,
    build_mineshaft,
    build_rendezvous,
    cwh_continuous,
    default_grid,
    load_scenario,
    save_scenario,
)
from .sim_harness import EpisodeConfig, EpisodeRecord, emit_results, run_episode, run_sweep
from .solvers import Program, SolveStatus, dump_program, parse_program

__version__ = "0.1.0"
