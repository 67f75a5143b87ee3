"""Regression: the checked-in short-consensus unsafe witness stays valid."""

import numpy as np

from consensus_mpc.adaptive_planner import PlannerConfig, PlannerKind
from consensus_mpc.hybrid_oracle import OracleSchedule
from consensus_mpc.scenario_lib import build_rendezvous, unsafe_short_consensus_witness
from consensus_mpc.sim_harness import EpisodeConfig, run_episode


def run_pair():
    cell = unsafe_short_consensus_witness()
    bundle = build_rendezvous(cell.n_offnominal)
    schedule = OracleSchedule(
        cell.initial_mode, cell.switched_mode, cell.switch_step, cell.detection_delay
    )
    out = {}
    for kind in (PlannerKind.FIRST_STEP, PlannerKind.FULL_STEP):
        out[kind] = run_episode(
            EpisodeConfig(bundle=bundle, schedule=schedule, planner=PlannerConfig(kind=kind))
        )
    return out


def test_first_step_violates_full_step_safe():
    records = run_pair()
    first = records[PlannerKind.FIRST_STEP]
    full = records[PlannerKind.FULL_STEP]
    assert not first.safe
    assert first.first_violation_step is not None
    assert full.safe

    again = run_pair()
    assert again[PlannerKind.FIRST_STEP].first_violation_step == first.first_violation_step
    np.testing.assert_array_equal(
        again[PlannerKind.FULL_STEP].states[-1], full.states[-1]
    )
