"""Acceptance gate: one test per criterion, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  The end-to-end criteria run the full benchmark
sweeps and dominate the wall time (tens of minutes on a small machine).
"""

import time

import numpy as np
import pytest

from consensus_mpc.adaptive_planner import (
    Planner,
    PlannerConfig,
    PlannerKind,
    bisect_max_feasible,
)
from consensus_mpc.consensus_ocp import (
    OcpInstance,
    OcpSpec,
    build_feasibility_lp,
    build_qp,
    solve,
)
from consensus_mpc.hybrid_oracle import HybridEstimate, OracleSchedule
from consensus_mpc.jmls_core import JumpLinearModel, ModeBelief, ModeDynamics
from consensus_mpc.safety_barriers import AffineBarrier, BarrierSet, barrier_value
from consensus_mpc.scenario_lib import (
    build_rendezvous,
    cwh_continuous,
    default_grid,
    unsafe_short_consensus_witness,
)
from consensus_mpc.sim_harness import EpisodeConfig, emit_results, run_episode, run_sweep
from consensus_mpc.solvers import (
    SolveStatus,
    dump_program,
    parse_program,
    solve_qp_cvxopt,
)

from instances import random_instance
from oracles import scan_max_feasible

ALL_PLANNERS = [PlannerConfig(kind=k) for k in PlannerKind]

_certificate_pool: list[tuple[str, float, float]] = []


def _track_certificates(source: str, kkt: float, gap: float):
    _certificate_pool.append((source, kkt, gap))


def _report(num: int, name: str, ok: bool, detail: str, elapsed: float):
    verdict = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num:>2} {name}: {verdict} ({detail}) [{elapsed:.1f}s]")


# -- shared fixtures -----------------------------------------------------------


@pytest.fixture(scope="module")
def instance_bank():
    """>=100 random small instances with LP/QP statuses at every h."""
    rng = np.random.default_rng(20240817)
    bank = []
    t0 = time.perf_counter()
    for _ in range(110):
        inst = random_instance(rng, h=0)
        spec = inst.spec
        per_h = []
        sample_programs = []
        for h in range(spec.H):
            probe = OcpInstance(spec, inst.x0, inst.mu_hat, h)
            lp = solve(build_feasibility_lp(probe))
            qp_prog = build_qp(probe)
            qp = solve(qp_prog)
            if lp.status is SolveStatus.OPTIMAL:
                _track_certificates("bank-lp", lp.kkt_residual, lp.duality_gap_rel)
            if qp.status is SolveStatus.OPTIMAL:
                _track_certificates("bank-qp", qp.kkt_residual, qp.duality_gap_rel)
                sample_programs.append((qp_prog.program, qp.objective))
            per_h.append((lp.status, qp.status))
        bank.append({"instance": inst, "per_h": per_h, "samples": sample_programs})
    print(f"[instance bank: {len(bank)} instances in {time.perf_counter() - t0:.1f}s]")
    return bank


@pytest.fixture(scope="module")
def invariance_runs():
    """50 single-mode closed-loop runs with feasible CBF OCPs throughout."""
    rng = np.random.default_rng(7151)
    runs = []
    t0 = time.perf_counter()
    while len(runs) < 50:
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 3))
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.5, 0.95) / max(abs(np.linalg.eigvals(A)))
        B = rng.standard_normal((n, m))
        box = rng.uniform(2.0, 4.0, size=n)
        bars = []
        for i in range(n):
            lo = np.zeros(n)
            lo[i] = 1.0
            bars.append(AffineBarrier(a=lo, b=box[i]))
            hi = np.zeros(n)
            hi[i] = -1.0
            bars.append(AffineBarrier(a=hi, b=box[i]))
        barrier_set = BarrierSet(
            barriers=tuple(bars), gamma=float(rng.uniform(0.1, 0.8))
        )
        u_lim = rng.uniform(2.0, 5.0, size=m)
        model = JumpLinearModel(
            modes=(ModeDynamics(A, B),),
            transition=np.eye(1),
            u_min=-u_lim,
            u_max=u_lim,
        )
        spec = OcpSpec(
            model=model,
            barriers=barrier_set,
            horizon_steps=int(rng.integers(4, 9)),
            Q=np.diag(rng.uniform(0.5, 3.0, size=n)),
            R=np.diag(rng.uniform(0.05, 0.5, size=m)),
            x_ref=rng.uniform(-0.4, 0.4, size=n) * box,
        )
        x = rng.uniform(-0.3, 0.3, size=n) * box
        planner = Planner(spec, PlannerKind.ADAPTIVE)
        states = [x.copy()]
        feasible = True
        for _ in range(20):
            report = planner.plan_step(
                HybridEstimate(x_hat=x, mu_hat=ModeBelief(np.array([1.0])))
            )
            if report.fallback_level != 0:
                feasible = False
                break
            _track_certificates(
                "invariance", report.max_kkt_residual, report.max_duality_gap
            )
            x = model.modes[0].A @ x + model.modes[0].B @ report.applied_u
            states.append(x.copy())
        if feasible:
            runs.append({"barriers": barrier_set, "states": states})
    print(f"[invariance runs: 50 in {time.perf_counter() - t0:.1f}s]")
    return runs


@pytest.fixture(scope="module")
def rendezvous_sweeps(tmp_path_factory):
    """The full 336-trial sweep, run at two worker counts for determinism."""
    outputs = {}
    for workers in (4, 1):
        t0 = time.perf_counter()
        result = run_sweep(
            "rendezvous", ALL_PLANNERS, workers=workers, keep_trajectories=False
        )
        elapsed = time.perf_counter() - t0
        out = tmp_path_factory.mktemp(f"rdv_w{workers}")
        paths = emit_results(result, out)
        outputs[workers] = {"result": result, "paths": paths, "elapsed": elapsed}
        print(f"[rendezvous sweep workers={workers}: {elapsed:.0f}s]")
    return outputs


@pytest.fixture(scope="module")
def mineshaft_sweep(tmp_path_factory):
    t0 = time.perf_counter()
    result = run_sweep(
        "mineshaft", ALL_PLANNERS, workers=1, keep_trajectories=False
    )
    elapsed = time.perf_counter() - t0
    out = tmp_path_factory.mktemp("mine")
    paths = emit_results(result, out)
    print(f"[mineshaft sweep: {elapsed:.0f}s]")
    return {"result": result, "paths": paths, "elapsed": elapsed}


# -- criteria ------------------------------------------------------------------


def test_criterion_01_cwh_structure():
    t0 = time.perf_counter()
    n = 0.061
    cont = cwh_continuous(n)
    A, B = cont.A_cont, cont.B_cont
    ok = True
    ok &= abs(A[3, 0] - 3 * n * n) <= 1e-12
    ok &= abs(A[3, 4] - 2 * n) <= 1e-12
    ok &= abs(A[4, 3] + 2 * n) <= 1e-12
    ok &= abs(A[5, 2] + n * n) <= 1e-12
    ok &= np.array_equal(A[0:3, 3:6], np.eye(3))
    mask = np.zeros((6, 6), dtype=bool)
    mask[0:3, 3:6] = np.eye(3, dtype=bool)
    mask[3, 0] = mask[3, 4] = mask[4, 3] = mask[5, 2] = True
    ok &= bool(np.all(A[~mask] == 0.0))
    ok &= np.array_equal(B, np.vstack([np.zeros((3, 3)), np.eye(3)]))
    elapsed = time.perf_counter() - t0
    _report(1, "cwh structure", bool(ok), f"3n^2={A[3, 0]:.6f}", elapsed)
    assert ok and elapsed < 1.0


def test_criterion_02_grid_counts():
    t0 = time.perf_counter()
    r = len(default_grid("rendezvous"))
    m = len(default_grid("mineshaft"))
    elapsed = time.perf_counter() - t0
    ok = r == 336 and m == 108
    _report(2, "sweep grids", ok, f"rendezvous={r}, mineshaft={m}", elapsed)
    assert ok and elapsed < 1.0


def test_criterion_03_binary_search():
    t0 = time.perf_counter()
    rng = np.random.default_rng(61)
    worst_calls = 0
    for _ in range(1000):
        H = int(rng.integers(2, 513))
        cut = int(rng.integers(-1, H))

        def feasible(h, c=cut):
            return h <= c

        expect = scan_max_feasible(feasible, H)
        got, calls = bisect_max_feasible(feasible, H)
        assert got == expect, f"H={H} cut={cut}: got {got}, expected {expect}"
        bound = int(np.ceil(np.log2(H))) + 1
        assert calls <= bound, f"H={H} cut={cut}: {calls} probes > {bound}"
        worst_calls = max(worst_calls, calls)
    elapsed = time.perf_counter() - t0
    _report(3, "horizon search", True, f"1000 predicates, max probes {worst_calls}", elapsed)
    assert elapsed < 10.0


def test_criterion_04_feasibility_monotone(instance_bank):
    t0 = time.perf_counter()
    violations = 0
    mixed = 0
    for entry in instance_bank:
        lp = [s for s, _ in entry["per_h"]]
        for h in range(1, len(lp)):
            if lp[h] is SolveStatus.OPTIMAL and lp[h - 1] is not SolveStatus.OPTIMAL:
                violations += 1
        if len({s is SolveStatus.OPTIMAL for s in lp}) == 2:
            mixed += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and len(instance_bank) >= 100
    _report(
        4,
        "feasible-set nesting",
        ok,
        f"{len(instance_bank)} instances, {mixed} with a feasibility edge, {violations} violations",
        elapsed,
    )
    assert ok and elapsed < 120.0


def test_criterion_05_lp_qp_agreement(instance_bank):
    t0 = time.perf_counter()
    disagreements = 0
    pairs = 0
    for entry in instance_bank:
        for lp, qp in entry["per_h"]:
            pairs += 1
            if (lp is SolveStatus.OPTIMAL) != (qp is SolveStatus.OPTIMAL):
                disagreements += 1
    elapsed = time.perf_counter() - t0
    ok = disagreements == 0
    _report(5, "lp == qp feasibility", ok, f"{pairs} solve pairs, {disagreements} disagree", elapsed)
    assert ok and elapsed < 180.0


def test_criterion_06_forward_invariance(invariance_runs):
    t0 = time.perf_counter()
    worst_beta = np.inf
    worst_decrease = np.inf
    for run in invariance_runs:
        bars = run["barriers"]
        gamma = bars.gamma
        for t in range(len(run["states"]) - 1):
            for bar in bars.barriers:
                b_now = barrier_value(bar, run["states"][t])
                b_next = barrier_value(bar, run["states"][t + 1])
                worst_beta = min(worst_beta, b_next)
                worst_decrease = min(worst_decrease, b_next - (1 - gamma) * b_now)
    elapsed = time.perf_counter() - t0
    ok = worst_beta >= -1e-6 and worst_decrease >= -1e-6
    _report(
        6,
        "forward invariance",
        ok,
        f"50 runs, min beta {worst_beta:.2e}, min decrease margin {worst_decrease:.2e}",
        elapsed,
    )
    assert ok and elapsed < 120.0


def test_criterion_07_unsafe_witness():
    t0 = time.perf_counter()
    cell = unsafe_short_consensus_witness()
    bundle = build_rendezvous(cell.n_offnominal)
    schedule = OracleSchedule(
        cell.initial_mode, cell.switched_mode, cell.switch_step, cell.detection_delay
    )
    records = {}
    for kind in (PlannerKind.FIRST_STEP, PlannerKind.FULL_STEP):
        records[kind] = run_episode(
            EpisodeConfig(bundle=bundle, schedule=schedule, planner=PlannerConfig(kind=kind))
        )
        _track_certificates(
            "witness", records[kind].max_kkt_residual, records[kind].max_duality_gap
        )
    first, full = records[PlannerKind.FIRST_STEP], records[PlannerKind.FULL_STEP]
    ok = (not first.safe) and full.safe
    elapsed = time.perf_counter() - t0
    _report(
        7,
        "short-consensus unsafe witness",
        ok,
        f"first violates at step {first.first_violation_step}, full safe={full.safe}",
        elapsed,
    )
    assert ok and elapsed < 10.0


def test_criterion_08_rendezvous_end_to_end(rendezvous_sweeps):
    t0 = time.perf_counter()
    agg = rendezvous_sweeps[4]["result"].aggregates
    rates = {p: agg[p]["success_pct"] for p in agg}
    costs = {p: agg[p]["avg_cost"] for p in agg}
    reference_rates = {"first": 56.0, "full": 68.4, "nonrobust": 19.3}
    failures = []
    if not rates["adaptive"] >= 95.0:
        failures.append(f"adaptive success {rates['adaptive']:.1f}% < 95%")
    for p in ("first", "full", "nonrobust"):
        if not rates["adaptive"] > rates[p]:
            failures.append(
                f"adaptive {rates['adaptive']:.1f}% not > {p} {rates[p]:.1f}%"
            )
    if not rates["full"] > rates["first"] > rates["nonrobust"]:
        failures.append(
            "baseline ordering full > first > nonrobust violated: "
            f"{rates['full']:.1f} / {rates['first']:.1f} / {rates['nonrobust']:.1f}"
        )
    for p, ref in reference_rates.items():
        if abs(rates[p] - ref) > 15.0:
            failures.append(f"{p} rate {rates[p]:.1f}% outside {ref}±15pp")
    if not all(costs["adaptive"] < costs[p] for p in reference_rates):
        failures.append(f"adaptive mean cost {costs['adaptive']:.2f} not lowest: {costs}")
    elapsed = time.perf_counter() - t0
    detail = (
        f"rates adaptive/full/first/nonrobust = {rates['adaptive']:.1f}/"
        f"{rates['full']:.1f}/{rates['first']:.1f}/{rates['nonrobust']:.1f}%, "
        f"costs {costs['adaptive']:.1f}/{costs['full']:.1f}/{costs['first']:.1f}/"
        f"{costs['nonrobust']:.1f}, sweep {rendezvous_sweeps[4]['elapsed']:.0f}s"
    )
    _report(8, "rendezvous end-to-end", not failures, detail, elapsed)
    for f in failures:
        print(f"      criterion 8 sub-assertion failed: {f}")
    assert not failures


def test_criterion_09_mineshaft_end_to_end(mineshaft_sweep):
    t0 = time.perf_counter()
    agg = mineshaft_sweep["result"].aggregates
    rates = {p: agg[p]["success_pct"] for p in agg}
    adaptive_rows = [
        r for r in mineshaft_sweep["result"].rows if r.planner == "adaptive"
    ]
    unsafe_successes = sum(1 for r in adaptive_rows if r.success and not r.safe)
    failures = []
    for p in ("first", "full", "nonrobust"):
        if not rates["adaptive"] >= rates[p]:
            failures.append(f"adaptive {rates['adaptive']:.1f}% < {p} {rates[p]:.1f}%")
    if unsafe_successes:
        failures.append(f"{unsafe_successes} adaptive successes violated a barrier")
    elapsed = time.perf_counter() - t0
    detail = (
        f"rates adaptive/full/first/nonrobust = {rates['adaptive']:.1f}/"
        f"{rates['full']:.1f}/{rates['first']:.1f}/{rates['nonrobust']:.1f}%, "
        f"sweep {mineshaft_sweep['elapsed']:.0f}s"
    )
    _report(9, "mineshaft end-to-end", not failures, detail, elapsed)
    for f in failures:
        print(f"      criterion 9 sub-assertion failed: {f}")
    assert not failures


def test_criterion_10_certificates(instance_bank, rendezvous_sweeps, mineshaft_sweep):
    t0 = time.perf_counter()
    worst_kkt = max((k for _, k, _ in _certificate_pool), default=0.0)
    worst_gap = max((g for _, _, g in _certificate_pool), default=0.0)
    for sweep in (rendezvous_sweeps[4]["result"], mineshaft_sweep["result"]):
        for agg in sweep.aggregates.values():
            worst_kkt = max(worst_kkt, agg["max_kkt_residual"])
            worst_gap = max(worst_gap, agg["max_duality_gap"])

    # Independent re-solve of ten dumped programs with the second engine.
    rng = np.random.default_rng(92)
    sampled = []
    for entry in instance_bank:
        sampled.extend(entry["samples"])
    idx = rng.choice(len(sampled), size=10, replace=False)
    cross_ok = 0
    for i in idx:
        program, objective = sampled[int(i)]
        reparsed = parse_program(dump_program(program))
        again = solve_qp_cvxopt(reparsed)
        if again.status is SolveStatus.OPTIMAL and abs(
            again.objective - objective
        ) <= 1e-5 * max(1.0, abs(objective)):
            cross_ok += 1
    ok = worst_kkt <= 1e-6 and worst_gap <= 1e-6 and cross_ok == 10
    elapsed = time.perf_counter() - t0
    _report(
        10,
        "optimality certificates",
        ok,
        f"max kkt {worst_kkt:.2e}, max gap {worst_gap:.2e}, "
        f"{cross_ok}/10 cross-checks agree",
        elapsed,
    )
    assert ok


def test_criterion_11_determinism(rendezvous_sweeps):
    t0 = time.perf_counter()
    a = rendezvous_sweeps[1]["paths"]["results"].read_bytes()
    b = rendezvous_sweeps[4]["paths"]["results"].read_bytes()
    ok = a == b
    elapsed = time.perf_counter() - t0
    _report(
        11,
        "worker-count determinism",
        ok,
        f"results.csv identical across workers 1 vs 4: {ok} ({len(a)} bytes)",
        elapsed,
    )
    assert ok
