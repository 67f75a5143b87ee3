"""Convex QP/LP engine layer behind the planner's solver contract.

The contract: submit a program, get back a status in {OPTIMAL, INFEASIBLE,
SOLVER_FAILURE}, a primal/dual pair, the objective, and independently
computed optimality certificates (KKT residual and relative duality gap).
Engines must be deterministic for fixed inputs and settings, and submissions
must be safe to run concurrently (all functions here are pure).

Engines
-------
* Clarabel (interior-point conic) is the default route for both the
  quadratic programs and the constant-objective feasibility LPs; one conic
  engine keeps behavior uniform and it is the fastest option measured for
  the planner's probe sizes.
* HiGHS (scipy.optimize.linprog) is an independent LP engine used by
  cross-checks and available via ``solve_lp_highs``.
* CVXOPT is the independent second QP engine used by cross-check tooling.

Programs use one standard form::

    minimize    0.5 x'Px + q'x + c0
    subject to  A_eq x = b_eq
                A_ub x <= b_ub
                lb <= x <= ub

with P = None meaning an LP.  Duals follow the Lagrangian
L = obj + y'(A_eq x - b_eq) + z'(A_ub x - b_ub) + zl'(lb - x) + zu'(x - ub),
so stationarity reads  Px + q + A_eq'y + A_ub'z - zl + zu = 0  with
z, zl, zu >= 0.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass
from enum import Enum

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

__all__ = [
    "SolveStatus",
    "Program",
    "RawSolution",
    "solve_program",
    "solve_lp_highs",
    "solve_qp_clarabel",
    "solve_qp_cvxopt",
    "dump_program",
    "parse_program",
]

# Engine tolerances sit at 1e-9; the reported contract is 1e-6, leaving two
# orders of headroom between engine and contract.
FEAS_TOL = 1e-9
GAP_TOL = 1e-9

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": FEAS_TOL,
    "dual_feasibility_tolerance": FEAS_TOL,
    "presolve": True,
}


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    SOLVER_FAILURE = "solver_failure"


@dataclass
class Program:
    """Sparse convex QP/LP in the module's standard form."""

    q: np.ndarray
    A_eq: sp.csc_matrix
    b_eq: np.ndarray
    A_ub: sp.csc_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    P: sp.csc_matrix | None = None
    c0: float = 0.0
    # Scratch space for engine-specific precomputation shared across solves
    # of structurally identical programs (same matrices, different RHS).
    conic_cache: dict | None = None

    @property
    def n_vars(self) -> int:
        return self.q.shape[0]

    @property
    def is_qp(self) -> bool:
        return self.P is not None


@dataclass
class RawSolution:
    """Engine result plus independently computed certificates."""

    status: SolveStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    y_eq: np.ndarray | None = None
    z_ub: np.ndarray | None = None
    z_lb: np.ndarray | None = None
    z_ubv: np.ndarray | None = None
    kkt_residual: float = np.nan
    duality_gap_rel: float = np.nan
    solve_time: float = 0.0
    engine: str = ""
    detail: str = ""


def _certify(program: Program, sol: RawSolution) -> None:
    """Fill kkt_residual / duality_gap_rel from the returned primal/dual.

    The residual is the max of the scaled primal infeasibility, dual
    (stationarity) infeasibility, and dual-sign violation; the gap is the
    total complementary slackness relative to 1 + |objective|.  Both are
    computed here, not taken from engine self-reports.
    """
    x = sol.x
    y = sol.y_eq if sol.y_eq is not None else np.zeros(program.b_eq.shape[0])
    z = sol.z_ub if sol.z_ub is not None else np.zeros(program.b_ub.shape[0])
    zl = sol.z_lb if sol.z_lb is not None else np.zeros(program.n_vars)
    zu = sol.z_ubv if sol.z_ubv is not None else np.zeros(program.n_vars)

    r_eq = program.A_eq @ x - program.b_eq if program.b_eq.size else np.zeros(0)
    r_ub = program.A_ub @ x - program.b_ub if program.b_ub.size else np.zeros(0)
    lb_gap = x - program.lb
    ub_gap = program.ub - x
    prim_abs = 0.0
    if r_eq.size:
        prim_abs = max(prim_abs, float(np.max(np.abs(r_eq))))
    if r_ub.size:
        prim_abs = max(prim_abs, float(max(0.0, np.max(r_ub))))
    finite_lb = np.isfinite(program.lb)
    finite_ub = np.isfinite(program.ub)
    if finite_lb.any():
        prim_abs = max(prim_abs, float(max(0.0, np.max(-lb_gap[finite_lb]))))
    if finite_ub.any():
        prim_abs = max(prim_abs, float(max(0.0, np.max(-ub_gap[finite_ub]))))
    b_scale = 1.0
    if program.b_eq.size:
        b_scale = max(b_scale, float(np.max(np.abs(program.b_eq))))
    if program.b_ub.size:
        b_scale = max(b_scale, float(np.max(np.abs(program.b_ub))))

    Px = program.P @ x if program.P is not None else np.zeros(program.n_vars)
    stat = Px + program.q - zl + zu
    if program.b_eq.size:
        stat = stat + program.A_eq.T @ y
    if program.b_ub.size:
        stat = stat + program.A_ub.T @ z
    stat_abs = float(np.max(np.abs(stat))) if stat.size else 0.0
    q_scale = 1.0 + float(np.max(np.abs(program.q))) if program.q.size else 1.0
    if Px.size:
        q_scale = max(q_scale, 1.0 + float(np.max(np.abs(Px))))

    dual_sign = 0.0
    for mult in (z, zl[finite_lb], zu[finite_ub]):
        if mult.size:
            dual_sign = max(dual_sign, float(max(0.0, -np.min(mult))))

    sol.kkt_residual = max(prim_abs / b_scale, stat_abs / q_scale, dual_sign)

    p_star = float(0.5 * x @ Px + program.q @ x)
    gap_abs = 0.0
    if r_eq.size:
        gap_abs += float(y @ r_eq)
    if r_ub.size:
        gap_abs += float(z @ (-r_ub))
    if finite_lb.any():
        gap_abs += float(zl[finite_lb] @ lb_gap[finite_lb])
    if finite_ub.any():
        gap_abs += float(zu[finite_ub] @ ub_gap[finite_ub])
    sol.duality_gap_rel = abs(gap_abs) / (1.0 + abs(p_star))
    sol.objective = p_star + program.c0


def solve_lp_highs(program: Program) -> RawSolution:
    """Solve an LP (P must be None) with HiGHS via scipy."""
    if program.is_qp:
        raise ValueError("solve_lp_highs expects an LP (P is None)")
    t0 = time.perf_counter()
    bounds = np.column_stack([program.lb, program.ub])
    res = linprog(
        c=program.q,
        A_ub=program.A_ub if program.b_ub.size else None,
        b_ub=program.b_ub if program.b_ub.size else None,
        A_eq=program.A_eq if program.b_eq.size else None,
        b_eq=program.b_eq if program.b_eq.size else None,
        bounds=bounds,
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    elapsed = time.perf_counter() - t0
    if res.status == 2:
        return RawSolution(
            status=SolveStatus.INFEASIBLE, solve_time=elapsed, engine="highs"
        )
    if res.status != 0:
        return RawSolution(
            status=SolveStatus.SOLVER_FAILURE,
            solve_time=elapsed,
            engine="highs",
            detail=f"highs status {res.status}: {res.message}",
        )
    sol = RawSolution(
        status=SolveStatus.OPTIMAL,
        x=np.asarray(res.x),
        y_eq=-np.asarray(res.eqlin.marginals) if program.b_eq.size else None,
        z_ub=-np.asarray(res.ineqlin.marginals) if program.b_ub.size else None,
        z_lb=np.asarray(res.lower.marginals),
        z_ubv=-np.asarray(res.upper.marginals),
        solve_time=elapsed,
        engine="highs",
    )
    _certify(program, sol)
    return sol


def _conic_form(program: Program) -> tuple:
    """Stack the program into Clarabel's  Ax + s = b,  s in (0-cone, R+)."""
    cache = program.conic_cache
    if cache is not None and "conic" in cache:
        A, n_eq, n_ub, bound_rows = cache["conic"]
    else:
        n = program.n_vars
        finite_ub = np.flatnonzero(np.isfinite(program.ub))
        finite_lb = np.flatnonzero(np.isfinite(program.lb))
        blocks = [program.A_eq, program.A_ub]
        if finite_ub.size:
            blocks.append(
                sp.csc_matrix(
                    (np.ones(finite_ub.size), (np.arange(finite_ub.size), finite_ub)),
                    shape=(finite_ub.size, n),
                )
            )
        if finite_lb.size:
            blocks.append(
                sp.csc_matrix(
                    (-np.ones(finite_lb.size), (np.arange(finite_lb.size), finite_lb)),
                    shape=(finite_lb.size, n),
                )
            )
        A = sp.vstack(blocks, format="csc")
        n_eq = program.b_eq.shape[0]
        n_ub = program.b_ub.shape[0]
        bound_rows = (finite_ub, finite_lb)
        if cache is not None:
            cache["conic"] = (A, n_eq, n_ub, bound_rows)
    finite_ub, finite_lb = bound_rows
    b = np.concatenate(
        [
            program.b_eq,
            program.b_ub,
            program.ub[finite_ub],
            -program.lb[finite_lb],
        ]
    )
    return A, b, n_eq, n_ub, finite_ub, finite_lb


def solve_qp_clarabel(program: Program) -> RawSolution:
    """Solve a QP or LP with the Clarabel interior-point solver."""
    t0 = time.perf_counter()
    A, b, n_eq, n_ub, finite_ub, finite_lb = _conic_form(program)
    n = program.n_vars
    P = program.P if program.P is not None else sp.csc_matrix((n, n))
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    n_nonneg = b.shape[0] - n_eq
    if n_nonneg:
        cones.append(clarabel.NonnegativeConeT(n_nonneg))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = FEAS_TOL
    settings.tol_gap_abs = GAP_TOL
    settings.tol_gap_rel = GAP_TOL
    # Fully duplicated mode blocks (identical-mode models) make the KKT
    # system rank-deficient; a stronger static regularization keeps the
    # factorization healthy there and is compensated by iterative
    # refinement, so the certified residuals stay at engine tolerance.
    settings.static_regularization_constant = 1e-7
    solver = clarabel.DefaultSolver(P, program.q, A, b, cones, settings)
    res = solver.solve()
    elapsed = time.perf_counter() - t0
    status = res.status
    if status in (
        clarabel.SolverStatus.PrimalInfeasible,
        clarabel.SolverStatus.AlmostPrimalInfeasible,
    ):
        return RawSolution(
            status=SolveStatus.INFEASIBLE, solve_time=elapsed, engine="clarabel"
        )
    if status not in (clarabel.SolverStatus.Solved, clarabel.SolverStatus.AlmostSolved):
        return RawSolution(
            status=SolveStatus.SOLVER_FAILURE,
            solve_time=elapsed,
            engine="clarabel",
            detail=f"clarabel status {status}",
        )
    x = np.asarray(res.x)
    z = np.asarray(res.z)
    zu = np.zeros(n)
    zl = np.zeros(n)
    off = n_eq + n_ub
    zu[finite_ub] = z[off : off + finite_ub.size]
    zl[finite_lb] = z[off + finite_ub.size :]
    sol = RawSolution(
        status=SolveStatus.OPTIMAL,
        x=x,
        y_eq=z[:n_eq] if n_eq else None,
        z_ub=z[n_eq : n_eq + n_ub] if n_ub else None,
        z_lb=zl,
        z_ubv=zu,
        solve_time=elapsed,
        engine="clarabel",
        detail=str(status),
    )
    _certify(program, sol)
    return sol


def solve_qp_cvxopt(program: Program) -> RawSolution:
    """Solve with CVXOPT's cone solvers; used as the independent cross-check."""
    from cvxopt import matrix, solvers, spmatrix

    def _to_cvx(m: sp.csc_matrix):
        coo = m.tocoo()
        return spmatrix(
            coo.data, coo.row.astype(int), coo.col.astype(int), size=m.shape
        )

    t0 = time.perf_counter()
    A, b, n_eq, n_ub, finite_ub, finite_lb = _conic_form(program)
    # CVXOPT wants G x <= h and A x = b separately.
    G = sp.vstack(
        [
            sp.csc_matrix(
                (np.ones(finite_ub.size), (np.arange(finite_ub.size), finite_ub)),
                shape=(finite_ub.size, program.n_vars),
            )
            if finite_ub.size
            else sp.csc_matrix((0, program.n_vars)),
            sp.csc_matrix(
                (-np.ones(finite_lb.size), (np.arange(finite_lb.size), finite_lb)),
                shape=(finite_lb.size, program.n_vars),
            )
            if finite_lb.size
            else sp.csc_matrix((0, program.n_vars)),
            program.A_ub,
        ],
        format="csc",
    )
    h = np.concatenate(
        [program.ub[finite_ub], -program.lb[finite_lb], program.b_ub]
    )
    opts = {
        "show_progress": False,
        "abstol": 1e-9,
        "reltol": 1e-9,
        "feastol": 1e-9,
        "maxiters": 200,
    }
    try:
        if program.is_qp:
            res = solvers.qp(
                P=_to_cvx(program.P.tocsc()),
                q=matrix(program.q),
                G=_to_cvx(G),
                h=matrix(h),
                A=_to_cvx(program.A_eq) if n_eq else None,
                b=matrix(program.b_eq) if n_eq else None,
                options=opts,
            )
        else:
            res = solvers.lp(
                c=matrix(program.q),
                G=_to_cvx(G),
                h=matrix(h),
                A=_to_cvx(program.A_eq) if n_eq else None,
                b=matrix(program.b_eq) if n_eq else None,
                solver=None,
                options=opts,
            )
    except (ValueError, ArithmeticError) as exc:
        return RawSolution(
            status=SolveStatus.SOLVER_FAILURE,
            solve_time=time.perf_counter() - t0,
            engine="cvxopt",
            detail=str(exc),
        )
    elapsed = time.perf_counter() - t0
    if res["status"] == "primal infeasible":
        return RawSolution(
            status=SolveStatus.INFEASIBLE, solve_time=elapsed, engine="cvxopt"
        )
    if res["status"] != "optimal":
        return RawSolution(
            status=SolveStatus.SOLVER_FAILURE,
            solve_time=elapsed,
            engine="cvxopt",
            detail=f"cvxopt status {res['status']}",
        )
    x = np.asarray(res["x"]).ravel()
    zg = np.asarray(res["z"]).ravel()
    zu = np.zeros(program.n_vars)
    zl = np.zeros(program.n_vars)
    zu[finite_ub] = zg[: finite_ub.size]
    zl[finite_lb] = zg[finite_ub.size : finite_ub.size + finite_lb.size]
    sol = RawSolution(
        status=SolveStatus.OPTIMAL,
        x=x,
        y_eq=np.asarray(res["y"]).ravel() if n_eq else None,
        z_ub=zg[finite_ub.size + finite_lb.size :] if n_ub else None,
        z_lb=zl,
        z_ubv=zu,
        solve_time=elapsed,
        engine="cvxopt",
    )
    _certify(program, sol)
    return sol


def solve_program(program: Program) -> RawSolution:
    """Route to the default engine (Clarabel for both QPs and LPs)."""
    return solve_qp_clarabel(program)


# ---------------------------------------------------------------------------
# Program dump format (stable external interface, version 1)
#
#   consensus-mpc-program v1
#   kind {qp|lp}
#   nvars <n>
#   c0 <float>
#   P <nnz>          followed by nnz lines "row col value" (full symmetric)
#   q <n>            followed by n lines "value"
#   Aeq <rows> <nnz> followed by nnz lines "row col value"
#   beq <rows>       followed by rows lines
#   Aub <rows> <nnz> followed by nnz lines
#   bub <rows>       followed by rows lines
#   lb <n>           followed by n lines ("-inf" allowed)
#   ub <n>           followed by n lines ("inf" allowed)
#
# Floats are written with repr (shortest round-trip), so a parse/dump cycle
# is bit-exact.
# ---------------------------------------------------------------------------

_DUMP_HEADER = "consensus-mpc-program v1"


def _write_coo(out: io.StringIO, tag: str, m: sp.csc_matrix, with_rows: bool):
    coo = m.tocoo()
    if with_rows:
        out.write(f"{tag} {m.shape[0]} {coo.nnz}\n")
    else:
        out.write(f"{tag} {coo.nnz}\n")
    for r, c, v in zip(coo.row, coo.col, coo.data):
        out.write(f"{r} {c} {float(v)!r}\n")


def _write_vec(out: io.StringIO, tag: str, v: np.ndarray):
    out.write(f"{tag} {v.shape[0]}\n")
    for val in v:
        out.write(f"{float(val)!r}\n")


def dump_program(program: Program) -> str:
    """Serialize a program to the documented sparse text form."""
    out = io.StringIO()
    out.write(_DUMP_HEADER + "\n")
    out.write(f"kind {'qp' if program.is_qp else 'lp'}\n")
    out.write(f"nvars {program.n_vars}\n")
    out.write(f"c0 {float(program.c0)!r}\n")
    P = program.P if program.P is not None else sp.csc_matrix((program.n_vars,) * 2)
    _write_coo(out, "P", P, with_rows=False)
    _write_vec(out, "q", program.q)
    _write_coo(out, "Aeq", program.A_eq, with_rows=True)
    _write_vec(out, "beq", program.b_eq)
    _write_coo(out, "Aub", program.A_ub, with_rows=True)
    _write_vec(out, "bub", program.b_ub)
    _write_vec(out, "lb", program.lb)
    _write_vec(out, "ub", program.ub)
    return out.getvalue()


def parse_program(text: str) -> Program:
    """Parse the documented sparse text form back into a Program."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != _DUMP_HEADER:
        raise ValueError("not a consensus-mpc program dump (bad header)")
    pos = 1

    def _next() -> str:
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line

    def _expect(tag: str) -> list[str]:
        parts = _next().split()
        if parts[0] != tag:
            raise ValueError(f"expected section '{tag}', got '{parts[0]}'")
        return parts[1:]

    kind = _expect("kind")[0]
    n = int(_expect("nvars")[0])
    c0 = float(_expect("c0")[0])

    def _read_coo(tag: str, n_rows: int | None) -> sp.csc_matrix:
        head = _expect(tag)
        if n_rows is None:
            rows_count, nnz = n, int(head[0])
        else:
            rows_count, nnz = int(head[0]), int(head[1])
        r = np.empty(nnz, dtype=int)
        c = np.empty(nnz, dtype=int)
        v = np.empty(nnz, dtype=float)
        for k in range(nnz):
            pr, pc, pv = _next().split()
            r[k], c[k], v[k] = int(pr), int(pc), float(pv)
        return sp.csc_matrix((v, (r, c)), shape=(rows_count, n))

    def _read_vec(tag: str) -> np.ndarray:
        count = int(_expect(tag)[0])
        return np.array([float(_next()) for _ in range(count)])

    P = _read_coo("P", None)
    q = _read_vec("q")
    A_eq = _read_coo("Aeq", -1)
    b_eq = _read_vec("beq")
    A_ub = _read_coo("Aub", -1)
    b_ub = _read_vec("bub")
    lb = _read_vec("lb")
    ub = _read_vec("ub")
    return Program(
        q=q,
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=A_ub,
        b_ub=b_ub,
        lb=lb,
        ub=ub,
        P=P if kind == "qp" else None,
        c0=c0,
    )
