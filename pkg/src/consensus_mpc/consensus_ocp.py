"""Assembly and solution of the consensus-horizon optimal control problem.

The program plans per-mode state trajectories over a horizon H for every
mode of a jump linear model, with the leading ``consensus_h`` control inputs
shared by all modes.  Consensus is implemented by variable sharing rather
than explicit equality rows: the shared feasible set is identical and the
program is smaller and better conditioned.  Constraints are the per-mode
dynamics, per-mode discrete CBF rows for every barrier at every step, and
box control bounds.  The objective is the probability-weighted quadratic
tracking cost with zero terminal weight by default; replacing it with a
constant turns the QP into the feasibility LP used by the horizon search.

Decision-variable layout (0-based mode index i, J barriers)::

    [ u_0 .. u_{h-1} ]                                shared controls, h*m
    [ u_h^i .. u_{H-1}^i  for each mode i ]           free controls, M*(H-h)*m
    [ x_1^i .. x_H^i      for each mode i ]           states, M*H*n

Row layout: dynamics equalities mode-major then time (M*H*n rows), CBF
inequalities mode-major, then time, then barrier (M*H*J rows).

Construction is pure; solved programs are independent, so concurrent solves
are safe.  A per-(spec, h) skeleton holding everything that does not depend
on x0 or the mode belief is cached on the spec object via a weak map, which
keeps the per-step assembly cost at a few vector writes.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .jmls_core import JumpLinearModel, ModeBelief, _readonly
from .safety_barriers import BarrierSet
from .solvers import Program, RawSolution, SolveStatus, solve_program

__all__ = [
    "OcpSpec",
    "OcpInstance",
    "OcpSolution",
    "OcpProgram",
    "build_qp",
    "build_feasibility_lp",
    "solve",
]


def _check_positive_definite(name: str, mat: np.ndarray) -> None:
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


@dataclass(frozen=True, eq=False)
class OcpSpec:
    """Everything about the OCP that does not change between control steps."""

    model: JumpLinearModel
    barriers: BarrierSet
    horizon_steps: int
    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray
    terminal_weight: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.model.n_states, self.model.n_controls
        object.__setattr__(self, "horizon_steps", int(self.horizon_steps))
        object.__setattr__(self, "Q", _readonly(self.Q))
        object.__setattr__(self, "R", _readonly(self.R))
        object.__setattr__(self, "x_ref", _readonly(self.x_ref))
        tw = self.terminal_weight if self.terminal_weight is not None else np.zeros((n, n))
        object.__setattr__(self, "terminal_weight", _readonly(tw))
        if self.horizon_steps < 1:
            raise ValueError("horizon must be >= 1")
        if self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ValueError("Q/R dimensions do not match the model")
        if self.x_ref.shape != (n,):
            raise ValueError("x_ref dimension does not match the model")
        if self.terminal_weight.shape != (n, n):
            raise ValueError("terminal weight dimension does not match the model")
        if self.barriers.n_states != n:
            raise ValueError("barrier dimension does not match the model")
        _check_positive_definite("Q", self.Q)
        _check_positive_definite("R", self.R)

    @property
    def H(self) -> int:
        return self.horizon_steps


@dataclass(frozen=True, eq=False)
class OcpInstance:
    """One control step's problem data: spec + measured state, belief, h.

    The belief is held constant across the planning horizon.
    """

    spec: OcpSpec
    x0: np.ndarray
    mu_hat: ModeBelief
    consensus_h: int

    def __post_init__(self):
        object.__setattr__(self, "x0", _readonly(self.x0))
        object.__setattr__(self, "consensus_h", int(self.consensus_h))
        if self.x0.shape != (self.spec.model.n_states,):
            raise ValueError("x0 dimension does not match the model")
        if self.mu_hat.n_modes != self.spec.model.n_modes:
            raise ValueError("belief length does not match the model")
        H = self.spec.H
        if not 0 <= self.consensus_h <= H - 1:
            raise ValueError(
                f"consensus horizon {self.consensus_h} outside 0..{H - 1}"
            )


@dataclass
class OcpSolution:
    """Solver verdict plus per-mode trajectories in model coordinates.

    ``controls[i]`` has shape (H, m) with the shared block replicated into
    every mode, so controls agree exactly across modes for k < h.
    ``states[i]`` has shape (H, n) holding x_1 .. x_H.  ``first_input`` is
    the shared k=0 input when h >= 1, else None.
    """

    status: SolveStatus
    controls: list[np.ndarray] | None = None
    states: list[np.ndarray] | None = None
    objective: float = np.nan
    first_input: np.ndarray | None = None
    kkt_residual: float = np.nan
    duality_gap_rel: float = np.nan
    solve_time: float = 0.0
    engine: str = ""


class _Layout:
    """Index bookkeeping for one (M, H, h, n, m) variable layout."""

    def __init__(self, M: int, H: int, h: int, n: int, m: int):
        self.M, self.H, self.h, self.n, self.m = M, H, h, n, m
        self.n_shared = h * m
        self.n_free = M * (H - h) * m
        self.n_ctrl = self.n_shared + self.n_free
        self.n_state = M * H * n
        self.n_vars = self.n_ctrl + self.n_state

    def u_index(self, i: int, k: int) -> int:
        """First variable index of u_k for mode i (shared block for k < h)."""
        if k < self.h:
            return k * self.m
        return self.n_shared + (i * (self.H - self.h) + (k - self.h)) * self.m

    def x_index(self, i: int, k: int) -> int:
        """First variable index of x_k for mode i, k in 1..H."""
        return self.n_ctrl + (i * self.H + (k - 1)) * self.n


class _Skeleton:
    """x0- and belief-independent parts of the program for one (spec, h)."""

    def __init__(self, spec: OcpSpec, h: int, include_cbf: bool):
        model, bars = spec.model, spec.barriers
        M, H = model.n_modes, spec.H
        n, m = model.n_states, model.n_controls
        J = bars.n_barriers if include_cbf else 0
        lay = _Layout(M, H, h, n, m)
        self.layout = lay
        self.include_cbf = include_cbf

        rows, cols, vals = [], [], []

        def put(r0: int, c0: int, block: np.ndarray):
            rr, cc = np.nonzero(block)
            rows.append(rr + r0)
            cols.append(cc + c0)
            vals.append(block[rr, cc])

        eye_n = np.eye(n)
        for i in range(M):
            A, B = model.modes[i].A, model.modes[i].B
            for k in range(H):
                r0 = (i * H + k) * n
                put(r0, lay.x_index(i, k + 1), eye_n)
                put(r0, lay.u_index(i, k), -B)
                if k >= 1:
                    put(r0, lay.x_index(i, k), -A)
        self.A_eq = sp.csc_matrix(
            (
                np.concatenate(vals) if vals else np.zeros(0),
                (np.concatenate(rows), np.concatenate(cols))
                if rows
                else (np.zeros(0, dtype=int), np.zeros(0, dtype=int)),
            ),
            shape=(M * H * n, lay.n_vars),
        )
        self.n_eq = M * H * n

        rows, cols, vals = [], [], []
        if J:
            a_mat = np.array([bar.a for bar in bars.barriers])  # J x n
            b_vec = np.array([bar.b for bar in bars.barriers])
            gamma = bars.gamma
            for i in range(M):
                for k in range(H):
                    r0 = (i * H + k) * J
                    put(r0, lay.x_index(i, k + 1), -a_mat)
                    if k >= 1:
                        put(r0, lay.x_index(i, k), (1.0 - gamma) * a_mat)
            self._b_ub_base = np.tile(np.tile(gamma * b_vec, H), M)
            self._cbf_a = a_mat
            self._cbf_b = b_vec
            self._gamma = gamma
        else:
            self._b_ub_base = np.zeros(0)
        self.A_ub = sp.csc_matrix(
            (
                np.concatenate(vals) if vals else np.zeros(0),
                (np.concatenate(rows), np.concatenate(cols))
                if rows
                else (np.zeros(0, dtype=int), np.zeros(0, dtype=int)),
            ),
            shape=(M * H * J, lay.n_vars),
        )
        self.n_ub = M * H * J

        lb = np.full(lay.n_vars, -np.inf)
        ub = np.full(lay.n_vars, np.inf)
        for i in range(M):
            for k in range(H):
                c0 = lay.u_index(i, k)
                lb[c0 : c0 + m] = model.u_min
                ub[c0 : c0 + m] = model.u_max
        self.lb = lb
        self.ub = ub

        # Copies of per-mode dynamics needed to fill the k=0 RHS.
        self._A_modes = [model.modes[i].A for i in range(M)]

        self.conic_cache: dict = {}
        self._objective_cache: dict[bytes, tuple] = {}
        self._spec = spec

    def rhs(self, x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Equality and inequality RHS vectors for a measured state x0."""
        lay = self.layout
        b_eq = np.zeros(self.n_eq)
        for i in range(lay.M):
            r0 = i * lay.H * lay.n
            b_eq[r0 : r0 + lay.n] = self._A_modes[i] @ x0
        b_ub = self._b_ub_base.copy()
        if self.include_cbf and self.n_ub:
            J = self._cbf_a.shape[0]
            # k = 0 rows absorb the (1-gamma) * beta(x0) term into the RHS.
            head = self._cbf_b - (1.0 - self._gamma) * (
                self._cbf_a @ x0 + self._cbf_b
            )
            for i in range(lay.M):
                r0 = i * lay.H * J
                b_ub[r0 : r0 + J] = head
        return b_eq, b_ub

    def objective(self, mu: np.ndarray) -> tuple[sp.csc_matrix, np.ndarray, float]:
        """P, q and the x0-independent constant for a given belief weighting."""
        key = mu.tobytes()
        hit = self._objective_cache.get(key)
        if hit is not None:
            return hit
        spec, lay = self._spec, self.layout
        Q, R, Tw, xr = spec.Q, spec.R, spec.terminal_weight, spec.x_ref
        H, M, n, m = lay.H, lay.M, lay.n, lay.m
        rows, cols, vals = [], [], []
        q = np.zeros(lay.n_vars)

        def put(c0: int, block: np.ndarray):
            rr, cc = np.nonzero(block)
            rows.append(rr + c0)
            cols.append(cc + c0)
            vals.append(block[rr, cc])

        for k in range(lay.h):
            put(lay.u_index(0, k), 2.0 * R)
        for i in range(M):
            if mu[i] != 0.0:
                for k in range(lay.h, H):
                    put(lay.u_index(i, k), 2.0 * mu[i] * R)
                for k in range(1, H):
                    c0 = lay.x_index(i, k)
                    put(c0, 2.0 * mu[i] * Q)
                    q[c0 : c0 + n] = -2.0 * mu[i] * (Q @ xr)
                c0 = lay.x_index(i, H)
                blk = 2.0 * mu[i] * Tw
                if np.any(blk):
                    put(c0, blk)
                    q[c0 : c0 + n] += -2.0 * mu[i] * (Tw @ xr)
        P = sp.csc_matrix(
            (
                np.concatenate(vals) if vals else np.zeros(0),
                (np.concatenate(rows), np.concatenate(cols))
                if rows
                else (np.zeros(0, dtype=int), np.zeros(0, dtype=int)),
            ),
            shape=(lay.n_vars, lay.n_vars),
        )
        const = float((H - 1) * (xr @ Q @ xr) + xr @ Tw @ xr)
        out = (P, q, const)
        if len(self._objective_cache) > 64:
            self._objective_cache.clear()
        self._objective_cache[key] = out
        return out


_skeletons: "weakref.WeakKeyDictionary[OcpSpec, dict]" = weakref.WeakKeyDictionary()


def _skeleton(spec: OcpSpec, h: int, include_cbf: bool) -> _Skeleton:
    per_spec = _skeletons.setdefault(spec, {})
    key = (h, include_cbf)
    skel = per_spec.get(key)
    if skel is None:
        skel = _Skeleton(spec, h, include_cbf)
        per_spec[key] = skel
    return skel


@dataclass
class OcpProgram:
    """A fully assembled program plus the layout needed to read solutions."""

    program: Program
    layout: _Layout
    instance: OcpInstance
    include_cbf: bool = True


def _build(instance: OcpInstance, quadratic: bool, include_cbf: bool) -> OcpProgram:
    skel = _skeleton(instance.spec, instance.consensus_h, include_cbf)
    b_eq, b_ub = skel.rhs(np.asarray(instance.x0))
    if quadratic:
        mu = np.asarray(instance.mu_hat.probs)
        P, q, const = skel.objective(mu)
        x_err = instance.x0 - instance.spec.x_ref
        c0 = const + float(x_err @ instance.spec.Q @ x_err)
    else:
        P, q, c0 = None, np.zeros(skel.layout.n_vars), 0.0
    prog = Program(
        q=q,
        A_eq=skel.A_eq,
        b_eq=b_eq,
        A_ub=skel.A_ub,
        b_ub=b_ub,
        lb=skel.lb,
        ub=skel.ub,
        P=P,
        c0=c0,
        conic_cache=skel.conic_cache,
    )
    return OcpProgram(
        program=prog, layout=skel.layout, instance=instance, include_cbf=include_cbf
    )


def build_qp(instance: OcpInstance) -> OcpProgram:
    """Assemble the consensus OCP as a convex QP."""
    return _build(instance, quadratic=True, include_cbf=True)


def build_feasibility_lp(instance: OcpInstance) -> OcpProgram:
    """Same constraint set as build_qp with the objective replaced by 0."""
    return _build(instance, quadratic=False, include_cbf=True)


def build_tracking_qp(instance: OcpInstance) -> OcpProgram:
    """The QP without any CBF rows (pure tracking); fallback-ladder rung."""
    return _build(instance, quadratic=True, include_cbf=False)


def solve(ocp: OcpProgram, warm_start: OcpSolution | None = None) -> OcpSolution:
    """Solve an assembled program and unpack per-mode trajectories.

    ``warm_start`` (typically the previous step's solution shifted by one
    step) is part of the interface; engines are free to ignore it, and the
    current interior-point backends do.
    """
    raw: RawSolution = solve_program(ocp.program)
    if raw.status is not SolveStatus.OPTIMAL:
        return OcpSolution(
            status=raw.status, solve_time=raw.solve_time, engine=raw.engine
        )
    lay = ocp.layout
    x = raw.x
    controls = []
    states = []
    for i in range(lay.M):
        ui = np.empty((lay.H, lay.m))
        for k in range(lay.H):
            c0 = lay.u_index(i, k)
            ui[k] = x[c0 : c0 + lay.m]
        controls.append(ui)
        xi = x[lay.x_index(i, 1) : lay.x_index(i, 1) + lay.H * lay.n]
        states.append(xi.reshape(lay.H, lay.n).copy())
    first = controls[0][0].copy() if lay.h >= 1 else None
    return OcpSolution(
        status=SolveStatus.OPTIMAL,
        controls=controls,
        states=states,
        objective=raw.objective,
        first_input=first,
        kkt_residual=raw.kkt_residual,
        duality_gap_rel=raw.duality_gap_rel,
        solve_time=raw.solve_time,
        engine=raw.engine,
    )
