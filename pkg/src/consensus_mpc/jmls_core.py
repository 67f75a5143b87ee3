"""Core types and dynamics for jump Markov linear systems.

A jump Markov linear system (JMLS) is a discrete-time linear system whose
(A, B) matrices switch among M modes governed by a Markov chain with a
column-stochastic transition matrix.  This module holds the model types,
zero-order-hold discretization, noiseless truth propagation, and mode-belief
propagation.  Mode indices are 1-based at every public API and in all files
(matching the usual i in {1,...,M} convention); storage is 0-based.

All types are immutable after construction (arrays are marked read-only) and
all operations are pure functions, so values can be shared freely across
concurrent workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "ModeDynamics",
    "JumpLinearModel",
    "ModeBelief",
    "ContinuousModel",
    "discretize",
    "step_truth",
    "propagate_belief",
]

_STOCHASTIC_TOL = 1e-12


def _readonly(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def _require_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True, eq=False)
class ModeDynamics:
    """One discrete-time mode: x+ = A x + B u."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _readonly(self.A))
        object.__setattr__(self, "B", _readonly(self.B))
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"A must be square, got shape {self.A.shape}")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise ValueError(
                f"B must be {self.A.shape[0]}xM, got shape {self.B.shape}"
            )
        _require_finite("A", self.A)
        _require_finite("B", self.B)


@dataclass(frozen=True, eq=False)
class JumpLinearModel:
    """Per-mode (A_i, B_i) pairs, transition matrix and box control bounds.

    ``transition`` is column-stochastic: column i is the distribution of the
    next mode given current mode i, so beliefs propagate as mu+ = transition
    @ mu.
    """

    modes: tuple[ModeDynamics, ...]
    transition: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "u_min", _readonly(self.u_min))
        object.__setattr__(self, "u_max", _readonly(self.u_max))
        if not self.modes:
            raise ValueError("need at least one mode")
        n, m = self.modes[0].A.shape[0], self.modes[0].B.shape[1]
        for k, mode in enumerate(self.modes):
            if mode.A.shape != (n, n) or mode.B.shape != (n, m):
                raise ValueError(f"mode {k + 1} dimensions differ from mode 1")
        M = len(self.modes)
        if self.transition.shape != (M, M):
            raise ValueError(
                f"transition must be {M}x{M}, got {self.transition.shape}"
            )
        if np.any(self.transition < 0) or np.any(self.transition > 1):
            raise ValueError("transition entries must lie in [0, 1]")
        col_sums = self.transition.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > _STOCHASTIC_TOL):
            raise ValueError(
                f"transition columns must sum to 1 (got column sums {col_sums})"
            )
        if self.u_min.shape != (m,) or self.u_max.shape != (m,):
            raise ValueError("u_min/u_max must have length m")
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min must be <= u_max elementwise")
        _require_finite("u_min", self.u_min)
        _require_finite("u_max", self.u_max)

    @property
    def n_states(self) -> int:
        return self.modes[0].A.shape[0]

    @property
    def n_controls(self) -> int:
        return self.modes[0].B.shape[1]

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def mode(self, index: int) -> ModeDynamics:
        """Return mode by 1-based index."""
        if not 1 <= index <= self.n_modes:
            raise ValueError(f"mode index {index} outside 1..{self.n_modes}")
        return self.modes[index - 1]

    def to_dict(self) -> dict:
        return {
            "n": self.n_states,
            "m": self.n_controls,
            "M": self.n_modes,
            "modes": [
                {"A": m.A.tolist(), "B": m.B.tolist()} for m in self.modes
            ],
            "omega": self.transition.tolist(),
            "u_min": self.u_min.tolist(),
            "u_max": self.u_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JumpLinearModel":
        for key in ("n", "m", "M", "modes", "omega", "u_min", "u_max"):
            if key not in d:
                raise ValueError(f"model dict missing required key '{key}'")
        n, m, M = int(d["n"]), int(d["m"]), int(d["M"])
        if len(d["modes"]) != M:
            raise ValueError(f"expected {M} modes, got {len(d['modes'])}")
        modes = []
        for k, rec in enumerate(d["modes"]):
            A = np.array(rec["A"], dtype=float)
            B = np.array(rec["B"], dtype=float)
            if A.shape != (n, n) or B.shape != (n, m):
                raise ValueError(f"mode {k + 1} has wrong dimensions")
            modes.append(ModeDynamics(A, B))
        model = cls(
            modes=tuple(modes),
            transition=np.array(d["omega"], dtype=float),
            u_min=np.array(d["u_min"], dtype=float),
            u_max=np.array(d["u_max"], dtype=float),
        )
        return model


@dataclass(frozen=True, eq=False)
class ModeBelief:
    """Categorical mode probability on the M-simplex."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))
        if self.probs.ndim != 1:
            raise ValueError("belief must be a vector")
        if np.any(self.probs < 0):
            raise ValueError("belief entries must be >= 0")
        if abs(self.probs.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError(f"belief must sum to 1, got {self.probs.sum()!r}")

    @classmethod
    def one_hot(cls, mode_index: int, n_modes: int) -> "ModeBelief":
        """Point-mass belief on a 1-based mode index."""
        if not 1 <= mode_index <= n_modes:
            raise ValueError(f"mode index {mode_index} outside 1..{n_modes}")
        p = np.zeros(n_modes)
        p[mode_index - 1] = 1.0
        return cls(p)

    @property
    def n_modes(self) -> int:
        return self.probs.shape[0]

    def argmax_mode(self) -> int:
        """1-based index of the most likely mode; ties go to the lowest."""
        return int(np.argmax(self.probs)) + 1


@dataclass(frozen=True, eq=False)
class ContinuousModel:
    """Continuous-time dynamics x' = A_cont x + B_cont u awaiting discretization."""

    A_cont: np.ndarray
    B_cont: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A_cont", _readonly(self.A_cont))
        object.__setattr__(self, "B_cont", _readonly(self.B_cont))
        if self.A_cont.ndim != 2 or self.A_cont.shape[0] != self.A_cont.shape[1]:
            raise ValueError("A_cont must be square")
        if self.B_cont.ndim != 2 or self.B_cont.shape[0] != self.A_cont.shape[0]:
            raise ValueError("B_cont row count must match A_cont")
        _require_finite("A_cont", self.A_cont)
        _require_finite("B_cont", self.B_cont)


def discretize(model: ContinuousModel, dt: float) -> ModeDynamics:
    """Exact zero-order-hold discretization over a step of dt seconds.

    Computes the matrix exponential of the augmented block matrix
    [[A, B], [0, 0]] * dt; the top-left block is A_d and the top-right
    block is B_d.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = model.A_cont.shape[0]
    m = model.B_cont.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.A_cont
    aug[:n, n:] = model.B_cont
    phi = expm(aug * dt)
    return ModeDynamics(A=phi[:n, :n], B=phi[:n, n:])


def step_truth(
    model: JumpLinearModel, x: np.ndarray, mode_index: int, u: np.ndarray
) -> np.ndarray:
    """Noiseless one-step truth propagation x+ = A_i x + B_i u.

    ``mode_index`` is 1-based.  Control bound violations are warned about but
    not rejected: the fallback ladder may deliberately saturate.
    """
    mode = model.mode(mode_index)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n_states,):
        raise ValueError(f"state has shape {x.shape}, expected ({model.n_states},)")
    if u.shape != (model.n_controls,):
        raise ValueError(
            f"control has shape {u.shape}, expected ({model.n_controls},)"
        )
    slack = 1e-8 * (1.0 + np.maximum(np.abs(model.u_min), np.abs(model.u_max)))
    if np.any(u < model.u_min - slack) or np.any(u > model.u_max + slack):
        warnings.warn("control outside [u_min, u_max]", stacklevel=2)
    return mode.A @ x + mode.B @ u


def propagate_belief(model: JumpLinearModel, mu: ModeBelief) -> ModeBelief:
    """One-step Markov-chain belief propagation mu+ = transition @ mu."""
    if mu.n_modes != model.n_modes:
        raise ValueError("belief length does not match model mode count")
    out = model.transition @ mu.probs
    # Round-off can leave entries at -1e-17; clamp so the invariants hold.
    out = np.maximum(out, 0.0)
    return ModeBelief(out / out.sum() if abs(out.sum() - 1.0) > _STOCHASTIC_TOL else out)
