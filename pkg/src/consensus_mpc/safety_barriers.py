"""Affine control barrier functions and discrete CBF constraint rows.

A barrier beta(x) = a'x + b defines the halfspace {beta >= 0}; a barrier set
is an intersection of such halfspaces together with a decay rate gamma in
(0, 1].  The discrete CBF condition beta(x_{k+1}) >= (1 - gamma) beta(x_k)
bounds how fast beta may shrink per step, which renders the 0-superlevel set
forward invariant for any closed loop that keeps the condition feasible.

Everything here is pure and immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .jmls_core import _readonly, _require_finite

__all__ = [
    "AffineBarrier",
    "BarrierSet",
    "CbfRow",
    "barrier_value",
    "is_safe",
    "cbf_row",
    "TOL_SAFETY",
]

# Membership tolerance: one order above the 1e-8 solver feasibility tolerance.
TOL_SAFETY = 1e-7


@dataclass(frozen=True, eq=False)
class AffineBarrier:
    """beta(x) = a'x + b with a != 0."""

    a: np.ndarray
    b: float
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "a", _readonly(self.a))
        object.__setattr__(self, "b", float(self.b))
        if self.a.ndim != 1:
            raise ValueError("barrier gradient must be a vector")
        _require_finite("a", self.a)
        if not np.any(self.a != 0.0):
            raise ValueError("barrier gradient must be nonzero")

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineBarrier":
        return cls(
            a=np.array(d["a"], dtype=float),
            b=float(d["b"]),
            label=str(d.get("label", "")),
        )


@dataclass(frozen=True, eq=False)
class BarrierSet:
    """Halfspace barriers sharing one decay rate gamma in (0, 1]."""

    barriers: tuple[AffineBarrier, ...]
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "barriers", tuple(self.barriers))
        object.__setattr__(self, "gamma", float(self.gamma))
        if not self.barriers:
            raise ValueError("barrier set must contain at least one barrier")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        n = self.barriers[0].a.shape[0]
        for j, bar in enumerate(self.barriers):
            if bar.a.shape != (n,):
                raise ValueError(f"barrier {j} dimension differs")
        if not self._intersection_nonempty():
            raise ValueError("barrier halfspaces have empty intersection")

    def _intersection_nonempty(self) -> bool:
        # Feasibility LP: exists x with a_j'x + b_j >= 0 for all j.
        n = self.barriers[0].a.shape[0]
        A_ub = np.array([-bar.a for bar in self.barriers])
        b_ub = np.array([bar.b for bar in self.barriers])
        res = linprog(
            c=np.zeros(n),
            A_ub=A_ub,
            b_ub=b_ub,
            bounds=[(None, None)] * n,
            method="highs",
        )
        return res.status == 0

    @property
    def n_states(self) -> int:
        return self.barriers[0].a.shape[0]

    @property
    def n_barriers(self) -> int:
        return len(self.barriers)

    def values(self, x: np.ndarray) -> np.ndarray:
        """All barrier values at x, in declaration order."""
        return np.array([barrier_value(bar, x) for bar in self.barriers])

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "barriers": [bar.to_dict() for bar in self.barriers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BarrierSet":
        for key in ("gamma", "barriers"):
            if key not in d:
                raise ValueError(f"barrier dict missing required key '{key}'")
        return cls(
            barriers=tuple(AffineBarrier.from_dict(r) for r in d["barriers"]),
            gamma=float(d["gamma"]),
        )


def barrier_value(barrier: AffineBarrier, x: np.ndarray) -> float:
    """beta(x) = a'x + b."""
    x = np.asarray(x, dtype=float)
    if x.shape != barrier.a.shape:
        raise ValueError(
            f"state has shape {x.shape}, expected {barrier.a.shape}"
        )
    return float(barrier.a @ x + barrier.b)


def is_safe(barrier_set: BarrierSet, x: np.ndarray, tol: float = TOL_SAFETY) -> bool:
    """True iff every barrier value at x is >= -tol (closed-set membership)."""
    return all(barrier_value(bar, x) >= -tol for bar in barrier_set.barriers)


@dataclass(frozen=True, eq=False)
class CbfRow:
    """One discrete CBF constraint template between consecutive states.

    Encodes  a_next' x_{k+1} + a_prev' x_k + const >= 0,  which is
    beta(x_{k+1}) - (1 - gamma) beta(x_k) >= 0 for the originating barrier.
    At k = 0 the x_k slot is the measured state: the row reduces to
    a_next' x_1 + const >= -a_prev' x_0 with a constant right-hand side.
    """

    a_next: np.ndarray
    a_prev: np.ndarray
    const: float

    def __post_init__(self):
        object.__setattr__(self, "a_next", _readonly(self.a_next))
        object.__setattr__(self, "a_prev", _readonly(self.a_prev))
        object.__setattr__(self, "const", float(self.const))

    def initial_rhs(self, x0: np.ndarray) -> float:
        """Lower bound on a_next' x_1 when x_k is the fixed state x0."""
        return float(-self.const - self.a_prev @ x0)


def cbf_row(barrier: AffineBarrier, gamma: float) -> CbfRow:
    """Build the constraint template for one barrier at decay rate gamma."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return CbfRow(
        a_next=barrier.a,
        a_prev=-(1.0 - gamma) * barrier.a,
        const=gamma * barrier.b,
    )
