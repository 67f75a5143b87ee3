"""Oracle hybrid estimator: true state, delayed one-hot mode belief.

The benchmark protocol induces a mode switch at a step unknown to the
controller and delays its detection by a fixed number of control steps.
The oracle estimator returns the exact continuous state at every step and a
one-hot belief that lags the true mode by ``detection_delay`` steps; the
window [switch_step, switch_step + detection_delay) is where the belief is
wrong and consensus robustness matters.

Switch time and delay are measured in control steps.  A switch takes effect
at exactly ``t == switch_step``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jmls_core import ModeBelief, _readonly

__all__ = ["OracleSchedule", "HybridEstimate", "true_mode", "estimate"]


@dataclass(frozen=True)
class OracleSchedule:
    """Scripted single mode switch with a fixed detection delay (in steps)."""

    initial_mode: int
    switched_mode: int
    switch_step: int
    detection_delay: int

    def __post_init__(self):
        if self.initial_mode == self.switched_mode:
            raise ValueError("initial and switched modes must differ")
        if self.initial_mode < 1 or self.switched_mode < 1:
            raise ValueError("mode indices are 1-based")
        if self.switch_step < 1:
            raise ValueError("switch_step must be >= 1")
        if self.detection_delay < 0:
            raise ValueError("detection_delay must be >= 0")

    def to_dict(self) -> dict:
        return {
            "initial_mode": self.initial_mode,
            "switched_mode": self.switched_mode,
            "switch_step": self.switch_step,
            "detection_delay": self.detection_delay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleSchedule":
        return cls(
            initial_mode=int(d["initial_mode"]),
            switched_mode=int(d["switched_mode"]),
            switch_step=int(d["switch_step"]),
            detection_delay=int(d["detection_delay"]),
        )


@dataclass(frozen=True, eq=False)
class HybridEstimate:
    """Mean state estimate plus categorical mode belief."""

    x_hat: np.ndarray
    mu_hat: ModeBelief

    def __post_init__(self):
        object.__setattr__(self, "x_hat", _readonly(self.x_hat))


def true_mode(schedule: OracleSchedule, t: int) -> int:
    """True 1-based mode at step t; the switch fires at t == switch_step."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return schedule.initial_mode if t < schedule.switch_step else schedule.switched_mode


def estimate(
    schedule: OracleSchedule, t: int, x_true: np.ndarray, n_modes: int
) -> HybridEstimate:
    """Oracle estimate at step t: exact state, belief lagging by the delay."""
    if t < 0:
        raise ValueError("t must be >= 0")
    detected = t >= schedule.switch_step + schedule.detection_delay
    mode = schedule.switched_mode if detected else schedule.initial_mode
    return HybridEstimate(
        x_hat=np.asarray(x_true, dtype=float),
        mu_hat=ModeBelief.one_hot(mode, n_modes),
    )
