"""Benchmark scenario builders: orbital rendezvous and mineshaft inspection.

Two fully parameterized closed-loop scenarios:

* ``build_rendezvous`` -- a chaser spacecraft near a target satellite under
  Clohessy-Wiltshire-Hill relative dynamics (km, thrust acceleration per
  axis).  Two modes: nominal mean motion n = 0.061 and an off-nominal value
  supplied per episode.
* ``build_mineshaft`` -- a 12-state hexacopter linearized about hover (m),
  descending a shaft with walls at |x|,|y| <= 1 and floor at z >= -6.
  Three modes: nominal plus two single-rotor failures modeled as zeroed
  input-matrix columns in hover-deviation coordinates.

The hexacopter's physical constants are repo-pinned (mass 1.5 kg, inertia
diag(0.03, 0.03, 0.06) kg m^2, arm 0.25 m, rotors every 60 degrees with
alternating spin, torque/thrust ratio 0.016 m, g = 9.81): numeric results
for this scenario are reproducible only under these constants.  Controls
are per-rotor thrust deviations from hover, with the absolute [0.1, 20] N
limits shifted accordingly, which keeps the jump-linear model affine-free.

Default sweep grids reproduce the benchmark trial counts: 336 rendezvous
episodes (7 off-nominal mean motions x 8 switch steps x 6 delays) and 108
mineshaft episodes (9 initial xy positions x 4 switch steps x 3 delays;
the 4 x 3 split of switch/delay values and the 3 x 3 grid of starts at
{-0.5, 0, 0.5}^2 are documented repo choices).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .consensus_ocp import OcpSpec
from .jmls_core import (
    ContinuousModel,
    JumpLinearModel,
    ModeDynamics,
    _readonly,
    discretize,
)
from .safety_barriers import AffineBarrier, BarrierSet

__all__ = [
    "ScenarioBundle",
    "EpisodeSpec",
    "cwh_continuous",
    "build_rendezvous",
    "build_mineshaft",
    "build_scenario",
    "rendezvous_grid",
    "mineshaft_grid",
    "default_grid",
    "save_scenario",
    "load_scenario",
    "scenario_to_dict",
    "scenario_from_dict",
    "ScenarioFormatError",
]

SCENARIO_FORMAT = "consensus-mpc-scenario v1"

# Rendezvous constants (Table-style parameters; km and km/s^2).
RDV_NOMINAL_MEAN_MOTION = 0.061
RDV_DT = 10.0
RDV_HORIZON = 30
RDV_EPISODE_STEPS = 28
RDV_GAMMA = 0.05
RDV_SUCCESS_TOL = 0.1

# Hexacopter pinned physical constants.
HEX_MASS = 1.5
HEX_INERTIA = (0.03, 0.03, 0.06)
HEX_ARM = 0.25
HEX_TORQUE_THRUST = 0.016
HEX_GRAVITY = 9.81
HEX_ROTOR_MIN = 0.1
HEX_ROTOR_MAX = 20.0
HEX_DT = 0.05
HEX_HORIZON = 10
HEX_EPISODE_STEPS = 80
HEX_GAMMA = 0.05
HEX_SUCCESS_TOL = 0.25
HEX_FAILABLE_ROTORS = (1, 2)


class ScenarioFormatError(ValueError):
    """Raised when a scenario file is malformed."""


@dataclass(frozen=True, eq=False)
class ScenarioBundle:
    """A scenario ready for closed-loop simulation."""

    name: str
    model: JumpLinearModel
    barriers: BarrierSet
    ocp: OcpSpec
    x0: np.ndarray
    x_ref: np.ndarray
    dt: float
    episode_steps: int
    success_tolerance: float

    def __post_init__(self):
        object.__setattr__(self, "x0", _readonly(self.x0))
        object.__setattr__(self, "x_ref", _readonly(self.x_ref))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "episode_steps", int(self.episode_steps))
        object.__setattr__(self, "success_tolerance", float(self.success_tolerance))
        if self.x0.shape != (self.model.n_states,):
            raise ValueError("x0 dimension does not match the model")
        if self.dt <= 0 or self.episode_steps < 0 or self.success_tolerance <= 0:
            raise ValueError("dt and success_tolerance must be positive")
        values = self.barriers.values(self.x0)
        if np.any(values <= 0.0):
            raise ValueError(
                f"x0 must be strictly inside the safe set (barrier values {values})"
            )

    @property
    def duration_s(self) -> float:
        return self.episode_steps * self.dt


@dataclass(frozen=True)
class EpisodeSpec:
    """One sweep cell: scenario parameter, switch schedule, start override."""

    scenario: str
    switch_step: int
    detection_delay: int
    initial_mode: int = 1
    switched_mode: int = 2
    n_offnominal: float | None = None  # rendezvous cells
    x0_xy: tuple[float, float] | None = None  # mineshaft cells

    def key(self) -> tuple:
        """Canonical ordering key for deterministic sweep output."""
        return (
            self.scenario,
            -1.0 if self.n_offnominal is None else self.n_offnominal,
            self.x0_xy if self.x0_xy is not None else (0.0, 0.0),
            self.switch_step,
            self.detection_delay,
            self.switched_mode,
        )


def cwh_continuous(n_mean_motion: float) -> ContinuousModel:
    """Clohessy-Wiltshire-Hill relative dynamics about a circular orbit.

    State [x, y, z, vx, vy, vz]; control is per-axis thrust acceleration.
    """
    if not n_mean_motion > 0:
        raise ValueError("mean motion must be positive")
    n = float(n_mean_motion)
    A = np.zeros((6, 6))
    A[0:3, 3:6] = np.eye(3)
    A[3, 0] = 3.0 * n * n
    A[3, 4] = 2.0 * n
    A[4, 3] = -2.0 * n
    A[5, 2] = -n * n
    B = np.zeros((6, 3))
    B[3:6, 0:3] = np.eye(3)
    return ContinuousModel(A_cont=A, B_cont=B)


def _box_barriers(axis_bounds: list[tuple[int, float | None, float | None, str]],
                  n: int) -> list[AffineBarrier]:
    """Halfspace pairs for per-axis box limits; None skips a side."""
    out = []
    for axis, lo, hi, name in axis_bounds:
        a = np.zeros(n)
        if lo is not None:
            a_lo = a.copy()
            a_lo[axis] = 1.0
            out.append(AffineBarrier(a=a_lo, b=-lo, label=f"{name}_min"))
        if hi is not None:
            a_hi = a.copy()
            a_hi[axis] = -1.0
            out.append(AffineBarrier(a=a_hi, b=hi, label=f"{name}_max"))
    return out


def build_rendezvous(n_offnominal: float = 0.101) -> ScenarioBundle:
    """Two-mode orbital rendezvous: nominal vs off-nominal mean motion."""
    mode1 = discretize(cwh_continuous(RDV_NOMINAL_MEAN_MOTION), RDV_DT)
    mode2 = discretize(cwh_continuous(n_offnominal), RDV_DT)
    model = JumpLinearModel(
        modes=(mode1, mode2),
        transition=np.eye(2),
        u_min=np.full(3, -0.1),
        u_max=np.full(3, 0.1),
    )
    barriers = BarrierSet(
        barriers=tuple(
            _box_barriers(
                [(0, -6.0, 6.0, "x1"), (1, 0.0, 4.0, "x2"), (2, -10.0, 10.0, "x3")],
                n=6,
            )
        ),
        gamma=RDV_GAMMA,
    )
    x0 = np.array([0.01, 3.8, 0.0, 0.0, 0.0, 0.0])
    x_ref = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    ocp = OcpSpec(
        model=model,
        barriers=barriers,
        horizon_steps=RDV_HORIZON,
        Q=np.diag([50.0, 50.0, 50.0, 0.1, 0.1, 0.1]),
        R=0.01 * np.eye(3),
        x_ref=x_ref,
    )
    return ScenarioBundle(
        name="rendezvous",
        model=model,
        barriers=barriers,
        ocp=ocp,
        x0=x0,
        x_ref=x_ref,
        dt=RDV_DT,
        episode_steps=RDV_EPISODE_STEPS,
        success_tolerance=RDV_SUCCESS_TOL,
    )


def _hexacopter_continuous() -> tuple[np.ndarray, np.ndarray]:
    """Hover-linearized hexacopter: state [pos(3), angles(3), vel(3), rates(3)].

    Angles are roll/pitch/yaw; velocities are world-frame.  Inputs are the
    six per-rotor thrust deviations from hover; the mixing maps them to
    total-thrust and body-torque deviations.
    """
    m = HEX_MASS
    ixx, iyy, izz = HEX_INERTIA
    g = HEX_GRAVITY
    angles = np.deg2rad(60.0 * np.arange(6))
    spins = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])

    A = np.zeros((12, 12))
    A[0:3, 6:9] = np.eye(3)  # position <- velocity
    A[3:6, 9:12] = np.eye(3)  # angles <- body rates
    A[6, 4] = g  # x accel <- pitch
    A[7, 3] = -g  # y accel <- roll

    mix = np.zeros((4, 6))
    mix[0, :] = 1.0  # total thrust
    mix[1, :] = HEX_ARM * np.sin(angles)  # roll torque
    mix[2, :] = -HEX_ARM * np.cos(angles)  # pitch torque
    mix[3, :] = spins * HEX_TORQUE_THRUST  # yaw torque

    B = np.zeros((12, 6))
    B[8, :] = mix[0] / m  # z accel
    B[9, :] = mix[1] / ixx
    B[10, :] = mix[2] / iyy
    B[11, :] = mix[3] / izz
    return A, B


def hexacopter_hover_thrust() -> float:
    """Per-rotor hover thrust in Newtons under the pinned constants."""
    return HEX_MASS * HEX_GRAVITY / 6.0


def build_mineshaft() -> ScenarioBundle:
    """Three-mode hexacopter descent: nominal plus two rotor-failure modes."""
    A_c, B_c = _hexacopter_continuous()
    nominal = discretize(ContinuousModel(A_c, B_c), HEX_DT)
    modes = [nominal]
    for rotor in HEX_FAILABLE_ROTORS:
        B_fail = B_c.copy()
        B_fail[:, rotor - 1] = 0.0
        failed = discretize(ContinuousModel(A_c, B_fail), HEX_DT)
        # Exact ZOH of the pair shares A; rebuild with the nominal A to keep
        # the switch confined to the input matrix.
        modes.append(ModeDynamics(A=nominal.A, B=failed.B))
    hover = hexacopter_hover_thrust()
    model = JumpLinearModel(
        modes=tuple(modes),
        transition=np.eye(3),
        u_min=np.full(6, HEX_ROTOR_MIN - hover),
        u_max=np.full(6, HEX_ROTOR_MAX - hover),
    )
    barriers = BarrierSet(
        barriers=tuple(
            _box_barriers(
                [(0, -1.0, 1.0, "x1"), (1, -1.0, 1.0, "x2"), (2, -6.0, None, "x3")],
                n=12,
            )
        ),
        gamma=HEX_GAMMA,
    )
    x0 = np.zeros(12)
    x_ref = np.zeros(12)
    x_ref[0:3] = [-0.7, 0.7, -5.0]
    ocp = OcpSpec(
        model=model,
        barriers=barriers,
        horizon_steps=HEX_HORIZON,
        Q=np.diag([50.0, 50.0, 50.0] + [0.1] * 9),
        R=0.01 * np.eye(6),
        x_ref=x_ref,
    )
    return ScenarioBundle(
        name="mineshaft",
        model=model,
        barriers=barriers,
        ocp=ocp,
        x0=x0,
        x_ref=x_ref,
        dt=HEX_DT,
        episode_steps=HEX_EPISODE_STEPS,
        success_tolerance=HEX_SUCCESS_TOL,
    )


def build_scenario(name: str, **kwargs) -> ScenarioBundle:
    if name == "rendezvous":
        return build_rendezvous(**kwargs)
    if name == "mineshaft":
        return build_mineshaft(**kwargs)
    raise ValueError(f"unknown scenario '{name}'")


def rendezvous_grid() -> list[EpisodeSpec]:
    """Default 336-cell sweep: 7 mean motions x 8 switch steps x 6 delays."""
    cells = []
    for k in range(7):
        n_p = round(0.041 + 0.01 * k, 3)
        for switch in range(1, 40, 5):
            for delay in range(6):
                cells.append(
                    EpisodeSpec(
                        scenario="rendezvous",
                        n_offnominal=n_p,
                        switch_step=switch,
                        detection_delay=delay,
                    )
                )
    return cells


def mineshaft_grid() -> list[EpisodeSpec]:
    """Default 108-cell sweep: 9 starts x 4 switch steps x 3 delays.

    Switch steps {1, 14, 27, 40} and delays {0, 2, 4} split the published
    switch range 1..40 and delay range 0..5; the switched-to mode is the
    rotor-1 failure.
    """
    cells = []
    for x in (-0.5, 0.0, 0.5):
        for y in (-0.5, 0.0, 0.5):
            for switch in (1, 14, 27, 40):
                for delay in (0, 2, 4):
                    cells.append(
                        EpisodeSpec(
                            scenario="mineshaft",
                            x0_xy=(x, y),
                            switch_step=switch,
                            detection_delay=delay,
                        )
                    )
    return cells


def default_grid(scenario: str) -> list[EpisodeSpec]:
    if scenario == "rendezvous":
        return rendezvous_grid()
    if scenario == "mineshaft":
        return mineshaft_grid()
    raise ValueError(f"unknown scenario '{scenario}'")


def unsafe_short_consensus_witness() -> EpisodeSpec:
    """Checked-in episode where first-step consensus goes unsafe in closed
    loop while full-step consensus stays safe (an existence witness for the
    danger of short robustness horizons)."""
    d = json.loads(
        (Path(__file__).parent / "data" / "witness.json").read_text()
    )
    return EpisodeSpec(
        scenario=d["scenario"],
        n_offnominal=float(d["n_offnominal"]),
        switch_step=int(d["switch_step"]),
        detection_delay=int(d["detection_delay"]),
        initial_mode=int(d["initial_mode"]),
        switched_mode=int(d["switched_mode"]),
    )


# -- scenario file format -----------------------------------------------------


def scenario_to_dict(bundle: ScenarioBundle) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "name": bundle.name,
        "dt": bundle.dt,
        "episode_steps": bundle.episode_steps,
        "success_tolerance": bundle.success_tolerance,
        "x0": bundle.x0.tolist(),
        "x_ref": bundle.x_ref.tolist(),
        "model": bundle.model.to_dict(),
        "barriers": bundle.barriers.to_dict(),
        "ocp": {
            "horizon_steps": bundle.ocp.horizon_steps,
            "Q": bundle.ocp.Q.tolist(),
            "R": bundle.ocp.R.tolist(),
            "terminal_weight": bundle.ocp.terminal_weight.tolist(),
        },
    }


def scenario_from_dict(d: dict) -> ScenarioBundle:
    if not isinstance(d, dict) or d.get("format") != SCENARIO_FORMAT:
        raise ScenarioFormatError(
            f"unsupported scenario format {d.get('format') if isinstance(d, dict) else type(d)}"
        )
    required = (
        "name",
        "dt",
        "episode_steps",
        "success_tolerance",
        "x0",
        "x_ref",
        "model",
        "barriers",
        "ocp",
    )
    for key in required:
        if key not in d:
            raise ScenarioFormatError(f"scenario file missing required key '{key}'")
    try:
        model = JumpLinearModel.from_dict(d["model"])
        barriers = BarrierSet.from_dict(d["barriers"])
        ocp_d = d["ocp"]
        ocp = OcpSpec(
            model=model,
            barriers=barriers,
            horizon_steps=int(ocp_d["horizon_steps"]),
            Q=np.array(ocp_d["Q"], dtype=float),
            R=np.array(ocp_d["R"], dtype=float),
            x_ref=np.array(d["x_ref"], dtype=float),
            terminal_weight=np.array(ocp_d["terminal_weight"], dtype=float),
        )
        return ScenarioBundle(
            name=str(d["name"]),
            model=model,
            barriers=barriers,
            ocp=ocp,
            x0=np.array(d["x0"], dtype=float),
            x_ref=np.array(d["x_ref"], dtype=float),
            dt=float(d["dt"]),
            episode_steps=int(d["episode_steps"]),
            success_tolerance=float(d["success_tolerance"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ScenarioFormatError(f"invalid scenario file: {exc}") from exc


def save_scenario(bundle: ScenarioBundle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(bundle), indent=1))


def load_scenario(path: str | Path) -> ScenarioBundle:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(raw)


def bundle_with_start(bundle: ScenarioBundle, x0: np.ndarray) -> ScenarioBundle:
    """Copy of a bundle with a different initial state (must stay safe)."""
    return ScenarioBundle(
        name=bundle.name,
        model=bundle.model,
        barriers=bundle.barriers,
        ocp=bundle.ocp,
        x0=x0,
        x_ref=bundle.x_ref,
        dt=bundle.dt,
        episode_steps=bundle.episode_steps,
        success_tolerance=bundle.success_tolerance,
    )
