"""Reference controller: two switchable feedback designs at 100 Hz.

Both designs build a desired force vector from the full-state reference and
the state estimate, convert it to collective thrust plus a desired rotation
through the heading convention, and map the rotation error to body-rate
commands via the SO(3) log. The "aggressive" design applies raw gains; the
"smooth" design saturates the feedback errors, caps the commanded rates and
low-pass filters them, trading tracking stiffness for noise robustness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .autopilot import AttitudeRateCommand
from .errors import DegenerateForce, UnknownController
from .plant import PlantModel
from .platforms import GRAVITY

GRAVITY_UP = np.array([0.0, 0.0, GRAVITY])

AGGRESSIVE = "aggressive"
SMOOTH = "smooth"


@dataclass(frozen=True)
class FullStateReference:
    """Time-consistent reference consumed by the feedback controller."""

    position: np.ndarray  # m
    velocity: np.ndarray  # m/s
    acceleration: np.ndarray  # m/s^2
    jerk: np.ndarray  # m/s^3
    heading: float  # rad
    heading_rate: float  # rad/s
    timestamp: float = 0.0

    @staticmethod
    def hover(position, heading: float = 0.0, timestamp: float = 0.0) -> "FullStateReference":
        return FullStateReference(
            position=np.array(position, dtype=float), velocity=np.zeros(3),
            acceleration=np.zeros(3), jerk=np.zeros(3), heading=heading,
            heading_rate=0.0, timestamp=timestamp)


@dataclass(frozen=True)
class ControlOutput:
    """Command for the embedded autopilot plus the acceleration feedforward
    consumed by the estimator's prediction model."""

    cmd: AttitudeRateCommand
    desired_accel: np.ndarray  # m/s^2, world
    degenerate: bool = False


def rotation_from_thrust_heading(b3: np.ndarray, heading: float) -> np.ndarray:
    """Desired rotation whose body z is b3 and whose heading is exact.

    The body x-axis is chosen so its horizontal projection points along the
    heading, which keeps heading_of(R) == heading by construction.
    """
    if b3[2] <= 1e-6:
        raise DegenerateForce("desired thrust direction at or beyond 90 degrees tilt")
    c = math.cos(heading)
    s = math.sin(heading)
    zx, zy, zz = float(b3[0]), float(b3[1]), float(b3[2])
    t = (c * zx + s * zy) / zz
    k = 1.0 / math.sqrt(1.0 + t * t)
    xx, xy, xz = k * c, k * s, -k * t
    yx = zy * xz - zz * xy
    yy = zz * xx - zx * xz
    yz = zx * xy - zy * xx
    return np.array(((xx, yx, zx), (xy, yy, zy), (xz, yz, zz)))


def _force_to_output(f_des: np.ndarray, rotation_est: np.ndarray, heading: float,
                     heading_rate: float, attitude_kp: float, mass: float) -> tuple:
    norm = float(np.linalg.norm(f_des))
    if norm < 1e-6:
        raise DegenerateForce("desired force vanished (free-fall reference)")
    b3 = f_des / norm
    R_des = rotation_from_thrust_heading(b3, heading)
    att_err = geometry.rotation_error(rotation_est, R_des)
    omega_cmd = attitude_kp * att_err + rotation_est.T @ np.array([0.0, 0.0, heading_rate])
    accel = f_des / mass - GRAVITY_UP
    return norm, omega_cmd, accel


def _envelope_velocity_command(ref_velocity, e_p, kp: float, kv: float,
                               v_max: float, margin: float) -> np.ndarray:
    # cascade form of kp*e_p + kv*e_v: the implied velocity command is
    # capped inside the platform envelope (envelope protection)
    v_cmd = ref_velocity + (kp / kv) * e_p
    return _sat_norm(v_cmd, v_max - margin)


def _lead_acceleration(ref: FullStateReference, lead_tau: float,
                       a_max: float) -> np.ndarray:
    # jerk lead compensates actuation lag; clamped so reference chatter
    # cannot dominate the feedforward
    return ref.acceleration + _sat_norm(lead_tau * ref.jerk, 0.5 * a_max)


def se3_control(estimate, ref: FullStateReference, model: PlantModel,
                gains=None) -> ControlOutput:
    """Aggressive design: geometric control on SO(3) with raw gains."""
    g = gains if gains is not None else model.profile.controller
    e_p = ref.position - estimate.position
    v_cmd = _envelope_velocity_command(ref.velocity, e_p, g.position_kp,
                                       g.velocity_kp, model.profile.v_max,
                                       g.velocity_margin)
    a_fb = g.velocity_kp * (v_cmd - estimate.velocity)
    a_ff = _lead_acceleration(ref, g.accel_lead_tau, model.profile.a_max)
    f_des = model.mass * (a_ff + a_fb + GRAVITY_UP)
    thrust, omega_cmd, accel = _force_to_output(
        f_des, estimate.rotation, ref.heading, ref.heading_rate,
        g.attitude_kp, model.mass)
    omega_cmd = np.clip(omega_cmd, -model.profile.rate_limit, model.profile.rate_limit)
    return ControlOutput(AttitudeRateCommand(thrust, omega_cmd), accel)


def smooth_control(estimate, ref: FullStateReference, model: PlantModel,
                   gains=None, lpf_state: np.ndarray | None = None,
                   dt: float = 0.01) -> ControlOutput:
    """Smooth design: saturated errors, bounded feedback, filtered rates."""
    g = gains if gains is not None else model.profile.controller
    e_p = _sat_norm(ref.position - estimate.position, g.smooth_error_sat_m)
    v_cmd = _envelope_velocity_command(ref.velocity, e_p, g.smooth_position_kp,
                                       g.smooth_velocity_kp, model.profile.v_max,
                                       g.velocity_margin)
    e_v = _sat_norm(v_cmd - estimate.velocity, g.smooth_vel_error_sat)
    a_fb = _sat_norm(g.smooth_velocity_kp * e_v, model.profile.a_max)
    a_ff = _lead_acceleration(ref, g.accel_lead_tau, model.profile.a_max)
    f_des = model.mass * (a_ff + a_fb + GRAVITY_UP)
    thrust, omega_cmd, accel = _force_to_output(
        f_des, estimate.rotation, ref.heading, ref.heading_rate,
        0.6 * g.attitude_kp, model.mass)
    if lpf_state is not None:
        alpha = min(1.0, g.smooth_lpf_cutoff * dt)
        lpf_state += alpha * (omega_cmd - lpf_state)
        omega_cmd = lpf_state.copy()
    omega_cmd = np.clip(omega_cmd, -g.smooth_rate_cap, g.smooth_rate_cap)
    return ControlOutput(AttitudeRateCommand(thrust, omega_cmd), accel)


def _sat_norm(vec: np.ndarray, limit: float) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm > limit and norm > 0.0:
        return vec * (limit / norm)
    return vec


class ReferenceController:
    """Holds the active design plus filter state; switching is bumpless."""

    def __init__(self, model: PlantModel, gains=None):
        self.model = model
        self.gains = gains if gains is not None else model.profile.controller
        self.active = AGGRESSIVE
        self._lpf = np.zeros(3)
        self._last: ControlOutput | None = None

    def select(self, name: str) -> None:
        if name not in (AGGRESSIVE, SMOOTH):
            raise UnknownController(name)
        if name == SMOOTH and self.active != SMOOTH and self._last is not None:
            # hand the filter the last commanded rates so the switch is bumpless
            self._lpf = self._last.cmd.body_rates.copy()
        self.active = name

    def update(self, estimate, ref: FullStateReference, dt: float = 0.01) -> ControlOutput:
        try:
            if self.active == SMOOTH:
                out = smooth_control(estimate, ref, self.model, self.gains,
                                     lpf_state=self._lpf, dt=dt)
            else:
                out = se3_control(estimate, ref, self.model, self.gains)
        except DegenerateForce:
            last = self._last if self._last is not None else ControlOutput(
                AttitudeRateCommand(0.0, np.zeros(3)), np.zeros(3))
            out = ControlOutput(last.cmd, last.desired_accel, degenerate=True)
        self._last = out
        return out
