"""Embedded-autopilot emulation: attitude-rate PI loop and control allocation.

Runs at the fast (1 kHz) rate. The rate loop maps body-rate error to desired
torques with gyroscopic feedforward; the mixer solves the allocation matrix
for per-motor thrusts with thrust-priority saturation (collective preserved
first, yaw torque sacrificed first).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleAllocation
from .plant import PlantModel, allocation_matrix
from .platforms import PlatformProfile


@dataclass(frozen=True)
class AttitudeRateCommand:
    """Collective thrust plus desired body rates, from the reference controller."""

    thrust: float  # N
    body_rates: np.ndarray  # rad/s

    @staticmethod
    def zero() -> "AttitudeRateCommand":
        return AttitudeRateCommand(0.0, np.zeros(3))


@dataclass(frozen=True)
class TorqueCommand:
    torque: np.ndarray  # N*m, body
    thrust: float  # N collective


class Mixer:
    """Allocation-matrix solve with staged saturation.

    Quads use the exact inverse; octos the pseudo-inverse (minimum-norm
    spread). Saturation preserves collective exactly, scales roll/pitch
    jointly, and sacrifices yaw first.
    """

    def __init__(self, model: PlantModel):
        d = model.derived
        self.A = allocation_matrix(d.motor_positions, d.spin_directions,
                                   model.profile.torque_coeff)
        n = model.rotor_count
        if n == 4:
            self.A_inv = np.linalg.inv(self.A)
        else:
            self.A_inv = np.linalg.pinv(self.A)
        self.f_max = model.motor_max
        self.max_collective = n * self.f_max
        self.n = n
        self._col_thrust = self.A_inv[:, 0].copy()
        self._col_roll = self.A_inv[:, 1].copy()
        self._col_pitch = self.A_inv[:, 2].copy()
        self._col_yaw = self.A_inv[:, 3].copy()
        self._inv_f_max = 1.0 / self.f_max
        # torque authority per axis, used for integrator clamping upstream
        self.axis_torque_limit = 0.5 * (np.abs(self.A[1:]) @ np.full(n, self.f_max))

    def mix(self, cmd: TorqueCommand, clamp_thrust: bool = True):
        """Per-motor normalized commands realizing (T, tau) as far as feasible.

        Returns (commands, saturated) where `saturated` reports that some
        torque had to be scaled back.
        """
        T = cmd.thrust
        if clamp_thrust:
            T = min(max(T, 0.0), self.max_collective)
        elif T < 0.0 or T > self.max_collective:
            raise InfeasibleAllocation(f"collective {T:.3f} N outside [0, {self.max_collective:.3f}]")

        tau = cmd.torque
        base = self._col_thrust * T
        d_rp = self._col_roll * tau[0] + self._col_pitch * tau[1]
        d_yaw = self._col_yaw * tau[2]
        f = base + d_rp + d_yaw
        saturated = False
        if f.min() < -1e-12 or f.max() > self.f_max + 1e-12:
            # infeasible as commanded: keep collective, scale roll/pitch
            # jointly, sacrifice yaw first
            saturated = True
            s_rp = self._max_scale(base, d_rp)
            f = base + s_rp * d_rp
            s_yaw = self._max_scale(f, d_yaw)
            f += s_yaw * d_yaw

        f *= self._inv_f_max
        np.clip(f, 0.0, 1.0, out=f)
        commands = np.sqrt(f, out=f)
        return commands, saturated

    def _max_scale(self, f: np.ndarray, delta: np.ndarray) -> float:
        # largest s in [0, 1] with 0 <= f + s*delta <= f_max componentwise
        s = 1.0
        for i in range(self.n):
            d = delta[i]
            if d > 1e-12:
                s = min(s, (self.f_max - f[i]) / d)
            elif d < -1e-12:
                s = min(s, -f[i] / d)
        return max(s, 0.0)

    def recompose(self, commands: np.ndarray) -> np.ndarray:
        """Wrench (T, tau) produced by the given normalized commands."""
        return self.A @ (commands * commands * self.f_max)


class RateController:
    """PI body-rate loop with gyroscopic feedforward and anti-windup."""

    def __init__(self, profile: PlatformProfile, inertia_diag: np.ndarray,
                 torque_limit: np.ndarray):
        g = profile.controller
        self.kp = g.rate_kp_scale * inertia_diag
        self.ki = g.rate_ki_scale * inertia_diag
        self.inertia_diag = inertia_diag
        self._ixx, self._iyy, self._izz = (float(v) for v in inertia_diag)
        self._kp0, self._kp1, self._kp2 = (float(v) for v in self.kp)
        self._ki0, self._ki1, self._ki2 = (float(v) for v in self.ki)
        # anti-windup: keep the integral torque within half the axis authority
        self.integral_limit = 0.5 * torque_limit / np.maximum(self.ki, 1e-12)
        self._il0, self._il1, self._il2 = (float(v) for v in self.integral_limit)
        self._i0 = self._i1 = self._i2 = 0.0

    def reset(self) -> None:
        self._i0 = self._i1 = self._i2 = 0.0

    @property
    def integral(self) -> np.ndarray:
        return np.array((self._i0, self._i1, self._i2))

    def update(self, omega: np.ndarray, cmd: AttitudeRateCommand, dt: float) -> TorqueCommand:
        rates = cmd.body_rates
        ox, oy, oz = omega[0], omega[1], omega[2]
        e0 = rates[0] - ox
        e1 = rates[1] - oy
        e2 = rates[2] - oz
        i0 = self._i0 + e0 * dt
        i1 = self._i1 + e1 * dt
        i2 = self._i2 + e2 * dt
        l0, l1, l2 = self._il0, self._il1, self._il2
        self._i0 = l0 if i0 > l0 else (-l0 if i0 < -l0 else i0)
        self._i1 = l1 if i1 > l1 else (-l1 if i1 < -l1 else i1)
        self._i2 = l2 if i2 > l2 else (-l2 if i2 < -l2 else i2)
        ix, iy, iz = self._ixx, self._iyy, self._izz
        torque = np.array((
            self._kp0 * e0 + self._ki0 * self._i0 + (oy * iz * oz - oz * iy * oy),
            self._kp1 * e1 + self._ki1 * self._i1 + (oz * ix * ox - ox * iz * oz),
            self._kp2 * e2 + self._ki2 * self._i2 + (ox * iy * oy - oy * ix * ox),
        ))
        return TorqueCommand(torque=torque, thrust=cmd.thrust)


class Autopilot:
    """Rate loop + mixer with owned integrator state; stepped at 1 kHz."""

    def __init__(self, model: PlantModel):
        self.model = model
        self.mixer = Mixer(model)
        self.rate_controller = RateController(
            model.profile, model.inertia_diag, self.mixer.axis_torque_limit)
        self.rate_limit = model.profile.rate_limit
        self.saturated = False

    def reset(self) -> None:
        self.rate_controller.reset()
        self.saturated = False

    def tick(self, omega_measured: np.ndarray, cmd: AttitudeRateCommand,
             dt: float) -> np.ndarray:
        r = cmd.body_rates
        lim = self.rate_limit
        if r[0] > lim or r[0] < -lim or r[1] > lim or r[1] < -lim \
                or r[2] > lim or r[2] < -lim:
            cmd = AttitudeRateCommand(cmd.thrust, np.clip(r, -lim, lim))
        torque_cmd = self.rate_controller.update(omega_measured, cmd, dt)
        commands, self.saturated = self.mixer.mix(torque_cmd)
        return commands
