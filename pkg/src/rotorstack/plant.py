"""Ground-truth multirotor rigid-body plant with motor lag and battery model.

Newton-Euler dynamics with semi-implicit Euler integration at the fast-loop
period, first-order thrust lag per motor, a calibrated total-thrust power
model, and IMU emission. Everything is a pure function over an explicit
state value, so multiple vehicles are just independent values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .platforms import GRAVITY, DerivedParams, PlatformProfile, derive_params

GRAVITY_VEC = np.array([0.0, 0.0, -GRAVITY])

MAX_STEP_DT = 0.002  # s, upper bound for stable stiff integration

# The exponential-map update is orthogonal to machine precision, so drift is
# ~1e-16 per step; refreshing every 32 steps keeps ||R^T R - I|| below 1e-12.
_REFRESH_EVERY = 32


@dataclass(frozen=True, slots=True)
class UavState:
    """Ground-truth state: rigid body, per-motor thrust, battery, time."""

    position: np.ndarray  # m, world
    velocity: np.ndarray  # m/s, world
    rotation: np.ndarray  # body-to-world
    body_rates: np.ndarray  # rad/s, body
    motor_thrusts: np.ndarray  # N, per motor
    battery_energy: float  # Wh
    time: float = 0.0
    acceleration: np.ndarray | None = None  # m/s^2, world, from the last step
    power: float | None = None  # W, draw at this state (cached)
    battery_empty: bool = False
    ground_contact: bool = False
    steps: int = 0

    def accel(self) -> np.ndarray:
        return self.acceleration if self.acceleration is not None else np.zeros(3)


@dataclass(frozen=True)
class ImuSample:
    """Body-frame specific force and rates at a timestamp."""

    specific_force: np.ndarray  # m/s^2
    body_rates: np.ndarray  # rad/s
    timestamp: float


@dataclass(frozen=True)
class ImuNoise:
    """Additive bias + white noise; zero everywhere by default."""

    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0
    accel_bias: np.ndarray | None = None
    gyro_bias: np.ndarray | None = None


@dataclass(frozen=True)
class BatteryTelemetry:
    voltage: float  # V
    current: float  # A
    energy_remaining: float  # Wh


# LiPo per-cell voltage across the state of charge, affine model
CELL_V_FULL = 4.2
CELL_V_EMPTY = 3.3


class PlantModel:
    """Profile-derived constants packaged for the hot simulation loop."""

    def __init__(self, profile: PlatformProfile, derived: DerivedParams | None = None):
        self.profile = profile
        self.derived = derived if derived is not None else derive_params(profile)
        d = self.derived
        self.allocation = allocation_matrix(d.motor_positions, d.spin_directions,
                                            profile.torque_coeff)
        self.torque_rows = self.allocation[1:].copy()
        self.inertia = d.inertia
        self.inertia_diag = np.diag(d.inertia).copy()
        self.inertia_inv_diag = 1.0 / self.inertia_diag
        self.mass = profile.mass
        self.motor_max = d.per_motor_max_thrust
        self.rotor_count = profile.rotor_count
        self.motor_tau = profile.motor_tau
        self.drag_coeff = profile.drag_coeff
        self.capacity = profile.battery_capacity
        self._power_scale = d.rotor_power_coeff * d.coax_factor
        self._avionics = d.avionics_power
        self._ixx, self._iyy, self._izz = (float(x) for x in self.inertia_diag)

    def hover_commands(self) -> np.ndarray:
        """Normalized commands that settle to exact per-motor hover thrust."""
        per_motor = self.derived.hover_thrust / self.rotor_count
        return np.full(self.rotor_count, np.sqrt(per_motor / self.motor_max))

    def hover_state(self, position=(0.0, 0.0, 2.0), heading: float = 0.0,
                    battery_energy: float | None = None) -> UavState:
        """A settled hover state (motors already at hover thrust)."""
        per_motor = self.derived.hover_thrust / self.rotor_count
        thrusts = np.full(self.rotor_count, per_motor)
        return UavState(
            position=np.array(position, dtype=float),
            velocity=np.zeros(3),
            rotation=geometry.rotation_from_heading(heading),
            body_rates=np.zeros(3),
            motor_thrusts=thrusts,
            battery_energy=self.capacity if battery_energy is None else battery_energy,
            acceleration=np.zeros(3),
            power=power_draw(thrusts, self),
        )

    def rest_state(self, position=(0.0, 0.0, 0.0), heading: float = 0.0,
                   battery_energy: float | None = None) -> UavState:
        """Motors-off state sitting on (or at) the given position."""
        return UavState(
            position=np.array(position, dtype=float),
            velocity=np.zeros(3),
            rotation=geometry.rotation_from_heading(heading),
            body_rates=np.zeros(3),
            motor_thrusts=np.zeros(self.rotor_count),
            battery_energy=self.capacity if battery_energy is None else battery_energy,
            acceleration=np.zeros(3),
            power=self._avionics,
            ground_contact=position[2] <= 0.0,
        )


def allocation_matrix(positions: np.ndarray, spins: np.ndarray,
                      torque_coeff: float) -> np.ndarray:
    """Rows map per-motor thrusts to (collective, roll, pitch, yaw torque)."""
    n = len(positions)
    A = np.empty((4, n))
    A[0] = 1.0
    A[1] = positions[:, 1]
    A[2] = -positions[:, 0]
    A[3] = -spins * torque_coeff
    return A


def motor_thrust(command: float, model: PlantModel) -> float:
    """Quadratic command-to-thrust map: thrust = command^2 * per-motor max."""
    if not 0.0 <= command <= 1.0:
        raise ValueError("motor command outside [0, 1]")
    return command * command * model.motor_max


def power_draw(motor_thrusts: np.ndarray, model: PlantModel) -> float:
    """Electric power for the given per-motor thrusts.

    P = c * (sum T)^1.5 * k_coax + P_avionics, with c calibrated per profile
    so hover draw reproduces the rated endurance.
    """
    total = float(np.sum(motor_thrusts))
    return model._power_scale * total ** 1.5 + model._avionics


def _advance_rotation(R: np.ndarray, wx: float, wy: float, wz: float,
                      dt: float, refresh: bool) -> np.ndarray:
    """R @ exp(hat(w) * dt) with periodic polar re-orthonormalization."""
    px, py, pz = wx * dt, wy * dt, wz * dt
    angle_sq = px * px + py * py + pz * pz
    if angle_sq < 1e-16:
        a, b = 1.0, 0.5
    else:
        angle = math.sqrt(angle_sq)
        a = math.sin(angle) / angle
        b = (1.0 - math.cos(angle)) / angle_sq
    # closed-form Rodrigues: E = I + a*K + b*K^2 written out
    E = np.empty((3, 3))
    E[0, 0] = 1.0 - b * (py * py + pz * pz)
    E[0, 1] = -a * pz + b * px * py
    E[0, 2] = a * py + b * px * pz
    E[1, 0] = a * pz + b * px * py
    E[1, 1] = 1.0 - b * (px * px + pz * pz)
    E[1, 2] = -a * px + b * py * pz
    E[2, 0] = -a * py + b * px * pz
    E[2, 1] = a * px + b * py * pz
    E[2, 2] = 1.0 - b * (px * px + py * py)
    R_next = R @ E
    if refresh:
        R_next = 0.5 * (R_next + np.linalg.inv(R_next).T)
    return R_next


def step_dynamics(state: UavState, commands: np.ndarray, dt: float,
                  model: PlantModel, external_force=None,
                  external_torque=None) -> UavState:
    """Advance the plant by one fast tick (semi-implicit Euler).

    Motor thrusts lag first-order toward the commanded values, the battery
    is decremented by trapezoidal power, and ground contact clamps the state
    (no contact dynamics). Flags on the returned state report battery-empty
    and ground-contact conditions.
    """
    if not 0.0 < dt <= MAX_STEP_DT:
        raise ValueError(f"dt must be in (0, {MAX_STEP_DT}] s")
    u = np.asarray(commands, dtype=float)
    if u.shape != (model.rotor_count,):
        raise ValueError(f"expected {model.rotor_count} motor commands")

    # commands are normalized [0, 1] (the mixer guarantees its output range)
    thrust_cmd = u * u * model.motor_max
    if model.motor_tau > 0.0:
        alpha = dt / model.motor_tau
        if alpha > 1.0:
            alpha = 1.0
        thrusts = state.motor_thrusts + alpha * (thrust_cmd - state.motor_thrusts)
    else:
        thrusts = thrust_cmd

    battery_empty = state.battery_empty
    if battery_empty or state.battery_energy <= 0.0:
        thrusts = np.zeros_like(thrusts)
        battery_empty = True

    # translation
    total_thrust = float(thrusts.sum())
    R = state.rotation
    k = total_thrust / model.mass
    ax = R[0, 2] * k
    ay = R[1, 2] * k
    az = R[2, 2] * k - GRAVITY
    v = state.velocity
    if model.drag_coeff != 0.0:
        kd = model.drag_coeff / model.mass
        ax -= kd * v[0]
        ay -= kd * v[1]
        az -= kd * v[2]
    if external_force is not None:
        fe = np.asarray(external_force)
        ax += fe[0] / model.mass
        ay += fe[1] / model.mass
        az += fe[2] / model.mass
    vx = v[0] + ax * dt
    vy = v[1] + ay * dt
    vz = v[2] + az * dt
    p = state.position
    px = p[0] + vx * dt
    py = p[1] + vy * dt
    pz = p[2] + vz * dt

    # rotation
    torque = model.torque_rows @ thrusts
    if external_torque is not None:
        torque = torque + np.asarray(external_torque)
    om = state.body_rates
    ox, oy, oz = om[0], om[1], om[2]
    ix, iy, iz = model._ixx, model._iyy, model._izz
    tx = torque[0] - (oy * iz * oz - oz * iy * oy)
    ty = torque[1] - (oz * ix * ox - ox * iz * oz)
    tz = torque[2] - (ox * iy * oy - oy * ix * ox)
    nx = ox + tx / ix * dt
    ny = oy + ty / iy * dt
    nz = oz + tz / iz * dt
    rotation = _advance_rotation(R, nx, ny, nz, dt,
                                 refresh=state.steps % _REFRESH_EVERY == 0)

    # energy: trapezoid over the step keeps the bookkeeping oracle exact
    p0 = state.power if state.power is not None else power_draw(state.motor_thrusts, model)
    p1 = model._power_scale * total_thrust ** 1.5 + model._avionics
    energy = state.battery_energy - 0.5 * (p0 + p1) * dt / 3600.0
    if energy <= 0.0:
        energy = 0.0
        battery_empty = True

    ground_contact = False
    if pz < 0.0 and vz < 0.0:
        pz = 0.0
        vx = vy = vz = 0.0
        nx = ny = nz = 0.0
        ground_contact = True

    return UavState(
        position=np.array((px, py, pz)),
        velocity=np.array((vx, vy, vz)),
        rotation=rotation,
        body_rates=np.array((nx, ny, nz)),
        motor_thrusts=thrusts,
        battery_energy=energy,
        time=state.time + dt,
        acceleration=np.array((ax, ay, az)),
        power=p1,
        battery_empty=battery_empty,
        ground_contact=ground_contact,
        steps=state.steps + 1,
    )


def imu_measure(state: UavState, noise: ImuNoise = ImuNoise(),
                rng: np.random.Generator | None = None) -> ImuSample:
    """Body-frame accelerometer + gyro sample; deterministic given the rng."""
    a = state.accel()
    ax, ay = a[0], a[1]
    az = a[2] + GRAVITY
    R = state.rotation
    specific = np.array((R[0, 0] * ax + R[1, 0] * ay + R[2, 0] * az,
                         R[0, 1] * ax + R[1, 1] * ay + R[2, 1] * az,
                         R[0, 2] * ax + R[1, 2] * ay + R[2, 2] * az))
    rates = state.body_rates
    if noise.accel_bias is not None:
        specific = specific + noise.accel_bias
    if noise.gyro_bias is not None:
        rates = rates + noise.gyro_bias
    if rng is not None and (noise.accel_sigma > 0.0 or noise.gyro_sigma > 0.0):
        specific = specific + noise.accel_sigma * rng.standard_normal(3)
        rates = rates + noise.gyro_sigma * rng.standard_normal(3)
    return ImuSample(specific_force=specific, body_rates=rates, timestamp=state.time)


def battery_telemetry(state: UavState, model: PlantModel) -> BatteryTelemetry:
    """Voltage from an affine state-of-charge curve; current from power."""
    soc = min(max(state.battery_energy / model.capacity, 0.0), 1.0)
    cells = model.profile.battery_cells
    voltage = cells * (CELL_V_EMPTY + (CELL_V_FULL - CELL_V_EMPTY) * soc)
    power = state.power if state.power is not None else power_draw(state.motor_thrusts, model)
    current = power / voltage
    if state.battery_empty:
        current = 0.0
    return BatteryTelemetry(voltage=voltage, current=current,
                            energy_remaining=state.battery_energy)


def free_state(model: PlantModel, position, velocity, rotation, body_rates,
               motor_thrusts=None, battery_energy=None) -> UavState:
    """Convenience constructor used by tests and the harness."""
    thrusts = (np.zeros(model.rotor_count) if motor_thrusts is None
               else np.array(motor_thrusts, dtype=float))
    return UavState(
        position=np.array(position, dtype=float),
        velocity=np.array(velocity, dtype=float),
        rotation=np.array(rotation, dtype=float),
        body_rates=np.array(body_rates, dtype=float),
        motor_thrusts=thrusts,
        battery_energy=model.capacity if battery_energy is None else battery_energy,
        acceleration=np.zeros(3),
        power=power_draw(thrusts, model),
    )
