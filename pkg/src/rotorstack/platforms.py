"""Airframe profiles: the six built-in platforms plus user-defined ones.

A profile carries the physical/energy parameters of one airframe; derived
quantities (hover thrust, calibrated power model, inertia estimate) are
computed on demand. Inertias and thrust coefficients are documented
estimates — the source data gives none — and every field can be overridden
from a profile document.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ParseError, UnknownPlatform, ValidationError

GRAVITY = 9.81  # m/s^2, shared system-wide

# Coaxial propulsion needs ~20% more power for the same thrust; folded into
# the power-model calibration so hover draw still matches the rated endurance.
COAXIAL_POWER_FACTOR = 1.2

_QUAD_ANGLES = (-45.0, 45.0, 135.0, -135.0)  # FR, FL, RL, RR, degrees from +x
_QUAD_SPINS = (1, -1, 1, -1)  # +1 = CCW viewed from above
_OCTA_FLAT_ANGLES = tuple(22.5 + 45.0 * k for k in range(8))
_OCTA_FLAT_SPINS = (1, -1, 1, -1, 1, -1, 1, -1)


@dataclass(frozen=True)
class ControllerGains:
    """Feedback gains exposed through the profile document."""

    position_kp: float = 4.0
    velocity_kp: float = 4.5
    attitude_kp: float = 6.0
    # feedback velocity command is capped this far inside the envelope so
    # catch-up transients cannot push the vehicle past v_max
    velocity_margin: float = 0.1
    # lead on the jerk feedforward compensating actuation lag (motor thrust
    # lag plus attitude-loop response)
    accel_lead_tau: float = 0.25
    # smooth design: weaker gains plus saturation/filtering
    smooth_position_kp: float = 2.0
    smooth_velocity_kp: float = 2.5
    smooth_error_sat_m: float = 2.0
    smooth_vel_error_sat: float = 3.0
    smooth_rate_cap: float = 1.5  # rad/s on commanded body rates
    smooth_lpf_cutoff: float = 15.0  # rad/s low-pass on commanded rates
    # attitude-rate loop (per-axis gains are these scales times inertia)
    rate_kp_scale: float = 40.0
    rate_ki_scale: float = 200.0


@dataclass(frozen=True)
class PlatformProfile:
    """One airframe: rated figures plus mixer geometry and model knobs."""

    name: str
    flight_time: float  # min
    mass: float  # kg
    dimension: float  # mm, main diagonal without propellers
    propeller_size: float  # in
    battery_capacity: float  # Wh
    rotor_count: int
    coaxial: bool = False
    v_max: float = 5.0  # m/s
    a_max: float = 2.0  # m/s^2
    j_max: float = 40.0  # m/s^3 tracker jerk bound
    heading_rate_max: float = 1.5  # rad/s
    rate_limit: float = 6.0  # rad/s per body axis
    arm_length: float | None = None  # m, default dimension/2
    torque_coeff: float = 0.016  # m, rotor drag torque per unit thrust
    per_motor_max_thrust: float | None = None  # N, default 2*m*g/rotor_count
    battery_cells: int = 4
    avionics_power: float = 15.0  # W constant draw estimate
    motor_tau: float = 0.05  # s first-order thrust lag
    drag_coeff: float = 0.0  # N*s/m linear aero drag (hook, off by default)
    controller: ControllerGains = field(default_factory=ControllerGains)

    @property
    def flight_time_h(self) -> float:
        return self.flight_time / 60.0

    @property
    def arm_length_m(self) -> float:
        return self.arm_length if self.arm_length is not None else self.dimension / 2000.0

    @property
    def motor_max_thrust(self) -> float:
        if self.per_motor_max_thrust is not None:
            return self.per_motor_max_thrust
        return 2.0 * self.mass * GRAVITY / self.rotor_count

    @property
    def max_collective_thrust(self) -> float:
        return self.motor_max_thrust * self.rotor_count


@dataclass(frozen=True)
class DerivedParams:
    """Quantities computed from a profile; kept separate so overrides stay visible."""

    hover_thrust: float  # N
    hover_power: float  # W, battery_capacity / flight_time
    per_motor_max_thrust: float  # N
    inertia: np.ndarray  # kg*m^2, diagonal 3x3
    rotor_power_coeff: float  # W / N^1.5, calibrated so hover draw = hover_power
    coax_factor: float
    avionics_power: float
    motor_positions: np.ndarray  # (n, 2) body-frame x,y in m
    spin_directions: np.ndarray  # (n,) +1 CCW / -1 CW


def derive_params(profile: PlatformProfile) -> DerivedParams:
    """Derive hover/energy/inertia/mixer quantities from a profile.

    The power model is P = c * (sum thrust)^1.5 * k_coax + P_avionics with c
    calibrated so that hover draw equals battery_capacity / flight_time; the
    coaxial factor models the ~20% penalty of stacked rotors, so the same
    rated hover power corresponds to a less efficient rotor constant.
    """
    hover_thrust = profile.mass * GRAVITY
    hover_power = profile.battery_capacity / profile.flight_time_h
    coax = COAXIAL_POWER_FACTOR if profile.coaxial else 1.0
    rotor_power = max(hover_power - profile.avionics_power, 0.0)
    coeff = rotor_power / (hover_thrust ** 1.5 * coax)

    # flat-cylinder inertia estimate: radius = half the main diagonal
    radius = profile.dimension / 2000.0
    i_xy = profile.mass * radius * radius / 4.0
    inertia = np.diag([i_xy, i_xy, 2.0 * i_xy])

    angles, spins = _motor_layout(profile)
    positions = np.column_stack([
        profile.arm_length_m * np.cos(np.radians(angles)),
        profile.arm_length_m * np.sin(np.radians(angles)),
    ])
    return DerivedParams(
        hover_thrust=hover_thrust,
        hover_power=hover_power,
        per_motor_max_thrust=profile.motor_max_thrust,
        inertia=inertia,
        rotor_power_coeff=coeff,
        coax_factor=coax,
        avionics_power=profile.avionics_power,
        motor_positions=positions,
        spin_directions=np.array(spins, dtype=float),
    )


def _motor_layout(profile: PlatformProfile) -> tuple[tuple[float, ...], tuple[int, ...]]:
    if profile.rotor_count == 4:
        return _QUAD_ANGLES, _QUAD_SPINS
    if profile.coaxial:
        # four arms, top rotor CCW and bottom rotor CW on each
        angles = tuple(a for a in _QUAD_ANGLES for _ in (0, 1))
        spins = (1, -1) * 4
        return angles, spins
    return _OCTA_FLAT_ANGLES, _OCTA_FLAT_SPINS


def validate_profile(profile: PlatformProfile) -> list[str]:
    """Return a list of violated invariants (empty when the profile is valid)."""
    violations = []
    if not profile.mass > 0:
        violations.append("mass must be positive")
    if not profile.battery_capacity > 0:
        violations.append("battery_capacity must be positive")
    if not profile.flight_time > 0:
        violations.append("flight_time must be positive")
    if profile.rotor_count not in (4, 8):
        violations.append("rotor_count must be 4 or 8")
    if profile.coaxial and profile.rotor_count != 8:
        violations.append("coaxial requires 8 rotors")
    if profile.mass > 0 and profile.max_collective_thrust < 1.5 * profile.mass * GRAVITY:
        violations.append("flyability margin: max collective thrust below 1.5*m*g")
    for name in ("v_max", "a_max", "j_max", "heading_rate_max", "rate_limit"):
        if not getattr(profile, name) > 0:
            violations.append(f"{name} must be positive")
    if profile.dimension <= 0:
        violations.append("dimension must be positive")
    if not math.isfinite(profile.mass):
        violations.append("mass must be finite")
    return violations


def builtin_profiles() -> dict[str, PlatformProfile]:
    """The six stock airframes, smallest to largest."""
    return {
        p.name: p
        for p in (
            PlatformProfile(
                name="X500", flight_time=25.0, mass=2.5, dimension=500.0,
                propeller_size=13.0, battery_capacity=199.8, rotor_count=4,
                v_max=8.0, battery_cells=4,
            ),
            PlatformProfile(
                name="F450", flight_time=15.0, mass=1.7, dimension=450.0,
                propeller_size=9.4, battery_capacity=99.9, rotor_count=4,
                battery_cells=4,
            ),
            PlatformProfile(
                name="T650", flight_time=20.0, mass=3.5, dimension=650.0,
                propeller_size=15.0, battery_capacity=177.6, rotor_count=4,
                battery_cells=6,
            ),
            PlatformProfile(
                name="NAKI", flight_time=7.0, mass=5.5, dimension=570.0,
                propeller_size=12.0, battery_capacity=355.2, rotor_count=8,
                coaxial=True, battery_cells=6,
            ),
            PlatformProfile(
                name="Eagle.One", flight_time=10.0, mass=10.0, dimension=1250.0,
                propeller_size=18.0, battery_capacity=355.2, rotor_count=8,
                battery_cells=12,
            ),
            PlatformProfile(
                name="DOFEC", flight_time=10.0, mass=7.0, dimension=657.0,
                propeller_size=15.0, battery_capacity=355.2, rotor_count=8,
                coaxial=True, battery_cells=12,
            ),
        )
    }


_PROFILE_KEYS = {
    "flight_time", "mass", "dimension", "propeller_size", "battery_capacity",
    "rotor_count", "coaxial", "v_max", "a_max", "j_max", "heading_rate_max",
    "rate_limit", "arm_length", "torque_coeff", "per_motor_max_thrust",
    "battery_cells", "avionics_power", "motor_tau", "drag_coeff",
}
_REQUIRED_KEYS = {
    "flight_time", "mass", "dimension", "propeller_size",
    "battery_capacity", "rotor_count",
}
_GAIN_KEYS = {f.name for f in ControllerGains.__dataclass_fields__.values()}


class ProfileRegistry:
    """Immutable-after-load map of platform name to profile."""

    def __init__(self, profiles: dict[str, PlatformProfile]):
        self._profiles = dict(profiles)

    def __len__(self) -> int:
        return len(self._profiles)

    def __contains__(self, name: str) -> bool:
        return name in self._profiles

    def names(self) -> list[str]:
        return list(self._profiles)

    def get(self, name: str) -> PlatformProfile:
        try:
            return self._profiles[name]
        except KeyError:
            raise UnknownPlatform(name) from None


def load_profiles(source: str = "") -> ProfileRegistry:
    """Build a registry from a YAML document layered over the six built-ins.

    The document maps platform names to key/value overrides; user entries may
    redefine a built-in by name. An empty document yields just the built-ins.
    """
    profiles = builtin_profiles()
    if source.strip():
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            if mark is not None:
                raise ParseError(str(exc.problem or exc), mark.line + 1, mark.column + 1) from exc
            raise ParseError(str(exc)) from exc
        if doc is not None:
            if not isinstance(doc, dict):
                raise ParseError("profile document must be a mapping")
            entries = doc.get("platforms", doc)
            if not isinstance(entries, dict):
                raise ValidationError("platforms", "must map names to profiles")
            for name, fields in entries.items():
                profiles[str(name)] = _profile_from_mapping(str(name), fields, profiles.get(str(name)))
    for name, profile in profiles.items():
        violations = validate_profile(profile)
        if violations:
            field_name = violations[0].split(" ", 1)[0].rstrip(":")
            raise ValidationError(field_name, f"{name}: {'; '.join(violations)}")
    return ProfileRegistry(profiles)


def _profile_from_mapping(name, fields, base: PlatformProfile | None) -> PlatformProfile:
    if not isinstance(fields, dict):
        raise ValidationError(name, "profile entry must be a mapping")
    unknown = set(fields) - _PROFILE_KEYS - {"controller", "name"}
    if unknown:
        raise ValidationError(sorted(unknown)[0], f"unknown key in profile {name}")
    if base is None:
        missing = _REQUIRED_KEYS - set(fields)
        if missing:
            raise ValidationError(sorted(missing)[0], f"missing required key in profile {name}")
    values = {k: v for k, v in fields.items() if k in _PROFILE_KEYS}
    gains_doc = fields.get("controller")
    if gains_doc is not None:
        if not isinstance(gains_doc, dict):
            raise ValidationError("controller", f"must be a mapping in profile {name}")
        bad = set(gains_doc) - _GAIN_KEYS
        if bad:
            raise ValidationError(sorted(bad)[0], f"unknown controller gain in profile {name}")
        base_gains = base.controller if base is not None else ControllerGains()
        values["controller"] = replace(base_gains, **gains_doc)
    if base is not None:
        return replace(base, **values)
    return PlatformProfile(name=name, **values)


def serialize_profiles(registry: ProfileRegistry) -> str:
    """Dump every profile to the document format accepted by load_profiles."""
    out: dict[str, dict] = {}
    for name in registry.names():
        p = registry.get(name)
        entry = {k: getattr(p, k) for k in sorted(_PROFILE_KEYS)}
        entry = {k: v for k, v in entry.items() if v is not None}
        entry["controller"] = {
            k: getattr(p.controller, k) for k in sorted(_GAIN_KEYS)
        }
        out[name] = entry
    return yaml.safe_dump({"platforms": out}, sort_keys=True)
