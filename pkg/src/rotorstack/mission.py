"""Mission layer and the fixed-step co-simulation scheduler.

The scheduler runs the plant and embedded autopilot at 1 kHz and the
tracker/controller/estimator pipeline at 100 Hz (exactly 10 fast ticks per
slow tick). Scripted scenario events fire on slow ticks; the whole run is
deterministic for a fixed seed. One run is strictly single threaded;
independent runs share no mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import geometry
from .autopilot import Autopilot, AttitudeRateCommand
from .control import AGGRESSIVE, SMOOTH, ReferenceController
from .errors import (IllegalTransition, ParseError, SimulationDiverged,
                     ValidationError)
from .estimation import (HEALTHY, SOURCE_KINDS, EstimatorBank,
                         LocalizationSource, Measurement)
from .flightlog import FlightLog, N_FLOAT
from .plant import (ImuNoise, ImuSample, PlantModel, battery_telemetry,
                    imu_measure, step_dynamics)
from .platforms import ProfileRegistry, load_profiles
from .tracker import (DesiredReference, Tracker, TrackerConstraints,
                      TrajectorySample, load_trajectory)

FAST_DT = 0.001
SLOW_DT = 0.01
FAST_PER_SLOW = 10

TAKEOFF_TOLERANCE = 0.1  # m
DEFAULT_TAKEOFF_ALTITUDE = 2.0  # m
LANDING_RATE = 0.5  # m/s descent during normal landing
EMERGENCY_RATE = 1.0  # m/s descent during emergency
BATTERY_EMERGENCY_FRACTION = 0.01
COVARIANCE_EMERGENCY = 1e4  # m^2-ish trace: the estimate is no longer usable

GROUNDED = "grounded"
TAKEOFF = "takeoff"
FLYING = "flying"
LANDING = "landing"
LANDED = "landed"
EMERGENCY = "emergency"

_LEGAL = {
    GROUNDED: {TAKEOFF, EMERGENCY},
    TAKEOFF: {FLYING, EMERGENCY},
    FLYING: {LANDING, EMERGENCY},
    LANDING: {LANDED, EMERGENCY},
    LANDED: {EMERGENCY},
    EMERGENCY: {LANDED},
}

EVENT_ACTIONS = ("goto", "trajectory", "switch_source", "switch_controller",
                 "takeoff", "land")


@dataclass
class SourceConfig:
    """Harness-side definition of a simulated localization source."""

    id: str
    kind: str
    rate: float
    sigma: float
    latency: float = 0.0
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dropout_windows: tuple[tuple[float, float], ...] = ()

    def to_source(self) -> LocalizationSource:
        return LocalizationSource(id=self.id, kind=self.kind, rate=self.rate,
                                  sigma=self.sigma, latency=self.latency,
                                  dropout_windows=self.dropout_windows)


@dataclass
class ScenarioEvent:
    t: float
    action: str
    params: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    platform: str
    duration: float
    seed: int = 0
    controller: str = AGGRESSIVE
    initial_position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 2.0]))
    initial_heading: float = 0.0
    initial_battery_wh: float | None = None
    air_start: bool = True
    sources: list[SourceConfig] = field(default_factory=list)
    events: list[ScenarioEvent] = field(default_factory=list)
    imu_accel_sigma: float = 0.0
    imu_gyro_sigma: float = 0.0
    auto_failover: bool = False
    constraints: dict = field(default_factory=dict)  # v_max/a_max/j_max/heading_rate_max overrides


@dataclass
class MissionState:
    """Phase machine of the mission layer."""

    phase: str = GROUNDED
    hold_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    target_altitude: float = DEFAULT_TAKEOFF_ALTITUDE
    descent_z: float = 0.0
    heading: float = 0.0


def _transition(state: MissionState, phase: str) -> None:
    if phase == state.phase:
        return
    if phase not in _LEGAL[state.phase]:
        raise IllegalTransition(f"{state.phase} -> {phase}")
    state.phase = phase


def mission_step(state: MissionState, est, dt: float = SLOW_DT,
                 events: tuple[ScenarioEvent, ...] = (),
                 ground_contact: bool = False,
                 battery_fraction: float = 1.0):
    """Advance the phase machine; returns (state, directive).

    The directive is a DesiredReference to forward to the tracker, a
    ("trajectory", samples) tuple, or None. Scripted goto/trajectory events
    are forwarded only while flying; takeoff and landing generate their own
    references. Battery exhaustion forces the emergency phase.
    """
    directive = None

    estimate_diverged = (not np.all(np.isfinite(est.position))
                         or float(np.sum(est.covariance_diag)) > COVARIANCE_EMERGENCY)
    if ((battery_fraction < BATTERY_EMERGENCY_FRACTION or estimate_diverged)
            and state.phase not in (LANDED, EMERGENCY)):
        _transition(state, EMERGENCY)
        if np.all(np.isfinite(est.position)):
            state.descent_z = float(est.position[2])
            state.hold_xy = est.position[:2].copy()

    for event in events:
        if event.action == "takeoff":
            if state.phase != GROUNDED:
                raise IllegalTransition(f"takeoff event while {state.phase}")
            _transition(state, TAKEOFF)
            alt = float(event.params.get("altitude", DEFAULT_TAKEOFF_ALTITUDE))
            state.hold_xy = est.position[:2].copy()
            state.target_altitude = float(est.position[2]) + alt
            state.heading = event.params.get("heading", state.heading)
        elif event.action == "land":
            if state.phase != FLYING:
                raise IllegalTransition(f"land event while {state.phase}")
            _transition(state, LANDING)
            state.hold_xy = est.position[:2].copy()
            state.descent_z = float(est.position[2])
        elif event.action == "goto":
            if state.phase != FLYING:
                raise IllegalTransition(f"goto event while {state.phase}")
            heading = float(event.params.get("heading", state.heading))
            state.heading = heading
            directive = DesiredReference(
                position=np.asarray(event.params["position"], dtype=float),
                heading=heading)
        elif event.action == "trajectory":
            if state.phase != FLYING:
                raise IllegalTransition(f"trajectory event while {state.phase}")
            directive = ("trajectory", event.params["samples"])

    if state.phase == TAKEOFF:
        directive = DesiredReference(
            position=np.array([state.hold_xy[0], state.hold_xy[1], state.target_altitude]),
            heading=state.heading)
        if abs(est.position[2] - state.target_altitude) < TAKEOFF_TOLERANCE:
            _transition(state, FLYING)
    elif state.phase in (LANDING, EMERGENCY):
        rate = LANDING_RATE if state.phase == LANDING else EMERGENCY_RATE
        state.descent_z -= rate * dt
        directive = DesiredReference(
            position=np.array([state.hold_xy[0], state.hold_xy[1], state.descent_z]),
            heading=state.heading)
        if ground_contact:
            _transition(state, LANDED)

    return state, directive


# -- scenario ingestion -------------------------------------------------------


def load_scenario(source, registry: ProfileRegistry | None = None) -> Scenario:
    """Parse and validate a scenario document (YAML text or mapping)."""
    if isinstance(source, str):
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            if mark is not None:
                raise ParseError(str(exc.problem or exc), mark.line + 1, mark.column + 1) from exc
            raise ParseError(str(exc)) from exc
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a mapping")
    registry = registry if registry is not None else load_profiles()

    platform = doc.get("platform")
    if not platform or platform not in registry:
        raise ValidationError("platform", f"unknown platform {platform!r}")
    duration = float(doc.get("duration", 0.0))
    if duration <= 0.0:
        raise ValidationError("duration", "must be positive")

    controller = doc.get("controller", AGGRESSIVE)
    if controller not in (AGGRESSIVE, SMOOTH):
        raise ValidationError("controller", f"unknown controller {controller!r}")

    initial = doc.get("initial", {}) or {}
    sc = Scenario(
        name=str(doc.get("name", "scenario")),
        platform=str(platform),
        duration=duration,
        seed=int(doc.get("seed", 0)),
        controller=controller,
        initial_position=np.asarray(initial.get("position", [0.0, 0.0, 2.0]), dtype=float),
        initial_heading=float(initial.get("heading", 0.0)),
        initial_battery_wh=initial.get("battery_wh"),
        air_start=bool(initial.get("air_start", True)),
        imu_accel_sigma=float(doc.get("imu_noise", {}).get("accel_sigma", 0.0)),
        imu_gyro_sigma=float(doc.get("imu_noise", {}).get("gyro_sigma", 0.0)),
        auto_failover=bool(doc.get("auto_failover", False)),
        constraints=dict(doc.get("constraints", {}) or {}),
    )
    if sc.initial_position.shape != (3,) or not np.all(np.isfinite(sc.initial_position)):
        raise ValidationError("initial.position", "must be a finite 3-vector")

    for key in sc.constraints:
        if key not in ("v_max", "a_max", "j_max", "heading_rate_max"):
            raise ValidationError(f"constraints.{key}", "unknown constraint")

    for i, entry in enumerate(doc.get("sources", []) or []):
        try:
            cfg = SourceConfig(
                id=str(entry["id"]),
                kind=str(entry["kind"]),
                rate=float(entry["rate"]),
                sigma=float(entry.get("sigma", 0.0)),
                latency=float(entry.get("latency", 0.0)),
                bias=np.asarray(entry.get("bias", [0.0, 0.0, 0.0]), dtype=float),
                dropout_windows=tuple(tuple(float(x) for x in w)
                                      for w in entry.get("dropout", [])),
            )
        except KeyError as exc:
            raise ValidationError(f"sources[{i}].{exc.args[0]}", "missing key") from None
        if cfg.kind not in SOURCE_KINDS:
            raise ValidationError(f"sources[{i}].kind", f"unknown kind {cfg.kind!r}")
        if any(s.id == cfg.id for s in sc.sources):
            raise ValidationError(f"sources[{i}].id", f"duplicate id {cfg.id!r}")
        sc.sources.append(cfg)
    if not sc.sources:
        raise ValidationError("sources", "at least one localization source required")

    for k, entry in enumerate(doc.get("events", []) or []):
        t = float(entry.get("t", -1.0))
        if not 0.0 <= t <= duration:
            raise ValidationError(f"events[{k}].t", "event time outside [0, duration]")
        action = entry.get("action")
        if action not in EVENT_ACTIONS:
            raise ValidationError(f"events[{k}].action", f"unknown action {action!r}")
        params = {key: val for key, val in entry.items() if key not in ("t", "action")}
        if action == "goto":
            if "position" not in params:
                raise ValidationError(f"events[{k}].position", "goto needs a position")
        if action == "switch_source":
            ids = {s.id for s in sc.sources}
            if params.get("source") not in ids:
                raise ValidationError(f"events[{k}].source", "unknown source id")
        if action == "trajectory":
            params["samples"] = _trajectory_samples(params, k)
        sc.events.append(ScenarioEvent(t=t, action=action, params=params))
    sc.events.sort(key=lambda e: e.t)
    return sc


def _trajectory_samples(params: dict, k: int) -> list[TrajectorySample]:
    if "samples" in params:
        rows = params["samples"]
        try:
            return [TrajectorySample(t=float(r[0]),
                                     position=np.asarray(r[1:4], dtype=float),
                                     heading=float(r[4])) for r in rows]
        except (TypeError, ValueError, IndexError):
            raise ValidationError(f"events[{k}].samples",
                                  "rows must be [t, x, y, z, heading]") from None
    if "file" in params:
        try:
            return load_trajectory(Path(params["file"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"events[{k}].file", str(exc)) from None
    if params.get("shape") == "figure_eight":
        return figure_eight_trajectory(
            size_x=float(params.get("size_x", 8.0)),
            size_y=float(params.get("size_y", 4.0)),
            period=float(params.get("period", 30.0)),
            altitude=float(params.get("altitude", 2.0)),
            cycles=float(params.get("cycles", 1.0)),
            dt=float(params.get("dt", 0.2)),
            center=params.get("center", (0.0, 0.0)),
        )
    raise ValidationError(f"events[{k}]", "trajectory needs samples or a shape")


def figure_eight_trajectory(size_x: float = 8.0, size_y: float = 4.0,
                            period: float = 30.0, altitude: float = 2.0,
                            cycles: float = 1.0, dt: float = 0.2,
                            center=(0.0, 0.0)) -> list[TrajectorySample]:
    """Lemniscate sampled uniformly; the stock feasible-speed test geometry."""
    n = int(round(cycles * period / dt)) + 1
    omega = 2.0 * math.pi / period
    samples = []
    for i in range(n):
        t = i * dt
        x = center[0] + size_x * math.sin(omega * t)
        y = center[1] + size_y * math.sin(2.0 * omega * t)
        vx = size_x * omega * math.cos(omega * t)
        vy = size_y * 2.0 * omega * math.cos(2.0 * omega * t)
        heading = math.atan2(vy, vx) if (vx, vy) != (0.0, 0.0) else 0.0
        samples.append(TrajectorySample(
            t=t, position=np.array([x, y, altitude]), heading=heading))
    return samples


# -- the co-simulation loop ----------------------------------------------------


class _MeasurementFeed:
    """Synthesizes measurements from truth for one source."""

    def __init__(self, cfg: SourceConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.next_t = 0.0
        self.period = 1.0 / cfg.rate

    def poll(self, now: float, truth_position: np.ndarray) -> list[Measurement]:
        out = []
        while self.next_t <= now + 1e-12:
            t = self.next_t
            self.next_t += self.period
            if any(t0 <= t < t1 for t0, t1 in self.cfg.dropout_windows):
                continue
            pos = truth_position + self.cfg.bias
            if self.cfg.sigma > 0.0:
                pos = pos + self.cfg.sigma * self.rng.standard_normal(3)
            out.append(Measurement(
                source_id=self.cfg.id, position=pos, timestamp=t,
                height_only=self.cfg.kind == "rangefinder_height"))
        return out


def run(scenario: Scenario, registry: ProfileRegistry | None = None) -> FlightLog:
    """Execute one scenario deterministically and return its flight log."""
    registry = registry if registry is not None else load_profiles()
    profile = registry.get(scenario.platform)
    if scenario.constraints:
        profile = replace(profile, **scenario.constraints)
    model = PlantModel(profile)

    if scenario.air_start:
        truth = model.hover_state(scenario.initial_position, scenario.initial_heading,
                                  scenario.initial_battery_wh)
    else:
        truth = model.rest_state(scenario.initial_position, scenario.initial_heading,
                                 scenario.initial_battery_wh)

    seeds = np.random.SeedSequence(scenario.seed).spawn(1 + len(scenario.sources))
    imu_rng = np.random.default_rng(seeds[0])
    noise = ImuNoise(accel_sigma=scenario.imu_accel_sigma,
                     gyro_sigma=scenario.imu_gyro_sigma)

    bank = EstimatorBank(truth.position, truth.velocity, truth.rotation)
    feeds = []
    for cfg, seed in zip(scenario.sources, seeds[1:]):
        bank.register_source(cfg.to_source())
        feeds.append(_MeasurementFeed(cfg, np.random.default_rng(seed)))

    constraints = TrackerConstraints(
        v_max=profile.v_max, a_max=profile.a_max,
        j_max=profile.j_max, heading_rate_max=profile.heading_rate_max)
    tracker = Tracker(constraints)
    controller = ReferenceController(model)
    controller.select(scenario.controller)
    autopilot = Autopilot(model)

    mission = MissionState(phase=FLYING if scenario.air_start else GROUNDED,
                           hold_xy=truth.position[:2].copy(),
                           heading=scenario.initial_heading)

    log = FlightLog(meta={
        "scenario": scenario.name,
        "platform": scenario.platform,
        "seed": scenario.seed,
        "controller": scenario.controller,
        "constraints": {
            "v_max": constraints.v_max, "a_max": constraints.a_max,
            "j_max": constraints.j_max,
            "heading_rate_max": constraints.heading_rate_max,
        },
    })

    events = list(scenario.events)
    event_ticks = [int(round(e.t / SLOW_DT)) for e in events]
    next_event = 0
    emergency_seen = False

    n_slow = int(round(scenario.duration / SLOW_DT))
    last_a_d = np.zeros(3)
    last_commands = np.zeros(model.rotor_count)
    # the estimator consumes the decimated IMU: averaging the fast samples
    # over each slow tick avoids aliasing the 1 kHz rate dynamics
    slow_imu = imu_measure(truth, noise, imu_rng)
    zero_cmd = AttitudeRateCommand.zero()
    est = bank.estimate()
    tracker.initialize(est.position, est.velocity,
                       geometry.heading_of(est.rotation))

    cap = model.capacity

    for tick in range(n_slow + 1):
        now = tick * SLOW_DT

        if not (np.all(np.isfinite(truth.position))
                and np.all(np.isfinite(truth.velocity))
                and np.all(np.isfinite(truth.rotation))):
            raise SimulationDiverged("plant state is non-finite", tick)

        fired: list[str] = []
        due: list[ScenarioEvent] = []
        while next_event < len(events) and event_ticks[next_event] <= tick:
            due.append(events[next_event])
            next_event += 1

        # estimator first: measurements generated from truth, IMU from the
        # last fast tick, prediction driven by the previous feedforward
        for feed in feeds:
            for meas in feed.poll(now, truth.position):
                bank.ingest(meas)
        est = bank.step(last_a_d, slow_imu, SLOW_DT)

        if scenario.auto_failover and bank.source_health(bank.active) != HEALTHY:
            for sid in bank.sources():
                if bank.source_health(sid) == HEALTHY:
                    new_est = bank.switch_source(sid)
                    tracker.initialize(new_est.position, new_est.velocity,
                                       geometry.heading_of(new_est.rotation))
                    est = new_est
                    fired.append(f"failover:{sid}")
                    break

        mission_events = []
        for event in due:
            if event.action == "switch_source":
                new_est = bank.switch_source(event.params["source"])
                tracker.initialize(new_est.position, new_est.velocity,
                                   geometry.heading_of(new_est.rotation))
                est = new_est
                fired.append(f"switch_source:{event.params['source']}")
            elif event.action == "switch_controller":
                controller.select(event.params["controller"])
                fired.append(f"switch_controller:{event.params['controller']}")
            else:
                mission_events.append(event)
                fired.append(event.action)

        mission, directive = mission_step(
            mission, est, SLOW_DT, tuple(mission_events),
            ground_contact=truth.ground_contact,
            battery_fraction=truth.battery_energy / cap)
        emergency_seen = emergency_seen or mission.phase == EMERGENCY
        if isinstance(directive, DesiredReference):
            tracker.set_reference(directive)
        elif directive is not None:
            tracker.set_trajectory(directive[1])

        ref = tracker.step(SLOW_DT)
        out = controller.update(est, ref, SLOW_DT)
        last_a_d = out.desired_accel
        powered = mission.phase in (TAKEOFF, FLYING, LANDING, EMERGENCY)
        cmd = out.cmd if powered else zero_cmd

        telem = battery_telemetry(truth, model)
        row = np.empty(N_FLOAT)
        row[0] = now
        row[1:4] = truth.position
        row[4:7] = truth.velocity
        row[7:16] = truth.rotation.reshape(-1)
        row[16:19] = truth.body_rates
        row[19:27] = 0.0
        row[19:19 + model.rotor_count] = last_commands
        row[27] = telem.voltage
        row[28] = telem.current
        row[29] = telem.energy_remaining
        row[30:33] = est.position
        row[33:36] = est.velocity
        row[36] = float(np.sum(est.covariance_diag))
        row[37:40] = ref.position
        row[40:43] = ref.velocity
        row[43:46] = ref.acceleration
        row[46:49] = ref.jerk
        row[49] = ref.heading
        row[50] = ref.heading_rate
        row[51] = cmd.thrust
        row[52:55] = cmd.body_rates
        log.append(row, (bank.active, controller.active, mission.phase,
                         ";".join(fired)))

        if tick == n_slow:
            break
        if mission.phase == LANDED and emergency_seen:
            break  # emergency landing complete: end the run early

        force_sum = np.zeros(3)
        rate_sum = np.zeros(3)
        for _ in range(FAST_PER_SLOW):
            fast_imu = imu_measure(truth, noise, imu_rng)
            force_sum += fast_imu.specific_force
            rate_sum += fast_imu.body_rates
            if powered:
                last_commands = autopilot.tick(fast_imu.body_rates, cmd, FAST_DT)
            else:
                last_commands = np.zeros(model.rotor_count)
            truth = step_dynamics(truth, last_commands, FAST_DT, model)
        slow_imu = ImuSample(specific_force=force_sum / FAST_PER_SLOW,
                             body_rates=rate_sum / FAST_PER_SLOW,
                             timestamp=truth.time)

    log.meta["fast_steps"] = truth.steps
    log.meta["slow_steps"] = len(log) - 1
    return log
