"""State estimation: a bank of per-source filters plus an IMU attitude filter.

Each localization source owns an independent linear Kalman filter over
position/velocity (per-axis, constant-acceleration prediction driven by the
controller's acceleration feedforward). Switching sources selects which
filter's output drives control — redundancy, not joint fusion — and the
tracker re-initializes on switch so commands stay continuous. Attitude comes
from a complementary filter on the IMU and is shared by all sources.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import (DuplicateSource, NoActiveSource, StaleMeasurement,
                     UnhealthySource, UnknownSource)

STALE_CUTOFF = 1.0  # s
LOST_PERIODS = 3.0
OUTLIER_WINDOW = 50
OUTLIER_RATE_DEGRADED = 0.2
OUTLIER_GATE = 3.0  # normalized innovation gate, per axis
# absolute gate floor: innovations below 3*0.25 m are never rejected, so the
# gate only trips on gross faults, not on prediction-model mismatch
OUTLIER_GATE_FLOOR = 0.25  # m

HEALTHY = "healthy"
DEGRADED = "degraded"
LOST = "lost"

SOURCE_KINDS = ("gnss", "slam_like", "rangefinder_height")


@dataclass(frozen=True)
class LocalizationSource:
    """One provider of absolute pose corrections."""

    id: str
    kind: str  # gnss | slam_like | rangefinder_height
    rate: float  # Hz
    sigma: float  # m
    latency: float = 0.0  # s
    dropout_windows: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.rate <= 0.0 or self.sigma < 0.0:
            raise ValueError("rate must be positive and sigma non-negative")

    def in_dropout(self, t: float) -> bool:
        return any(t0 <= t < t1 for t0, t1 in self.dropout_windows)


@dataclass(frozen=True)
class Measurement:
    source_id: str
    position: np.ndarray  # (3,) full fix, or z in position[2] for height-only
    timestamp: float
    height_only: bool = False


@dataclass(frozen=True)
class StateEstimate:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    body_rates: np.ndarray
    active_source: str
    covariance_diag: np.ndarray  # (6,) pos xyz then vel xyz
    timestamp: float


# initial uncertainty: pose roughly known at arming (few meters), so honest
# cold-start innovations pass the gate
P0_POS = 25.0  # m^2
P0_VEL = 4.0  # (m/s)^2

_TIME_EPS = 1e-9  # slop for accumulated float time in the due-queue check


class _SourceFilter:
    """Per-axis position/velocity Kalman filter for one source.

    Axes are decoupled, so the covariance is carried as the three unique
    entries per axis rather than full matrices.
    """

    def __init__(self, source: LocalizationSource, position, velocity,
                 q_process: float):
        self.source = source
        self.pos = np.array(position, dtype=float)
        self.vel = np.array(velocity, dtype=float)
        self.p00 = np.full(3, P0_POS)
        self.p01 = np.zeros(3)
        self.p11 = np.full(3, P0_VEL)
        self.q = q_process
        self.outliers: deque = deque(maxlen=OUTLIER_WINDOW)

    def predict(self, accel: np.ndarray, dt: float) -> None:
        self.pos += dt * self.vel + (0.5 * dt * dt) * accel
        self.vel += dt * accel
        q = self.q
        p00, p01, p11 = self.p00, self.p01, self.p11
        self.p00 = p00 + (2.0 * dt) * p01 + (dt * dt) * p11 + q * dt ** 3 / 3.0
        self.p01 = p01 + dt * p11 + 0.5 * q * dt * dt
        self.p11 = p11 + q * dt

    def correct(self, meas: Measurement) -> bool:
        """Apply one position fix; returns False when gated as an outlier."""
        axes = (2,) if meas.height_only else (0, 1, 2)
        r = self.source.sigma ** 2
        floor = OUTLIER_GATE_FLOOR * OUTLIER_GATE_FLOOR
        outlier = False
        gains = []
        for ax in axes:
            innov = meas.position[ax] - self.pos[ax]
            s = max(self.p00[ax] + r, 1e-18)
            if innov * innov > OUTLIER_GATE * OUTLIER_GATE * (s + floor):
                outlier = True
                break
            gains.append((ax, innov, s))
        self.outliers.append(outlier)
        if outlier:
            return False
        for ax, innov, s in gains:
            k0 = self.p00[ax] / s
            k1 = self.p01[ax] / s
            self.pos[ax] += k0 * innov
            self.vel[ax] += k1 * innov
            p00, p01, p11 = self.p00[ax], self.p01[ax], self.p11[ax]
            self.p00[ax] = (1.0 - k0) * p00
            self.p01[ax] = (1.0 - k0) * p01
            self.p11[ax] = p11 - k1 * p01
        return True

    def covariance_diag(self) -> np.ndarray:
        return np.concatenate([self.p00, self.p11])

    def trace(self) -> float:
        return float(np.sum(self.p00) + np.sum(self.p11))

    def outlier_rate(self) -> float:
        if len(self.outliers) < 10:
            return 0.0
        return sum(self.outliers) / len(self.outliers)


@dataclass
class _SourceBook:
    filter: _SourceFilter
    last_arrival: float
    stale_count: int = 0
    queue: list = field(default_factory=list)
    seq: int = 0


class EstimatorBank:
    """All per-source filters plus the shared attitude filter."""

    def __init__(self, position, velocity, rotation,
                 q_process: float = 1.0, tilt_gain: float = 0.2):
        self.time = 0.0
        self._initial_position = np.array(position, dtype=float)
        self._initial_velocity = np.array(velocity, dtype=float)
        self.rotation = np.array(rotation, dtype=float)
        self.body_rates = np.zeros(3)
        self.q_process = q_process
        self.tilt_gain = tilt_gain
        self._books: dict[str, _SourceBook] = {}
        self.active: str | None = None

    # -- registry ---------------------------------------------------------

    def register_source(self, source: LocalizationSource) -> None:
        if source.id in self._books:
            raise DuplicateSource(source.id)
        if self.active is not None:
            base = self._books[self.active].filter
            position, velocity = base.pos.copy(), base.vel.copy()
        else:
            position, velocity = self._initial_position, self._initial_velocity
        filt = _SourceFilter(source, position, velocity, self.q_process)
        self._books[source.id] = _SourceBook(filter=filt, last_arrival=self.time)
        if self.active is None:
            self.active = source.id

    def sources(self) -> list[str]:
        return list(self._books)

    def _book(self, source_id: str) -> _SourceBook:
        try:
            return self._books[source_id]
        except KeyError:
            raise UnknownSource(source_id) from None

    # -- data path ---------------------------------------------------------

    def ingest(self, meas: Measurement) -> None:
        book = self._book(meas.source_id)
        if self.time - meas.timestamp > STALE_CUTOFF:
            book.stale_count += 1
            raise StaleMeasurement(
                f"{meas.source_id}: measurement {self.time - meas.timestamp:.2f} s old")
        book.last_arrival = self.time
        due = meas.timestamp + book.filter.source.latency
        heapq.heappush(book.queue, (due, book.seq, meas))
        book.seq += 1

    def step(self, desired_accel: np.ndarray, imu, dt: float) -> StateEstimate:
        """Predict every filter, apply due corrections, return the active output."""
        if self.active is None:
            raise NoActiveSource("no localization source registered")
        self.time += dt
        self._attitude_update(desired_accel, imu, dt)
        for book in self._books.values():
            book.filter.predict(desired_accel, dt)
            while book.queue and book.queue[0][0] <= self.time + _TIME_EPS:
                _, _, meas = heapq.heappop(book.queue)
                book.filter.correct(meas)
        return self._estimate()

    def _attitude_update(self, desired_accel: np.ndarray, imu, dt: float) -> None:
        self.rotation = geometry.integrate_rotation(self.rotation, imu.body_rates, dt)
        self.body_rates = np.asarray(imu.body_rates, dtype=float)
        f = np.asarray(imu.specific_force, dtype=float)
        norm = float(np.linalg.norm(f))
        # the accelerometer sees thrust, not gravity, under acceleration; the
        # feedforward tells us which world direction that thrust should have
        ex = desired_accel[0]
        ey = desired_accel[1]
        ez = desired_accel[2] + 9.81
        en = math.sqrt(ex * ex + ey * ey + ez * ez)
        if norm > 1e-6 and en > 1e-6 and abs(norm - en) < 0.2 * 9.81:
            mx, my, mz = f[0] / norm, f[1] / norm, f[2] / norm
            R = self.rotation
            qx = (R[0, 0] * ex + R[1, 0] * ey + R[2, 0] * ez) / en
            qy = (R[0, 1] * ex + R[1, 1] * ey + R[2, 1] * ez) / en
            qz = (R[0, 2] * ex + R[1, 2] * ey + R[2, 2] * ez) / en
            # small-angle attitude error (body frame) is measured x predicted
            correction = np.array((my * qz - mz * qy,
                                   mz * qx - mx * qz,
                                   mx * qy - my * qx))
            self.rotation = self.rotation @ geometry.so3_exp(
                self.tilt_gain * dt * correction)

    def _estimate(self) -> StateEstimate:
        book = self._books[self.active]
        f = book.filter
        return StateEstimate(
            position=f.pos.copy(),
            velocity=f.vel.copy(),
            rotation=self.rotation.copy(),
            body_rates=self.body_rates.copy(),
            active_source=self.active,
            covariance_diag=f.covariance_diag(),
            timestamp=self.time,
        )

    def estimate(self) -> StateEstimate:
        """Current active estimate without stepping."""
        if self.active is None:
            raise NoActiveSource("no localization source registered")
        return self._estimate()

    # -- switching and health ------------------------------------------------

    def source_health(self, source_id: str) -> str:
        book = self._book(source_id)
        src = book.filter.source
        if self.time - book.last_arrival > LOST_PERIODS / src.rate:
            return LOST
        if book.filter.outlier_rate() > OUTLIER_RATE_DEGRADED:
            return DEGRADED
        return HEALTHY

    def switch_source(self, source_id: str) -> StateEstimate:
        """Make the named source's filter drive control; returns its estimate.

        Callers must re-initialize the tracker on the returned estimate to
        keep the commanded stream continuous (the initialization-only edge).
        """
        book = self._book(source_id)
        health = self.source_health(source_id)
        if health != HEALTHY:
            raise UnhealthySource(f"{source_id} is {health}")
        self.active = source_id
        return self._estimate()

    def stale_count(self, source_id: str) -> int:
        return self._book(source_id).stale_count
