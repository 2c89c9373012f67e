"""Receding-horizon reference tracker.

Converts sparse position+heading references (or sampled trajectories) into a
smooth, feasible full-state reference stream at 100 Hz. Each axis is a
triple-integrator virtual model; a small box-constrained LQ problem is
solved per tick (ADMM with a cached factorization) against a braking-law
reference rollout, and the first jerk command advances the virtual model
through hard velocity/acceleration clamps, so emitted samples can never
violate the configured envelope. Heading follows a separate rate-limited
first-order profile: heading dynamics are kinematically decoupled for a
multirotor, so folding them into the QP buys nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .control import FullStateReference
from .errors import (EmptyTrajectory, InvalidReference, NonUniformSampling,
                     SolverFailure)

DEFAULT_HORIZON = 40
DEFAULT_MPC_DT = 0.05  # s
DEFAULT_TRAJECTORY_DT = 0.2  # s conventional sampling of trajectory files


@dataclass(frozen=True)
class DesiredReference:
    """Sparse goal: position plus heading, supplied on demand."""

    position: np.ndarray  # m (3,)
    heading: float  # rad


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    position: np.ndarray
    heading: float


@dataclass(frozen=True)
class TrackerConstraints:
    """Envelope the emitted reference stream must respect."""

    v_max: float = 8.0
    a_max: float = 2.0
    j_max: float = 40.0
    heading_rate_max: float = 1.5

    def effective_j_max(self) -> float:
        return self.j_max if self.j_max and math.isfinite(self.j_max) else 1e6


@dataclass(frozen=True)
class MpcWeights:
    position: float = 8.0
    velocity: float = 2.0
    acceleration: float = 0.05
    control: float = 0.02


def _chain_matrices(order: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    F = np.eye(order)
    for i in range(order):
        for j in range(i + 1, order):
            F[i, j] = dt ** (j - i) / math.factorial(j - i)
    G = np.array([dt ** (order - i) / math.factorial(order - i) for i in range(order)])
    return F, G


class _CondensedQp:
    """Condensed box-constrained LQ problem over an integrator chain.

    Precomputes the prediction matrices, the ADMM factorization, and the
    constraint stacking for a fixed (order, horizon, dt, weights, rho).
    """

    def __init__(self, order: int, horizon: int, dt: float,
                 weights: MpcWeights, rho: float = 4.0):
        self.order = order
        self.horizon = horizon
        self.dt = dt
        self.weights = weights
        self.rho = rho

        F, G = _chain_matrices(order, dt)
        n, N = order, horizon
        # X = Sx @ x0 + Su @ U, stacked over the horizon
        Sx = np.empty((N * n, n))
        Su = np.zeros((N * n, N))
        Fp = np.eye(n)
        for k in range(N):
            Fp = Fp @ F
            Sx[k * n:(k + 1) * n] = Fp
        col = np.empty((N, n))
        Fp = np.eye(n)
        for k in range(N):
            col[k] = Fp @ G
            Fp = Fp @ F
        for j in range(N):
            for k in range(j, N):
                Su[k * n + 0:(k + 1) * n, j] = col[k - j]
        self.Sx = Sx
        self.Su = Su

        w = np.zeros(n)
        w[0] = weights.position
        w[1] = weights.velocity
        if n > 2:
            w[2] = weights.acceleration
        W = np.tile(w, N)
        self.W = W
        H = (Su.T * W) @ Su + weights.control * np.eye(N)
        self.H = H

        # constrained rows: every state derivative 1..n-1 plus the control
        rows = [np.eye(N)]
        sel = []
        for deriv in range(1, n):
            idx = np.arange(N) * n + deriv
            rows.append(Su[idx])
            sel.append(idx)
        self.Gc = np.vstack(rows)
        self.sel = sel
        self.GcT = self.Gc.T.copy()
        self._GtG = self.GcT @ self.Gc
        self._m_inv_cache: dict[float, np.ndarray] = {}

    def _m_inv(self, rho: float) -> np.ndarray:
        M = self._m_inv_cache.get(rho)
        if M is None:
            M = np.linalg.inv(self.H + rho * self._GtG)
            self._m_inv_cache[rho] = M
        return M

    def bounds(self, x0: np.ndarray, constraints: TrackerConstraints):
        """Stacked (lo, hi) for the constraint rows given the initial state."""
        n, N = self.order, self.horizon
        ncols = x0.shape[1] if x0.ndim > 1 else 1
        u_lim = constraints.effective_j_max() if n == 3 else constraints.a_max
        shape = (self.Gc.shape[0], ncols) if ncols > 1 else (self.Gc.shape[0],)
        lo = np.empty(shape)
        hi = np.empty(shape)
        lo[:N] = -u_lim
        hi[:N] = u_lim
        offset = N
        free = self.Sx @ x0
        for deriv in range(1, n):
            lim = constraints.v_max if deriv == 1 else constraints.a_max
            idx = np.arange(N) * n + deriv
            lo[offset:offset + N] = -lim - free[idx]
            hi[offset:offset + N] = lim - free[idx]
            offset += N
        return lo, hi

    def gradient(self, x0: np.ndarray, ref: np.ndarray) -> np.ndarray:
        """Linear cost term for tracking `ref` (N*order stacked targets)."""
        free = self.Sx @ x0
        return self.Su.T @ (self.W[:, None] * (free - ref) if ref.ndim > 1
                            else self.W * (free - ref))

    def solve(self, x0, ref, constraints, warm=None, max_iter=60, tol=1e-6):
        """ADMM iterations; returns (U, residual, z, w, rho) for warm starting.

        The residual is the max of the primal (constraint split) and dual
        (z movement) residuals, relative to the iterate scale; primal alone
        reads zero whenever the iterate is strictly feasible, long before
        optimality. rho is rebalanced on a power-of-two ladder when the two
        residuals drift apart (factorizations are cached per rung).
        """
        g = self.gradient(x0, ref)
        lo, hi = self.bounds(x0, constraints)
        shape = g.shape
        if warm is None:
            z = np.zeros((self.Gc.shape[0],) + shape[1:])
            w = np.zeros_like(z)
            rho = self.rho
        else:
            z, w, rho = warm[0].copy(), warm[1].copy(), warm[2]
        U = np.zeros(shape)
        residual = np.inf
        for it in range(max_iter):
            U = self._m_inv(rho) @ (rho * (self.GcT @ (z - w)) - g)
            y = self.Gc @ U
            z_new = np.clip(y + w, lo, hi)
            w += y - z_new
            r_prim = float(np.max(np.abs(y - z_new)))
            r_dual = rho * float(np.max(np.abs(self.GcT @ (z_new - z))))
            z = z_new
            scale = max(1.0, float(np.max(np.abs(y))))
            residual = max(r_prim, r_dual) / scale
            if residual < tol:
                break
            if it % 10 == 9:
                if r_prim > 10.0 * r_dual and rho < 1e5:
                    rho *= 2.0
                    w *= 0.5
                elif r_dual > 10.0 * r_prim and rho > 1e-4:
                    rho *= 0.5
                    w *= 2.0
        return U, residual, z, w, rho


@dataclass(frozen=True)
class MpcProblem:
    """One per-axis receding-horizon instance for `mpc_solve`."""

    initial: np.ndarray  # chain state, e.g. (p, v) or (p, v, a)
    goal: float | np.ndarray  # target position (scalar) or per-step targets
    constraints: TrackerConstraints
    horizon: int
    dt: float = DEFAULT_MPC_DT
    weights: MpcWeights = MpcWeights()


_QP_CACHE: dict[tuple, _CondensedQp] = {}


def _cached_qp(order, horizon, dt, weights) -> _CondensedQp:
    key = (order, horizon, dt, weights)
    qp = _QP_CACHE.get(key)
    if qp is None:
        qp = _CondensedQp(order, horizon, dt, weights)
        _QP_CACHE[key] = qp
    return qp


def mpc_solve(problem: MpcProblem, max_iter: int = 20000, tol: float = 1e-9) -> np.ndarray:
    """Solve one axis' constrained LQ tracking problem; returns the control sequence.

    Deterministic for fixed inputs. Raises SolverFailure when the ADMM
    residual is still above tol after max_iter sweeps.
    """
    x0 = np.asarray(problem.initial, dtype=float)
    order = x0.shape[0]
    if order not in (2, 3):
        raise ValueError("integrator chain order must be 2 or 3")
    qp = _cached_qp(order, problem.horizon, problem.dt, problem.weights)
    ref = _stack_reference(problem.goal, order, problem.horizon)
    U, residual, _, _, _ = qp.solve(x0, ref, problem.constraints,
                                    max_iter=max_iter, tol=tol)
    if residual > max(tol * 100.0, 1e-6):
        raise SolverFailure(f"residual {residual:.3g} after {max_iter} iterations")
    u_lim = (problem.constraints.effective_j_max() if order == 3
             else problem.constraints.a_max)
    return np.clip(U, -u_lim, u_lim)


def _stack_reference(goal, order: int, horizon: int) -> np.ndarray:
    ref = np.zeros(horizon * order)
    goal = np.asarray(goal, dtype=float)
    if goal.ndim == 0:
        ref[0::order] = float(goal)
    elif goal.ndim == 1:
        if goal.shape[0] != horizon:
            raise ValueError("per-step goal must have horizon entries")
        ref[0::order] = goal
    else:
        if goal.shape != (horizon, order):
            raise ValueError("goal must be scalar, (N,), or (N, order)")
        ref = goal.reshape(-1)
    return ref


def _clip_norm(vec: np.ndarray, limit: float) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm > limit and norm > 0.0:
        return vec * (limit / norm)
    return vec


class Tracker:
    """Virtual-model reference tracker stepped by the scheduler at 100 Hz."""

    POINT = "point"
    TRAJECTORY = "trajectory"

    def __init__(self, constraints: TrackerConstraints,
                 horizon: int = DEFAULT_HORIZON, mpc_dt: float = DEFAULT_MPC_DT,
                 weights: MpcWeights = MpcWeights(), solver_iters: int = 25):
        self.constraints = constraints
        self.horizon = horizon
        self.mpc_dt = mpc_dt
        self.weights = weights
        self.solver_iters = solver_iters
        self._qp = _cached_qp(3, horizon, mpc_dt, weights)
        self._warm = None
        self._plan = None  # (N, 3) jerk plan for the solver-failure fallback
        self._plan_age = 0
        self.solver_fallbacks = 0
        self.initialized = False
        self.mode = Tracker.POINT
        self.position = np.zeros(3)
        self.velocity = np.zeros(3)
        self.accel = np.zeros(3)
        self.heading = 0.0
        self.heading_rate = 0.0
        self.goal = np.zeros(3)
        self.goal_heading = 0.0
        self.time = 0.0
        self._traj_t = None
        self._traj_pos = None
        self._traj_heading = None
        self._traj_clock = 0.0

    # -- mission-facing setters (never called inside a tick) ------------------

    def initialize(self, position, velocity, heading: float) -> None:
        """Place the virtual model on the estimate; acceleration zeroed.

        Run once at startup and again whenever the active localization
        source changes, which keeps the commanded stream continuous with
        respect to the new estimate.
        """
        self.position = np.array(position, dtype=float)
        self.velocity = _clip_norm(np.array(velocity, dtype=float), self.constraints.v_max)
        self.accel = np.zeros(3)
        self.heading = geometry.wrap_angle(float(heading))
        self.heading_rate = 0.0
        if not self.initialized:
            self.goal = self.position.copy()
            self.goal_heading = self.heading
        self.initialized = True
        self._warm = None
        self._plan = None

    def set_reference(self, ref: DesiredReference) -> None:
        pos = np.asarray(ref.position, dtype=float)
        if not (np.all(np.isfinite(pos)) and math.isfinite(ref.heading)):
            raise InvalidReference("reference contains non-finite values")
        self.mode = Tracker.POINT
        self.goal = pos.copy()
        self.goal_heading = geometry.wrap_angle(float(ref.heading))

    def set_trajectory(self, samples: list[TrajectorySample]) -> None:
        if len(samples) < 2:
            raise EmptyTrajectory("need at least 2 samples")
        t = np.array([s.t for s in samples], dtype=float)
        gaps = np.diff(t)
        if np.any(gaps <= 0.0) or np.max(np.abs(gaps - gaps[0])) > 1e-9 * max(1.0, gaps[0]):
            raise NonUniformSampling("trajectory samples must be uniformly spaced")
        pos = np.array([s.position for s in samples], dtype=float)
        if not np.all(np.isfinite(pos)):
            raise InvalidReference("trajectory contains non-finite positions")
        self.mode = Tracker.TRAJECTORY
        self._traj_t = t - t[0]
        self._traj_pos = pos
        self._traj_heading = np.unwrap(np.array([s.heading for s in samples], dtype=float))
        self._traj_clock = 0.0
        self.goal = pos[-1].copy()
        self.goal_heading = geometry.wrap_angle(float(self._traj_heading[-1]))

    # -- per-tick stepping -----------------------------------------------------

    def step(self, dt: float = 0.01) -> FullStateReference:
        """Advance one tick and emit the next full-state reference."""
        if not self.initialized:
            raise RuntimeError("tracker not initialized")
        if self.mode == Tracker.POINT and self._settled():
            # already holding the goal: skip the solve, emit the fixed point
            self.position = self.goal.copy()
            self.velocity = np.zeros(3)
            self.accel = np.zeros(3)
            self.time += dt
            heading_rate = self._heading_step(dt)
            return FullStateReference(
                position=self.position.copy(), velocity=np.zeros(3),
                acceleration=np.zeros(3), jerk=np.zeros(3),
                heading=self.heading, heading_rate=heading_rate,
                timestamp=self.time)
        refs = self._horizon_reference(dt)
        x0 = np.vstack([self.position, self.velocity, self.accel])  # (3, axes)
        try:
            U, residual, z, w, rho = self._qp.solve(
                x0, refs, self.constraints, warm=self._warm,
                max_iter=self.solver_iters, tol=1e-7)
            if not np.all(np.isfinite(U)) or residual > 1e-2:
                raise SolverFailure(f"residual {residual:.3g}")
            self._warm = (z, w, rho)
            self._plan = U
            self._plan_age = 0
            jerk = U[0].copy()
        except SolverFailure:
            self.solver_fallbacks += 1
            self._plan_age += 1
            if self._plan is not None:
                shift = min(self._plan_age * dt / self.mpc_dt, self.horizon - 1)
                jerk = self._plan[int(shift)].copy()
            else:
                jerk = np.zeros(3)

        c = self.constraints
        jerk = np.clip(jerk, -c.effective_j_max(), c.effective_j_max())
        jerk = _clip_norm(jerk, c.effective_j_max())
        accel = np.clip(self.accel + jerk * dt, -c.a_max, c.a_max)
        accel = _clip_norm(accel, c.a_max)
        velocity = np.clip(self.velocity + accel * dt, -c.v_max, c.v_max)
        velocity = _clip_norm(velocity, c.v_max)
        position = self.position + velocity * dt

        self.position = position
        self.velocity = velocity
        self.accel = accel
        self.time += dt
        if self.mode == Tracker.TRAJECTORY:
            self._traj_clock += dt

        heading_rate = self._heading_step(dt)

        return FullStateReference(
            position=position.copy(),
            velocity=velocity.copy(),
            acceleration=accel.copy(),
            jerk=jerk,
            heading=self.heading,
            heading_rate=heading_rate,
            timestamp=self.time,
        )

    def _settled(self) -> bool:
        gap = self.goal - self.position
        return (float(gap @ gap) < 1e-20
                and float(self.velocity @ self.velocity) < 1e-20
                and float(self.accel @ self.accel) < 1e-20)

    def _heading_step(self, dt: float) -> float:
        goal = self._heading_goal()
        err = geometry.wrap_angle(goal - self.heading)
        cap = self.constraints.heading_rate_max
        rate = max(-cap, min(cap, 4.0 * err))
        self.heading = geometry.wrap_angle(self.heading + rate * dt)
        self.heading_rate = rate
        return rate

    def _heading_goal(self) -> float:
        if self.mode == Tracker.TRAJECTORY:
            return float(np.interp(self._traj_clock, self._traj_t, self._traj_heading))
        return self.goal_heading

    def _horizon_reference(self, dt: float) -> np.ndarray:
        """(N*3, axes) stacked per-step (p, v, a) targets for the QP."""
        N = self.horizon
        if self.mode == Tracker.TRAJECTORY:
            times = self._traj_clock + dt + self.mpc_dt * np.arange(N)
            pos = np.column_stack([
                np.interp(times, self._traj_t, self._traj_pos[:, ax])
                for ax in range(3)
            ])
            ahead = np.column_stack([
                np.interp(times + self.mpc_dt, self._traj_t, self._traj_pos[:, ax])
                for ax in range(3)
            ])
            vel = (ahead - pos) / self.mpc_dt
            speed = np.linalg.norm(vel, axis=1)
            over = speed > self.constraints.v_max
            if np.any(over):
                vel[over] *= (self.constraints.v_max / speed[over])[:, None]
        else:
            pos, vel = self._braking_rollout()
        refs = np.zeros((N * 3, 3))
        refs[0::3] = pos
        refs[1::3] = vel
        return refs

    # braking distances are padded by a few percent so the smoothed QP
    # solution can follow the stopping profile without touching a_max
    BRAKING_MARGIN = 0.97

    def _braking_rollout(self) -> tuple[np.ndarray, np.ndarray]:
        """Near-time-optimal point-to-point profile on the horizon grid.

        Velocity follows the discrete-exact stopping law toward the goal so
        the QP tracks a profile that brakes exactly onto the target instead
        of discovering the braking point through its short horizon.
        """
        c = self.constraints
        dt = self.mpc_dt
        N = self.horizon
        a = c.a_max * Tracker.BRAKING_MARGIN
        gx, gy, gz = self.goal
        px, py, pz = self.position
        vx, vy, vz = (float(v) for v in self.velocity)
        pos = np.empty((N, 3))
        vel = np.empty((N, 3))
        half = 0.5 * a * dt
        for k in range(N):
            ex = gx - px
            ey = gy - py
            ez = gz - pz
            dist = math.sqrt(ex * ex + ey * ey + ez * ez)
            if dist > 1e-12:
                speed = min(c.v_max, -half + math.sqrt(half * half + 2.0 * a * dist))
                sx = ex / dist * speed
                sy = ey / dist * speed
                sz = ez / dist * speed
            else:
                sx = sy = sz = 0.0
            # one-step velocity correction, clipped to the acceleration ball
            ax_ = (sx - vx) / dt
            ay_ = (sy - vy) / dt
            az_ = (sz - vz) / dt
            an = math.sqrt(ax_ * ax_ + ay_ * ay_ + az_ * az_)
            if an > a:
                scale = a / an
                ax_ *= scale
                ay_ *= scale
                az_ *= scale
            vx += ax_ * dt
            vy += ay_ * dt
            vz += az_ * dt
            vn = math.sqrt(vx * vx + vy * vy + vz * vz)
            if vn > c.v_max:
                scale = c.v_max / vn
                vx *= scale
                vy *= scale
                vz *= scale
            px += vx * dt
            py += vy * dt
            pz += vz * dt
            pos[k, 0] = px
            pos[k, 1] = py
            pos[k, 2] = pz
            vel[k, 0] = vx
            vel[k, 1] = vy
            vel[k, 2] = vz
        return pos, vel


def load_trajectory(text: str) -> list[TrajectorySample]:
    """Parse the `t,x,y,z,heading` trajectory file format."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "t,x,y,z,heading":
        raise InvalidReference("trajectory file must start with header t,x,y,z,heading")
    samples = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise InvalidReference(f"bad trajectory row: {ln!r}")
        vals = [float(p) for p in parts]
        samples.append(TrajectorySample(
            t=vals[0], position=np.array(vals[1:4]), heading=vals[4]))
    return samples
