"""Rotation handling and the heading convention shared by the whole stack.

Orientation lives on SO(3) as body-to-world rotation matrices. The single
free rotational degree of freedom of a multirotor is expressed as the
heading: the direction of the body x-axis projected onto the world
horizontal plane. There are deliberately no Euler-angle accessors.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateHeading, NotNearRotation

TWO_PI = 2.0 * math.pi

# Frobenius tolerance for the SO(3) membership checks used in tests/asserts.
ORTHONORMALITY_TOL = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]. Idempotent."""
    wrapped = angle % TWO_PI
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ u == cross(v, u)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of `hat` for a skew-symmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula: rotation matrix for the rotation vector phi."""
    phi = np.asarray(phi, dtype=float)
    angle_sq = float(phi @ phi)
    K = hat(phi)
    if angle_sq < 1e-16:
        # second-order Taylor keeps orthogonality error at machine precision
        return np.eye(3) + K + 0.5 * (K @ K)
    angle = math.sqrt(angle_sq)
    return (
        np.eye(3)
        + (math.sin(angle) / angle) * K
        + ((1.0 - math.cos(angle)) / angle_sq) * (K @ K)
    )


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R (inverse of so3_exp). Handles angles near 0 and pi."""
    trace = min(3.0, max(-1.0, float(np.trace(R))))
    angle = math.acos(0.5 * (trace - 1.0))
    if angle < 1e-7:
        return vee(R - R.T) * 0.5
    if angle > math.pi - 1e-5:
        # near pi the antisymmetric part vanishes; recover the axis from the
        # dominant diagonal of (R + I) / 2 instead
        S = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(S), 0.0))
        k = int(np.argmax(axis))
        if axis[k] < 1e-12:
            raise ValueError("cannot recover rotation axis")
        col = S[:, k] / axis[k]
        col = col / np.linalg.norm(col)
        # fix the sign using the off-diagonal antisymmetric residue
        w = vee(R - R.T)
        if float(w @ col) < 0.0:
            col = -col
        return col * angle
    return vee(R - R.T) * (0.5 * angle / math.sin(angle))


def orthonormalize(M: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (polar sense, via SVD).

    Raises NotNearRotation if M is farther than 0.1 (Frobenius) from the
    projection, which guards against feeding garbage through the pipeline.
    """
    M = np.asarray(M, dtype=float)
    U, _, Vt = np.linalg.svd(M)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    R = U @ D @ Vt
    if np.linalg.norm(M - R) > 0.1:
        raise NotNearRotation(f"matrix is {np.linalg.norm(M - R):.3g} from SO(3)")
    return R


def _polar_refresh(R: np.ndarray) -> np.ndarray:
    # one Newton step toward the polar factor; exact enough for matrices that
    # are already orthonormal to ~1e-6 and far cheaper than an SVD
    return 0.5 * (R + np.linalg.inv(R).T)


def heading_of(R: np.ndarray) -> float:
    """Heading: atan2 of the world y/x components of the body x-axis.

    Raises DegenerateHeading when the body x-axis projects onto the world
    horizontal plane with norm < 1e-9 (90 degree tilt).
    """
    bx = R[0, 0]
    by = R[1, 0]
    if math.hypot(bx, by) < 1e-9:
        raise DegenerateHeading("body x-axis is vertical")
    return math.atan2(by, bx)


def rotation_from_heading(heading: float) -> np.ndarray:
    """Pure rotation about world z with the given heading."""
    c = math.cos(heading)
    s = math.sin(heading)
    return np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])


def integrate_rotation(R: np.ndarray, omega, dt: float) -> np.ndarray:
    """Advance R by the exponential map of body rates over dt, re-orthonormalized."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    omega = np.asarray(omega, dtype=float)
    R_next = R @ so3_exp(omega * dt)
    return _polar_refresh(R_next)


def rotation_error(R: np.ndarray, R_des: np.ndarray) -> np.ndarray:
    """Body-frame rotation vector taking R to R_des (SO(3) log map)."""
    return so3_log(R.T @ R_des)


def is_rotation(R: np.ndarray, tol: float = ORTHONORMALITY_TOL) -> bool:
    """True when R satisfies the SO(3) invariants within tol."""
    return (
        np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )
