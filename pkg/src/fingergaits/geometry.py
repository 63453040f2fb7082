"""Small rotation / vector helpers shared across the package.

Quaternions are scalar-first ``(w, x, y, z)`` and kept unit-norm by the
callers that integrate them.  Everything here is plain numpy on small
fixed-size arrays.
"""

from __future__ import annotations

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def normalized(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / float(np.linalg.norm(q))


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(np.asarray(q, dtype=float))
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_rotvec(r: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) -> unit quaternion."""
    r = np.asarray(r, dtype=float)
    angle = float(np.linalg.norm(r))
    if angle < 1e-12:
        # first-order expansion keeps integration smooth near zero
        q = np.array([1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]])
        return quat_normalize(q)
    axis = r / angle
    h = 0.5 * angle
    return np.array([np.cos(h), *(np.sin(h) * axis)])


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Logarithmic map with shortest-arc disambiguation (w kept >= 0)."""
    q = quat_normalize(np.asarray(q, dtype=float))
    if q[0] < 0.0:
        q = -q
    w = min(1.0, float(q[0]))
    vec = q[1:]
    s = float(np.linalg.norm(vec))
    if s < 1e-12:
        return 2.0 * vec  # small-angle limit
    angle = 2.0 * np.arctan2(s, w)
    return (angle / s) * vec


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    return quat_from_rotvec(normalized(np.asarray(axis, dtype=float)) * float(angle))


def quat_integrate(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation by a world-frame angular velocity over dt."""
    dq = quat_from_rotvec(np.asarray(omega, dtype=float) * float(dt))
    return quat_normalize(quat_mul(dq, q))


def rotmat_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula for a unit axis."""
    a = normalized(np.asarray(axis, dtype=float))
    k = skew(a)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal pair (t1, t2) completing unit n to a frame.

    The seed axis switches away from near-parallel configurations so the
    result is well-conditioned for every input direction.
    """
    n = normalized(np.asarray(n, dtype=float))
    seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(seed, n)
    t1 = t1 / np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2
