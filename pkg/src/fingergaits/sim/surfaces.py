"""Object surface models: signed distance, closest surface point, inertia.

All queries are in the object's body frame.  Closest-point results return
(foot point on the surface, outward unit normal at the foot point) and are
exact for the cylinder and rounded box; the ellipsoid solves the standard
one-parameter Lagrange root by safeguarded Newton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Surface:
    kind = "abstract"

    def signed_distance(self, p: np.ndarray) -> float:
        raise NotImplementedError

    def closest_point(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def inertia_body(self, mass: float) -> np.ndarray:
        raise NotImplementedError

    def bounding_radius(self) -> float:
        raise NotImplementedError


@dataclass
class Cylinder(Surface):
    radius: float
    half_height: float
    kind = "cylinder"

    def signed_distance(self, p: np.ndarray) -> float:
        rho = float(np.hypot(p[0], p[1]))
        qx = rho - self.radius
        qy = abs(float(p[2])) - self.half_height
        outside = float(np.hypot(max(qx, 0.0), max(qy, 0.0)))
        return outside + min(max(qx, qy), 0.0)

    def closest_point(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y, z = float(p[0]), float(p[1]), float(p[2])
        rho = np.hypot(x, y)
        radial = np.array([x / rho, y / rho, 0.0]) if rho > 1e-12 else np.array([1.0, 0.0, 0.0])
        dr = rho - self.radius
        dz = abs(z) - self.half_height
        if dr >= 0.0 and dz <= 0.0:  # beside the wall
            foot = np.array([self.radius * radial[0], self.radius * radial[1], z])
            return foot, radial
        if dr <= 0.0 and dz >= 0.0:  # above/below a cap
            zc = np.sign(z) * self.half_height if z != 0.0 else self.half_height
            return np.array([x, y, zc]), np.array([0.0, 0.0, np.sign(z) if z != 0.0 else 1.0])
        if dr > 0.0 and dz > 0.0:  # outside an edge circle
            foot = np.array(
                [self.radius * radial[0], self.radius * radial[1], np.sign(z) * self.half_height]
            )
            n = p - foot
            return foot, n / np.linalg.norm(n)
        # inside: exit through the nearest face
        if -dr <= -dz:
            foot = np.array([self.radius * radial[0], self.radius * radial[1], z])
            return foot, radial
        zc = np.sign(z) * self.half_height if z != 0.0 else self.half_height
        return np.array([x, y, zc]), np.array([0.0, 0.0, np.sign(z) if z != 0.0 else 1.0])

    def inertia_body(self, mass: float) -> np.ndarray:
        r2 = self.radius**2
        h2 = (2.0 * self.half_height) ** 2
        return np.diag([mass * (3 * r2 + h2) / 12.0, mass * (3 * r2 + h2) / 12.0, 0.5 * mass * r2])

    def bounding_radius(self) -> float:
        return float(np.hypot(self.radius, self.half_height))


@dataclass
class Ellipsoid(Surface):
    semi_axes: np.ndarray  # (3,)
    kind = "ellipsoid"

    def __post_init__(self) -> None:
        self.semi_axes = np.asarray(self.semi_axes, dtype=float)
        if np.any(self.semi_axes <= 0):
            raise ValueError("semi-axes must be positive")

    def _foot(self, p: np.ndarray) -> np.ndarray:
        a2 = self.semi_axes**2
        p = np.asarray(p, dtype=float)
        # root of g(t) = sum (a_i p_i / (t + a_i^2))^2 - 1, strictly decreasing
        # and convex on (-min a^2, inf); Newton from the left converges
        # monotonically, with bisection as a safety net.
        t_lo = -float(a2.min()) * (1.0 - 1e-12) + 1e-18
        t_hi = float(self.semi_axes.max() * np.linalg.norm(p) + a2.max())

        def g(t: float) -> float:
            return float(np.sum((self.semi_axes * p / (t + a2)) ** 2)) - 1.0

        t = max(t_lo, 0.0) if g(max(t_lo, 0.0)) > 0.0 else t_lo
        if g(t) < 0.0:  # center-ish point: fall back to pure bisection
            lo, hi = t_lo, t_hi
            for _ in range(120):
                t = 0.5 * (lo + hi)
                if g(t) > 0.0:
                    lo = t
                else:
                    hi = t
        else:
            for _ in range(100):
                val = float(np.sum((self.semi_axes * p / (t + a2)) ** 2)) - 1.0
                dval = float(-2.0 * np.sum(a2 * p * p / (t + a2) ** 3))
                if abs(dval) < 1e-300:
                    break
                t_new = t - val / dval
                if not np.isfinite(t_new) or t_new <= t_lo:
                    t_new = 0.5 * (t + t_hi)
                if abs(t_new - t) <= 1e-16 * (1.0 + abs(t)):
                    t = t_new
                    break
                t = t_new
        return a2 * p / (t + a2)

    def closest_point(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        if np.linalg.norm(p) < 1e-15:
            k = int(np.argmin(self.semi_axes))
            foot = np.zeros(3)
            foot[k] = self.semi_axes[k]
            n = np.zeros(3)
            n[k] = 1.0
            return foot, n
        foot = self._foot(p)
        n = foot / self.semi_axes**2
        return foot, n / np.linalg.norm(n)

    def signed_distance(self, p: np.ndarray) -> float:
        p = np.asarray(p, dtype=float)
        foot, _ = self.closest_point(p)
        d = float(np.linalg.norm(p - foot))
        inside = float(np.sum((p / self.semi_axes) ** 2)) < 1.0
        return -d if inside else d

    def inertia_body(self, mass: float) -> np.ndarray:
        a, b, c = self.semi_axes
        return np.diag(
            [mass * (b * b + c * c) / 5.0, mass * (a * a + c * c) / 5.0, mass * (a * a + b * b) / 5.0]
        )

    def bounding_radius(self) -> float:
        return float(self.semi_axes.max())


@dataclass
class RoundedBox(Surface):
    half_extents: np.ndarray  # (3,) outer half extents, edges rounded inside
    edge_radius: float = 0.002
    kind = "box"

    def __post_init__(self) -> None:
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= self.edge_radius):
            raise ValueError("edge radius must be smaller than every half extent")

    @property
    def _core(self) -> np.ndarray:
        return self.half_extents - self.edge_radius

    def signed_distance(self, p: np.ndarray) -> float:
        q = np.abs(np.asarray(p, dtype=float)) - self._core
        outside = float(np.linalg.norm(np.maximum(q, 0.0)))
        return outside + min(float(q.max()), 0.0) - self.edge_radius

    def closest_point(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        core = self._core
        clamped = np.clip(p, -core, core)
        d = p - clamped
        dist = float(np.linalg.norm(d))
        if dist > 1e-12:  # outside the core: offset by the rounding radius
            n = d / dist
            return clamped + self.edge_radius * n, n
        # inside the core: exit through the nearest slab face
        gaps = core - np.abs(p)
        k = int(np.argmin(gaps))
        n = np.zeros(3)
        n[k] = 1.0 if p[k] >= 0.0 else -1.0
        foot = p.copy()
        foot[k] = n[k] * self.half_extents[k]
        return foot, n

    def inertia_body(self, mass: float) -> np.ndarray:
        ex, ey, ez = 2.0 * self.half_extents
        return np.diag(
            [mass * (ey**2 + ez**2) / 12.0, mass * (ex**2 + ez**2) / 12.0, mass * (ex**2 + ey**2) / 12.0]
        )

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.half_extents))


def make_surface(kind: str, **params) -> Surface:
    """Factory used by scenario configs."""
    if kind == "cylinder":
        return Cylinder(radius=float(params["radius"]), half_height=float(params["half_height"]))
    if kind == "ellipsoid":
        return Ellipsoid(semi_axes=np.asarray(params["semi_axes"], dtype=float))
    if kind == "box":
        return RoundedBox(
            half_extents=np.asarray(params["half_extents"], dtype=float),
            edge_radius=float(params.get("edge_radius", 0.002)),
        )
    raise ValueError(f"unknown surface kind: {kind!r}")
