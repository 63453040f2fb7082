"""Deterministic initial grasp posing.

Given a world with an object pose, place each fingertip on the object
surface at a requested azimuth/height (object frame) with a small
pre-indentation, solving the 3-joint inverse kinematics by damped
Gauss-Newton from a fixed seed grid.
"""

from __future__ import annotations

import numpy as np

from ..geometry import quat_to_rotmat
from ..kinematics import FingerGeometry, finger_jacobian, forward_kinematics
from .world import World


class PosingError(RuntimeError):
    """Raised when a fingertip cannot reach its assigned surface point."""


def surface_point_at(world: World, azimuth: float, height: float) -> tuple[np.ndarray, np.ndarray]:
    """Surface point and outward normal (object frame) where the horizontal
    ray at `azimuth` through (0, 0, height) exits the object."""
    direction = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    base = np.array([0.0, 0.0, height])
    if world.surface.signed_distance(base) >= 0.0:
        raise PosingError(f"axis point at height {height:.4f} lies outside the object")
    lo, hi = 0.0, 2.0 * world.surface.bounding_radius()
    if world.surface.signed_distance(base + hi * direction) <= 0.0:
        raise PosingError("could not bracket the object surface along the ray")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if world.surface.signed_distance(base + mid * direction) < 0.0:
            lo = mid
        else:
            hi = mid
    point = base + 0.5 * (lo + hi) * direction
    # probe from just outside so the closest-point normal is well defined
    probe = point + 1e-6 * direction
    foot, normal = world.surface.closest_point(probe)
    return foot, normal


def solve_tip_ik(finger: FingerGeometry, target: np.ndarray, seed: np.ndarray,
                 iterations: int = 200, tol: float = 1e-9) -> np.ndarray | None:
    """Damped Gauss-Newton on tip position; None if it fails to converge."""
    q = np.clip(np.asarray(seed, dtype=float), finger.lower, finger.upper)
    lam = 1e-6
    for _ in range(iterations):
        frames = forward_kinematics(finger, q)
        err = target - frames.origins[-1]
        err_norm = float(np.linalg.norm(err))
        if err_norm < tol:
            return q
        jac = finger_jacobian(finger, q, frames=frames)
        jjt = jac @ jac.T + lam * np.eye(3)
        dq = jac.T @ np.linalg.solve(jjt, err)
        step = float(np.linalg.norm(dq))
        if step > 0.5:
            dq *= 0.5 / step
        # backtrack so the residual never grows; stops limit cycling at
        # the workspace boundary where full Gauss-Newton steps overshoot
        for _ in range(6):
            trial = np.clip(q + dq, finger.lower, finger.upper)
            fr = forward_kinematics(finger, trial)
            if float(np.linalg.norm(target - fr.origins[-1])) <= err_norm:
                break
            dq *= 0.5
        q = trial
    frames = forward_kinematics(finger, q)
    if float(np.linalg.norm(target - frames.origins[-1])) < 1e-7:
        return q
    return None


_SEED_Q1 = (0.0, 0.3, -0.3, 0.6, -0.6)
_SEED_Q2 = (0.5, 0.8, 0.3, 1.1)
_SEED_Q3 = (1.0, 0.6, 1.4, 1.8)


def pose_grasp(world: World, height: float = 0.0,
               azimuth_offsets: np.ndarray | None = None,
               pre_indentation: float = 2e-4,
               limit_margin: float = 0.02) -> None:
    """Place every fingertip on the object with a small indentation.

    Each finger is assigned the surface point at its mount azimuth plus the
    per-finger offset, at the given height (object frame).
    """
    n = len(world.hand.fingers)
    offsets = np.zeros(n) if azimuth_offsets is None else np.asarray(azimuth_offsets, dtype=float)
    if offsets.shape != (n,):
        raise PosingError(f"need {n} azimuth offsets, got shape {offsets.shape}")
    rot = quat_to_rotmat(world.quat)
    q_all = np.zeros((n, 3))
    for i, finger in enumerate(world.hand.fingers):
        mount = finger.base_position
        azimuth = float(np.arctan2(mount[1], mount[0])) + offsets[i]
        point_obj, normal_obj = surface_point_at(world, azimuth, height)
        stand_off = finger.tip_radius - pre_indentation
        center_obj = point_obj + stand_off * normal_obj
        target = world.position + rot @ center_obj
        solution = None
        for q1 in _SEED_Q1:
            for q2 in _SEED_Q2:
                for q3 in _SEED_Q3:
                    cand = solve_tip_ik(finger, target, np.array([q1, q2, q3]))
                    if cand is None:
                        continue
                    inside = np.all(cand > finger.lower + limit_margin) and np.all(
                        cand < finger.upper - limit_margin
                    )
                    if inside:
                        solution = cand
                        break
                if solution is not None:
                    break
            if solution is not None:
                break
        if solution is None:
            raise PosingError(f"finger {i} cannot reach its grasp point {target}")
        q_all[i] = solution
    world.set_joint_positions(q_all)
    world.settle_contacts()
