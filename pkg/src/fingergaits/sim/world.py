"""Rigid-body plant: a free 6-DOF object held by fingertip point contacts.

Contact forces use a compliant normal (spring-damper) plus smoothed Coulomb
friction.  Velocities are advanced with a block-implicit solve: the
spring part of the normal force is held at the start-of-step penetration,
while every damping-like term (normal damping, friction) is evaluated at
the end-of-step velocities, which keeps the stiff terms stable at the
physics step.  The coupled finger/object linear system is reduced onto the
object's 6 velocity unknowns via a Schur complement, and the friction
coefficients are refreshed by a short fixed-point loop.  Positions update
explicitly afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import quat_integrate, quat_normalize, quat_to_rotmat, skew
from ..kinematics import FingerFrames, HandModel, finger_jacobian, forward_kinematics
from .surfaces import Surface

KN_DEFAULT = 5000.0  # contact stiffness, N/m
DN_DEFAULT = 50.0  # contact normal damping, N s/m
VEPS_DEFAULT = 1e-4  # friction smoothing velocity, m/s
JOINT_INERTIA_DEFAULT = 1e-4  # kg m^2, per joint
JOINT_DAMPING_DEFAULT = 0.01  # N m s/rad, per joint
ACTUATOR_TC_DEFAULT = 0.005  # torque response time constant, s
GRAVITY_DEFAULT = np.array([0.0, 0.0, -9.81])


@dataclass
class ContactRecord:
    """State of one fingertip contact, world frame, as of the last step."""

    finger: int
    point: np.ndarray  # contact point on the object surface
    normal_outward: np.ndarray  # object outward unit normal at the point
    penetration: float
    normal_force: float
    friction_force: np.ndarray  # tangential force on the finger
    slip_speed: float

    @property
    def pressing_normal(self) -> np.ndarray:
        """Direction the fingertip pushes along: into the surface."""
        return -self.normal_outward


@dataclass
class TactileReading:
    in_contact: bool
    normal_force: float
    pressing_normal: np.ndarray
    slip_speed: float


@dataclass
class World:
    hand: HandModel
    surface: Surface
    mass_nominal: float
    dt: float = 0.002
    inner_substeps: int = 4
    kn: float = KN_DEFAULT
    dn: float = DN_DEFAULT
    mu: float = 0.8
    v_eps: float = VEPS_DEFAULT
    joint_inertia: float = JOINT_INERTIA_DEFAULT
    joint_damping: float = JOINT_DAMPING_DEFAULT
    actuator_tc: float = ACTUATOR_TC_DEFAULT
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_DEFAULT.copy())
    tactile_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        n = len(self.hand.fingers)
        self.mass_true = float(self.mass_nominal)
        self.inertia_body_nominal = self.surface.inertia_body(self.mass_nominal)
        self.inertia_body_true = self.inertia_body_nominal.copy()
        self.position = np.zeros(3)
        self.quat = np.array([1.0, 0.0, 0.0, 0.0])
        self.lin_vel = np.zeros(3)
        self.ang_vel = np.zeros(3)
        self.q = np.zeros((n, 3))
        self.qdot = np.zeros((n, 3))
        self.actuator_tau = np.zeros((n, 3))
        self.contacts: list[ContactRecord | None] = [None] * n
        self.frames: list[FingerFrames] = []
        self.time = 0.0
        self.rng = np.random.default_rng(self.seed)
        self._gravity = np.asarray(self.gravity, dtype=float)

    # ------------------------------------------------------------------
    # configuration
    # ------------------------------------------------------------------

    def apply_uncertainty(self, mass_scale: float, moi_scale: float) -> None:
        """Scale the true mass/inertia away from the nominal values the
        controller is given.  Scales are relative deltas (0.2 = +20%)."""
        if 1.0 + mass_scale <= 0.0 or 1.0 + moi_scale <= 0.0:
            raise ValueError("uncertainty scales must keep mass and inertia positive")
        self.mass_true = self.mass_nominal * (1.0 + mass_scale)
        self.inertia_body_true = self.inertia_body_nominal * (1.0 + moi_scale)

    def set_object_pose(self, position: np.ndarray, quat: np.ndarray) -> None:
        self.position = np.asarray(position, dtype=float).copy()
        self.quat = quat_normalize(np.asarray(quat, dtype=float))

    def set_joint_positions(self, q: np.ndarray) -> None:
        self.hand.check_q(np.asarray(q, dtype=float))
        self.q = np.asarray(q, dtype=float).copy()
        self.qdot = np.zeros_like(self.q)
        self.actuator_tau = np.zeros_like(self.q)

    def settle_contacts(self) -> None:
        """Refresh contact records at the current state with static forces
        (spring only), so sensing is sane before the first step."""
        self._refresh_frames()
        records: list[ContactRecord | None] = []
        for i in range(len(self.hand.fingers)):
            geo = self._probe_contact(i)
            if geo is None:
                records.append(None)
                continue
            point, n_out, pen = geo
            records.append(
                ContactRecord(
                    finger=i,
                    point=point,
                    normal_outward=n_out,
                    penetration=pen,
                    normal_force=self.kn * pen,
                    friction_force=np.zeros(3),
                    slip_speed=0.0,
                )
            )
        self.contacts = records

    # ------------------------------------------------------------------
    # sensing
    # ------------------------------------------------------------------

    def tactile_read(self, finger: int) -> TactileReading:
        rec = self.contacts[finger]
        if rec is None:
            return TactileReading(False, 0.0, np.zeros(3), 0.0)
        force = rec.normal_force
        if self.tactile_noise_std > 0.0:
            force = max(0.0, force + self.rng.normal(0.0, self.tactile_noise_std))
        return TactileReading(True, force, rec.pressing_normal.copy(), rec.slip_speed)

    def object_pose(self) -> tuple[np.ndarray, np.ndarray]:
        return self.position.copy(), self.quat.copy()

    def object_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lin_vel.copy(), self.ang_vel.copy()

    def contact_points(self) -> list[np.ndarray | None]:
        return [None if c is None else c.point.copy() for c in self.contacts]

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.quat))
            and np.all(np.isfinite(self.lin_vel))
            and np.all(np.isfinite(self.ang_vel))
            and np.all(np.isfinite(self.q))
            and np.all(np.isfinite(self.qdot))
        )

    # ------------------------------------------------------------------
    # actuation
    # ------------------------------------------------------------------

    def actuator_step(self, command: np.ndarray, dt_inner: float) -> np.ndarray:
        """First-order torque response, integrated exactly."""
        decay = np.exp(-dt_inner / self.actuator_tc)
        self.actuator_tau = command + (self.actuator_tau - command) * decay
        return self.actuator_tau.copy()

    # ------------------------------------------------------------------
    # dynamics
    # ------------------------------------------------------------------

    def _refresh_frames(self) -> None:
        self.frames = [
            forward_kinematics(f, self.q[i]) for i, f in enumerate(self.hand.fingers)
        ]

    def _probe_contact(self, finger: int) -> tuple[np.ndarray, np.ndarray, float] | None:
        """Geometric test: (surface point, outward normal, penetration) in
        world frame, or None if the tip sphere clears the surface."""
        tip = self.frames[finger].origins[-1]
        rot = quat_to_rotmat(self.quat)
        p_obj = rot.T @ (tip - self.position)
        dist = self.surface.signed_distance(p_obj)
        pen = self.hand.fingers[finger].tip_radius - dist
        if pen <= 0.0:
            return None
        foot_obj, n_obj = self.surface.closest_point(p_obj)
        return self.position + rot @ foot_obj, rot @ n_obj, pen

    def step(self, applied_tau: np.ndarray, ext_force: np.ndarray | None = None,
             ext_torque: np.ndarray | None = None) -> None:
        """Advance one physics step under the given joint torques and an
        optional external wrench at the object's center of mass."""
        applied_tau = np.asarray(applied_tau, dtype=float)
        f_ext = np.zeros(3) if ext_force is None else np.asarray(ext_force, dtype=float)
        t_ext = np.zeros(3) if ext_torque is None else np.asarray(ext_torque, dtype=float)

        n_f = len(self.hand.fingers)
        dt = self.dt
        self._refresh_frames()

        # geometric contact candidates at start-of-step positions
        geos: list[tuple[np.ndarray, np.ndarray, float] | None] = [
            self._probe_contact(i) for i in range(n_f)
        ]
        jacs: list[np.ndarray | None] = []
        rhats: list[np.ndarray | None] = []
        for i, geo in enumerate(geos):
            if geo is None:
                jacs.append(None)
                rhats.append(None)
            else:
                point = geo[0]
                jacs.append(finger_jacobian(self.hand.fingers[i], self.q[i],
                                            frames=self.frames[i], point=point))
                rhats.append(skew(point - self.position))

        rot = quat_to_rotmat(self.quat)
        inertia_w = rot @ self.inertia_body_true @ rot.T
        m = self.mass_true
        mass_blk = (m / dt) * np.eye(3)
        inertia_blk = inertia_w / dt
        gyro = -np.cross(self.ang_vel, inertia_w @ self.ang_vel)

        joint_m = self.joint_inertia
        joint_b = self.joint_damping

        # frozen-coefficient fixed point on the friction/damping matrices
        v_new = self.lin_vel.copy()
        w_new = self.ang_vel.copy()
        qd_new = self.qdot.copy()
        w_mats: list[np.ndarray | None] = [None] * n_f
        w0_vecs: list[np.ndarray | None] = [None] * n_f

        for _ in range(6):
            for i, geo in enumerate(geos):
                if geo is None:
                    w_mats[i] = None
                    w0_vecs[i] = None
                    continue
                point, n_out, pen = geo
                u = jacs[i] @ qd_new[i] - v_new + rhats[i] @ w_new
                fn = self.kn * pen - self.dn * float(n_out @ u)
                if fn <= 0.0:
                    w_mats[i] = None
                    w0_vecs[i] = None
                    continue
                u_t = u - n_out * float(n_out @ u)
                s = float(np.linalg.norm(u_t))
                smooth = np.tanh(s / self.v_eps) / s if s > 1e-12 else 1.0 / self.v_eps
                gamma = self.mu * fn * smooth
                nn = np.outer(n_out, n_out)
                w_mats[i] = self.dn * nn + gamma * (np.eye(3) - nn)
                w0_vecs[i] = self.kn * pen * n_out

            # assemble the object 6x6 via Schur elimination of finger blocks
            d_mat = np.zeros((6, 6))
            d_mat[:3, :3] = mass_blk
            d_mat[3:, 3:] = inertia_blk
            s_vec = np.concatenate(
                [
                    (m / dt) * self.lin_vel + m * self._gravity + f_ext,
                    inertia_blk @ self.ang_vel + gyro + t_ext,
                ]
            )
            finger_solves: list[tuple[np.ndarray, np.ndarray] | None] = [None] * n_f
            for i in range(n_f):
                a_blk = (joint_m / dt + joint_b) * np.eye(3)
                r_vec = (joint_m / dt) * self.qdot[i] + applied_tau[i]
                if w_mats[i] is None:
                    finger_solves[i] = (np.linalg.solve(a_blk, r_vec), None)
                    continue
                jac, rhat, w_m, w0 = jacs[i], rhats[i], w_mats[i], w0_vecs[i]
                jt_w = jac.T @ w_m
                a_blk = a_blk + jt_w @ jac
                r_vec = r_vec + jac.T @ w0
                g_cols = np.hstack([jt_w, -jt_w @ rhat])  # (3,6)
                a_inv_r = np.linalg.solve(a_blk, r_vec)
                a_inv_g = np.linalg.solve(a_blk, g_cols)
                finger_solves[i] = (a_inv_r, a_inv_g)

                wj = w_m @ jac  # (3,3)
                top = np.hstack([w_m, -w_m @ rhat])
                bot = np.hstack([rhat @ w_m, -rhat @ w_m @ rhat])
                d_mat[:3, :] += top
                d_mat[3:, :] += bot
                d_mat[:3, :] -= wj @ a_inv_g
                d_mat[3:, :] -= rhat @ (wj @ a_inv_g)
                s_vec[:3] += -w0 + wj @ a_inv_r
                s_vec[3:] += rhat @ (-w0 + wj @ a_inv_r)

            v_obj = np.linalg.solve(d_mat, s_vec)
            v_cand, w_cand = v_obj[:3], v_obj[3:]
            qd_cand = np.empty_like(qd_new)
            for i in range(n_f):
                a_inv_r, a_inv_g = finger_solves[i]
                qd_cand[i] = a_inv_r if a_inv_g is None else a_inv_r + a_inv_g @ v_obj

            delta = max(
                float(np.max(np.abs(v_cand - v_new))),
                float(np.max(np.abs(w_cand - w_new))),
                float(np.max(np.abs(qd_cand - qd_new))),
            )
            v_new, w_new, qd_new = v_cand, w_cand, qd_cand
            if delta < 1e-11:
                break

        # final contact forces, consistent with the solved velocities
        records: list[ContactRecord | None] = [None] * n_f
        for i, geo in enumerate(geos):
            if geo is None or w_mats[i] is None:
                continue
            point, n_out, pen = geo
            u = jacs[i] @ qd_new[i] - v_new + rhats[i] @ w_new
            force = w0_vecs[i] - w_mats[i] @ u  # on the finger
            fn = float(n_out @ force)
            if fn <= 0.0:
                continue
            friction = force - fn * n_out
            u_t = u - n_out * float(n_out @ u)
            records[i] = ContactRecord(
                finger=i,
                point=point,
                normal_outward=n_out,
                penetration=pen,
                normal_force=fn,
                friction_force=friction,
                slip_speed=float(np.linalg.norm(u_t)),
            )

        # explicit position update
        self.lin_vel, self.ang_vel, self.qdot = v_new, w_new, qd_new
        self.position = self.position + dt * v_new
        self.quat = quat_integrate(self.quat, w_new, dt)
        self.q = self.q + dt * self.qdot
        lower, upper = self.hand.lower_limits(), self.hand.upper_limits()
        below = self.q < lower
        above = self.q > upper
        if np.any(below):
            self.q = np.where(below, lower, self.q)
            self.qdot = np.where(below & (self.qdot < 0.0), 0.0, self.qdot)
        if np.any(above):
            self.q = np.where(above, upper, self.q)
            self.qdot = np.where(above & (self.qdot > 0.0), 0.0, self.qdot)

        self.contacts = records
        self.time += dt
