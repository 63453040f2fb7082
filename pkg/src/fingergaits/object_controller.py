"""Object pose control: outer loop acceleration law, model inversion, and
the inner joint-torque servo.

The outer loop runs on pose error only -- no object velocity measurement
exists, so the derivative channel differentiates the filtered error.  Its
acceleration command is turned into a desired object wrench through the
nominal mass/inertia (feedback linearization with gravity compensation;
velocity-product terms are left to feedback as disturbances).  The wrench
is then distributed to contact forces elsewhere, and per-joint torque
commands are tracked by a PID running at a multiple of the outer rate
against the actuator's measured torque.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import quat_conj, quat_mul, quat_to_rotmat, rotvec_from_quat

KP_DEFAULT = np.array([400.0, 400.0, 400.0, 60.0, 60.0, 60.0])
KD_DEFAULT = np.array([40.0, 40.0, 40.0, 8.0, 8.0, 8.0])
GRAVITY = np.array([0.0, 0.0, -9.81])


def pose_error(
    ref_position: np.ndarray,
    ref_quat: np.ndarray,
    meas_position: np.ndarray,
    meas_quat: np.ndarray,
) -> np.ndarray:
    """6-vector (position difference, shortest-arc rotation vector).

    The rotation part is log(q_ref * q_meas^-1) in the world frame, with
    the double cover disambiguated toward the arc below pi.
    """
    dp = np.asarray(ref_position, dtype=float) - np.asarray(meas_position, dtype=float)
    dq = quat_mul(np.asarray(ref_quat, dtype=float), quat_conj(np.asarray(meas_quat, dtype=float)))
    return np.concatenate([dp, rotvec_from_quat(dq)])


class PdLaw:
    """Per-channel stiffness/damping (optionally + integral) on pose error.

    The derivative comes from differencing the error through a first-order
    low-pass (default 30 Hz), honoring that no velocity measurement exists.
    The first sample primes the filter so there is no derivative kick.
    """

    def __init__(
        self,
        period: float,
        kp: np.ndarray | None = None,
        kd: np.ndarray | None = None,
        ki: np.ndarray | None = None,
        derivative_cutoff_hz: float = 30.0,
        integral_limit: float = 20.0,
    ):
        if period <= 0.0:
            raise ValueError("control period must be positive")
        self.period = float(period)
        self.kp = KP_DEFAULT.copy() if kp is None else np.asarray(kp, dtype=float)
        self.kd = KD_DEFAULT.copy() if kd is None else np.asarray(kd, dtype=float)
        self.ki = np.zeros(6) if ki is None else np.asarray(ki, dtype=float)
        wc = 2.0 * np.pi * derivative_cutoff_hz
        self._alpha = wc * period / (1.0 + wc * period)
        self.integral_limit = float(integral_limit)
        self.reset()

    def reset(self) -> None:
        self._prev_error: np.ndarray | None = None
        self._deriv = np.zeros(6)
        self._integral = np.zeros(6)

    def step(self, error: np.ndarray) -> np.ndarray:
        error = np.asarray(error, dtype=float)
        if self._prev_error is None:
            self._prev_error = error.copy()
        raw = (error - self._prev_error) / self.period
        self._deriv = self._deriv + self._alpha * (raw - self._deriv)
        self._prev_error = error.copy()
        self._integral = np.clip(
            self._integral + error * self.period, -self.integral_limit, self.integral_limit
        )
        return self.kp * error + self.kd * self._deriv + self.ki * self._integral


class LtiLaw:
    """Imported discrete linear controller x+ = A x + B e, u = C x + D e."""

    def __init__(self, a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray, sample_time: float):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_2d(np.asarray(b, dtype=float))
        self.c = np.atleast_2d(np.asarray(c, dtype=float))
        self.d = np.atleast_2d(np.asarray(d, dtype=float))
        self.sample_time = float(sample_time)
        nx = self.a.shape[0] if self.a.size else 0
        self.nx = nx
        self.reset()

    def reset(self) -> None:
        self._x = np.zeros(self.nx)

    @property
    def period(self) -> float:
        return self.sample_time

    def step(self, error: np.ndarray) -> np.ndarray:
        error = np.asarray(error, dtype=float)
        if self.nx:
            u = self.c @ self._x + self.d @ error
            self._x = self.a @ self._x + self.b @ error
        else:
            u = self.d @ error
        return u


def load_lti(path: str | Path, expected_period: float | None = None) -> LtiLaw:
    """Parse a plain-text controller file.

    Format: a header line ``nx nu ny sample_time`` followed by the rows of
    A (nx), B (nx), C (ny), D (ny).  '#' starts a comment.  nx may be zero
    for a static gain.
    """
    lines = [
        ln.split("#", 1)[0].strip()
        for ln in Path(path).read_text().splitlines()
    ]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"empty controller file: {path}")
    head = lines[0].split()
    if len(head) != 4:
        raise ValueError(f"controller header must be 'nx nu ny sample_time', got {lines[0]!r}")
    nx, nu, ny = int(head[0]), int(head[1]), int(head[2])
    sample_time = float(head[3])
    rows = [np.array([float(tok) for tok in ln.split()]) for ln in lines[1:]]
    expect = 2 * nx + 2 * ny
    if len(rows) != expect:
        raise ValueError(f"controller file has {len(rows)} matrix rows, expected {expect}")

    def take(count: int, width: int, name: str) -> np.ndarray:
        nonlocal rows
        block, rows = rows[:count], rows[count:]
        mat = np.zeros((count, width))
        for i, r in enumerate(block):
            if r.size != width:
                raise ValueError(f"{name} row {i} has {r.size} entries, expected {width}")
            mat[i] = r
        return mat

    a = take(nx, nx, "A")
    b = take(nx, nu, "B")
    c = take(ny, nx, "C")
    d = take(ny, nu, "D")
    if expected_period is not None and abs(sample_time - expected_period) > 1e-12:
        raise ValueError(
            f"controller sample time {sample_time} s does not match control period {expected_period} s"
        )
    return LtiLaw(a, b, c, d, sample_time)


def feedback_linearization(
    u: np.ndarray,
    mass_nominal: float,
    inertia_nominal: np.ndarray,
    meas_quat: np.ndarray,
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """Acceleration command -> desired object wrench via nominal model.

    F = m (u_lin - g), tau = I_world u_ang with the body-frame nominal
    inertia rotated to the current orientation.  Gyroscopic terms are not
    compensated; the outer loop absorbs them as disturbances.
    """
    u = np.asarray(u, dtype=float)
    rot = quat_to_rotmat(np.asarray(meas_quat, dtype=float))
    inertia_world = rot @ np.asarray(inertia_nominal, dtype=float) @ rot.T
    wrench = np.empty(6)
    wrench[:3] = mass_nominal * (u[:3] - np.asarray(gravity, dtype=float))
    wrench[3:] = inertia_world @ u[3:]
    return wrench


@dataclass
class TorquePid:
    """Joint-torque tracking PID with conditional-integration anti-windup.

    Runs at an integer multiple of the outer control rate.  Output is the
    motor command handed to the actuator model; the integrator freezes
    whenever the command saturates in the direction of the error.
    """

    period: float
    kp: float = 2.0
    ki: float = 400.0
    kd: float = 0.0
    limit: float = 2.0  # N*m actuator capability
    n_joints: int = 12
    _integral: np.ndarray = field(init=False)
    _prev_err: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.period <= 0.0:
            raise ValueError("inner period must be positive")
        self.reset()

    def reset(self) -> None:
        self._integral = np.zeros(self.n_joints)
        self._prev_err = np.zeros(self.n_joints)

    def step(self, tau_des: np.ndarray, tau_meas: np.ndarray) -> np.ndarray:
        err = np.asarray(tau_des, dtype=float) - np.asarray(tau_meas, dtype=float)
        deriv = (err - self._prev_err) / self.period
        self._prev_err = err.copy()
        raw = tau_des + self.kp * err + self.ki * self._integral + self.kd * deriv
        cmd = np.clip(raw, -self.limit, self.limit)
        # integrate only where not pushing further into saturation
        free = (raw == cmd) | (np.sign(err) != np.sign(raw - cmd))
        self._integral = self._integral + np.where(free, err * self.period, 0.0)
        return cmd
