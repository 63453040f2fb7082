"""Serial-chain kinematics for a multi-fingered hand.

Each finger is three revolute joints (proximal flexion, abduction, distal
flexion) followed by a spherical fingertip.  Axes are expressed in the
predecessor frame; every link extends along the local +z of its frame, so
at the zero configuration a finger is a straight segment of the summed link
lengths along the base frame's z axis.

All positions are world-frame meters, angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import rotmat_axis_angle, tangent_basis

# default joint limits, radians: abduction, proximal flexion, distal flexion
DEFAULT_LOWER = np.deg2rad([-45.0, -10.0, -10.0])
DEFAULT_UPPER = np.deg2rad([45.0, 135.0, 170.0])

# default joint axes in predecessor frame: base abduction about z, then two
# flexions about y -- spread-then-curl, as on common four-finger hands
DEFAULT_AXES = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass
class FingerGeometry:
    """Mounting pose, joint axes, and link dimensions of one finger."""

    base_position: np.ndarray  # (3,) world
    base_rotation: np.ndarray  # (3,3) world_from_base
    link_lengths: np.ndarray = field(default_factory=lambda: np.array([0.06, 0.05, 0.045]))
    joint_axes: np.ndarray = field(default_factory=lambda: DEFAULT_AXES.copy())
    tip_radius: float = 0.01
    lower: np.ndarray = field(default_factory=lambda: DEFAULT_LOWER.copy())
    upper: np.ndarray = field(default_factory=lambda: DEFAULT_UPPER.copy())

    def __post_init__(self) -> None:
        self.base_position = np.asarray(self.base_position, dtype=float)
        self.base_rotation = np.asarray(self.base_rotation, dtype=float)
        self.link_lengths = np.asarray(self.link_lengths, dtype=float)
        self.joint_axes = np.asarray(self.joint_axes, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower >= self.upper):
            raise ValueError("joint limits must satisfy lower < upper")

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def max_reach(self) -> float:
        return float(np.sum(self.link_lengths)) + self.tip_radius

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def ranges(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass
class FingerFrames:
    """World-frame FK products: joint origins, joint axes, tip pose."""

    origins: np.ndarray  # (n_joints + 1, 3); last row is the tip center
    axes: np.ndarray  # (n_joints, 3) world joint axes
    tip_rotation: np.ndarray  # (3,3) world_from_tip


def _check_q(geometry: FingerGeometry, q: np.ndarray, finger: int | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    tag = "" if finger is None else f" (finger {finger})"
    if q.shape != (geometry.n_joints,):
        raise ValueError(f"expected {geometry.n_joints} joint angles{tag}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError(f"non-finite joint angle{tag}: {q}")
    return q


def forward_kinematics(geometry: FingerGeometry, q: np.ndarray, finger: int | None = None) -> FingerFrames:
    """Tip pose and intermediate frames for one finger."""
    q = _check_q(geometry, q, finger)
    r = geometry.base_rotation
    p = geometry.base_position.copy()
    origins = np.empty((geometry.n_joints + 1, 3))
    axes = np.empty((geometry.n_joints, 3))
    for i in range(geometry.n_joints):
        origins[i] = p
        axis_world = r @ geometry.joint_axes[i]
        axes[i] = axis_world
        r = r @ rotmat_axis_angle(geometry.joint_axes[i], float(q[i]))
        p = p + geometry.link_lengths[i] * r[:, 2]
    origins[-1] = p
    return FingerFrames(origins=origins, axes=axes, tip_rotation=r)


def tip_position(geometry: FingerGeometry, q: np.ndarray) -> np.ndarray:
    return forward_kinematics(geometry, q).origins[-1]


def finger_jacobian(
    geometry: FingerGeometry,
    q: np.ndarray,
    point: np.ndarray | None = None,
    frames: FingerFrames | None = None,
) -> np.ndarray:
    """Positional Jacobian (3 x n_joints) of the tip center, or of an
    arbitrary world point rigidly attached to the distal link."""
    if frames is None:
        frames = forward_kinematics(geometry, q)
    p = frames.origins[-1] if point is None else np.asarray(point, dtype=float)
    jac = np.empty((3, geometry.n_joints))
    for i in range(geometry.n_joints):
        jac[:, i] = np.cross(frames.axes[i], p - frames.origins[i])
    return jac


def contact_frame(pressing_normal: np.ndarray) -> np.ndarray:
    """Orthonormal contact frame with +z along the pressing direction.

    Columns are (t1, t2, n); contact-frame force vectors use this basis so
    a positive third component presses into the surface.
    """
    n = np.asarray(pressing_normal, dtype=float)
    n = n / np.linalg.norm(n)
    t1, t2 = tangent_basis(n)
    return np.column_stack([t1, t2, n])


@dataclass
class HandModel:
    """A collection of fingers sharing one palm frame."""

    fingers: list[FingerGeometry]

    @property
    def n_fingers(self) -> int:
        return len(self.fingers)

    @property
    def n_joints(self) -> int:
        return sum(f.n_joints for f in self.fingers)

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_fingers, self.fingers[0].n_joints):
            raise ValueError(f"expected joint matrix of shape ({self.n_fingers}, 3), got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("non-finite joint angles")
        return q

    def fk_all(self, q: np.ndarray) -> list[FingerFrames]:
        q = self.check_q(q)
        return [forward_kinematics(g, q[i], finger=i) for i, g in enumerate(self.fingers)]

    def lower_limits(self) -> np.ndarray:
        return np.stack([f.lower for f in self.fingers])

    def upper_limits(self) -> np.ndarray:
        return np.stack([f.upper for f in self.fingers])


def hand_jacobian(
    hand: HandModel,
    q: np.ndarray,
    contact_frames: list[np.ndarray | None],
    contact_points: list[np.ndarray | None],
    frames: list[FingerFrames] | None = None,
) -> np.ndarray:
    """Block-diagonal contact Jacobian J_h (3*n_fingers x total joints).

    Row block i gives the contact-frame velocity of finger i's contact
    point; its transpose maps stacked contact-frame forces to joint
    torques.  Fingers without a contact (frame entry None) contribute an
    all-zero block, so forces routed to them produce no torque.
    """
    q = hand.check_q(q)
    if frames is None:
        frames = hand.fk_all(q)
    nj = hand.fingers[0].n_joints
    jh = np.zeros((3 * hand.n_fingers, hand.n_joints))
    for i, geom in enumerate(hand.fingers):
        rot = contact_frames[i]
        if rot is None:
            continue
        jac = finger_jacobian(geom, q[i], point=contact_points[i], frames=frames[i])
        jh[3 * i : 3 * i + 3, nj * i : nj * i + nj] = rot.T @ jac
    return jh


def build_hand(
    finger_count: int = 4,
    base_radius: float = 0.10,
    base_azimuths_deg: list[float] | None = None,
    base_height: float = 0.0,
    link_lengths: tuple[float, float, float] = (0.05, 0.04, 0.03),
    tip_radius: float = 0.01,
    lower_deg: tuple[float, float, float] = (-45.0, -10.0, -10.0),
    upper_deg: tuple[float, float, float] = (45.0, 135.0, 170.0),
) -> HandModel:
    """Standard palm layout: fingers on a circle, pointing along +z, local
    +x toward the palm axis so positive flexion curls inward."""
    if base_azimuths_deg is None:
        base_azimuths_deg = [i * 360.0 / finger_count for i in range(finger_count)]
    if len(base_azimuths_deg) != finger_count:
        raise ValueError("need one base azimuth per finger")
    fingers = []
    for az_deg in base_azimuths_deg:
        az = np.deg2rad(az_deg)
        x_l = -np.array([np.cos(az), np.sin(az), 0.0])  # inward
        z_l = np.array([0.0, 0.0, 1.0])
        y_l = np.cross(z_l, x_l)
        fingers.append(
            FingerGeometry(
                base_position=np.array([base_radius * np.cos(az), base_radius * np.sin(az), base_height]),
                base_rotation=np.column_stack([x_l, y_l, z_l]),
                link_lengths=np.array(link_lengths, dtype=float),
                tip_radius=tip_radius,
                lower=np.deg2rad(lower_deg),
                upper=np.deg2rad(upper_deg),
            )
        )
    return HandModel(fingers=fingers)
