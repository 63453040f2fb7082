"""Grasp quality metrics and gait scheduling predicates.

Two ingredients are combined into one scalar:

* an object-centric term: twice the area of the convex hull of the contact
  points (plus the free fingertip projected onto the contact plane while a
  finger is relocating) -- larger support polygons resist disturbances
  better;
* a hand-centric term: a negative quadratic penalty on joint deviation from
  range midpoints, zero at the best-conditioned posture.

The weighted sum Q = w1 * Q_o + w2 * Q_h drives both the decision to start
relocating a finger and the choice of which finger to lift.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

W1_DEFAULT = 0.99
W2_DEFAULT = 0.01


class DegenerateSupportError(ValueError):
    """Fewer than three support points: no contact plane exists."""


class NoGaitCandidateError(RuntimeError):
    """A finger cannot be freed (grasp already below minimum support)."""


def hand_manipulability(q, lower, upper) -> float:
    """Joint-centering quality: 0 at all midpoints, negative elsewhere.

    Values outside the limits are clamped to the limit before evaluation,
    so the result is bounded below by -0.5 * n_joints * 0.25.
    """
    q = np.asarray(q, dtype=float).ravel()
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if np.any(lower >= upper):
        raise ValueError("joint limits must satisfy lower < upper")
    qc = np.clip(q, lower, upper)
    mid = 0.5 * (lower + upper)
    dev = (qc - mid) / (upper - lower)
    return -0.5 * float(np.sum(dev * dev))


def _hull_area_2d(pts: np.ndarray) -> float:
    """Convex hull area of 2-D points (Andrew monotone chain + shoelace)."""
    pts = np.unique(np.round(pts, 12), axis=0)
    if len(pts) < 3:
        return 0.0
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return 0.0
    x, y = hull[:, 0], hull[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def contact_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane through >= 3 points: (centroid, 3x2 in-plane basis)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 3 or points.shape[1] != 3:
        raise DegenerateSupportError(f"need at least 3 contact points, got shape {points.shape}")
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, vt[:2].T


def hull_area(points: np.ndarray, extra_point: np.ndarray | None = None) -> float:
    """Area of the planar convex hull of contact points.

    The plane is fit to ``points`` only; ``extra_point`` (a free fingertip)
    is projected onto that plane before the hull is taken.
    """
    centroid, basis = contact_plane(points)
    stacked = np.asarray(points, dtype=float)
    if extra_point is not None:
        stacked = np.vstack([stacked, np.asarray(extra_point, dtype=float)])
    return _hull_area_2d((stacked - centroid) @ basis)


def object_grasp_quality(contact_points: np.ndarray, free_point: np.ndarray | None = None) -> float:
    """Q_o = 2 * convex-hull area of the support pattern (m^2)."""
    return 2.0 * hull_area(contact_points, extra_point=free_point)


def total_quality(q_object: float, q_hand: float, w1: float = W1_DEFAULT, w2: float = W2_DEFAULT) -> float:
    return w1 * q_object + w2 * q_hand


@dataclass
class QualityReport:
    """One evaluation of the grasp metrics plus per-finger breakdowns."""

    q_object: float
    q_hand: float
    q_total: float
    finger_manipulability: np.ndarray  # (n_fingers,), each <= 0
    remaining_area: np.ndarray  # (n_fingers,) support area if finger k were lifted


def evaluate_quality(
    q: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    contact_points: list[np.ndarray | None],
    free_finger: int | None = None,
    free_point: np.ndarray | None = None,
    w1: float = W1_DEFAULT,
    w2: float = W2_DEFAULT,
) -> QualityReport:
    """Full report for the current grasp.

    ``contact_points[i]`` is finger i's contact (None if not touching).
    While a finger is free its support contribution is ``free_point``
    (its live fingertip) projected onto the plane of the others.
    """
    q = np.asarray(q, dtype=float)
    n_fingers = q.shape[0]
    q_hand = hand_manipulability(q, np.broadcast_to(lower, q.shape), np.broadcast_to(upper, q.shape))

    support = [p for i, p in enumerate(contact_points) if p is not None and i != free_finger]
    q_object = object_grasp_quality(np.asarray(support), free_point=free_point)

    finger_manip = np.array(
        [hand_manipulability(q[i], lower, upper) for i in range(n_fingers)]
    )
    remaining = np.zeros(n_fingers)
    for k in range(n_fingers):
        others = [
            (free_point if i == free_finger else p)
            for i, p in enumerate(contact_points)
            if i != k
        ]
        pts = [p for p in others if p is not None]
        try:
            remaining[k] = hull_area(np.asarray(pts))
        except DegenerateSupportError:
            remaining[k] = 0.0
    return QualityReport(
        q_object=q_object,
        q_hand=q_hand,
        q_total=total_quality(q_object, q_hand, w1, w2),
        finger_manipulability=finger_manip,
        remaining_area=remaining,
    )


def _minmax_normalize(x: np.ndarray) -> np.ndarray:
    span = float(x.max() - x.min())
    if span < 1e-15:
        return np.full_like(x, 0.5)
    return (x - x.min()) / span


def select_free_finger(
    report: QualityReport,
    in_contact: list[bool],
    current_free: int | None = None,
    w_area: float = 0.5,
    w_manip: float = 0.5,
    exclude: int | None = None,
) -> int:
    """Choose which finger to relocate.

    A finger already relocating keeps the role.  Otherwise every finger
    must be in contact (a 3-contact grasp cannot spare another), and the
    winner maximizes normalized remaining support area plus normalized
    centering deficit.  `exclude` bars one finger (typically the one that
    just finished relocating, so the role rotates).  Ties resolve to the
    lowest index.
    """
    if current_free is not None:
        return current_free
    if not all(in_contact):
        raise NoGaitCandidateError(
            f"cannot free a finger: contacts missing at {[i for i, c in enumerate(in_contact) if not c]}"
        )
    score = w_area * _minmax_normalize(report.remaining_area) + w_manip * _minmax_normalize(
        -report.finger_manipulability
    )
    if exclude is not None and 0 <= exclude < score.size:
        score = score.copy()
        score[exclude] = -np.inf
    return int(np.argmax(score))


def gaiting_should_trigger(q_total: float, quality_threshold: float, contacts_static: bool) -> bool:
    """Start a gait only when quality is low and the grasp is quiescent."""
    return bool(q_total < quality_threshold and contacts_static)


def gaiting_should_stop(q_total: float, q_rate: float | None, quality_threshold: float, rate_threshold: float) -> bool:
    """End the gait when quality recovered or stopped improving."""
    if q_total > quality_threshold:
        return True
    return q_rate is not None and q_rate < rate_threshold


class QualityRateFilter:
    """Achieved dQ/dt from successive Q samples, smoothed by a moving average."""

    def __init__(self, period: float, window: int = 10):
        if period <= 0.0 or window < 1:
            raise ValueError("period must be positive and window >= 1")
        self.period = float(period)
        self.window = int(window)
        self._last_q: float | None = None
        self._rates: deque[float] = deque(maxlen=window)

    def reset(self) -> None:
        self._last_q = None
        self._rates.clear()

    @property
    def primed(self) -> bool:
        return len(self._rates) >= self.window

    def update(self, q_total: float) -> float | None:
        """Feed one sample; returns the filtered rate once the window is full."""
        if self._last_q is not None:
            self._rates.append((q_total - self._last_q) / self.period)
        self._last_q = q_total
        if not self.primed:
            return None
        return float(np.mean(self._rates))
