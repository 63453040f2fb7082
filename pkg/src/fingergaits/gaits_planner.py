"""Velocity-level planning for the relocating (free) finger.

Every control tick the free finger's joint velocity is the solution of a
small linear program: maximize the predicted grasp-quality rate subject to

* box bounds on each joint velocity,
* tangency of the fingertip to the touched surface (so a crawling finger
  neither digs in nor lifts off), and
* a per-tick slew limit that keeps consecutive commands within sigma of
  each other (an implicit acceleration bound).

The objective direction combines the support-area growth of moving the
free contact away from the opposite support edge with a joint-centering
term whose per-joint weights blow up logarithmically near the limits.

The companion torque rule turns the planned velocity plus a small normal
force setpoint into joint torques for the free finger.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import normalized

QDOT_BOUND = 1.0  # rad/s, symmetric box on joint velocity
SIGMA_DEFAULT = 0.002  # rad/s, per-tick slew limit
C_MAX_DEFAULT = 50.0
KV_DEFAULT = 0.05
KF_DEFAULT = 1.5

_FEAS_TOL = 1e-9


def joint_limit_weight(
    q: float,
    lower: float,
    upper: float,
    q_thres: float | None = None,
    c_max: float = C_MAX_DEFAULT,
) -> tuple[float, bool]:
    """Centering weight for one joint: 1 inside the comfort band, growing
    logarithmically toward either limit, capped at c_max.

    Returns (weight, saturated).  ``saturated`` is True when the joint sits
    at or beyond a limit (where the log diverges and the cap applies).
    """
    if lower >= upper:
        raise ValueError("joint limits must satisfy lower < upper")
    rng = upper - lower
    mid = 0.5 * (lower + upper)
    if q_thres is None:
        q_thres = 0.25 * rng
    if q <= lower or q >= upper:
        return c_max, True
    if q < mid - q_thres:
        value = np.log((mid - lower - q_thres) / (q - lower)) + 1.0
    elif q > mid + q_thres:
        value = np.log((upper - mid - q_thres) / (upper - q)) + 1.0
    else:
        value = 1.0
    return (c_max, False) if value > c_max else (float(value), False)


def joint_limit_weights(
    q: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    q_thres_fraction: float = 0.25,
    c_max: float = C_MAX_DEFAULT,
) -> tuple[np.ndarray, np.ndarray]:
    """Vector version: (weights, saturated mask)."""
    q = np.asarray(q, dtype=float)
    out = np.empty_like(q)
    sat = np.zeros(q.shape, dtype=bool)
    for i in range(q.size):
        out.flat[i], sat.flat[i] = joint_limit_weight(
            float(q.flat[i]),
            float(np.asarray(lower).flat[i]),
            float(np.asarray(upper).flat[i]),
            q_thres=q_thres_fraction * float(np.asarray(upper).flat[i] - np.asarray(lower).flat[i]),
            c_max=c_max,
        )
    return out, sat


def centering_gradient(
    q: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    center: np.ndarray | None = None,
) -> np.ndarray:
    """d(joint-centering quality)/dq for one finger: (center - q) / range^2.

    ``center`` defaults to the range midpoints; a caller may aim a joint at
    another set point (e.g. the abduction angle of a chosen regrasp spot).
    """
    q = np.asarray(q, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rng = upper - lower
    if center is None:
        center = 0.5 * (lower + upper)
    return (np.asarray(center, dtype=float) - q) / (rng * rng)


def support_edge_normal(support_points: np.ndarray, free_point: np.ndarray) -> tuple[float, np.ndarray]:
    """Geometry factor of the support-area growth direction.

    Picks the two support points nearest the free contact (the hull edge
    the free vertex hangs off) and returns (edge length, unit in-plane
    normal of that edge pointing away from the remaining support point),
    i.e. the direction the free contact should move to grow the hull.
    """
    support_points = np.asarray(support_points, dtype=float)
    if support_points.shape[0] < 3:
        raise ValueError("need at least 3 support points")
    d = np.linalg.norm(support_points - np.asarray(free_point, dtype=float), axis=1)
    far = int(np.argmax(d))
    near = [i for i in range(support_points.shape[0]) if i != far]
    # keep the two nearest if more than three supports ever appear
    near = sorted(near, key=lambda i: d[i])[:2]
    p2, p3 = support_points[near[0]], support_points[near[1]]
    p1 = support_points[far]
    edge = p3 - p2
    edge_len = float(np.linalg.norm(edge))
    if edge_len < 1e-12:
        raise ValueError("degenerate support edge")
    edge_dir = edge / edge_len
    away = (p2 - p1) - np.dot(p2 - p1, edge_dir) * edge_dir
    return edge_len, normalized(away)


def quality_rate_gradient(
    q: np.ndarray,
    jac: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    support_points: np.ndarray | None,
    free_point: np.ndarray | None,
    w1: float = 0.99,
    w2: float = 0.01,
    q_thres_fraction: float = 0.25,
    c_max: float = C_MAX_DEFAULT,
    center: np.ndarray | None = None,
) -> np.ndarray:
    """Objective vector c with cᵀ q̇ = predicted dQ/dt for the free finger.

    With no support geometry (finger airborne) only the joint-centering
    term remains.
    """
    weights, _ = joint_limit_weights(q, lower, upper, q_thres_fraction, c_max)
    c = w2 * weights * centering_gradient(q, lower, upper, center=center)
    if support_points is not None and free_point is not None:
        edge_len, n_away = support_edge_normal(support_points, free_point)
        c = c + w1 * edge_len * (np.asarray(jac).T @ n_away)
    return c


@dataclass
class GaitLpSolution:
    qdot: np.ndarray
    objective: float
    n_active: int
    feasible: bool
    mode: str  # "tangent" or "box"


def _interval_box(
    prev: np.ndarray, sigma: float, bound: float
) -> tuple[np.ndarray, np.ndarray]:
    lo = np.maximum(-bound, prev - sigma)
    hi = np.minimum(bound, prev + sigma)
    return lo, hi


def _box_lp(c: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, int]:
    """Axis-separable LP: saturate along sign(c); zero coefficients take the
    in-interval point closest to zero (minimum-norm tie-break)."""
    z = np.where(c > 0, hi, np.where(c < 0, lo, np.clip(0.0, lo, hi)))
    active = int(np.sum((np.abs(z - lo) < _FEAS_TOL) | (np.abs(z - hi) < _FEAS_TOL)))
    return z, active


def solve_gait_lp(
    c: np.ndarray,
    qdot_prev: np.ndarray,
    tangent_row: np.ndarray | None,
    sigma: float = SIGMA_DEFAULT,
    bound: float = QDOT_BOUND,
) -> GaitLpSolution:
    """Maximize cᵀ q̇ over the velocity box, the slew box around the previous
    command, and (when given) the tangency plane tangent_rowᵀ q̇ = 0.

    Solved exactly: the equality is eliminated through a 2-D null-space
    parameterization and the remaining polygon's vertices are enumerated.
    Ties resolve to the minimum-norm optimizer.  An empty polygon returns
    the alternating projection of zero onto the constraints with
    ``feasible=False``.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    qdot_prev = np.asarray(qdot_prev, dtype=float)
    lo, hi = _interval_box(qdot_prev, sigma, bound)
    if np.any(lo > hi + _FEAS_TOL):
        raise ValueError("previous command violates the velocity bounds")
    lo = np.minimum(lo, hi)

    a = None if tangent_row is None else np.asarray(tangent_row, dtype=float)
    if a is not None and np.linalg.norm(a) < 1e-12:
        a = None  # every motion is tangent

    if a is None:
        z, active = _box_lp(c, lo, hi)
        return GaitLpSolution(qdot=z, objective=float(c @ z), n_active=active, feasible=True, mode="box")

    # null-space basis of {a^T x = 0}
    a_unit = a / np.linalg.norm(a)
    seed = np.zeros(n)
    seed[int(np.argmin(np.abs(a_unit)))] = 1.0
    z1 = seed - np.dot(seed, a_unit) * a_unit
    z1 /= np.linalg.norm(z1)
    z2 = np.cross(a_unit, z1) if n == 3 else None
    if z2 is None:
        raise ValueError("tangency elimination implemented for 3-joint fingers")
    basis = np.column_stack([z1, z2])  # (3, 2), x = basis @ y

    # box rows become halfplanes g @ y <= h
    g = np.vstack([basis, -basis])  # (6, 2)
    h = np.concatenate([hi, -lo])
    cy = basis.T @ c

    idx_i, idx_j = np.triu_indices(6, k=1)
    a1, a2 = g[idx_i], g[idx_j]
    det = a1[:, 0] * a2[:, 1] - a1[:, 1] * a2[:, 0]
    ok = np.abs(det) > 1e-14
    y_cand = np.zeros((int(np.sum(ok)), 2))
    b1, b2 = h[idx_i][ok], h[idx_j][ok]
    aa1, aa2, dd = a1[ok], a2[ok], det[ok]
    y_cand[:, 0] = (b1 * aa2[:, 1] - b2 * aa1[:, 1]) / dd
    y_cand[:, 1] = (aa1[:, 0] * b2 - aa2[:, 0] * b1) / dd
    feas = np.all(g @ y_cand.T <= h[:, None] + _FEAS_TOL, axis=0)
    vertices = y_cand[feas]

    if vertices.shape[0] == 0:
        # empty polygon: project zero onto box and plane alternately
        x = np.clip(np.zeros(n), lo, hi)
        for _ in range(50):
            x = x - np.dot(x, a_unit) * a_unit
            x = np.clip(x, lo, hi)
        return GaitLpSolution(qdot=x, objective=float(c @ x), n_active=0, feasible=False, mode="tangent")

    vals = vertices @ cy
    vmax = float(vals.max())
    tie = vals >= vmax - 1e-11 * (1.0 + abs(vmax))
    best = vertices[tie]

    # minimum-norm point on the optimal set
    candidates = [best[i] for i in range(best.shape[0])]
    if best.shape[0] > 1 or float(np.linalg.norm(cy)) < 1e-13:
        pool = vertices if float(np.linalg.norm(cy)) < 1e-13 else best
        origin = np.zeros(2)
        if np.all(g @ origin <= h + _FEAS_TOL) and (
            float(np.linalg.norm(cy)) < 1e-13 or float(cy @ origin) >= vmax - 1e-11 * (1.0 + abs(vmax))
        ):
            candidates.append(origin)
        for i in range(pool.shape[0]):
            for j in range(i + 1, pool.shape[0]):
                seg = pool[j] - pool[i]
                denom = float(seg @ seg)
                if denom < 1e-24:
                    continue
                t = np.clip(-float(pool[i] @ seg) / denom, 0.0, 1.0)
                pt = pool[i] + t * seg
                if np.all(g @ pt <= h + _FEAS_TOL):
                    if float(np.linalg.norm(cy)) < 1e-13 or float(cy @ pt) >= vmax - 1e-11 * (1.0 + abs(vmax)):
                        candidates.append(pt)
    norms = [float(np.linalg.norm(p)) for p in candidates]
    y_star = candidates[int(np.argmin(norms))]
    x_star = basis @ y_star
    x_star = np.clip(x_star, lo, hi)  # shave float dust off the box
    active = int(np.sum((np.abs(x_star - lo) < 1e-9) | (np.abs(x_star - hi) < 1e-9))) + 1
    return GaitLpSolution(
        qdot=x_star, objective=float(c @ x_star), n_active=active, feasible=True, mode="tangent"
    )


def velocity_force_torque(
    qdot_des: np.ndarray,
    jac: np.ndarray,
    pressing_normal: np.ndarray,
    f_des: float,
    f_act: float,
    kv: float | np.ndarray = KV_DEFAULT,
    kf: float | np.ndarray = KF_DEFAULT,
    qdot_act: np.ndarray | None = None,
) -> np.ndarray:
    """Free-finger torque: velocity servo plus a normal-force servo.

    With ``qdot_act`` the velocity term acts on the tracking error, which a
    lightly damped joint needs to actually follow the plan; without it the
    term degrades to a plain feedforward.  ``pressing_normal`` points into
    the surface (the direction the finger pushes), so a deficit
    f_des > f_act produces torque toward contact.
    """
    qdot_des = np.asarray(qdot_des, dtype=float)
    if qdot_act is not None:
        qdot_des = qdot_des - np.asarray(qdot_act, dtype=float)
    n = np.asarray(pressing_normal, dtype=float)
    return kv * qdot_des + kf * (np.asarray(jac).T @ ((f_des - f_act) * n))


class GaitPlanner:
    """Stateful wrapper holding the slew-chain memory for one gait.

    ``plan_contact``/``plan_airborne`` return the commanded joint velocity
    while keeping consecutive commands within sigma per joint.
    """

    def __init__(
        self,
        sigma: float = SIGMA_DEFAULT,
        bound: float = QDOT_BOUND,
        w1: float = 0.99,
        w2: float = 0.01,
        q_thres_fraction: float = 0.25,
        c_max: float = C_MAX_DEFAULT,
        approach_speed: float = 0.03,
        airborne_speed_cap: float | None = None,
        tick_dt: float = 0.002,
    ):
        self.sigma = sigma
        self.bound = bound
        self.w1 = w1
        self.w2 = w2
        self.q_thres_fraction = q_thres_fraction
        self.c_max = c_max
        self.approach_speed = approach_speed
        self.airborne_speed_cap = airborne_speed_cap
        self.tick_dt = tick_dt
        self.qdot_prev = np.zeros(3)

    def reset(self) -> None:
        self.qdot_prev = np.zeros(3)

    def command(self, qdot_target: np.ndarray) -> np.ndarray:
        """Slew-clip a direct velocity command into the chain memory."""
        lo, hi = _interval_box(self.qdot_prev, self.sigma, self.bound)
        z = np.clip(np.asarray(qdot_target, dtype=float), np.minimum(lo, hi), hi)
        self.qdot_prev = z
        return z

    def plan_contact(
        self,
        q: np.ndarray,
        jac: np.ndarray,
        pressing_normal: np.ndarray,
        lower: np.ndarray,
        upper: np.ndarray,
        support_points: np.ndarray,
        free_point: np.ndarray,
        joint_mask: np.ndarray | None = None,
    ) -> GaitLpSolution:
        """Sliding relocation: best quality rate tangent to the surface.

        ``joint_mask`` applies to the joint-centering term only; the
        support-area term always keeps every joint so tangential slides
        stay fully coordinated.
        """
        c = quality_rate_gradient(
            q, jac, lower, upper, support_points, free_point,
            w1=self.w1, w2=self.w2, q_thres_fraction=self.q_thres_fraction, c_max=self.c_max,
        )
        if joint_mask is not None:
            c_posture = quality_rate_gradient(
                q, jac, lower, upper, None, None,
                w1=self.w1, w2=self.w2, q_thres_fraction=self.q_thres_fraction, c_max=self.c_max,
            )
            c = c - c_posture + c_posture * np.asarray(joint_mask, dtype=float)
        tangent_row = np.asarray(jac).T @ np.asarray(pressing_normal, dtype=float)
        sol = solve_gait_lp(c, self.qdot_prev, tangent_row, sigma=self.sigma, bound=self.bound)
        self.qdot_prev = sol.qdot
        return sol

    def plan_airborne(
        self,
        q: np.ndarray,
        jac: np.ndarray,
        lower: np.ndarray,
        upper: np.ndarray,
        approach_dir: np.ndarray | None,
        approach_speed: float | None = None,
        joint_mask: np.ndarray | None = None,
        center: np.ndarray | None = None,
    ) -> GaitLpSolution:
        """Centering move for an airborne finger, optional surface approach.

        The centering speed per joint is held under the braking envelope
        sqrt(sigma*dist/dt) — half the slew budget — so the chain can always
        stop the joint at its set point with margin and the move settles
        instead of limit-cycling.  ``center`` overrides the per-joint set
        points (default: range midpoints).  The approach push rides on top,
        blended down when it would drive the predicted quality rate
        negative.  ``joint_mask`` restricts the centering objective to a
        subset of joints so the push can position the tip without fighting
        the centering on the remaining ones.  Mode "decel" marks ticks
        where even the best slew-feasible move predicts a negative rate
        (braking out of a prior command); the objective is only meaningful
        in mode "box".
        """
        c = quality_rate_gradient(
            q, jac, lower, upper, None, None,
            w1=self.w1, w2=self.w2, q_thres_fraction=self.q_thres_fraction, c_max=self.c_max,
            center=center,
        )
        if joint_mask is not None:
            c = c * np.asarray(joint_mask, dtype=float)
        lo, hi = _interval_box(self.qdot_prev, self.sigma, self.bound)
        lo = np.minimum(lo, hi)
        mid = (
            0.5 * (np.asarray(lower, dtype=float) + np.asarray(upper, dtype=float))
            if center is None
            else np.asarray(center, dtype=float)
        )
        dist = np.abs(mid - np.asarray(q, dtype=float))
        # half the slew budget: braking at sigma/2 per tick tracks this curve
        # with margin, so the joint settles at its set point instead of
        # overshooting
        vcap = np.sqrt(self.sigma * dist / self.tick_dt)
        cap = self.bound if self.airborne_speed_cap is None else self.airborne_speed_cap
        vcap = np.minimum(vcap, min(cap, self.bound))
        # separable LP: clip of the envelope optimum is the box optimum
        z_rec = np.where(c > 0, vcap, np.where(c < 0, -vcap, 0.0))
        push = np.zeros_like(z_rec)
        if approach_dir is not None:
            speed = self.approach_speed if approach_speed is None else approach_speed
            v = speed * normalized(approach_dir)
            if joint_mask is None:
                push = np.linalg.lstsq(np.asarray(jac), v, rcond=None)[0]
            else:
                # complementary split: the push solves the reduced system on
                # the joints outside the centering objective, so c @ push == 0
                # and the realizable part of the approach is fully closed
                own = np.asarray(joint_mask, dtype=float) == 0.0
                jr = np.asarray(jac, dtype=float)[:, own]
                push[own] = np.linalg.lstsq(jr, v, rcond=None)[0]
        z = np.clip(z_rec + push, lo, hi)
        objective = float(c @ z)
        if objective < 0.0 and approach_dir is not None:
            # shrink the push until the predicted rate is nonnegative again
            t_ok, t_bad = 0.0, 1.0
            for _ in range(20):
                t_mid = 0.5 * (t_ok + t_bad)
                if float(c @ np.clip(z_rec + t_mid * push, lo, hi)) >= 0.0:
                    t_ok = t_mid
                else:
                    t_bad = t_mid
            z = np.clip(z_rec + t_ok * push, lo, hi)
            objective = float(c @ z)
        mode = "box"
        if objective < 0.0:
            # even the best slew-feasible move degrades quality: brake
            z = np.clip(0.0, lo, hi)
            objective = float(c @ z)
            mode = "decel"
        if joint_mask is not None:
            # reflexive limit avoidance on the joints outside the centering
            # objective (their c is zero, so this never taints the reported
            # rate): back away from a limit at envelope speed
            off = np.asarray(joint_mask, dtype=float) == 0.0
            guard = 0.05 * (np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float))
            near_lo = off & (np.asarray(q, dtype=float) <= np.asarray(lower, dtype=float) + guard)
            near_hi = off & (np.asarray(q, dtype=float) >= np.asarray(upper, dtype=float) - guard)
            z = np.where(near_lo, np.clip(np.maximum(z, 0.5 * vcap), lo, hi), z)
            z = np.where(near_hi, np.clip(np.minimum(z, -0.5 * vcap), lo, hi), z)
        active = int(np.sum((np.abs(z - lo) < _FEAS_TOL) | (np.abs(z - hi) < _FEAS_TOL)))
        sol = GaitLpSolution(
            qdot=z, objective=objective, n_active=active, feasible=True, mode=mode
        )
        self.qdot_prev = sol.qdot
        return sol
