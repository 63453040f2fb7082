"""Closed-loop scenario execution.

One outer tick: sense -> grasp-quality bookkeeping -> gait state machine
(freeing, sliding relocation, rejoin) -> object pose controller + contact
force distribution -> joint torque targets -> inner torque PID substeps ->
physics step -> event checks.  Each tick appends one CSV trace row; the
run summary is computed from the formatted trace values (exactly what a
consumer parsing the CSV would see), so downstream recomputation matches
bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..force_optimizer import ForceSolution, assemble_problem, optimize_forces
from ..gaits_planner import GaitPlanner, velocity_force_torque
from ..geometry import (
    normalized,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_to_rotmat,
    rotvec_from_quat,
)
from ..grasp_quality import (
    DegenerateSupportError,
    NoGaitCandidateError,
    QualityReport,
    evaluate_quality,
    gaiting_should_trigger,
    hull_area,
    select_free_finger,
)
from ..kinematics import (
    HandModel,
    build_hand,
    contact_frame,
    finger_jacobian,
    forward_kinematics,
    hand_jacobian,
)
from ..object_controller import PdLaw, TorquePid, feedback_linearization, load_lti, pose_error
from ..sim import PosingError, World, make_surface, pose_grasp
from .config import ConfigError, ScenarioConfig
from .reference import ReferenceTrajectory

def trace_columns(n_fingers: int = 4) -> tuple[str, ...]:
    """Trace CSV schema; one fn_<i>_n column per finger."""
    return (
        "time_s",
        "q_total",
        "q_object_m2",
        "q_hand",
        "free_finger",
        "err_px_m",
        "err_py_m",
        "err_pz_m",
        "err_rx_rad",
        "err_ry_rad",
        "err_rz_rad",
        *(f"fn_{i}_n" for i in range(n_fingers)),
        "psi_norm_n",
        "lp_objective",
        "lp_active_constraints",
        "qp_iterations",
        "qp_active_set",
        "dist_active",
    )


TRACE_COLUMNS = trace_columns()

_INT_COLUMNS = {"free_finger", "lp_active_constraints", "qp_iterations", "qp_active_set", "dist_active"}

# settling/recovery bands never shrink below these absolute floors
POS_FLOOR_M = 2e-4
ROT_FLOOR_RAD = 2e-3
SETTLE_FRACTION = 0.05


def _fmt(value: float) -> str:
    return format(float(value), ".9g")


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    trace_text: str
    config: ScenarioConfig
    trace_path: Path | None = None
    summary_path: Path | None = None


@dataclass
class _GaitWindow:
    finger: int
    start_tick: int
    end_tick: int = -1
    stop_reason: str = "run_end"
    crawl_ticks: int = 0
    airborne_ticks: int = 0
    press_ticks: int = 0
    objectives: list[float] = field(default_factory=list)


# regrasp force ramp: ticks to blend the free finger's force target from its
# handoff value to press_force, plus a dwell before the window may close
_PRESS_RAMP_TICKS = 75
_PRESS_SETTLE_TICKS = 25

# airborne relocation recenters the abduction joint; the station push owns
# the flexion joints so the two cannot fight to a standoff
_ABDUCTION_MASK = np.array([1.0, 0.0, 0.0])

# pose error saturation ahead of the outer law (true error still logged)
_ERR_POS_CAP = 0.02
_ERR_ROT_CAP = 0.2

# normalized joint-limit proximity that forces a relocation of that finger
_URGENT_MARGIN = 0.08
# minimum in-plane fraction of the contact's inward normal: below this the
# flexion has no purchase and the finger must be re-placed
_PRESS_FRAC_MIN = 0.6

# a support that stays out of contact this long is not coming back on its
# own: give it a relocation window instead of waiting for the quiet grasp
_RESCUE_S = 0.3
# never lift a finger while any other support carries less than this; a
# ghost-loaded support plus one in the air leaves the object free to tip.
# A support whose smoothed load falls under the floor gets a press-only
# window instead, so the weak contact is re-seated rather than waited on
_LIFT_GUARD_N = 0.3
_FN_EMA_GAIN = 0.02


def _regrasp_spot(world, rot, pos, theta, grasp_height):
    """Surface point at object-local azimuth ``theta`` on the grasp plane.

    Returns (point, outward normal), world frame.  Probing from well outside
    the surface at the grasp-plane height keeps relocations from creeping
    along the object's axis.
    """
    probe = np.array([0.5 * np.cos(theta), 0.5 * np.sin(theta), grasp_height])
    cp_local, n_local = world.surface.closest_point(probe)
    return rot @ cp_local + pos, rot @ n_local


def _abduction_toward(geom, p_world):
    """Abduction angle that swings the finger's flexion plane through a
    world point (links 2+ extend in that plane, so the base-frame azimuth
    of the point IS the abduction angle)."""
    p_b = geom.base_rotation.T @ (np.asarray(p_world, dtype=float) - geom.base_position)
    margin = 0.05 * (geom.upper[0] - geom.lower[0])
    return float(np.clip(np.arctan2(p_b[1], p_b[0]), geom.lower[0] + margin, geom.upper[0] - margin))


def _regrasp_azimuth(world, rot, pos, geom, support_pts, grasp_height, lead_sign=0.0):
    """Object-local azimuth of the best regrasp spot for one finger.

    Scans the grasp-plane ring and scores each reachable candidate:
    support-polygon area dominating, abduction placement breaking ties.
    With a nonzero lead_sign the preferred abduction sits upstream of
    mid-range, so the commanded rotation drags the new contact through
    center instead of from center straight toward the limit -- without
    the lead, every finger winds toward the same stop and the crawl
    stalls.  Returns None when fewer than three supports remain or
    nothing is reachable.
    """
    if len(support_pts) < 3:
        return None
    sup = np.asarray(support_pts, dtype=float)
    lo1, hi1 = float(geom.lower[0]), float(geom.upper[0])
    rng1 = hi1 - lo1
    mid1 = 0.5 * (lo1 + hi1)
    margin = 0.1 * rng1
    # the carried contact swings the abduction against the commanded twist,
    # so the preferred landing sits on the side the twist will drain
    q1_pref = mid1 + 0.15 * rng1 * float(np.sign(lead_sign))
    best_theta, best_score = None, -np.inf
    for theta in np.linspace(-np.pi, np.pi, 72, endpoint=False):
        probe = np.array([0.5 * np.cos(theta), 0.5 * np.sin(theta), grasp_height])
        cp_local, n_local = world.surface.closest_point(probe)
        p_w = rot @ cp_local + pos
        p_b = geom.base_rotation.T @ (p_w - geom.base_position)
        q1s = float(np.arctan2(p_b[1], p_b[0]))
        if not (lo1 + margin <= q1s <= hi1 - margin):
            continue
        reach = float(np.linalg.norm(p_w - geom.base_position))
        if not (0.3 * geom.max_reach <= reach <= 0.95 * geom.max_reach):
            continue
        # the bearing check above cannot tell the near wall from the far
        # one -- both intersections of the flexion plane share a q1 -- so
        # keep only spots facing the base
        n_w = rot @ n_local
        if float(n_w @ (geom.base_position - p_w)) <= 0.0:
            continue
        # flexion pushes only within its plane: skip spots whose inward
        # normal is mostly plane-orthogonal (near-tangent placements)
        n_b = geom.base_rotation.T @ n_w
        ortho = -float(n_b[0]) * np.sin(q1s) + float(n_b[1]) * np.cos(q1s)
        if 1.0 - ortho * ortho < _PRESS_FRAC_MIN**2:
            continue
        dev = (q1s - q1_pref) / rng1
        score = 0.99 * 2.0 * hull_area(np.vstack([sup, p_w])) + 0.08 * (-0.5 * dev * dev)
        if score > best_score:
            best_score, best_theta = score, theta
    return best_theta


def build_world(cfg: ScenarioConfig) -> World:
    hand = build_hand(
        finger_count=cfg.hand.finger_count,
        base_radius=cfg.hand.base_radius,
        base_azimuths_deg=None
        if cfg.hand.base_azimuths_deg is None
        else list(cfg.hand.base_azimuths_deg),
        base_height=cfg.hand.base_height,
        link_lengths=tuple(cfg.hand.link_lengths),
        tip_radius=cfg.hand.tip_radius,
        lower_deg=tuple(cfg.hand.lower_deg),
        upper_deg=tuple(cfg.hand.upper_deg),
    )
    try:
        surface = make_surface(cfg.obj.shape, **cfg.obj.params)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad object geometry for shape '{cfg.obj.shape}': {exc}") from exc
    world = World(
        hand=hand,
        surface=surface,
        mass_nominal=cfg.obj.mass,
        dt=cfg.sim.dt,
        kn=cfg.sim.kn,
        dn=cfg.sim.dn,
        mu=cfg.sim.mu,
        v_eps=cfg.sim.v_eps,
        joint_inertia=cfg.sim.joint_inertia,
        joint_damping=cfg.sim.joint_damping,
        actuator_tc=cfg.sim.actuator_tc,
        tactile_noise_std=cfg.sim.tactile_noise_std,
        seed=cfg.seed,
    )
    world.set_object_pose(
        cfg.obj.position, quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.deg2rad(cfg.obj.yaw_deg))
    )
    offsets = (
        None
        if cfg.grasp.azimuth_offsets_deg is None
        else np.deg2rad(cfg.grasp.azimuth_offsets_deg)
    )
    try:
        pose_grasp(
            world,
            height=cfg.grasp.height,
            azimuth_offsets=offsets,
            pre_indentation=cfg.grasp.pre_indentation,
        )
    except PosingError as exc:
        raise ConfigError(f"initial grasp is infeasible: {exc}") from exc
    missing = [i for i, c in enumerate(world.contacts) if c is None]
    if missing:
        raise ConfigError(f"initial grasp leaves fingers {missing} out of contact")
    world.apply_uncertainty(cfg.mass_scale, cfg.moi_scale)
    return world


def _make_law(cfg: ScenarioConfig):
    c = cfg.controller
    if c.kind == "lti":
        return load_lti(c.lti_path, expected_period=cfg.sim.dt)
    return PdLaw(
        period=cfg.sim.dt,
        kp=c.kp,
        kd=c.kd,
        ki=c.ki,
        derivative_cutoff_hz=c.derivative_cutoff_hz,
        integral_limit=c.integral_limit,
    )


def _pulse_state(cfg: ScenarioConfig, t: float) -> tuple[np.ndarray, np.ndarray, int]:
    f_ext = np.zeros(3)
    t_ext = np.zeros(3)
    bits = 0
    for pulse in cfg.force_pulses:
        if pulse.start_s <= t < pulse.end_s:
            f_ext = f_ext + pulse.wrench
            bits |= 1
    for pulse in cfg.torque_pulses:
        if pulse.start_s <= t < pulse.end_s:
            t_ext = t_ext + pulse.wrench
            bits |= 2
    return f_ext, t_ext, bits


def run_scenario(
    cfg: ScenarioConfig,
    out_dir: str | Path | None = None,
    on_tick: Callable[[int, float, "World", str, int | None], None] | None = None,
) -> RunResult:
    """Run one scenario; `on_tick(k, t, world, phase, free)` is called after
    every control step when given, for inspection without touching the loop."""
    t_wall = time.perf_counter()
    world = build_world(cfg)
    hand: HandModel = world.hand
    n_f = hand.n_fingers
    dt = cfg.sim.dt
    dt_inner = dt / cfg.sim.inner_multiple
    n_ticks = int(round(cfg.duration_s * cfg.sim.control_hz))

    base_pos, base_quat = world.object_pose()
    reference = ReferenceTrajectory(cfg.reference, base_pos, base_quat, cfg.duration_s)
    law = _make_law(cfg)
    pid = TorquePid(
        period=dt_inner,
        kp=cfg.controller.pid_kp,
        ki=cfg.controller.pid_ki,
        kd=cfg.controller.pid_kd,
        limit=cfg.controller.pid_limit,
        n_joints=hand.n_joints,
    )
    gait = GaitPlanner(
        sigma=cfg.planner.sigma,
        bound=cfg.planner.bound,
        q_thres_fraction=cfg.planner.q_thres_fraction,
        c_max=cfg.planner.c_max,
        approach_speed=cfg.planner.approach_speed,
        airborne_speed_cap=cfg.planner.airborne_speed_cap,
        tick_dt=dt,
    )
    lower = hand.fingers[0].lower
    upper = hand.fingers[0].upper
    inertia_nominal = world.inertia_body_nominal

    # rotation-phase bookkeeping: capture measured orientation at the tick
    # boundaries of each commanded single-axis leg
    phases = reference.rotation_phases()
    phase_marks: dict[int, list[str]] = {}
    for idx, ph in enumerate(phases):
        k0 = min(int(np.ceil(ph.start_s / dt)), n_ticks - 1)
        k1 = min(int(ph.end_s / dt), n_ticks - 1)
        phase_marks.setdefault(k0, []).append(f"start:{idx}")
        phase_marks.setdefault(k1, []).append(f"end:{idx}")
    phase_quats: dict[str, np.ndarray] = {}

    free: int | None = None
    phase = ""
    gait_start = 0
    phase_tick = 0
    f_ramp_from = 0.0
    recentered = False
    star_theta = 0.0
    cooldown_until = 0
    static_run = 0
    lost_run = [0] * n_f
    fn_ema = [cfg.planner.press_force] * n_f
    last_free: int | None = None
    windows: list[_GaitWindow] = []
    window: _GaitWindow | None = None
    last_report: QualityReport | None = None
    last_pressing = [c.pressing_normal.copy() for c in world.contacts]
    f_prev = np.zeros(3 * n_f)
    warm: ForceSolution | None = None
    tau_held = np.zeros((n_f, 3))
    qp_limit_ticks = 0
    events: list[dict] = []
    exit_code = 0
    no_contact_run = 0
    sat_run = np.zeros((n_f, 3), dtype=int)
    sat_flagged = np.zeros((n_f, 3), dtype=bool)
    prev_quat = base_quat.copy()
    total_rotvec = np.zeros(3)

    rows: list[list[float]] = []

    for k in range(n_ticks):
        t = k * dt
        meas_pos, meas_quat = world.object_pose()
        q = world.q
        fk = [forward_kinematics(g, q[i]) for i, g in enumerate(hand.fingers)]
        tact = [world.tactile_read(i) for i in range(n_f)]
        in_contact = [ta.in_contact for ta in tact]
        points = world.contact_points()
        tips = [fk[i].origins[-1] for i in range(n_f)]
        for i in range(n_f):
            if in_contact[i]:
                last_pressing[i] = tact[i].pressing_normal

        # accumulated measured rotation (world-frame increments)
        inc = rotvec_from_quat(quat_mul(meas_quat, quat_conj(prev_quat)))
        total_rotvec += inc
        prev_quat = meas_quat
        for mark in phase_marks.get(k, ()):
            phase_quats[mark] = meas_quat.copy()

        slips = [tact[i].slip_speed for i in range(n_f) if in_contact[i]]
        if all(in_contact) and (not slips or max(slips) < cfg.planner.static_slip):
            static_run += 1
        else:
            static_run = 0
        for i in range(n_f):
            lost_run[i] = 0 if (in_contact[i] or i == free) else lost_run[i] + 1
            if i == free:
                fn_ema[i] = cfg.planner.press_force  # judged fresh after the window
            else:
                fn_ema[i] += _FN_EMA_GAIN * (tact[i].normal_force - fn_ema[i])

        free_point = tips[free] if free is not None else None
        try:
            report = evaluate_quality(
                q, lower, upper, points, free_finger=free, free_point=free_point
            )
            last_report = report
        except DegenerateSupportError:
            report = last_report

        ref_pos, ref_quat = reference.pose(t)
        err = pose_error(ref_pos, ref_quat, meas_pos, meas_quat)

        # ---- gait state machine ----
        lp_objective = 0.0
        lp_active = 0
        qdot_des = None
        jac_free = None
        f_des_free = cfg.planner.press_force
        if free is None and cfg.planner.enabled and report is not None and k >= cooldown_until:
            start_phase = "slide"
            stranded = [i for i in range(n_f) if lost_run[i] * dt > _RESCUE_S]
            weak = [i for i in range(n_f) if in_contact[i] and fn_ema[i] < _LIFT_GUARD_N]
            if stranded:
                # a support that fell off and stayed off: re-place it now,
                # straight from the air, instead of waiting for quiet
                free = max(stranded, key=lambda i: lost_run[i])
                start_phase = "detach"
            elif weak:
                # a support carrying next to nothing: re-seat it in place
                # before it flickers off and strands the grasp on three
                free = min(weak, key=lambda i: fn_ema[i])
                start_phase = "press"
            elif all(in_contact):
                # lifting one finger is only safe while every other support
                # genuinely carries load right now; a transient dip just
                # skips this tick (the EMA path above handles a lasting one)
                loaded = all(
                    tact[i].normal_force >= _LIFT_GUARD_N for i in range(n_f)
                )
                margins = np.array([
                    float(np.min(np.minimum(q[i] - g.lower, g.upper - q[i]) / g.ranges))
                    for i, g in enumerate(hand.fingers)
                ])
                worst = int(np.argmin(margins))
                fracs = np.empty(n_f)
                for i, g in enumerate(hand.fingers):
                    y_pl = g.base_rotation @ np.array(
                        [-np.sin(q[i][0]), np.cos(q[i][0]), 0.0]
                    )
                    ortho = float(tact[i].pressing_normal @ y_pl)
                    fracs[i] = np.sqrt(max(0.0, 1.0 - ortho * ortho))
                flat = int(np.argmin(fracs))
                if not loaded:
                    pass
                elif margins[worst] < _URGENT_MARGIN:
                    # a support about to pin a joint stop outranks quality
                    # and the quiet-grasp gate: pinned longer than
                    # limits.saturation_s ends the run
                    free = worst
                elif fracs[flat] < _PRESS_FRAC_MIN:
                    # carried almost tangent to its own flexion plane: the
                    # finger can no longer press and must be re-placed
                    free = flat
                elif static_run >= cfg.planner.static_ticks and gaiting_should_trigger(
                    report.q_total, cfg.planner.quality_threshold, True
                ):
                    try:
                        free = select_free_finger(
                            report, in_contact,
                            w_area=cfg.planner.w_area, w_manip=cfg.planner.w_manip,
                            exclude=last_free,
                        )
                    except NoGaitCandidateError:
                        free = None
            if free is not None:
                gait.reset()
                window = _GaitWindow(finger=free, start_tick=k)
                phase = start_phase
                gait_start = k
                phase_tick = k
                f_ramp_from = tact[free].normal_force
                recentered = False
                last_free = free
                rot0 = quat_to_rotmat(meas_quat)
                tl0 = rot0.T @ (tips[free] - meas_pos)
                star_theta = float(np.arctan2(tl0[1], tl0[0]))

        if free is not None:
            geom = hand.fingers[free]
            rot = quat_to_rotmat(meas_quat)
            tip_local = rot.T @ (tips[free] - meas_pos)
            clearance = float(world.surface.signed_distance(tip_local)) - cfg.hand.tip_radius
            in_c = in_contact[free]
            stop_reason = None

            if (k - gait_start) * dt > cfg.planner.timeout_s:
                stop_reason = "timeout"

            if stop_reason is None and phase == "slide":
                if not in_c:
                    phase, phase_tick = "detach", k
                else:
                    jac_free = finger_jacobian(geom, q[free], point=points[free], frames=fk[free])
                    support = [points[i] for i in range(n_f) if i != free and points[i] is not None]
                    sol = gait.plan_contact(
                        q[free],
                        jac_free,
                        tact[free].pressing_normal,
                        lower,
                        upper,
                        support_points=np.asarray(support) if len(support) >= 3 else None,
                        free_point=points[free],
                        joint_mask=_ABDUCTION_MASK,
                    )
                    stalled = (
                        (k - phase_tick) >= cfg.planner.grace_ticks
                        and sol.objective < cfg.planner.rate_threshold
                    )
                    if sol.objective < 0.0 or stalled:
                        # no improving slide left: lift off and relocate
                        phase, phase_tick = "detach", k
                    else:
                        qdot_des = sol.qdot
                        lp_objective = sol.objective
                        lp_active = sol.n_active
                        window.crawl_ticks += 1
                        window.objectives.append(sol.objective)
                        ramp = min(1.0, (k - gait_start) / float(_PRESS_RAMP_TICKS))
                        f_des_free = f_ramp_from + (cfg.planner.press_force - f_ramp_from) * ramp

            def _pick_star():
                yaw_ahead = reference.yaw_angle(t + 0.5) - reference.yaw_angle(t)
                theta = _regrasp_azimuth(
                    world, rot, meas_pos, geom,
                    [points[i] for i in range(n_f) if i != free and points[i] is not None],
                    cfg.grasp.height,
                    lead_sign=yaw_ahead,
                )
                if theta is None:
                    theta = float(np.arctan2(tip_local[1], tip_local[0]))
                return theta

            if stop_reason is None and phase == "detach" and qdot_des is None:
                jac_free = finger_jacobian(geom, q[free], frames=fk[free])
                if clearance >= cfg.planner.lift_distance or (k - phase_tick) * dt > 0.5:
                    star_theta = _pick_star()
                    phase, phase_tick = "hover", k
                else:
                    lift = -normalized(last_pressing[free])
                    v = np.linalg.lstsq(jac_free, cfg.planner.approach_speed * lift, rcond=None)[0]
                    qdot_des = gait.command(v)
                    f_des_free = 0.0
                    window.airborne_ticks += 1

            if stop_reason is None and phase == "hover" and qdot_des is None:
                jac_free = finger_jacobian(geom, q[free], frames=fk[free])
                # station point: lift_distance outside the regrasp spot, so
                # the centering move cannot wander off the grasp plane
                p_star, n_out = _regrasp_spot(world, rot, meas_pos, star_theta, cfg.grasp.height)
                near_star = float(np.linalg.norm(p_star - tips[free])) < 3.0 * cfg.planner.lift_distance
                if in_c and (k - phase_tick) >= 3 and near_star and recentered:
                    # brushed back into the surface at the regrasp spot after
                    # the posture plateau: consolidate here (pressing before
                    # the plateau would regrasp where the finger lifted off,
                    # resetting nothing)
                    phase, phase_tick = "press", k
                    f_ramp_from = tact[free].normal_force
                elif in_c and (k - phase_tick) >= 50:
                    # dragging along the surface far from the regrasp spot:
                    # lift off again and restart the approach from clear air
                    phase, phase_tick = "detach", k
                else:
                    # approach cone: hold the radial standoff open while the
                    # tangential error is large, so the tip aligns along the
                    # wall instead of touching down far from the regrasp spot
                    to_star = p_star - tips[free]
                    e_t = to_star - float(to_star @ n_out) * n_out
                    s_off = cfg.planner.lift_distance + float(np.linalg.norm(e_t))
                    toward = to_star + s_off * n_out
                    dist_h = float(np.linalg.norm(toward))
                    # creep once the wall is close: the slew chain needs the
                    # braking room or the tip punches through the standoff
                    speed = min(
                        cfg.planner.approach_speed,
                        4.0 * dist_h,
                        0.03 + 10.0 * max(0.0, clearance),
                    )
                    center = geom.midpoints.copy()
                    # swing the abduction at the station, not the spot: the
                    # spot's plane contains the whole base-to-spot line, so a
                    # wall-blocked tip can sit on it with the azimuth error
                    # intact while the flexion push has nothing in-plane to do
                    center[0] = _abduction_toward(geom, tips[free] + toward)
                    sol = gait.plan_airborne(
                        q[free], jac_free, lower, upper,
                        toward if dist_h > 1e-9 else None, speed,
                        joint_mask=_ABDUCTION_MASK,
                        center=center,
                    )
                    qdot_des = sol.qdot
                    f_des_free = 0.0
                    window.airborne_ticks += 1
                    if sol.mode == "box":
                        lp_objective = sol.objective
                        lp_active = sol.n_active
                        window.objectives.append(sol.objective)
                        if (
                            (k - phase_tick) >= 25
                            and sol.objective < cfg.planner.rate_threshold
                        ):
                            recentered = True
                            if dist_h < cfg.planner.lift_distance:
                                # posture plateau at the station: re-approach
                                phase, phase_tick = "descend", k

            if stop_reason is None and phase == "descend" and qdot_des is None:
                jac_free = finger_jacobian(geom, q[free], frames=fk[free])
                if in_c:
                    phase, phase_tick = "press", k
                    f_ramp_from = tact[free].normal_force
                else:
                    p_star, _ = _regrasp_spot(world, rot, meas_pos, star_theta, cfg.grasp.height)
                    toward = p_star - tips[free]
                    if float(np.linalg.norm(toward)) < 1e-9:
                        toward = last_pressing[free]
                    center = geom.midpoints.copy()
                    center[0] = _abduction_toward(geom, p_star)
                    sol = gait.plan_airborne(
                        q[free], jac_free, lower, upper, toward,
                        joint_mask=_ABDUCTION_MASK,
                        center=center,
                    )
                    qdot_des = sol.qdot
                    f_des_free = 0.0
                    window.airborne_ticks += 1
                    if sol.mode == "box":
                        lp_objective = sol.objective
                        lp_active = sol.n_active
                        window.objectives.append(sol.objective)

            if stop_reason is None and phase == "press" and qdot_des is None:
                jac_free = finger_jacobian(geom, q[free], frames=fk[free])
                qdot_des = gait.command(np.zeros(3))
                if not in_c and (k - phase_tick) >= 5:
                    phase, phase_tick = "descend", k  # lost the touch, re-approach
                else:
                    ramp = min(1.0, (k - phase_tick) / float(_PRESS_RAMP_TICKS))
                    f_des_free = f_ramp_from + (cfg.planner.press_force - f_ramp_from) * ramp
                    window.press_ticks += 1
                    if in_c and (k - phase_tick) >= _PRESS_RAMP_TICKS + _PRESS_SETTLE_TICKS:
                        stop_reason = (
                            "recovered"
                            if report is not None and report.q_total > cfg.planner.quality_threshold
                            else "stalled"
                        )

            if stop_reason is not None:
                window.end_tick = k
                window.stop_reason = stop_reason
                windows.append(window)
                window = None
                free = None
                phase = ""
                cooldown_until = k + int(round(cfg.planner.cooldown_s / dt))
                qdot_des = None

        # ---- object controller and force distribution ----
        # demand cap: a wound-up pose error must not ask the force QP for
        # more wrench than stick friction can carry, or the supports slip
        # and the object rocks over instead of catching up
        e_ctl = err.copy()
        pn = float(np.linalg.norm(e_ctl[:3]))
        rn = float(np.linalg.norm(e_ctl[3:]))
        if pn > _ERR_POS_CAP:
            e_ctl[:3] *= _ERR_POS_CAP / pn
        if rn > _ERR_ROT_CAP:
            e_ctl[3:] *= _ERR_ROT_CAP / rn
        u = law.step(e_ctl)
        f_des = feedback_linearization(u, cfg.obj.mass, inertia_nominal, meas_quat)
        frames_list = [
            contact_frame(tact[i].pressing_normal) if (in_contact[i] and i != free) else None
            for i in range(n_f)
        ]
        jh = hand_jacobian(hand, q, frames_list, points, frames=fk)
        problem = assemble_problem(
            jh,
            frames_list,
            points,
            com=meas_pos,
            f_des=f_des,
            f_prev=f_prev,
            mu=cfg.force.mu,
            n_edges=cfg.force.n_edges,
            alpha=cfg.force.alpha,
            tau_limit=cfg.force.tau_limit,
        )
        qp = optimize_forces(problem, warm=warm)
        if qp.status == "optimal":
            tau_cmd = qp.tau.reshape(n_f, 3).copy()
            tau_held = tau_cmd.copy()
            f_prev = qp.f
            warm = qp
        else:
            qp_limit_ticks += 1
            tau_cmd = tau_held.copy()
        psi_norm = float(np.linalg.norm(qp.psi))

        for i in range(n_f):
            if i == free and qdot_des is not None:
                press = tact[i].pressing_normal if in_contact[i] else last_pressing[i]
                tau_cmd[i] = velocity_force_torque(
                    qdot_des,
                    jac_free,
                    press,
                    f_des_free,
                    tact[i].normal_force,
                    kv=cfg.planner.kv,
                    kf=cfg.planner.kf,
                    qdot_act=world.qdot[i],
                )
            elif i != free and not in_contact[i]:
                # lost support contact: press back toward the last surface
                tau_cmd[i] = velocity_force_torque(
                    np.zeros(3),
                    finger_jacobian(hand.fingers[i], q[i], frames=fk[i]),
                    last_pressing[i],
                    cfg.planner.press_force,
                    0.0,
                    kv=cfg.planner.kv,
                    kf=cfg.planner.kf,
                    qdot_act=world.qdot[i],
                )

        f_ext, t_ext, dist_bits = _pulse_state(cfg, t)

        rows.append(
            [
                t,
                report.q_total if report is not None else 0.0,
                report.q_object if report is not None else 0.0,
                report.q_hand if report is not None else 0.0,
                float(free) if free is not None else -1.0,
                err[0],
                err[1],
                err[2],
                err[3],
                err[4],
                err[5],
                *(tact[i].normal_force for i in range(n_f)),
                psi_norm,
                lp_objective,
                float(lp_active),
                float(qp.iterations),
                float(qp.n_active),
                float(dist_bits),
            ]
        )

        # ---- actuate and integrate ----
        tau_flat = tau_cmd.reshape(-1)
        applied = np.zeros((n_f, 3))
        for _ in range(cfg.sim.inner_multiple):
            cmd = pid.step(tau_flat, world.actuator_tau.reshape(-1))
            applied += world.actuator_step(cmd.reshape(n_f, 3), dt_inner)
        world.step(applied / cfg.sim.inner_multiple, f_ext, t_ext)
        if on_tick is not None:
            on_tick(k, t, world, phase, free)

        # ---- event checks ----
        if not world.is_finite():
            events.append({"kind": "nan", "t_s": round(t + dt, 9)})
            exit_code = 3
            break
        if all(c is None for c in world.contacts):
            no_contact_run += 1
        else:
            no_contact_run = 0
        if no_contact_run * dt > cfg.limits.drop_s:
            events.append({"kind": "drop", "t_s": round(t + dt, 9)})
            exit_code = 3
            break
        at_limit = (world.q <= world.hand.lower_limits() + 1e-9) | (
            world.q >= world.hand.upper_limits() - 1e-9
        )
        sat_run = np.where(at_limit, sat_run + 1, 0)
        sat_flagged &= at_limit  # episode ended -> eligible again
        hits = (sat_run * dt > cfg.limits.saturation_s) & ~sat_flagged
        if np.any(hits):
            for fi, ji in zip(*np.nonzero(hits)):
                events.append(
                    {
                        "kind": "saturation",
                        "t_s": round(t + dt, 9),
                        "finger": int(fi),
                        "joint": int(ji),
                    }
                )
                sat_flagged[fi, ji] = True
            if cfg.limits.fail_on_saturation:
                exit_code = 3
                break

    if window is not None:
        window.end_tick = len(rows) - 1
        windows.append(window)

    # ---- trace text (the authoritative record) ----
    cols = trace_columns(n_f)
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for name, value in zip(cols, row):
            cells.append(str(int(value)) if name in _INT_COLUMNS else _fmt(value))
        lines.append(",".join(cells))
    trace_text = "\n".join(lines) + "\n"

    summary = _build_summary(
        cfg,
        trace_text,
        reference,
        windows,
        events,
        exit_code,
        total_rotvec,
        phase_quats,
        phases,
        qp_limit_ticks,
        wall_time_s=time.perf_counter() - t_wall,
    )

    result = RunResult(exit_code=exit_code, summary=summary, trace_text=trace_text, config=cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.trace_path = out / f"{cfg.scenario}_trace.csv"
        result.summary_path = out / f"{cfg.scenario}_summary.json"
        result.trace_path.write_text(trace_text, encoding="utf-8", newline="\n")
        result.summary_path.write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
        )
    return result


# ----------------------------------------------------------------------
# summary
# ----------------------------------------------------------------------


def parse_trace(trace_text: str) -> tuple[list[str], np.ndarray]:
    lines = trace_text.strip().split("\n")
    columns = lines[0].split(",")
    data = np.array([[float(tok) for tok in ln.split(",")] for ln in lines[1:]])
    return columns, data


def settle_after(times: np.ndarray, signal: np.ndarray, t0: float,
                 fraction: float, floor: float) -> tuple[float | None, float, float]:
    """(settling time from t0, peak, band): first time from which |signal|
    stays within max(fraction*peak-after-t0, floor) forever after."""
    mask = times >= t0
    if not np.any(mask):
        return None, 0.0, floor
    idx0 = int(np.argmax(mask))
    tail = np.abs(signal[idx0:])
    peak = float(tail.max())
    band = max(fraction * peak, floor)
    # suffix maximum: settled at i iff max(tail[i:]) <= band
    suffix = np.maximum.accumulate(tail[::-1])[::-1]
    ok = suffix <= band
    if not np.any(ok):
        return None, peak, band
    return float(times[idx0 + int(np.argmax(ok))] - t0), peak, band


def _recovery(times: np.ndarray, err_norm: np.ndarray, start_s: float, end_s: float,
              window_end_s: float, floor: float) -> dict:
    in_pulse = (times >= start_s) & (times < end_s)
    peak = float(np.max(err_norm[in_pulse])) if np.any(in_pulse) else 0.0
    band = max(SETTLE_FRACTION * peak, floor)
    window = (times >= end_s) & (times < window_end_s)
    entry = {
        "start_s": start_s,
        "end_s": end_s,
        "peak_err": peak,
        "band": band,
        "recovered": False,
        "recovery_s": None,
    }
    idx = np.flatnonzero(window)
    if idx.size == 0:
        return entry
    tail = err_norm[idx]
    suffix = np.maximum.accumulate(tail[::-1])[::-1]
    ok = suffix <= band
    if np.any(ok):
        entry["recovered"] = True
        entry["recovery_s"] = float(times[idx[int(np.argmax(ok))]] - end_s)
    return entry


def _build_summary(
    cfg: ScenarioConfig,
    trace_text: str,
    reference: ReferenceTrajectory,
    windows: list[_GaitWindow],
    events: list[dict],
    exit_code: int,
    total_rotvec: np.ndarray,
    phase_quats: dict[str, np.ndarray],
    phases,
    qp_limit_ticks: int,
    wall_time_s: float,
) -> dict:
    columns, data = parse_trace(trace_text)
    col = {name: i for i, name in enumerate(columns)}
    times = data[:, col["time_s"]]
    dt = cfg.sim.dt

    pos_err = data[:, [col["err_px_m"], col["err_py_m"], col["err_pz_m"]]]
    rot_err = data[:, [col["err_rx_rad"], col["err_ry_rad"], col["err_rz_rad"]]]
    pos_norm = np.linalg.norm(pos_err, axis=1)
    rot_norm = np.linalg.norm(rot_err, axis=1)

    t0 = reference.cfg.first_event_s()
    channels = []
    settle_values = []
    for name, sig, floor in (
        ("px", pos_err[:, 0], POS_FLOOR_M),
        ("py", pos_err[:, 1], POS_FLOOR_M),
        ("pz", pos_err[:, 2], POS_FLOOR_M),
        ("rx", rot_err[:, 0], ROT_FLOOR_RAD),
        ("ry", rot_err[:, 1], ROT_FLOOR_RAD),
        ("rz", rot_err[:, 2], ROT_FLOOR_RAD),
    ):
        settle, peak, band = settle_after(times, sig, t0, SETTLE_FRACTION, floor)
        channels.append(
            {"channel": name, "settling_s": settle, "peak": peak, "band": band}
        )
        settle_values.append(settle if settle is not None else float(cfg.duration_s))
    overall_settling = max(settle_values) if settle_values else 0.0

    steady_from = min(max(t0 + overall_settling + 0.2, cfg.summary_exclude_s), float(times[-1]))
    steady = times >= steady_from
    excl = times >= cfg.summary_exclude_s

    gait_rows = data[:, col["free_finger"]] >= 0
    lp_col = data[:, col["lp_objective"]]
    crawl_rows = gait_rows & (lp_col != 0.0)

    gait_list = []
    for w in windows:
        obj = np.array(w.objectives) if w.objectives else np.array([])
        gait_list.append(
            {
                "finger": w.finger,
                "start_s": round(w.start_tick * dt, 9),
                "end_s": round(w.end_tick * dt, 9),
                "stop_reason": w.stop_reason,
                "crawl_ticks": w.crawl_ticks,
                "airborne_ticks": w.airborne_ticks,
                "press_ticks": w.press_ticks,
                "min_lp_objective": float(obj.min()) if obj.size else None,
                "mean_lp_objective": float(obj.mean()) if obj.size else None,
            }
        )

    pulses = []
    pulse_edges = sorted(
        [p.start_s for p in cfg.force_pulses] + [p.start_s for p in cfg.torque_pulses]
    )

    def window_end(end_s: float) -> float:
        later = [edge for edge in pulse_edges if edge > end_s + 1e-12]
        return later[0] if later else float(cfg.duration_s)

    for pulse in cfg.force_pulses:
        entry = _recovery(times, pos_norm, pulse.start_s, pulse.end_s,
                          window_end(pulse.end_s), POS_FLOOR_M)
        entry["kind"] = "force"
        entry["magnitude"] = float(np.linalg.norm(pulse.wrench))
        pulses.append(entry)
    for pulse in cfg.torque_pulses:
        entry = _recovery(times, rot_norm, pulse.start_s, pulse.end_s,
                          window_end(pulse.end_s), ROT_FLOOR_RAD)
        entry["kind"] = "torque"
        entry["magnitude"] = float(np.linalg.norm(pulse.wrench))
        pulses.append(entry)
    pulses.sort(key=lambda e: e["start_s"])

    phase_rotations = []
    for idx, ph in enumerate(phases):
        q_start = phase_quats.get(f"start:{idx}")
        q_end = phase_quats.get(f"end:{idx}")
        if q_start is None or q_end is None:
            continue
        rel = rotvec_from_quat(quat_mul(q_end, quat_conj(q_start)))
        achieved = float(np.linalg.norm(rel))
        axis_vec = np.array([0.0, 0.0, 1.0]) if ph.axis == "yaw" else np.array([0.0, 1.0, 0.0])
        alignment = float(rel @ axis_vec / achieved) if achieved > 1e-12 else 0.0
        phase_rotations.append(
            {
                "axis": ph.axis,
                "start_s": ph.start_s,
                "end_s": ph.end_s,
                "commanded_rad": ph.angle_rad,
                "achieved_rad": achieved,
                "axis_alignment": alignment,
            }
        )

    fn = data[:, [col[c] for c in columns if c.startswith("fn_")]]
    quality = data[:, col["q_total"]]

    return {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "control_hz": cfg.sim.control_hz,
        "ticks": int(data.shape[0]),
        "exit_code": exit_code,
        "events": events,
        "uncertainty": {"mass_scale": cfg.mass_scale, "moi_scale": cfg.moi_scale},
        "columns": list(columns),
        "settling": {
            "reference_event_s": t0,
            "fraction": SETTLE_FRACTION,
            "channels": channels,
            "overall_s": overall_settling,
        },
        "tracking": {
            "steady_from_s": float(steady_from),
            "steady_max_pos_err_m": float(np.max(pos_norm[steady])) if np.any(steady) else None,
            "steady_max_rot_err_rad": float(np.max(rot_norm[steady])) if np.any(steady) else None,
            "max_pos_err_m": float(np.max(pos_norm[excl])) if np.any(excl) else None,
            "max_rot_err_rad": float(np.max(rot_norm[excl])) if np.any(excl) else None,
            "final_pos_err_m": float(pos_norm[-1]),
            "final_rot_err_rad": float(rot_norm[-1]),
        },
        "quality": {
            "initial": float(quality[0]),
            "final": float(quality[-1]),
            "min": float(quality.min()),
            "max": float(quality.max()),
            "min_lp_objective_gait": float(lp_col[gait_rows].min()) if np.any(gait_rows) else None,
            "min_lp_objective_crawl": float(lp_col[crawl_rows].min()) if np.any(crawl_rows) else None,
            "crawl_tick_count": int(np.sum(crawl_rows)),
        },
        "gaits": gait_list,
        "gait_count": len(gait_list),
        "rotation": {
            "total_rotvec_rad": [float(v) for v in total_rotvec],
            "net_yaw_rad": float(total_rotvec[2]),
            "phases": phase_rotations,
        },
        "disturbances": pulses,
        "force": {
            "max_fn_n": float(fn.max()),
            "max_psi_norm_n": float(np.max(data[:, col["psi_norm_n"]])),
            "qp_iteration_limit_ticks": qp_limit_ticks,
        },
        "wall_time_s": wall_time_s,
    }
