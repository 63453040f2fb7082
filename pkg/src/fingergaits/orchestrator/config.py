"""Scenario configuration: YAML schema, validation, defaults.

Every knob the runner honors lives here.  Parsing is strict: unknown keys,
wrong shapes, or out-of-range values raise ConfigError, which the CLI maps
to exit code 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


class ConfigError(ValueError):
    """Bad scenario configuration (CLI exit code 2)."""


def _section(raw: dict, name: str) -> dict:
    value = raw.pop(name, {})
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping, got {type(value).__name__}")
    return dict(value)


def _no_leftovers(d: dict, where: str) -> None:
    if d:
        raise ConfigError(f"unknown keys in {where}: {sorted(d)}")


def _floats(d: dict, key: str, default, size: int | None = None, where: str = "") -> np.ndarray:
    value = d.pop(key, default)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if size is not None and arr.shape != (size,):
        raise ConfigError(f"{where}{key} must have {size} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}{key} has non-finite entries")
    return arr


def _float(d: dict, key: str, default: float, where: str = "",
           lo: float | None = None, hi: float | None = None) -> float:
    value = d.pop(key, default)
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key} must be a number, got {value!r}") from None
    if not np.isfinite(value):
        raise ConfigError(f"{where}{key} must be finite")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}{key} must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{where}{key} must be <= {hi}, got {value}")
    return value


def _int(d: dict, key: str, default: int, where: str = "", lo: int | None = None) -> int:
    value = d.pop(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{where}{key} must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}{key} must be >= {lo}, got {value}")
    return value


def _bool(d: dict, key: str, default: bool, where: str = "") -> bool:
    value = d.pop(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{where}{key} must be true/false, got {value!r}")
    return value


@dataclass
class HandConfig:
    finger_count: int = 4
    base_radius: float = 0.10
    base_azimuths_deg: np.ndarray | None = None
    base_height: float = 0.0
    link_lengths: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.04, 0.03]))
    tip_radius: float = 0.01
    lower_deg: np.ndarray = field(default_factory=lambda: np.array([-45.0, -10.0, -10.0]))
    upper_deg: np.ndarray = field(default_factory=lambda: np.array([45.0, 135.0, 170.0]))


@dataclass
class ObjectConfig:
    shape: str = "cylinder"
    params: dict = field(default_factory=dict)
    mass: float = 0.25
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.05]))
    yaw_deg: float = 0.0


@dataclass
class GraspConfig:
    height: float = 0.0
    azimuth_offsets_deg: np.ndarray | None = None
    pre_indentation: float = 3e-4


@dataclass
class PulseConfig:
    start_s: float
    duration_s: float
    wrench: np.ndarray  # (3,) force or torque

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass
class ReferenceConfig:
    position_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    position_ramp_start_s: float = 0.5
    position_ramp_duration_s: float = 1.0
    position_steps: list[tuple[float, np.ndarray]] = field(default_factory=list)
    step_rise_s: float = 0.1  # C1 smoothing of step commands; 0 = hard step
    yaw_rate: float = 0.0
    yaw_start_s: float = 0.5
    yaw_stop_s: float | None = None
    yaw_steps: list[tuple[float, float]] = field(default_factory=list)
    pitch_kind: str = "sine"  # sine | ramp
    pitch_amplitude: float = 0.0
    pitch_rate: float = 0.0
    pitch_start_s: float = 0.5

    def first_event_s(self) -> float:
        """Earliest time any nonzero reference motion begins (for settling)."""
        times = []
        if float(np.linalg.norm(self.position_offset)) > 0.0:
            times.append(self.position_ramp_start_s)
        times.extend(at for at, off in self.position_steps if float(np.linalg.norm(off)) > 0.0)
        if self.yaw_rate != 0.0:
            times.append(self.yaw_start_s)
        times.extend(at for at, ang in self.yaw_steps if ang != 0.0)
        if self.pitch_amplitude != 0.0 or (self.pitch_kind == "ramp" and self.pitch_rate != 0.0):
            times.append(self.pitch_start_s)
        return min(times) if times else 0.0


@dataclass
class ControllerConfig:
    kind: str = "pd"
    kp: np.ndarray = field(default_factory=lambda: np.array([400.0] * 3 + [60.0] * 3))
    kd: np.ndarray = field(default_factory=lambda: np.array([40.0] * 3 + [8.0] * 3))
    ki: np.ndarray = field(default_factory=lambda: np.zeros(6))
    integral_limit: float = 20.0
    derivative_cutoff_hz: float = 30.0
    lti_path: str | None = None
    pid_kp: float = 2.0
    pid_ki: float = 400.0
    pid_kd: float = 0.0
    pid_limit: float = 2.0


@dataclass
class PlannerConfig:
    enabled: bool = True
    quality_threshold: float = 0.004
    rate_threshold: float = 1e-5
    sigma: float = 0.002
    bound: float = 1.0
    grace_ticks: int = 10
    rate_window: int = 10
    timeout_s: float = 3.0
    cooldown_s: float = 0.3
    static_slip: float = 1e-3
    static_ticks: int = 5
    press_force: float = 0.5
    kv: float = 0.05
    kf: float = 1.5
    approach_speed: float = 0.03
    lift_distance: float = 0.005
    airborne_speed_cap: float = 1.0
    c_max: float = 50.0
    q_thres_fraction: float = 0.25
    w_area: float = 0.5
    w_manip: float = 0.5


@dataclass
class ForceConfig:
    mu: float = 0.5
    n_edges: int = 8
    alpha: tuple[float, float, float] = (0.01, 0.01, 1000.0)
    tau_limit: float = 0.5


@dataclass
class SimConfig:
    control_hz: float = 500.0
    inner_multiple: int = 4
    kn: float = 5000.0
    dn: float = 50.0
    mu: float = 0.8
    v_eps: float = 1e-4
    joint_inertia: float = 1e-4
    joint_damping: float = 0.01
    actuator_tc: float = 0.005
    tactile_noise_std: float = 0.0

    @property
    def dt(self) -> float:
        return 1.0 / self.control_hz


@dataclass
class LimitsConfig:
    drop_s: float = 0.2
    saturation_s: float = 0.5
    fail_on_saturation: bool = True


@dataclass
class ScenarioConfig:
    scenario: str
    duration_s: float
    seed: int = 0
    hand: HandConfig = field(default_factory=HandConfig)
    obj: ObjectConfig = field(default_factory=ObjectConfig)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    force: ForceConfig = field(default_factory=ForceConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    mass_scale: float = 0.0
    moi_scale: float = 0.0
    force_pulses: list[PulseConfig] = field(default_factory=list)
    torque_pulses: list[PulseConfig] = field(default_factory=list)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    summary_exclude_s: float = 1.0


_SHAPE_KEYS = {
    "cylinder": {"radius", "half_height"},
    "ellipsoid": {"semi_axes"},
    "box": {"half_extents", "edge_radius"},
}


def parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"top level must be a mapping, got {type(raw).__name__}")
    raw = dict(raw)

    scenario = raw.pop("scenario", None)
    if not isinstance(scenario, str) or not scenario:
        raise ConfigError("'scenario' (non-empty string) is required")
    if "duration_s" not in raw:
        raise ConfigError("'duration_s' is required")
    duration_s = _float(raw, "duration_s", 0.0, lo=1e-3)
    seed = _int(raw, "seed", 0, lo=0)

    h = _section(raw, "hand")
    hand = HandConfig(
        finger_count=_int(h, "finger_count", 4, "hand.", lo=3),
        base_radius=_float(h, "base_radius", 0.10, "hand.", lo=1e-3),
        base_height=_float(h, "base_height", 0.0, "hand."),
        link_lengths=_floats(h, "link_lengths", [0.05, 0.04, 0.03], 3, "hand."),
        tip_radius=_float(h, "tip_radius", 0.01, "hand.", lo=1e-4),
        lower_deg=_floats(h, "lower_deg", [-45.0, -10.0, -10.0], 3, "hand."),
        upper_deg=_floats(h, "upper_deg", [45.0, 135.0, 170.0], 3, "hand."),
    )
    if "base_azimuths_deg" in h:
        hand.base_azimuths_deg = _floats(h, "base_azimuths_deg", None, hand.finger_count, "hand.")
    if np.any(hand.lower_deg >= hand.upper_deg):
        raise ConfigError("hand joint limits need lower < upper")
    _no_leftovers(h, "hand")

    o = _section(raw, "object")
    shape = o.pop("shape", "cylinder")
    if shape not in _SHAPE_KEYS:
        raise ConfigError(f"object.shape must be one of {sorted(_SHAPE_KEYS)}, got {shape!r}")
    params = {}
    for key in list(o):
        if key in _SHAPE_KEYS[shape]:
            params[key] = o.pop(key)
    obj = ObjectConfig(
        shape=shape,
        params=params,
        mass=_float(o, "mass", 0.25, "object.", lo=1e-4),
        position=_floats(o, "position", [0.0, 0.0, 0.05], 3, "object."),
        yaw_deg=_float(o, "yaw_deg", 0.0, "object."),
    )
    _no_leftovers(o, "object")

    g = _section(raw, "grasp")
    grasp = GraspConfig(
        height=_float(g, "height", 0.0, "grasp."),
        pre_indentation=_float(g, "pre_indentation", 3e-4, "grasp.", lo=0.0),
    )
    if "azimuth_offsets_deg" in g:
        grasp.azimuth_offsets_deg = _floats(g, "azimuth_offsets_deg", None, hand.finger_count, "grasp.")
    _no_leftovers(g, "grasp")

    r = _section(raw, "reference")
    steps = []
    for i, entry in enumerate(r.pop("position_steps", []) or []):
        entry = dict(entry)
        at = _float(entry, "at_s", 0.0, f"reference.position_steps[{i}].", lo=0.0)
        off = _floats(entry, "offset", None, 3, f"reference.position_steps[{i}].")
        _no_leftovers(entry, f"reference.position_steps[{i}]")
        steps.append((at, off))
    yaw_steps = []
    for i, entry in enumerate(r.pop("yaw_steps", []) or []):
        entry = dict(entry)
        at = _float(entry, "at_s", 0.0, f"reference.yaw_steps[{i}].", lo=0.0)
        ang = _float(entry, "angle_rad", 0.0, f"reference.yaw_steps[{i}].")
        _no_leftovers(entry, f"reference.yaw_steps[{i}]")
        yaw_steps.append((at, ang))
    yaw_stop = r.pop("yaw_stop_s", None)
    if yaw_stop is not None:
        try:
            yaw_stop = float(yaw_stop)
        except (TypeError, ValueError):
            raise ConfigError(f"reference.yaw_stop_s must be a number, got {yaw_stop!r}") from None
    pitch_kind = r.pop("pitch_kind", "sine")
    if pitch_kind not in ("sine", "ramp"):
        raise ConfigError(f"reference.pitch_kind must be 'sine' or 'ramp', got {pitch_kind!r}")
    reference = ReferenceConfig(
        position_offset=_floats(r, "position_offset", [0.0, 0.0, 0.0], 3, "reference."),
        position_ramp_start_s=_float(r, "position_ramp_start_s", 0.5, "reference.", lo=0.0),
        position_ramp_duration_s=_float(r, "position_ramp_duration_s", 1.0, "reference.", lo=1e-3),
        position_steps=sorted(steps),
        step_rise_s=_float(r, "step_rise_s", 0.1, "reference.", lo=0.0),
        yaw_rate=_float(r, "yaw_rate", 0.0, "reference."),
        yaw_start_s=_float(r, "yaw_start_s", 0.5, "reference.", lo=0.0),
        yaw_stop_s=None if yaw_stop is None else float(yaw_stop),
        yaw_steps=sorted(yaw_steps),
        pitch_kind=pitch_kind,
        pitch_amplitude=_float(r, "pitch_amplitude", 0.0, "reference."),
        pitch_rate=_float(r, "pitch_rate", 0.0, "reference."),
        pitch_start_s=_float(r, "pitch_start_s", 0.5, "reference.", lo=0.0),
    )
    _no_leftovers(r, "reference")

    c = _section(raw, "controller")
    kind = c.pop("kind", "pd")
    if kind not in ("pd", "lti"):
        raise ConfigError(f"controller.kind must be 'pd' or 'lti', got {kind!r}")
    pid = _section(c, "pid")
    controller = ControllerConfig(
        kind=kind,
        kp=_floats(c, "kp", [400.0] * 3 + [60.0] * 3, 6, "controller."),
        kd=_floats(c, "kd", [40.0] * 3 + [8.0] * 3, 6, "controller."),
        ki=_floats(c, "ki", [0.0] * 6, 6, "controller."),
        integral_limit=_float(c, "integral_limit", 20.0, "controller.", lo=0.0),
        derivative_cutoff_hz=_float(c, "derivative_cutoff_hz", 30.0, "controller.", lo=0.1),
        lti_path=c.pop("lti_path", None),
        pid_kp=_float(pid, "kp", 2.0, "controller.pid.", lo=0.0),
        pid_ki=_float(pid, "ki", 400.0, "controller.pid.", lo=0.0),
        pid_kd=_float(pid, "kd", 0.0, "controller.pid.", lo=0.0),
        pid_limit=_float(pid, "limit", 2.0, "controller.pid.", lo=1e-3),
    )
    _no_leftovers(pid, "controller.pid")
    if controller.kind == "lti" and not controller.lti_path:
        raise ConfigError("controller.kind 'lti' requires controller.lti_path")
    _no_leftovers(c, "controller")

    p = _section(raw, "planner")
    planner = PlannerConfig(
        enabled=_bool(p, "enabled", True, "planner."),
        quality_threshold=_float(p, "quality_threshold", 0.004, "planner."),
        rate_threshold=_float(p, "rate_threshold", 1e-5, "planner.", lo=0.0),
        sigma=_float(p, "sigma", 0.002, "planner.", lo=1e-6),
        bound=_float(p, "bound", 1.0, "planner.", lo=1e-3),
        grace_ticks=_int(p, "grace_ticks", 10, "planner.", lo=0),
        rate_window=_int(p, "rate_window", 10, "planner.", lo=1),
        timeout_s=_float(p, "timeout_s", 3.0, "planner.", lo=0.01),
        cooldown_s=_float(p, "cooldown_s", 0.3, "planner.", lo=0.0),
        static_slip=_float(p, "static_slip", 1e-3, "planner.", lo=0.0),
        static_ticks=_int(p, "static_ticks", 5, "planner.", lo=1),
        press_force=_float(p, "press_force", 0.5, "planner.", lo=0.0),
        kv=_float(p, "kv", 0.05, "planner.", lo=0.0),
        kf=_float(p, "kf", 1.5, "planner.", lo=0.0),
        approach_speed=_float(p, "approach_speed", 0.03, "planner.", lo=0.0),
        lift_distance=_float(p, "lift_distance", 0.005, "planner.", lo=1e-4),
        airborne_speed_cap=_float(p, "airborne_speed_cap", 1.0, "planner.", lo=1e-3),
        c_max=_float(p, "c_max", 50.0, "planner.", lo=1.0),
        q_thres_fraction=_float(p, "q_thres_fraction", 0.25, "planner.", lo=0.01, hi=0.49),
        w_area=_float(p, "w_area", 0.5, "planner.", lo=0.0),
        w_manip=_float(p, "w_manip", 0.5, "planner.", lo=0.0),
    )
    _no_leftovers(p, "planner")

    f = _section(raw, "force")
    alpha = _floats(f, "alpha", [0.01, 0.01, 1000.0], 3, "force.")
    if np.any(alpha < 0) or alpha[2] <= 0:
        raise ConfigError("force.alpha must be nonnegative with alpha[2] > 0")
    force = ForceConfig(
        mu=_float(f, "mu", 0.5, "force.", lo=1e-3),
        n_edges=_int(f, "n_edges", 8, "force.", lo=3),
        alpha=(float(alpha[0]), float(alpha[1]), float(alpha[2])),
        tau_limit=_float(f, "tau_limit", 0.5, "force.", lo=1e-3),
    )
    _no_leftovers(f, "force")

    s = _section(raw, "sim")
    sim = SimConfig(
        control_hz=_float(s, "control_hz", 500.0, "sim.", lo=10.0),
        inner_multiple=_int(s, "inner_multiple", 4, "sim.", lo=1),
        kn=_float(s, "kn", 5000.0, "sim.", lo=1.0),
        dn=_float(s, "dn", 50.0, "sim.", lo=0.0),
        mu=_float(s, "mu", 0.8, "sim.", lo=0.0),
        v_eps=_float(s, "v_eps", 1e-4, "sim.", lo=1e-8),
        joint_inertia=_float(s, "joint_inertia", 1e-4, "sim.", lo=1e-8),
        joint_damping=_float(s, "joint_damping", 0.01, "sim.", lo=0.0),
        actuator_tc=_float(s, "actuator_tc", 0.005, "sim.", lo=1e-5),
        tactile_noise_std=_float(s, "tactile_noise_std", 0.0, "sim.", lo=0.0),
    )
    _no_leftovers(s, "sim")

    u = _section(raw, "uncertainty")
    mass_scale = _float(u, "mass_scale", 0.0, "uncertainty.", lo=-0.99)
    moi_scale = _float(u, "moi_scale", 0.0, "uncertainty.", lo=-0.99)
    _no_leftovers(u, "uncertainty")

    d = _section(raw, "disturbances")
    force_pulses = []
    for i, entry in enumerate(d.pop("force_pulses", []) or []):
        entry = dict(entry)
        force_pulses.append(
            PulseConfig(
                start_s=_float(entry, "start_s", 0.0, f"disturbances.force_pulses[{i}].", lo=0.0),
                duration_s=_float(entry, "duration_s", 1.0, f"disturbances.force_pulses[{i}].", lo=1e-3),
                wrench=_floats(entry, "force", None, 3, f"disturbances.force_pulses[{i}]."),
            )
        )
        _no_leftovers(entry, f"disturbances.force_pulses[{i}]")
    torque_pulses = []
    for i, entry in enumerate(d.pop("torque_pulses", []) or []):
        entry = dict(entry)
        torque_pulses.append(
            PulseConfig(
                start_s=_float(entry, "start_s", 0.0, f"disturbances.torque_pulses[{i}].", lo=0.0),
                duration_s=_float(entry, "duration_s", 1.0, f"disturbances.torque_pulses[{i}].", lo=1e-3),
                wrench=_floats(entry, "torque", None, 3, f"disturbances.torque_pulses[{i}]."),
            )
        )
        _no_leftovers(entry, f"disturbances.torque_pulses[{i}]")
    _no_leftovers(d, "disturbances")

    lm = _section(raw, "limits")
    limits = LimitsConfig(
        drop_s=_float(lm, "drop_s", 0.2, "limits.", lo=0.0),
        saturation_s=_float(lm, "saturation_s", 0.5, "limits.", lo=0.01),
        fail_on_saturation=_bool(lm, "fail_on_saturation", True, "limits."),
    )
    _no_leftovers(lm, "limits")

    sm = _section(raw, "summary")
    summary_exclude_s = _float(sm, "exclude_s", 1.0, "summary.", lo=0.0)
    _no_leftovers(sm, "summary")

    _no_leftovers(raw, "top level")
    return ScenarioConfig(
        scenario=scenario,
        duration_s=duration_s,
        seed=seed,
        hand=hand,
        obj=obj,
        grasp=grasp,
        reference=reference,
        controller=controller,
        planner=planner,
        force=force,
        sim=sim,
        mass_scale=mass_scale,
        moi_scale=moi_scale,
        force_pulses=sorted(force_pulses, key=lambda pc: pc.start_s),
        torque_pulses=sorted(torque_pulses, key=lambda pc: pc.start_s),
        limits=limits,
        summary_exclude_s=summary_exclude_s,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"empty config file: {path}")
    return parse_config(raw)


def builtin_scenario_path(name: str) -> Path:
    """Resolve a shipped scenario name to its YAML file."""
    here = Path(__file__).resolve().parent.parent / "scenarios"
    path = here / f"{name}.yaml"
    if not path.exists():
        known = sorted(p.stem for p in here.glob("*.yaml"))
        raise ConfigError(f"unknown scenario '{name}'; shipped scenarios: {known}")
    return path
