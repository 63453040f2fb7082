"""Reference pose trajectories for scenario runs.

Built on top of the settled initial object pose: position offsets arrive as
a linear ramp plus optional hard steps, orientation as a constant-rate yaw
about world z plus a pitch profile about world y (sinusoid or rate-limited
ramp), composed as world-frame pre-rotations of the initial orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import quat_from_axis_angle, quat_mul
from .config import ReferenceConfig

_EZ = np.array([0.0, 0.0, 1.0])
_EY = np.array([0.0, 1.0, 0.0])


def _smoothstep(t: float, at: float, rise: float) -> float:
    """0 -> 1 transition starting at `at`, C1-smooth over `rise` seconds."""
    if rise <= 0.0:
        return 1.0 if t >= at else 0.0
    u = np.clip((t - at) / rise, 0.0, 1.0)
    return float(u * u * (3.0 - 2.0 * u))


@dataclass
class RotationPhase:
    """One commanded single-axis rotation leg, for summary bookkeeping."""

    axis: str  # "yaw" | "pitch"
    start_s: float
    end_s: float
    angle_rad: float


class ReferenceTrajectory:
    def __init__(self, cfg: ReferenceConfig, base_position: np.ndarray,
                 base_quat: np.ndarray, duration_s: float):
        self.cfg = cfg
        self.base_position = np.asarray(base_position, dtype=float).copy()
        self.base_quat = np.asarray(base_quat, dtype=float).copy()
        self.duration_s = float(duration_s)

    def yaw_angle(self, t: float) -> float:
        cfg = self.cfg
        stop = cfg.yaw_stop_s if cfg.yaw_stop_s is not None else self.duration_s
        run = np.clip(t, cfg.yaw_start_s, max(stop, cfg.yaw_start_s)) - cfg.yaw_start_s
        angle = cfg.yaw_rate * run
        for at, step in cfg.yaw_steps:
            angle += step * _smoothstep(t, at, cfg.step_rise_s)
        return float(angle)

    def pitch_angle(self, t: float) -> float:
        cfg = self.cfg
        if t < cfg.pitch_start_s:
            return 0.0
        rel = t - cfg.pitch_start_s
        if cfg.pitch_kind == "sine":
            return float(cfg.pitch_amplitude * np.sin(cfg.pitch_rate * rel))
        ramped = cfg.pitch_rate * rel
        amp = cfg.pitch_amplitude
        return float(np.clip(ramped, -abs(amp), abs(amp)) if amp != 0.0 else ramped)

    def position(self, t: float) -> np.ndarray:
        cfg = self.cfg
        frac = np.clip((t - cfg.position_ramp_start_s) / cfg.position_ramp_duration_s, 0.0, 1.0)
        pos = self.base_position + frac * cfg.position_offset
        for at, off in cfg.position_steps:
            pos = pos + off * _smoothstep(t, at, cfg.step_rise_s)
        return pos

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        quat = quat_mul(
            quat_from_axis_angle(_EZ, self.yaw_angle(t)),
            quat_mul(quat_from_axis_angle(_EY, self.pitch_angle(t)), self.base_quat),
        )
        return self.position(t), quat

    def rotation_phases(self) -> list[RotationPhase]:
        """Commanded single-axis legs with their end-to-end angles."""
        cfg = self.cfg
        phases: list[RotationPhase] = []
        if cfg.yaw_rate != 0.0:
            stop = cfg.yaw_stop_s if cfg.yaw_stop_s is not None else self.duration_s
            stop = min(stop, self.duration_s)
            if stop > cfg.yaw_start_s:
                phases.append(
                    RotationPhase("yaw", cfg.yaw_start_s, stop, cfg.yaw_rate * (stop - cfg.yaw_start_s))
                )
        if cfg.pitch_kind == "ramp" and cfg.pitch_rate != 0.0 and cfg.pitch_amplitude != 0.0:
            end = cfg.pitch_start_s + abs(cfg.pitch_amplitude / cfg.pitch_rate)
            end = min(end, self.duration_s)
            if end > cfg.pitch_start_s:
                phases.append(
                    RotationPhase(
                        "pitch", cfg.pitch_start_s, end,
                        np.sign(cfg.pitch_rate) * min(abs(cfg.pitch_amplitude),
                                                      abs(cfg.pitch_rate) * (end - cfg.pitch_start_s)),
                    )
                )
        return phases
