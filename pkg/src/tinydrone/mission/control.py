"""Detection-to-rc mapping through three per-axis PID loops."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..pid import DEFAULT_KD, DEFAULT_KI, DEFAULT_KP, PidController
from .scene import CENTER

SEARCH_YAW = 15
RC_LIMIT = 100


@dataclass
class AxisPids:
    yaw: PidController = field(default_factory=PidController)
    vertical: PidController = field(default_factory=PidController)
    forward: PidController = field(default_factory=PidController)

    @classmethod
    def with_gains(cls, kp=DEFAULT_KP, ki=DEFAULT_KI, kd=DEFAULT_KD):
        return cls(PidController(kp, ki, kd), PidController(kp, ki, kd), PidController(kp, ki, kd))

    def reset(self):
        for p in (self.yaw, self.vertical, self.forward):
            p.reset()


def normalized_errors(det, target_width: float):
    """Pixel errors scaled so a half-frame offset maps to 100 command units."""
    ex = (det.cx - CENTER) * 100.0 / CENTER
    ey = (det.cy - CENTER) * 100.0 / CENTER
    es = (target_width - det.w) * 100.0 / target_width
    return ex, ey, es


def _rc(v: float) -> int:
    return int(max(-RC_LIMIT, min(RC_LIMIT, round(v))))


def control_step(det, pids: AxisPids, target_width: float = 32.0, search_yaw: int = SEARCH_YAW):
    """rc (lateral, forward, vertical, yaw) for one detection.

    A face right of centre yaws right, one below centre descends, one
    smaller than ``target_width`` moves forward.  No detection: slow search yaw.
    """
    if det is None:
        return (0, 0, 0, search_yaw)
    ex, ey, es = normalized_errors(det, target_width)
    yaw = pids.yaw.step(ex)
    up = -pids.vertical.step(ey)
    fwd = pids.forward.step(es)
    return (0, _rc(fwd), _rc(up), _rc(yaw))
