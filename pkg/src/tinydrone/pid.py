"""Discrete per-axis PID with output clamping and clamp-freeze anti-windup.

The law is per iteration (no dt): the loop period is absorbed into the gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

DEFAULT_KP = 0.5
DEFAULT_KI = 0.05
DEFAULT_KD = 0.5
DEFAULT_LIMIT = 100.0


@dataclass
class PidController:
    kp: float = DEFAULT_KP
    ki: float = DEFAULT_KI
    kd: float = DEFAULT_KD
    out_min: float = -DEFAULT_LIMIT
    out_max: float = DEFAULT_LIMIT
    integral: float = field(default=0.0, init=False)
    prev_error: float = field(default=0.0, init=False)
    first_step: bool = field(default=True, init=False)

    def __post_init__(self):
        if not self.out_min < self.out_max:
            raise ValueError(f"out_min {self.out_min} must be below out_max {self.out_max}")

    def step(self, error: float) -> float:
        if not math.isfinite(error):
            raise ValueError(f"non-finite error {error!r}")
        derivative = 0.0 if self.first_step else error - self.prev_error
        integral = self.integral + error
        raw = self.kp * error + self.kd * derivative + self.ki * integral
        if self.out_min <= raw <= self.out_max:
            self.integral = integral
        self.prev_error = error
        self.first_step = False
        return min(max(raw, self.out_min), self.out_max)

    def reset(self):
        self.integral = 0.0
        self.prev_error = 0.0
        self.first_step = True


def pid_new(kp: float = DEFAULT_KP, ki: float = DEFAULT_KI, kd: float = DEFAULT_KD,
            limit: float = DEFAULT_LIMIT) -> PidController:
    return PidController(kp, ki, kd, -limit, limit)
