"""Kinematic and energetic simulation of a small quadrotor.

Energy follows the measured per-state tables: each (payload, flight state)
pair has an energy budget and an endurance, and drains at
``budget / endurance`` watts.  The pack itself is a charge reservoir sized to
the budget of a reference state; in any state it empties at the rate that
gives that state's tabulated endurance, so a constant-state flight depletes
exactly on the table's time while ``energy_used`` reaches that state's budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum


class PayloadConfig(str, Enum):
    NO_PAYLOAD = "nopayload"
    ARDUINO_NANO = "arduino"
    OPENMV = "openmv"
    DISTRIBUTED = "distributed"


class FlightState(str, Enum):
    IDLE = "idle"
    TAKING_OFF = "takingoff"
    HOVER = "hover"
    MANEUVER = "maneuver"
    LANDING = "landing"
    DEPLETED = "depleted"


AIRBORNE = (FlightState.TAKING_OFF, FlightState.HOVER, FlightState.MANEUVER, FlightState.LANDING)


class SimError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergyEntry:
    budget_j: float
    endurance_s: float

    def __post_init__(self):
        if not (self.budget_j > 0 and self.endurance_s > 0):
            raise ValueError(f"energy entries must be positive: {self}")

    @property
    def power_w(self) -> float:
        return self.budget_j / self.endurance_s


def _mmss(text: str) -> int:
    m, s = text.split(":")
    return int(m) * 60 + int(s)


# (payload, state) -> (kJ, "min:sec"), as measured on the real aircraft
ENERGY_TABLE = {
    (PayloadConfig.NO_PAYLOAD, FlightState.IDLE): ("60.192", "12:00"),
    (PayloadConfig.NO_PAYLOAD, FlightState.HOVER): ("77.976", "09:23"),
    (PayloadConfig.NO_PAYLOAD, FlightState.MANEUVER): ("89.727", "08:05"),
    (PayloadConfig.ARDUINO_NANO, FlightState.HOVER): ("96.307", "7:50"),
    (PayloadConfig.ARDUINO_NANO, FlightState.MANEUVER): ("112.449", "6:42"),
    (PayloadConfig.OPENMV, FlightState.HOVER): ("116.280", "6:20"),
    (PayloadConfig.OPENMV, FlightState.MANEUVER): ("141.588", "5:10"),
    (PayloadConfig.DISTRIBUTED, FlightState.HOVER): ("86.320", "08:36"),
    (PayloadConfig.DISTRIBUTED, FlightState.MANEUVER): ("101.232", "07:13"),
}


@dataclass
class EnergyProfile:
    entries: dict[tuple[PayloadConfig, FlightState], EnergyEntry]

    def entry(self, payload: PayloadConfig, state: FlightState) -> EnergyEntry:
        state = _power_state(state)
        if (payload, state) in self.entries:
            return self.entries[(payload, state)]
        if state is FlightState.IDLE:
            # payload electronics draw on the ground is not tabulated
            return self.entries[(PayloadConfig.NO_PAYLOAD, FlightState.IDLE)]
        raise KeyError(f"no energy entry for {payload.value}/{state.value}")

    def power(self, payload, state) -> float:
        return self.entry(payload, state).power_w

    def with_overrides(self, cfg: dict) -> "EnergyProfile":
        """Apply ``energy.<payload>.<state>.budget_j`` / ``.endurance_s`` keys."""
        entries = dict(self.entries)
        for key, value in cfg.items():
            parts = key.split(".")
            if len(parts) != 4 or parts[0] != "energy":
                continue
            payload, state, what = PayloadConfig(parts[1]), FlightState(parts[2]), parts[3]
            old = entries.get((payload, state)) or self.entry(payload, state)
            if what == "budget_j":
                entries[(payload, state)] = replace(old, budget_j=float(value))
            elif what == "endurance_s":
                entries[(payload, state)] = replace(old, endurance_s=float(value))
            else:
                raise KeyError(f"unknown energy key {key}")
        return EnergyProfile(entries)


def energy_profile_default() -> EnergyProfile:
    return EnergyProfile({
        key: EnergyEntry(float(kj) * 1000.0, float(_mmss(t))) for key, (kj, t) in ENERGY_TABLE.items()
    })


def _power_state(state: FlightState) -> FlightState:
    if state in (FlightState.TAKING_OFF, FlightState.LANDING):
        return FlightState.HOVER
    return state


@dataclass
class SimParams:
    v_max: float = 1.0  # m/s at rc 100
    yaw_rate_max: float = 100.0  # deg/s at rc 100
    tau: float = 0.5  # s, first-order velocity response
    climb_rate: float = 1.0  # m/s for take-off and landing
    takeoff_altitude: float = 5.0
    maneuver_threshold: float = 0.1  # m/s horizontal
    reference_state: FlightState = FlightState.HOVER


@dataclass
class DroneState:
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    yaw: float = 0.0  # rad, clockwise from +y
    yaw_rate: float = 0.0  # rad/s
    flight_state: FlightState = FlightState.IDLE
    energy_remaining: float = 0.0
    energy_used: float = 0.0
    elapsed: float = 0.0
    flight_time: float = 0.0
    depleted_at: float | None = None
    rc_setpoint: tuple = (0, 0, 0, 0)


@dataclass(frozen=True)
class Telemetry:
    t: float
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    yaw: float
    state: FlightState
    energy_j: float
    energy_used_j: float
    soc_pct: int
    flight_time: float


class DroneSim:
    """Single-owner simulator advanced by explicit ticks."""

    def __init__(self, payload=PayloadConfig.OPENMV, profile: EnergyProfile | None = None,
                 params: SimParams | None = None, airborne: bool = False):
        self.payload = PayloadConfig(payload)
        self.profile = profile or energy_profile_default()
        self.params = params or SimParams()
        self.capacity = self.profile.entry(self.payload, self.params.reference_state).budget_j
        self.state = DroneState(energy_remaining=self.capacity)
        if airborne:
            self.state.position[2] = self.params.takeoff_altitude
            self.state.flight_state = FlightState.HOVER

    # commands

    def apply_rc(self, a, b, c, d):
        vals = (a, b, c, d)
        for v in vals:
            if isinstance(v, bool) or not isinstance(v, int) or not -100 <= v <= 100:
                raise SimError(f"rc component {v!r} outside [-100, 100]")
        self.state.rc_setpoint = vals

    def takeoff(self):
        if self.state.flight_state is not FlightState.IDLE:
            raise SimError(f"cannot take off while {self.state.flight_state.value}")
        self.state.flight_state = FlightState.TAKING_OFF
        self.state.rc_setpoint = (0, 0, 0, 0)

    def land(self):
        if self.state.flight_state not in AIRBORNE or self.state.flight_state is FlightState.LANDING:
            raise SimError(f"cannot land while {self.state.flight_state.value}")
        self.state.flight_state = FlightState.LANDING
        self.state.rc_setpoint = (0, 0, 0, 0)

    # dynamics

    def _velocity_targets(self):
        a, b, c, d = self.state.rc_setpoint
        v = self.params.v_max / 100.0
        fwd = (math.sin(self.state.yaw), math.cos(self.state.yaw))
        right = (math.cos(self.state.yaw), -math.sin(self.state.yaw))
        vx = (b * fwd[0] + a * right[0]) * v
        vy = (b * fwd[1] + a * right[1]) * v
        yaw_rate = math.radians(d * self.params.yaw_rate_max / 100.0)
        return [vx, vy, c * v], yaw_rate

    def tick(self, dt: float) -> bool:
        """Advance ``dt`` seconds. Returns False (and does nothing) once depleted."""
        if not dt > 0:
            raise SimError(f"dt must be positive, got {dt}")
        s = self.state
        if s.flight_state is FlightState.DEPLETED:
            return False
        p = self.params
        k = min(dt / p.tau, 1.0)
        fs = s.flight_state
        if fs in (FlightState.HOVER, FlightState.MANEUVER):
            target, yaw_target = self._velocity_targets()
            for i in range(3):
                s.velocity[i] += (target[i] - s.velocity[i]) * k
            s.yaw_rate += (yaw_target - s.yaw_rate) * k
            for i in range(3):
                s.position[i] += s.velocity[i] * dt
            s.yaw = (s.yaw + s.yaw_rate * dt) % (2 * math.pi)
            if s.position[2] < 0.0:
                s.position[2] = 0.0
                s.velocity[2] = max(s.velocity[2], 0.0)
            speed = math.hypot(s.velocity[0], s.velocity[1])
            s.flight_state = FlightState.MANEUVER if speed > p.maneuver_threshold else FlightState.HOVER
        elif fs is FlightState.TAKING_OFF:
            s.velocity = [0.0, 0.0, p.climb_rate]
            s.yaw_rate = 0.0
            s.position[2] += p.climb_rate * dt
            if s.position[2] >= p.takeoff_altitude:
                s.position[2] = p.takeoff_altitude
                s.velocity[2] = 0.0
                s.flight_state = FlightState.HOVER
        elif fs is FlightState.LANDING:
            s.velocity = [0.0, 0.0, -p.climb_rate]
            s.yaw_rate = 0.0
            s.position[2] -= p.climb_rate * dt
            if s.position[2] <= 0.0:
                s.position[2] = 0.0
                s.velocity = [0.0, 0.0, 0.0]
                s.flight_state = FlightState.IDLE

        entry = self.profile.entry(self.payload, fs)
        drain = self.capacity / entry.endurance_s * dt
        if drain < s.energy_remaining:
            s.energy_remaining -= drain
            s.energy_used += entry.power_w * dt
            s.elapsed += dt
            if fs in AIRBORNE:
                s.flight_time += dt
            return True
        frac = s.energy_remaining / drain
        s.energy_used += entry.power_w * dt * frac
        s.energy_remaining = 0.0
        s.elapsed += dt * frac
        if fs in AIRBORNE:
            s.flight_time += dt * frac
        s.depleted_at = s.elapsed
        s.flight_state = FlightState.DEPLETED
        # forced descent
        s.position[2] = 0.0
        s.velocity = [0.0, 0.0, 0.0]
        s.yaw_rate = 0.0
        return True

    def telemetry(self) -> Telemetry:
        s = self.state
        return Telemetry(
            s.elapsed, s.position[0], s.position[1], s.position[2],
            s.velocity[0], s.velocity[1], s.velocity[2], s.yaw, s.flight_state,
            s.energy_remaining, s.energy_used, self.soc_pct(), s.flight_time,
        )

    def soc_pct(self) -> int:
        return int(round(100.0 * self.state.energy_remaining / self.capacity))


def simulate_endurance(payload, state, dt: float = 0.05, profile: EnergyProfile | None = None,
                       params: SimParams | None = None, max_time: float = 3600.0):
    """Fly (or sit, for idle) in one state until the pack is empty.

    Returns ``(endurance_s, energy_used_j)``.
    """
    state = FlightState(state)
    params = replace(params or SimParams(), reference_state=state)
    sim = DroneSim(payload, profile, params, airborne=state is not FlightState.IDLE)
    if state is FlightState.MANEUVER:
        sim.apply_rc(0, 100, 0, 0)
        sim.state.velocity = sim._velocity_targets()[0]
        sim.state.flight_state = FlightState.MANEUVER
    while sim.state.flight_state is not FlightState.DEPLETED:
        sim.tick(dt)
        if sim.state.elapsed > max_time:
            raise SimError(f"no depletion within {max_time} s")
    return sim.state.depleted_at, sim.state.energy_used


TELEMETRY_CSV_HEADER = ["t", "x", "y", "z", "state", "energy_j", "soc_pct"]


def write_telemetry_csv(path, snapshots):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TELEMETRY_CSV_HEADER)
        for s in snapshots:
            w.writerow([f"{s.t:.3f}", f"{s.x:.4f}", f"{s.y:.4f}", f"{s.z:.4f}", s.state.value,
                        f"{s.energy_used_j:.3f}", s.soc_pct])
