"""Closed-loop mission on a virtual clock: detect, classify, steer, account energy."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..link import LinkConfig, LinkTimeout, TelloServer, VirtualClock, VirtualLink, rc_command
from ..sim import DroneSim, FlightState, PayloadConfig, SimParams, energy_profile_default
from .control import SEARCH_YAW, AxisPids, control_step
from .scene import CENTER, FRAME, LABELS, Pose, SceneSpec, World, project
from .vision import Detection, classify_target, detect_face


class InferenceMode(str, Enum):
    ONBOARD = "onboard"
    DISTRIBUTED = "distributed"


# classifier latency on each microcontroller
ONBOARD_LATENCY_S = {
    PayloadConfig.OPENMV: 0.859,
    PayloadConfig.ARDUINO_NANO: 7.235,
    PayloadConfig.NO_PAYLOAD: 0.859,
}
LOCK_TOLERANCE_PX = 6.0
LOCK_SIZE_TOLERANCE = 0.25
MATCH_TOLERANCE_PX = 10.0
MATCH_SIZE_TOLERANCE = 0.15
ALIGN_TOLERANCE_PX = 12.0
CRUISE_RC = 30


class ConfigError(ValueError):
    pass


@dataclass
class MissionConfig:
    payload: PayloadConfig = PayloadConfig.OPENMV
    inference_mode: InferenceMode = InferenceMode.ONBOARD
    inference_latency_s: float | None = None
    remote_compute_s: float = 0.2
    link: LinkConfig = field(default_factory=LinkConfig)
    kp: float = 0.5
    ki: float = 0.05
    kd: float = 0.5
    scene: SceneSpec = field(default_factory=SceneSpec)
    dt: float = 0.05
    seed: int = 0
    control_period_s: float = 0.1
    time_limit_s: float = 1200.0
    patrol: bool = False
    search_yaw: int = SEARCH_YAW
    battery_query_period_s: float = 10.0
    max_link_failures: int = 3
    engage_timeout_s: float = 60.0
    sim: SimParams = field(default_factory=SimParams)
    energy_overrides: dict = field(default_factory=dict)
    model_path: str | None = None
    runs: int = 10

    def __post_init__(self):
        self.payload = PayloadConfig(self.payload)
        self.inference_mode = InferenceMode(self.inference_mode)
        if not self.dt > 0 or not self.control_period_s > 0:
            raise ConfigError("dt and control period must be positive")
        if self.inference_latency_s is not None and not self.inference_latency_s > 0:
            raise ConfigError("inference latency must be positive")

    @property
    def energy_payload(self) -> PayloadConfig:
        if self.inference_mode is InferenceMode.DISTRIBUTED:
            return PayloadConfig.DISTRIBUTED
        return self.payload

    @property
    def decision_period(self) -> float:
        if self.inference_mode is InferenceMode.DISTRIBUTED:
            return self.remote_compute_s + 2 * self.link.one_way_latency
        if self.inference_latency_s is not None:
            return self.inference_latency_s
        return ONBOARD_LATENCY_S[self.payload]

    @property
    def run_id(self) -> str:
        return f"{self.energy_payload.value}-{self.inference_mode.value}-s{self.seed}"


_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(raw: dict[str, str]) -> MissionConfig:
    top = {"payload": str, "inference_mode": str, "inference_latency_s": float,
           "remote_compute_s": float, "dt": float, "seed": int, "control_period_s": float,
           "time_limit_s": float, "search_yaw": int, "battery_query_period_s": float,
           "max_link_failures": int, "engage_timeout_s": float, "model": str, "runs": int}
    link_keys = {"control_port": int, "state_port": int, "one_way_latency": float,
                 "drop_probability": float, "response_timeout": float, "retries": int}
    sim_keys = {"v_max": float, "tau": float, "climb_rate": float, "takeoff_altitude": float,
                "maneuver_threshold": float, "yaw_rate_max": float}
    kw, link, sim, pid, scene, energy = {}, {}, {}, {}, {}, {}
    try:
        for key, value in raw.items():
            head, _, rest = key.partition(".")
            if key in top:
                kw["model_path" if key == "model" else key] = top[key](value)
            elif key == "patrol":
                kw["patrol"] = _BOOL[value.lower()]
            elif head == "link" and rest in link_keys:
                link[rest] = link_keys[rest](value)
            elif head == "sim" and rest in sim_keys:
                sim[rest] = sim_keys[rest](value)
            elif head == "pid" and rest in ("kp", "ki", "kd"):
                pid[rest] = float(value)
            elif head == "scene" and rest in ("targets", "world_extent", "face_radius_px", "noise_level"):
                scene[rest] = float(value)
            elif head == "energy":
                energy[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        seed = kw.get("seed", 0)
        n_targets = int(scene.pop("targets", 0))
        extent = scene.pop("world_extent", 10.0)
        spec = SceneSpec.random(n_targets, extent, seed=seed, **scene)
        cfg = MissionConfig(**kw, **pid, scene=spec, link=LinkConfig(**link), sim=SimParams(**sim),
                            energy_overrides=energy)
        energy_profile_default().with_overrides(energy)
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad config: {exc}") from None
    return cfg


def load_config(path) -> MissionConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return config_from_mapping(parse_config_text(text))


@dataclass(frozen=True)
class TargetResult:
    index: int
    truth: int
    prediction: int
    confidence: float
    t_start: float
    t_decision: float


@dataclass(frozen=True)
class TimelineRow:
    t: float
    x: float
    y: float
    z: float
    state: str
    energy_j: float
    event: str = ""


@dataclass
class MissionReport:
    run_id: str
    payload: str
    mode: str
    outcome: str
    decision_period: float
    flight_time: float = 0.0
    energy_used: float = 0.0
    results: list[TargetResult] = field(default_factory=list)
    timeline: list[TimelineRow] = field(default_factory=list)
    link_timeouts: int = 0
    skipped: int = 0

    @property
    def decisions(self) -> int:
        return len(self.results)

    @property
    def correct(self) -> int:
        return sum(r.truth == r.prediction for r in self.results)

    @property
    def accuracy(self) -> float:
        return self.correct / self.decisions if self.results else 0.0

    @property
    def confusion(self) -> np.ndarray:
        cm = np.zeros((2, 2), dtype=np.int64)
        for r in self.results:
            cm[r.truth, r.prediction] += 1
        return cm

    def summary_row(self) -> list:
        return [self.run_id, self.payload, self.mode, f"{self.flight_time:.3f}", f"{self.energy_used:.3f}",
                self.decisions, self.correct, f"{self.accuracy:.4f}"]


SUMMARY_HEADER = ["run_id", "payload", "mode", "flight_time_s", "energy_j", "targets", "correct", "accuracy"]
TIMELINE_HEADER = ["t", "x", "y", "z", "state", "energy_j", "event"]


def _fmt_time(t: float) -> str:
    return f"{t:.3f}"


class _Mission:
    def __init__(self, cfg: MissionConfig, model):
        self.cfg = cfg
        self.model = model
        self.world = World(cfg.scene)
        profile = energy_profile_default().with_overrides(cfg.energy_overrides)
        self.sim = DroneSim(cfg.energy_payload, profile, cfg.sim)
        self.clock = VirtualClock()
        self.link = VirtualLink(TelloServer(self.sim), cfg.link, cfg.seed, self.clock, self._advance)
        self.pids = AxisPids.with_gains(cfg.kp, cfg.ki, cfg.kd)
        self.k = 0
        self.frame_index = 0
        self.report = MissionReport(cfg.run_id, cfg.energy_payload.value, cfg.inference_mode.value,
                                    "running", cfg.decision_period)
        self.target_width = 2 * cfg.scene.face_radius_px
        self.done = set()
        self.current: int | None = None
        self.engaged_at = 0.0
        self.pending = None  # (t_done, t_start, index, result)
        self.failures = 0

    @property
    def now(self) -> float:
        return self.k * self.cfg.dt

    # time

    def _tick(self):
        self.link.pump(self.now)
        self.sim.tick(self.cfg.dt)
        self.k += 1
        self.clock.now = max(self.clock.now, self.now)

    def _advance(self, t: float):
        while self.now < t - 1e-12 and self.sim.state.flight_state is not FlightState.DEPLETED:
            self._tick()

    # bookkeeping

    def log(self, event: str = "", t: float | None = None):
        s = self.sim.state
        self.report.timeline.append(TimelineRow(
            self.now if t is None else t, s.position[0], s.position[1], s.position[2],
            s.flight_state.value, s.energy_used, event))

    def send(self, data: bytes):
        try:
            reply = self.link.send(data)
        except LinkTimeout as exc:
            self.report.link_timeouts += 1
            self.failures += 1
            self.log(f"link_timeout cmd={data.decode()} sends={exc.sends}")
            return None
        self.failures = 0
        return reply

    @property
    def aborted(self) -> bool:
        return self.failures >= self.cfg.max_link_failures

    # perception and targeting

    def pose(self) -> Pose:
        s = self.sim.state
        return Pose(s.position[0], s.position[1], s.position[2], s.yaw)

    def pick_target(self):
        remaining = [i for i in range(len(self.world.targets)) if i not in self.done]
        if not remaining:
            return None
        x, y, _ = self.sim.state.position
        return min(remaining, key=lambda i: (math.hypot(self.world.targets[i].position[0] - x,
                                                        self.world.targets[i].position[1] - y), i))

    def steer_detection(self, det: Detection | None, pose: Pose):
        """The detection to steer by and whether it is a real match for the current target."""
        target = self.world.targets[self.current]
        face = project(pose, target)
        if face is None:
            return None, False
        if det is not None and self.matches(det, face):
            return det, True
        # steer by the predicted projection when the target is not the dominant blob
        x0, x1 = max(0.0, face.cx - face.rx), min(float(FRAME), face.cx + face.rx)
        y0, y1 = max(0.0, face.cy - face.ry), min(float(FRAME), face.cy + face.ry)
        if x1 <= x0 or y1 <= y0:
            return None, False
        return Detection((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, 0.0), False

    @staticmethod
    def matches(det: Detection, face) -> bool:
        """Same blob as the predicted face: close centre and similar extents.

        Overlapping faces merge into one blob whose box fits neither face.
        """
        if math.hypot(det.cx - face.cx, det.cy - face.cy) > max(MATCH_TOLERANCE_PX, face.rx):
            return False
        if face.cx - face.rx < 0 or face.cx + face.rx > FRAME or face.cy - face.ry < 0 or face.cy + face.ry > FRAME:
            return True  # clipped by the frame edge, extents are not comparable
        return (abs(det.w - 2 * face.rx) <= MATCH_SIZE_TOLERANCE * 2 * face.rx + 2
                and abs(det.h - 2 * face.ry) <= MATCH_SIZE_TOLERANCE * 2 * face.ry + 2)

    def search_direction(self, pose: Pose) -> int:
        t = self.world.targets[self.current].position
        dx, dy = t[0] - pose.x, t[1] - pose.y
        rx, ry = pose.right
        return self.cfg.search_yaw if dx * rx + dy * ry >= 0 else -self.cfg.search_yaw

    def approach(self, det: Detection):
        """PID rc, with forward motion gated on heading and a cruise speed while far.

        The forward loop only runs in the near field; a long far-field approach
        would otherwise wind its integral up and overshoot the stand-off point.
        """
        a, b, c, d = control_step(det, self.pids, self.target_width)
        if abs(det.cx - CENTER) > ALIGN_TOLERANCE_PX:
            self.pids.forward.reset()
            b = 0
        elif det.w < 0.5 * self.target_width:
            self.pids.forward.reset()
            b = CRUISE_RC
        return a, b, c, d

    def locked(self, det: Detection) -> bool:
        return (abs(det.cx - CENTER) <= LOCK_TOLERANCE_PX and abs(det.cy - CENTER) <= LOCK_TOLERANCE_PX
                and abs(det.w - self.target_width) <= LOCK_SIZE_TOLERANCE * self.target_width)

    def control_iteration(self):
        pose = self.pose()
        frame = self.world.render(pose, self.frame_index)
        self.frame_index += 1
        if self.current is not None and self.now - self.engaged_at > self.cfg.engage_timeout_s:
            self.report.skipped += 1
            self.log(f"skipped target={self.current} reason=timeout")
            self.mark_done(self.current)
        if self.current is None:
            self.current = self.pick_target()
            self.engaged_at = self.now
            self.pids.reset()
        if self.current is None:
            rc = control_step(None, self.pids, self.target_width, self.cfg.search_yaw)
            self.send(rc_command(*rc))
            self.log()
            return
        det, real = self.steer_detection(detect_face(frame), pose)
        if det is None:
            rc = control_step(None, self.pids, self.target_width, self.search_direction(pose))
        else:
            rc = self.approach(det)
        if real and self.locked(det) and self.pending is None:
            result = classify_target(self.model, frame, det)
            if result is None:
                self.report.skipped += 1
            else:
                t0 = self.now
                self.pending = (t0 + self.cfg.decision_period, t0, self.current, result)
                self.log(f"inference_start target={self.current}")
        self.send(rc_command(*rc))
        self.log()

    def finish_inference(self):
        t_done, t0, idx, (label, conf) = self.pending
        truth = self.world.targets[idx].label
        self.report.results.append(TargetResult(idx, truth, label, conf, t0, t_done))
        self.log(f"classified target={idx} truth={LABELS[truth]} pred={LABELS[label]} "
                 f"conf={conf:.4f} period_s={t_done - t0:.3f}", t=t_done)
        self.pending = None
        self.mark_done(idx)

    def mark_done(self, idx: int):
        self.done.add(idx)
        self.current = None
        if self.cfg.patrol and len(self.done) == len(self.world.targets):
            self.done = {idx}

    # main loop

    def run(self) -> MissionReport:
        cfg = self.cfg
        steps_per_control = max(1, int(round(cfg.control_period_s / cfg.dt)))
        steps_per_query = max(1, int(round(cfg.battery_query_period_s / cfg.dt)))
        self.log("start")
        while self.send(b"command") is None and not self.aborted:
            pass
        while not self.aborted and self.sim.state.flight_state is FlightState.IDLE:
            if self.send(b"takeoff") == b"ok":
                self.log("takeoff")
                break
        outcome = None
        landing = False
        while outcome is None:
            fs = self.sim.state.flight_state
            if fs is FlightState.DEPLETED:
                outcome = "depleted"
            elif self.aborted:
                outcome = "aborted"
            elif landing and fs is FlightState.IDLE:
                outcome = "success"
            elif self.now >= cfg.time_limit_s:
                outcome = "time_limit"
            if outcome:
                break
            if self.pending is not None and self.now >= self.pending[0] - 1e-9:
                self.finish_inference()
            airborne = fs in (FlightState.HOVER, FlightState.MANEUVER)
            if (not landing and airborne and not cfg.patrol and self.world.targets
                    and len(self.done) == len(self.world.targets) and self.pending is None):
                if self.send(b"land") == b"ok":
                    landing = True
                    self.log("land")
            elif (not landing and airborne and self.pending is None and self.k % steps_per_control == 0):
                self.control_iteration()
            if self.k % steps_per_query == 0 and self.k > 0 and not landing:
                reply = self.send(b"battery?")
                if reply is not None:
                    self.log(f"battery={reply.decode()}")
            self._tick()
        s = self.sim.state
        self.report.outcome = outcome
        self.report.flight_time = s.flight_time
        self.report.energy_used = s.energy_used
        self.log(f"end outcome={outcome}", t=s.elapsed)
        return self.report


_MODEL_CACHE: dict = {}


def default_model(mode: InferenceMode, seed: int = 0, n_train: int = 400):
    """Head-trained classifier; int8 for onboard inference, real32 when offloaded."""
    from ..pipeline import quantize_classifier, train_classifier

    key = (InferenceMode(mode), seed, n_train)
    if key not in _MODEL_CACHE:
        real = _MODEL_CACHE.get(("real", seed, n_train))
        if real is None:
            real = _MODEL_CACHE[("real", seed, n_train)] = train_classifier(n_train, seed).model
        _MODEL_CACHE[key] = real if key[0] is InferenceMode.DISTRIBUTED else quantize_classifier(real, seed=seed)
    return _MODEL_CACHE[key]


def run_mission(cfg: MissionConfig, model=None) -> MissionReport:
    """Fly one mission. ``model`` is needed only when the scene has targets."""
    if model is None and cfg.scene.targets:
        if cfg.model_path:
            from ..nn.serialize import load_model

            model = load_model(cfg.model_path)
        else:
            model = default_model(cfg.inference_mode)
    return _Mission(cfg, model).run()


def reseed(cfg: MissionConfig, seed: int) -> MissionConfig:
    spec = cfg.scene
    scene = SceneSpec.random(len(spec.targets), spec.world_extent, seed=seed,
                             face_radius_px=spec.face_radius_px, noise_level=spec.noise_level)
    return replace(cfg, seed=seed, scene=scene)


def run_batch(cfg: MissionConfig, runs: int | None = None, model=None) -> list[MissionReport]:
    """``runs`` seeded repetitions (seeds ``cfg.seed``, ``cfg.seed + 1``, ...)."""
    n = cfg.runs if runs is None else runs
    return [run_mission(reseed(cfg, cfg.seed + i), model) for i in range(n)]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_summary(path, reports: list[MissionReport], mean_row: bool = True):
    rows = [r.summary_row() for r in reports]
    if mean_row and len(reports) > 1:
        decisions = sum(r.decisions for r in reports)
        correct = sum(r.correct for r in reports)
        rows.append(["mean", reports[0].payload, reports[0].mode,
                     f"{np.mean([r.flight_time for r in reports]):.3f}",
                     f"{np.mean([r.energy_used for r in reports]):.3f}",
                     f"{decisions / len(reports):.1f}", f"{correct / len(reports):.1f}",
                     f"{(correct / decisions if decisions else 0.0):.4f}"])
    _write_csv(path, SUMMARY_HEADER, rows)


def export_report(report: MissionReport, out_dir) -> dict[str, str]:
    """Write summary, timeline and confusion CSVs named after the run id."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "summary": os.path.join(out_dir, f"{report.run_id}_summary.csv"),
        "timeline": os.path.join(out_dir, f"{report.run_id}_timeline.csv"),
        "confusion": os.path.join(out_dir, f"{report.run_id}_confusion.csv"),
    }
    write_summary(paths["summary"], [report], mean_row=False)
    _write_csv(paths["timeline"], TIMELINE_HEADER, [
        [_fmt_time(r.t), f"{r.x:.4f}", f"{r.y:.4f}", f"{r.z:.4f}", r.state, f"{r.energy_j:.3f}", r.event]
        for r in report.timeline])
    cm = report.confusion
    _write_csv(paths["confusion"], ["truth", "pred_mask", "pred_no_mask"],
               [[LABELS[i], int(cm[i, 0]), int(cm[i, 1])] for i in range(2)])
    return paths


def export_batch(reports: list[MissionReport], out_dir, name: str = "batch") -> str:
    os.makedirs(out_dir, exist_ok=True)
    for r in reports:
        export_report(r, out_dir)
    path = os.path.join(out_dir, f"{name}_summary.csv")
    write_summary(path, reports)
    return path
