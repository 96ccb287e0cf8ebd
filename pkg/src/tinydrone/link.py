"""Tello-style ASCII command link between the mission controller and the simulator.

Two transports share one protocol handler:

* ``VirtualLink``: deterministic in-process queue on a virtual clock, with
  seeded datagram drops and fixed one-way latency.
* ``UdpTelloServer`` / ``UdpTelloClient``: real UDP sockets (control
  request/reply plus a 10 Hz state push), paced by the wall clock.
"""

from __future__ import annotations

import heapq
import math
import re
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from .sim import DroneSim, SimError

RC_LIMIT = 100
VERBS = ("command", "takeoff", "land", "rc", "battery?", "time?")
_INT = re.compile(r"[+-]?[0-9]+")


class ProtocolError(ValueError):
    pass


class LinkTimeout(RuntimeError):
    def __init__(self, command: bytes, sends: int):
        super().__init__(f"no reply to {command!r} after {sends} sends")
        self.command = command
        self.sends = sends


@dataclass(frozen=True)
class Command:
    verb: str
    args: tuple = ()

    @property
    def expects_reply(self) -> bool:
        return self.verb != "rc"

    def encode(self) -> bytes:
        return " ".join([self.verb, *map(str, self.args)]).encode("ascii")


def parse_command(datagram: bytes) -> Command:
    """Parse one datagram. Raises ProtocolError on anything malformed."""
    try:
        text = bytes(datagram).decode("ascii")
    except UnicodeDecodeError:
        raise ProtocolError("non-ASCII datagram") from None
    text = text.rstrip()
    if text in ("command", "takeoff", "land", "battery?", "time?"):
        return Command(text)
    parts = text.split(" ")
    if parts[0] != "rc":
        raise ProtocolError(f"unknown command {text[:32]!r}")
    if len(parts) != 5:
        raise ProtocolError(f"rc takes 4 arguments, got {len(parts) - 1}")
    vals = []
    for p in parts[1:]:
        if not _INT.fullmatch(p):
            raise ProtocolError(f"rc argument {p[:16]!r} is not an integer")
        v = int(p)
        if not -RC_LIMIT <= v <= RC_LIMIT:
            raise ProtocolError(f"rc argument {v} outside [-100, 100]")
        vals.append(v)
    return Command("rc", tuple(vals))


def rc_command(a, b, c, d) -> bytes:
    return f"rc {a} {b} {c} {d}".encode("ascii")


class TelloServer:
    """Protocol state machine applied to a simulator, one datagram at a time."""

    def __init__(self, sim: DroneSim):
        self.sim = sim
        self.sdk_mode = False
        self.lock = threading.Lock()

    def handle(self, datagram: bytes) -> bytes | None:
        with self.lock:
            try:
                cmd = parse_command(datagram)
            except ProtocolError:
                return b"error"
            if cmd.verb == "command":
                self.sdk_mode = True
                return b"ok"
            if not self.sdk_mode:
                return b"error"
            try:
                if cmd.verb == "rc":
                    self.sim.apply_rc(*cmd.args)
                    return None
                if cmd.verb == "takeoff":
                    self.sim.takeoff()
                    return b"ok"
                if cmd.verb == "land":
                    self.sim.land()
                    return b"ok"
            except SimError:
                return None if cmd.verb == "rc" else b"error"
            if cmd.verb == "battery?":
                return str(self.sim.soc_pct()).encode()
            return str(int(self.sim.state.flight_time)).encode()  # time?

    def state_datagram(self) -> bytes:
        with self.lock:
            return encode_state(self.sim.telemetry())


STATE_FIELDS = ("pitch", "roll", "yaw", "vgx", "vgy", "vgz", "h", "bat", "time")


def encode_state(snap) -> bytes:
    """One state line: angles in deg, velocities in dm/s, height in dm."""
    yaw = int(round(math.degrees(snap.yaw)))
    if yaw > 180:
        yaw -= 360
    vals = (0, 0, yaw, round(snap.vx * 10), round(snap.vy * 10), round(snap.vz * 10),
            round(snap.z * 10), snap.soc_pct, int(snap.flight_time))
    return ("".join(f"{k}:{int(v)};" for k, v in zip(STATE_FIELDS, vals)) + "\r\n").encode("ascii")


def parse_state(line: bytes) -> dict[str, int]:
    text = line.decode("ascii")
    if not text.endswith("\r\n"):
        raise ProtocolError("state line must end with CRLF")
    fields = text[:-2].rstrip(";").split(";")
    out = {}
    for f in fields:
        k, _, v = f.partition(":")
        out[k] = int(v)
    if tuple(out) != STATE_FIELDS:
        raise ProtocolError(f"unexpected state fields {tuple(out)}")
    return out


@dataclass(frozen=True)
class LinkConfig:
    control_port: int = 8889
    state_port: int = 8890
    one_way_latency: float = 0.0
    drop_probability: float = 0.0
    response_timeout: float = 1.0
    retries: int = 2

    def __post_init__(self):
        if self.control_port == self.state_port:
            raise ValueError("control and state ports must differ")
        if not self.one_way_latency >= 0:
            raise ValueError("latency must be >= 0")
        if not 0 <= self.drop_probability <= 1:
            raise ValueError("drop_probability must be in [0, 1]")
        if not self.response_timeout > 0 or self.retries < 0:
            raise ValueError("timeout must be positive and retries >= 0")


class VirtualClock:
    def __init__(self, now: float = 0.0):
        self.now = now


class VirtualLink:
    """Client endpoint of an in-process datagram link on a virtual clock.

    ``advance(t)`` is called whenever the client blocks until time ``t``; the
    owner uses it to keep the world (simulator ticks) in step.  Fire-and-forget
    datagrams sit in a timestamped queue until ``pump`` delivers them.
    """

    def __init__(self, server: TelloServer, cfg: LinkConfig | None = None, seed: int = 0,
                 clock: VirtualClock | None = None, advance=None):
        self.server = server
        self.cfg = cfg or LinkConfig()
        self.clock = clock or VirtualClock()
        self.rng = np.random.default_rng([seed, 5])
        self._advance = advance
        self._queue: list = []
        self._seq = 0
        self.sends = 0
        self.round_trips: list[float] = []

    def _dropped(self) -> bool:
        return bool(self.rng.random() < self.cfg.drop_probability)

    def _wait_until(self, t: float):
        self.pump(t)
        if self._advance is not None:
            self._advance(t)
        self.clock.now = max(self.clock.now, t)

    def pump(self, t: float):
        """Deliver queued datagrams due by ``t``, in arrival order."""
        while self._queue and self._queue[0][0] <= t:
            _, _, data = heapq.heappop(self._queue)
            self.server.handle(data)

    def send(self, data: bytes) -> bytes | None:
        try:
            expects_reply = parse_command(data).expects_reply
        except ProtocolError:
            expects_reply = True
        lat = self.cfg.one_way_latency
        if not expects_reply:
            self.sends += 1
            if not self._dropped():
                heapq.heappush(self._queue, (self.clock.now + lat, self._seq, bytes(data)))
                self._seq += 1
            return None
        for _ in range(1 + self.cfg.retries):
            t0 = self.clock.now
            self.sends += 1
            if not self._dropped():
                self._wait_until(t0 + lat)
                reply = self.server.handle(data)
                if reply is not None and not self._dropped() and 2 * lat <= self.cfg.response_timeout:
                    self._wait_until(t0 + 2 * lat)
                    self.round_trips.append(self.clock.now - t0)
                    return reply
            self._wait_until(t0 + self.cfg.response_timeout)
        raise LinkTimeout(bytes(data), 1 + self.cfg.retries)


class UdpTelloServer:
    """Simulator behind real UDP sockets, ticking on the wall clock.

    Commands are handled by a single receive thread in arrival order; a
    second thread ticks the simulator and pushes state lines at 10 Hz to the
    last client address seen.
    """

    def __init__(self, sim: DroneSim, cfg: LinkConfig | None = None, host: str = "127.0.0.1",
                 dt: float = 0.05, state_period: float = 0.1):
        self.cfg = cfg or LinkConfig()
        self.handler = TelloServer(sim)
        self.dt = dt
        self.state_period = state_period
        self.control = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.control.bind((host, self.cfg.control_port))
        self.control.settimeout(0.05)
        self.state_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.address = self.control.getsockname()
        self._client_state_addr = None
        self._stop = threading.Event()
        self._threads = [threading.Thread(target=self._serve, daemon=True),
                         threading.Thread(target=self._run_world, daemon=True)]

    def start(self):
        for t in self._threads:
            t.start()
        return self

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        self.control.close()
        self.state_sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _serve(self):
        while not self._stop.is_set():
            try:
                data, addr = self.control.recvfrom(2048)
            except (socket.timeout, OSError):
                continue
            self._client_state_addr = (addr[0], self.cfg.state_port)
            reply = self.handler.handle(data)
            if reply is not None:
                self.control.sendto(reply, addr)

    def _run_world(self):
        next_tick = next_push = time.monotonic()
        while not self._stop.is_set():
            now = time.monotonic()
            if now >= next_tick:
                with self.handler.lock:
                    self.handler.sim.tick(self.dt)
                next_tick += self.dt
            if now >= next_push:
                if self._client_state_addr is not None:
                    try:
                        self.state_sock.sendto(self.handler.state_datagram(), self._client_state_addr)
                    except OSError:
                        pass
                next_push += self.state_period
            time.sleep(max(0.0, min(next_tick, next_push) - time.monotonic()))


class UdpTelloClient:
    def __init__(self, server_addr, cfg: LinkConfig | None = None, bind_host: str = "127.0.0.1"):
        self.cfg = cfg or LinkConfig()
        self.server_addr = server_addr
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((bind_host, 0))
        self.sock.settimeout(self.cfg.response_timeout)
        self.sends = 0

    def close(self):
        self.sock.close()

    def send(self, data: bytes) -> bytes | None:
        try:
            expects_reply = parse_command(data).expects_reply
        except ProtocolError:
            expects_reply = True
        for _ in range(1 + self.cfg.retries):
            self.sends += 1
            self.sock.sendto(data, self.server_addr)
            if not expects_reply:
                return None
            try:
                reply, _ = self.sock.recvfrom(2048)
                return reply
            except socket.timeout:
                continue
        raise LinkTimeout(bytes(data), 1 + self.cfg.retries)
