"""Network endpoint of the simulated plant.

The plant steps in (optionally scaled) real time, streams one telemetry
message per channel every ``sample_every`` steps to the twin, and listens for
directives. A SHUTDOWN is acknowledged immediately; the stepping loop halts
at the next step boundary and the outputs are held at zero.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Mapping, Sequence

from .plant import PlantConfig, PlantState, inject_fault, signal_value, step
from .protocol import (
    Ack,
    DirectiveMessage,
    FramingError,
    MalformedFrame,
    TelemetryMessage,
    decode_body,
    encode_frame,
    parse_endpoint,
    read_body,
)
from .timeutil import truncate_ms

log = logging.getLogger(__name__)


class ConnectionLost(ConnectionError):
    pass


@dataclass(frozen=True)
class Channel:
    component_id: str
    node: str
    signal: str


DEFAULT_CHANNELS = (
    Channel("filter", "filtered", "omega_f"),
    Channel("motor", "current", "current"),
)


@dataclass(frozen=True)
class ScheduledFault:
    at: float
    mapping: Mapping[str, Any]


@dataclass
class SessionResult:
    steps: int = 0
    sent: list[TelemetryMessage] = field(default_factory=list)
    halted: bool = False
    directive_step: int | None = None
    halt_step: int | None = None
    final_state: PlantState | None = None

    @property
    def halt_latency_steps(self) -> int | None:
        if self.directive_step is None or self.halt_step is None:
            return None
        return self.halt_step - self.directive_step


class _DirectiveHandler(socketserver.StreamRequestHandler):
    server: "_DirectiveServer"

    def handle(self) -> None:
        while True:
            try:
                body = read_body(self.rfile)
            except (FramingError, OSError):
                return
            if body is None:
                return
            try:
                msg = decode_body(body)
            except MalformedFrame:
                continue
            if isinstance(msg, DirectiveMessage):
                self.server.plant.request_shutdown(msg)
                self.wfile.write(encode_frame(Ack(msg.directive_id)))
                self.wfile.flush()


class _DirectiveServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], plant: "PlantServer"):
        self.plant = plant
        super().__init__(address, _DirectiveHandler)


class PlantServer:
    def __init__(
        self,
        config: PlantConfig,
        twin_endpoint: str,
        bind: str = "127.0.0.1:7402",
        sample_every: int = 10,
        time_scale: float = 1.0,
        faults: Sequence[ScheduledFault] = (),
        channels: Sequence[Channel] = DEFAULT_CHANNELS,
        connect_attempts: int = 5,
        backoff: float = 0.2,
        start_time: datetime | None = None,
    ):
        if sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if time_scale < 0:
            raise ValueError("time_scale must be >= 0")
        self.config = config
        self.twin_endpoint = twin_endpoint
        self.sample_every = sample_every
        self.time_scale = time_scale
        self.faults = sorted(faults, key=lambda f: f.at)
        self.channels = tuple(channels)
        self.connect_attempts = connect_attempts
        self.backoff = backoff
        self.start_time = truncate_ms(start_time or datetime.now(timezone.utc))
        self.directives: list[DirectiveMessage] = []
        self._halt = threading.Event()
        self._steps_done = 0
        self._directive_step: int | None = None
        self._lock = threading.Lock()
        self._listener = _DirectiveServer(parse_endpoint(bind), self)
        self._listener_thread = threading.Thread(target=self._listener.serve_forever, name="d2p", daemon=True)
        self._listener_thread.start()
        self._sock: socket.socket | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.server_address[:2]

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def request_shutdown(self, directive: DirectiveMessage) -> None:
        with self._lock:
            self.directives.append(directive)
            if not self._halt.is_set():
                self._directive_step = self._steps_done
                self._halt.set()
        log.warning("SHUTDOWN received for %s: %s", directive.component_id, directive.reason)

    def _connect(self) -> socket.socket:
        delay = self.backoff
        last: Exception | None = None
        for attempt in range(self.connect_attempts):
            try:
                return socket.create_connection(parse_endpoint(self.twin_endpoint), timeout=5.0)
            except OSError as exc:
                last = exc
                if attempt + 1 < self.connect_attempts:
                    time.sleep(delay)
                    delay *= 2
        raise ConnectionLost(f"twin at {self.twin_endpoint} unreachable after "
                             f"{self.connect_attempts} attempts: {last}")

    def _send(self, frame: bytes) -> None:
        for _ in range(2):
            if self._sock is None:
                self._sock = self._connect()
            try:
                self._sock.sendall(frame)
                return
            except OSError:
                self._sock.close()
                self._sock = None
        raise ConnectionLost(f"lost connection to {self.twin_endpoint}")

    def run(self) -> SessionResult:
        """Step until the configured duration elapses or a SHUTDOWN arrives."""
        cfg = self.config
        state = PlantState()
        result = SessionResult()
        pending = list(self.faults)
        seq = 0
        wall0 = time.monotonic()
        try:
            self._sock = self._connect()
            for k in range(cfg.n_steps + 1):
                if self._halt.is_set():
                    result.halted = True
                    result.halt_step = k
                    state = PlantState(t=state.t)
                    break
                while pending and pending[0].at <= state.t + 1e-12:
                    cfg = inject_fault(cfg, pending.pop(0).mapping)
                    log.info("fault injected at t=%.3f", state.t)
                if k % self.sample_every == 0:
                    if self.time_scale > 0:
                        lag = wall0 + state.t / self.time_scale - time.monotonic()
                        if lag > 0:
                            time.sleep(lag)
                    ts = self.start_time + timedelta(milliseconds=round(state.t * 1000.0))
                    for ch in self.channels:
                        msg = TelemetryMessage(ch.component_id, ch.node, signal_value(state, ch.signal), ts, seq)
                        seq += 1
                        self._send(encode_frame(msg))
                        result.sent.append(msg)
                if k == cfg.n_steps:
                    break
                state = step(cfg, state)
                with self._lock:
                    self._steps_done = k + 1
                result.steps = k + 1
        finally:
            if self._sock is not None:
                self._sock.close()
                self._sock = None
        result.directive_step = self._directive_step
        result.final_state = state
        return result

    def close(self) -> None:
        self._listener.shutdown()
        self._listener.server_close()
        self._listener_thread.join(timeout=5)

    def __enter__(self) -> "PlantServer":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def serve_pt(config: PlantConfig, twin_endpoint: str, bind: str = "127.0.0.1:7402", **options: Any) -> SessionResult:
    """Run one plant session against the twin and return what happened."""
    with PlantServer(config, twin_endpoint, bind, **options) as plant:
        return plant.run()
