"""P2D receiver and D2P sender.

The receiver accepts telemetry frames, writes them into the twin store,
feeds the per-component health monitor and, when a component's confidence
drops below its threshold, sends a SHUTDOWN directive to the plant.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable

from .codegen import D2P_SENDER, ConnectorManifest
from .dtmc import HealthMonitor
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
from .store import StorageError, TwinStore

log = logging.getLogger(__name__)

P2D_PORT = 7401
D2P_PORT = 7402


class Unreachable(ConnectionError):
    pass


class AckTimeout(TimeoutError):
    pass


def send_d2p(endpoint: str, directive: DirectiveMessage, timeout: float = 1.0) -> Ack:
    """Send one directive and wait for the ACK echoing its id."""
    host, port = parse_endpoint(endpoint)
    deadline = time.monotonic() + timeout
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise Unreachable(f"{endpoint}: {exc}") from None
    with sock:
        try:
            sock.sendall(encode_frame(directive))
            stream = sock.makefile("rb")
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                sock.settimeout(remaining)
                body = read_body(stream)
                if body is None:
                    break
                try:
                    msg = decode_body(body)
                except MalformedFrame:
                    continue
                if isinstance(msg, Ack) and msg.ack_id == directive.directive_id:
                    return msg
        except socket.timeout:
            pass
        except FramingError:
            pass
        except OSError as exc:
            raise Unreachable(f"{endpoint}: {exc}") from None
    raise AckTimeout(f"no ACK for {directive.directive_id} from {endpoint} within {timeout}s")


@dataclass
class IssuedDirective:
    message: DirectiveMessage
    endpoint: str | None
    ack: Ack | None = None
    error: str | None = None


class _Handler(socketserver.StreamRequestHandler):
    server: "P2DServer"

    def handle(self) -> None:
        last_seq = -1
        while True:
            try:
                body = read_body(self.rfile)
            except FramingError as exc:
                self.server.reject("MalformedFrame", str(exc))
                return
            except OSError:
                return
            if body is None:
                return
            try:
                msg = decode_body(body)
            except MalformedFrame as exc:
                self.server.reject("MalformedFrame", str(exc))
                continue
            if not isinstance(msg, TelemetryMessage):
                self.server.reject("MalformedFrame", f"unexpected {type(msg).__name__} on P2D link")
                continue
            if msg.seq <= last_seq:
                self.server.reject("SeqRegression", f"seq {msg.seq} after {last_seq}")
                continue
            if self.server.ingest(msg):
                last_seq = msg.seq


class P2DServer(socketserver.ThreadingTCPServer):
    """Telemetry receiver; see :func:`serve_p2d`."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(
        self,
        address: tuple[str, int],
        manifest: ConnectorManifest,
        store: TwinStore,
        monitor: HealthMonitor,
        plant_endpoint: str | None = None,
        sender: Callable[[str, DirectiveMessage], Ack] = send_d2p,
    ):
        self.manifest = manifest
        self.store = store
        self.monitor = monitor
        self.plant_endpoint = plant_endpoint
        self.sender = sender
        self.counters: Counter[str] = Counter()
        self.directives: list[IssuedDirective] = []
        self._stats_lock = threading.Lock()
        self._thread: threading.Thread | None = None
        super().__init__(address, _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def reject(self, kind: str, detail: str) -> None:
        with self._stats_lock:
            self.counters[kind] += 1
        log.warning("rejected frame (%s): %s", kind, detail)

    def _d2p_endpoint(self) -> str | None:
        if self.plant_endpoint:
            return self.plant_endpoint
        for e in self.manifest.entries:
            if D2P_SENDER in e.roles and e.endpoint:
                return e.endpoint
        return None

    def ingest(self, msg: TelemetryMessage) -> bool:
        entry = self.manifest.get(msg.component_id)
        if entry is None:
            self.reject("UnknownComponent", msg.component_id)
            return False
        spec = entry.node(msg.node)
        if spec is None:
            self.reject("UnknownNode", f"{msg.component_id}.{msg.node}")
            return False
        try:
            self.store.record(msg.component_id, msg.node, msg.value, msg.timestamp)
        except (StorageError, LookupError) as exc:
            self.reject("StorageError", str(exc))
            return False
        with self._stats_lock:
            self.counters["accepted"] += 1
        verdict = self.monitor.observe(msg.component_id, spec.in_range(msg.value))
        if verdict is not None:
            self.issue(DirectiveMessage(verdict.component_id, verdict.reason, msg.timestamp))
        return True

    def issue(self, directive: DirectiveMessage) -> IssuedDirective:
        endpoint = self._d2p_endpoint()
        issued = IssuedDirective(directive, endpoint)
        with self._stats_lock:
            self.directives.append(issued)
        log.warning("%s %s: %s", directive.directive, directive.component_id, directive.reason)
        if endpoint is None:
            issued.error = "no D2P endpoint configured"
            return issued
        try:
            issued.ack = self.sender(endpoint, directive)
        except (Unreachable, AckTimeout) as exc:
            issued.error = str(exc)
            log.error("directive %s not acknowledged: %s", directive.directive_id, exc)
        return issued

    def start(self) -> "P2DServer":
        self._thread = threading.Thread(target=self.serve_forever, name="p2d", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve_p2d(
    manifest: ConnectorManifest,
    store: TwinStore,
    monitor: HealthMonitor,
    bind: str = f"0.0.0.0:{P2D_PORT}",
    plant_endpoint: str | None = None,
    sender: Callable[[str, DirectiveMessage], Ack] = send_d2p,
) -> P2DServer:
    """Bind and start the receiver in a background thread."""
    return P2DServer(parse_endpoint(bind, "0.0.0.0"), manifest, store, monitor, plant_endpoint, sender).start()
