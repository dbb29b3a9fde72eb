"""Wire format shared by the twin and the plant.

A frame is a 4-byte big-endian body length followed by a UTF-8 JSON object.
Telemetry carries ``component, node, value, ts, seq``; directives carry
``component, directive, reason, ts, id``; acknowledgements carry ``ack_id``.
Unknown keys are ignored on decode.
"""

from __future__ import annotations

import json
import math
import struct
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, BinaryIO, Union

from .timeutil import parse_rfc3339, to_rfc3339, truncate_ms, utc

HEADER = struct.Struct("!I")
MAX_FRAME = 1 << 20
SHUTDOWN = "SHUTDOWN"
DIRECTIVES = (SHUTDOWN,)


class MalformedFrame(ValueError):
    pass


def _ms(ts: datetime) -> datetime:
    if not isinstance(ts, datetime):
        raise TypeError("timestamp must be a datetime")
    return truncate_ms(utc(ts))


@dataclass(frozen=True)
class TelemetryMessage:
    component_id: str
    node: str
    value: Union[int, float]
    timestamp: datetime
    seq: int

    def __post_init__(self):
        object.__setattr__(self, "timestamp", _ms(self.timestamp))
        if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
            raise TypeError("telemetry value must be a number")
        if isinstance(self.value, float) and not math.isfinite(self.value):
            raise ValueError("telemetry value must be finite")
        if isinstance(self.seq, bool) or not isinstance(self.seq, int) or self.seq < 0:
            raise ValueError("seq must be a non-negative integer")

    def to_dict(self) -> dict[str, Any]:
        return {"component": self.component_id, "node": self.node, "value": self.value,
                "ts": to_rfc3339(self.timestamp, millis=True), "seq": self.seq}


@dataclass(frozen=True)
class DirectiveMessage:
    component_id: str
    reason: str
    timestamp: datetime
    directive_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    directive: str = SHUTDOWN

    def __post_init__(self):
        object.__setattr__(self, "timestamp", _ms(self.timestamp))
        if self.directive not in DIRECTIVES:
            raise ValueError(f"unsupported directive {self.directive!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"component": self.component_id, "directive": self.directive, "reason": self.reason,
                "ts": to_rfc3339(self.timestamp, millis=True), "id": self.directive_id}


@dataclass(frozen=True)
class Ack:
    ack_id: str

    def to_dict(self) -> dict[str, Any]:
        return {"ack_id": self.ack_id}


Message = Union[TelemetryMessage, DirectiveMessage, Ack]


def encode_frame(message: Message) -> bytes:
    body = json.dumps(message.to_dict(), separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise ValueError("message too large for one frame")
    return HEADER.pack(len(body)) + body


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name}")


def _str(obj: dict, key: str) -> str:
    v = obj[key]
    if not isinstance(v, str) or not v:
        raise ValueError(f"{key} must be a non-empty string")
    return v


def decode_body(body: bytes) -> Message:
    try:
        obj = json.loads(body.decode("utf-8"), parse_constant=_reject_constant)
        if not isinstance(obj, dict):
            raise ValueError("frame body is not a JSON object")
        if "ack_id" in obj:
            return Ack(_str(obj, "ack_id"))
        if "directive" in obj:
            reason = obj.get("reason", "")
            if not isinstance(reason, str):
                raise ValueError("reason must be a string")
            return DirectiveMessage(_str(obj, "component"), reason, parse_rfc3339(obj["ts"]),
                                    _str(obj, "id"), obj["directive"])
        return TelemetryMessage(_str(obj, "component"), _str(obj, "node"), obj["value"],
                                parse_rfc3339(obj["ts"]), obj["seq"])
    except (UnicodeDecodeError, ValueError, TypeError, KeyError, RecursionError, OverflowError) as exc:
        raise MalformedFrame(f"{type(exc).__name__}: {exc}") from None


def decode_frame(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size:
        raise MalformedFrame("truncated length prefix")
    (n,) = HEADER.unpack_from(data)
    if n > MAX_FRAME:
        raise MalformedFrame(f"frame length {n} exceeds limit")
    if len(data) - HEADER.size != n:
        raise MalformedFrame(f"length prefix says {n} bytes, got {len(data) - HEADER.size}")
    return decode_body(bytes(data[HEADER.size:]))


class FramingError(MalformedFrame):
    """The byte stream itself is broken; the connection cannot be resynchronised."""


def read_body(stream: BinaryIO) -> bytes | None:
    """Read one frame body from a stream; None on clean end of stream."""
    header = stream.read(HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise FramingError("truncated length prefix")
    (n,) = HEADER.unpack(header)
    if n > MAX_FRAME:
        raise FramingError(f"frame length {n} exceeds limit")
    body = stream.read(n)
    if len(body) < n:
        raise FramingError("truncated frame body")
    return body


def read_frame(stream: BinaryIO) -> Message | None:
    body = read_body(stream)
    return None if body is None else decode_body(body)


def parse_endpoint(text: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = default_host, text
    try:
        p = int(port)
    except ValueError:
        raise ValueError(f"bad endpoint {text!r}") from None
    if not 0 <= p <= 65535:
        raise ValueError(f"port out of range in {text!r}")
    return host.strip("[]") or default_host, p
