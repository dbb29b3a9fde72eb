import io
import json
import struct
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eetwin.protocol import (
    MAX_FRAME,
    Ack,
    DirectiveMessage,
    FramingError,
    MalformedFrame,
    TelemetryMessage,
    decode_body,
    decode_frame,
    encode_frame,
    parse_endpoint,
    read_frame,
)

TS = datetime(2025, 5, 1, 8, 30, 0, 123456, tzinfo=timezone.utc)


def frame(obj) -> bytes:
    body = json.dumps(obj).encode()
    return struct.pack("!I", len(body)) + body


def test_telemetry_round_trip():
    m = TelemetryMessage("filter", "filtered", 1.25, TS, 7)
    assert m.timestamp.microsecond == 123000
    assert decode_frame(encode_frame(m)) == m


def test_wire_keys():
    body = encode_frame(TelemetryMessage("motor", "current", 3, TS, 0))[4:]
    assert json.loads(body) == {"component": "motor", "node": "current", "value": 3,
                                "ts": "2025-05-01T08:30:00.123Z", "seq": 0}
    d = DirectiveMessage("motor", "low confidence", TS, "abc")
    assert json.loads(encode_frame(d)[4:]) == {"component": "motor", "directive": "SHUTDOWN",
                                               "reason": "low confidence", "ts": "2025-05-01T08:30:00.123Z",
                                               "id": "abc"}
    assert json.loads(encode_frame(Ack("abc"))[4:]) == {"ack_id": "abc"}


def test_directive_and_ack_round_trip():
    d = DirectiveMessage("motor", "why", TS)
    assert decode_frame(encode_frame(d)) == d
    assert decode_frame(encode_frame(Ack(d.directive_id))) == Ack(d.directive_id)


def test_unknown_keys_dropped():
    m = decode_frame(frame({"component": "c", "node": "n", "value": 1.5, "ts": "2025-01-01T00:00:00Z",
                            "seq": 1, "extra": {"x": 1}}))
    assert m == TelemetryMessage("c", "n", 1.5, datetime(2025, 1, 1, tzinfo=timezone.utc), 1)


def test_offset_timestamps_normalised():
    m = decode_frame(frame({"component": "c", "node": "n", "value": 1, "ts": "2025-01-01T02:00:00+02:00",
                            "seq": 0}))
    assert m.timestamp == datetime(2025, 1, 1, tzinfo=timezone.utc)
    assert m.timestamp.utcoffset().total_seconds() == 0


@pytest.mark.parametrize("data", [
    b"",
    b"\x00\x00",
    b"\x00\x00\x00\x05{}",
    b"\x00\x00\x00\x02{}extra",
    frame([]),
    frame({"component": "c", "node": "n", "value": "1", "ts": "2025-01-01T00:00:00Z", "seq": 1}),
    frame({"component": "c", "node": "n", "value": True, "ts": "2025-01-01T00:00:00Z", "seq": 1}),
    frame({"component": "c", "node": "n", "value": 1, "ts": "2025-01-01T00:00:00", "seq": 1}),
    frame({"component": "c", "node": "n", "value": 1, "ts": "yesterday", "seq": 1}),
    frame({"component": "c", "node": "n", "value": 1, "ts": "2025-01-01T00:00:00Z", "seq": -1}),
    frame({"component": "c", "node": "n", "value": 1, "ts": "2025-01-01T00:00:00Z", "seq": 1.5}),
    frame({"component": "", "node": "n", "value": 1, "ts": "2025-01-01T00:00:00Z", "seq": 1}),
    frame({"component": "c", "directive": "REBOOT", "reason": "", "ts": "2025-01-01T00:00:00Z", "id": "x"}),
    frame({"ack_id": 5}),
    struct.pack("!I", 3) + b"\xff\xfe\xfd",
    struct.pack("!I", 9) + b'{"a":NaN}',
    struct.pack("!I", 20) + b'{"value": 1e999999}',
    struct.pack("!I", MAX_FRAME + 1),
])
def test_malformed(data):
    with pytest.raises(MalformedFrame):
        decode_frame(data)


def test_non_finite_values_cannot_be_built():
    with pytest.raises(ValueError):
        TelemetryMessage("c", "n", float("nan"), TS, 0)


def test_stream_reader():
    msgs = [TelemetryMessage("c", "n", float(k), TS, k) for k in range(3)]
    stream = io.BytesIO(b"".join(encode_frame(m) for m in msgs))
    assert [read_frame(stream) for _ in range(3)] == msgs
    assert read_frame(stream) is None
    with pytest.raises(FramingError):
        read_frame(io.BytesIO(encode_frame(msgs[0])[:-1]))
    with pytest.raises(FramingError):
        read_frame(io.BytesIO(b"\x00\x01"))


@pytest.mark.parametrize("text, expected", [
    ("127.0.0.1:7401", ("127.0.0.1", 7401)),
    ("7402", ("127.0.0.1", 7402)),
    (":7402", ("127.0.0.1", 7402)),
    ("[::1]:80", ("::1", 80)),
    ("plant.local:1", ("plant.local", 1)),
])
def test_parse_endpoint(text, expected):
    assert parse_endpoint(text) == expected


@pytest.mark.parametrize("text", ["host:", "host:abc", "host:70000"])
def test_parse_endpoint_errors(text):
    with pytest.raises(ValueError):
        parse_endpoint(text)


names = st.text(min_size=1, max_size=20)
times = st.datetimes(min_value=datetime(1971, 1, 1), max_value=datetime(9000, 1, 1), timezones=st.just(timezone.utc))
numbers = st.integers(-(2 ** 53), 2 ** 53) | st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=300)
@given(names, names, numbers, times, st.integers(0, 2 ** 62))
def test_telemetry_round_trip_property(c, n, v, ts, seq):
    m = TelemetryMessage(c, n, v, ts, seq)
    assert decode_frame(encode_frame(m)) == m


@settings(max_examples=300)
@given(names, st.text(max_size=50), times, names)
def test_directive_round_trip_property(c, reason, ts, did):
    m = DirectiveMessage(c, reason, ts, did)
    assert decode_frame(encode_frame(m)) == m


@settings(max_examples=2000)
@given(st.binary(max_size=64))
def test_decoder_is_total_on_bytes(data):
    try:
        decode_frame(data)
    except MalformedFrame:
        pass


json_values = st.recursive(st.none() | st.booleans() | st.integers() | st.floats() | st.text(max_size=10),
                           lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=5), inner,
                                                                                        max_size=3),
                           max_leaves=8)


@settings(max_examples=1000)
@given(st.dictionaries(st.sampled_from(["component", "node", "value", "ts", "seq", "directive", "reason", "id",
                                        "ack_id", "x"]), json_values, max_size=8))
def test_decoder_is_total_on_json_objects(obj):
    body = json.dumps(obj).encode()
    try:
        decode_body(body)
    except MalformedFrame:
        pass
