"""Bit-exact codecs for the drone-side datagram protocol.

Three message families, one per logical port:

* command (8889): ASCII verbs, replies are "ok"/"error"/a number
* telemetry (8890): "key:value;...\\r\\n" with a fixed key order
* video (11111): binary frame stubs; frames wider than one datagram are
  split into fragments with an index extension

Codecs are stateless; every parse error names the offending token or byte
offset. encode(parse(x)) == x and parse(encode(m)) == m for all valid input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

__all__ = [
    "ProtocolError",
    "Enter",
    "Takeoff",
    "Land",
    "Emergency",
    "Rc",
    "QueryBattery",
    "CommandMsg",
    "TelemetryMsg",
    "FrameStub",
    "VideoFragment",
    "FrameReassembler",
    "encode_command",
    "parse_command",
    "encode_telemetry",
    "parse_telemetry",
    "encode_frame",
    "parse_frame",
    "encode_fragment",
    "parse_fragment",
    "fragment_frame",
    "MAX_DATAGRAM",
    "COMMAND_PORT",
    "TELEMETRY_PORT",
    "VIDEO_PORT",
]

MAX_DATAGRAM = 1400

COMMAND_PORT = 8889
TELEMETRY_PORT = 8890
VIDEO_PORT = 11111


class ProtocolError(ValueError):
    """Malformed or out-of-range wire data."""


# --- command channel -------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Enter:
    """SDK-mode entry ("command")."""


@dataclass(frozen=True, slots=True)
class Takeoff:
    pass


@dataclass(frozen=True, slots=True)
class Land:
    pass


@dataclass(frozen=True, slots=True)
class Emergency:
    pass


@dataclass(frozen=True, slots=True)
class Rc:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if not isinstance(v, int) or not -100 <= v <= 100:
                raise ProtocolError(f"rc value {name}={v!r} outside [-100, 100]")


@dataclass(frozen=True, slots=True)
class QueryBattery:
    pass


CommandMsg = Union[Enter, Takeoff, Land, Emergency, Rc, QueryBattery]

_SIMPLE_VERBS = {
    Enter: "command",
    Takeoff: "takeoff",
    Land: "land",
    Emergency: "emergency",
    QueryBattery: "battery?",
}
_VERB_TO_MSG = {v: k for k, v in _SIMPLE_VERBS.items()}


def encode_command(msg: CommandMsg) -> bytes:
    if isinstance(msg, Rc):
        return f"rc {msg.a} {msg.b} {msg.c} {msg.d}".encode("ascii")
    verb = _SIMPLE_VERBS.get(type(msg))
    if verb is None:
        raise ProtocolError(f"unknown command message {msg!r}")
    return verb.encode("ascii")


def parse_command(data: bytes) -> CommandMsg:
    if not data:
        raise ProtocolError("empty command datagram")
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise ProtocolError(f"command is not ASCII at byte {e.start}") from None
    tokens = text.split()
    if not tokens:
        raise ProtocolError("blank command datagram")
    verb = tokens[0]
    if verb == "rc":
        if len(tokens) != 5:
            raise ProtocolError(f"rc expects 4 values, got {len(tokens) - 1}")
        vals = []
        for tok in tokens[1:]:
            try:
                vals.append(int(tok))
            except ValueError:
                raise ProtocolError(f"rc value {tok!r} is not an integer") from None
        return Rc(*vals)
    cls = _VERB_TO_MSG.get(text.strip())
    if cls is None:
        raise ProtocolError(f"unknown verb {verb!r}")
    return cls()


# --- telemetry channel -----------------------------------------------------

_TELEMETRY_KEYS = ("pitch", "roll", "yaw", "vgx", "vgy", "vgz", "bat", "h", "seq")


@dataclass(frozen=True, slots=True)
class TelemetryMsg:
    """10 Hz state report; angles in integer degrees, speeds dm/s, height cm."""

    pitch: int = 0
    roll: int = 0
    yaw: int = 0
    vgx: int = 0
    vgy: int = 0
    vgz: int = 0
    bat: int = 100
    h: int = 0
    seq: int = 0

    def __post_init__(self):
        if not 0 <= self.bat <= 100:
            raise ProtocolError(f"bat={self.bat} outside [0, 100]")


def encode_telemetry(msg: TelemetryMsg) -> bytes:
    parts = ";".join(f"{k}:{getattr(msg, k)}" for k in _TELEMETRY_KEYS)
    return (parts + "\r\n").encode("ascii")


def parse_telemetry(data: bytes) -> TelemetryMsg:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise ProtocolError(f"telemetry is not ASCII at byte {e.start}") from None
    text = text.rstrip("\r\n")
    fields: dict[str, int] = {}
    for item in text.split(";"):
        if not item:
            continue
        key, sep, value = item.partition(":")
        if not sep:
            raise ProtocolError(f"telemetry item {item!r} missing ':'")
        try:
            fields[key] = int(value)
        except ValueError:
            raise ProtocolError(f"telemetry value for {key!r} is not an integer: {value!r}") from None
    for key in _TELEMETRY_KEYS:
        if key not in fields:
            raise ProtocolError(f"telemetry missing key {key!r}")
    extra = set(fields) - set(_TELEMETRY_KEYS)
    if extra:
        raise ProtocolError(f"telemetry has unknown keys {sorted(extra)}")
    return TelemetryMsg(**fields)


# --- video channel ---------------------------------------------------------

_FRAME_HEADER = struct.Struct(">IQI")  # frame_id, capture_t ms, payload_len
_FRAG_HEADER = struct.Struct(">IQIHH")  # + total payload_len, frag index, frag count


@dataclass(frozen=True, slots=True)
class FrameStub:
    """Sized stand-in for one encoded video frame."""

    frame_id: int
    capture_t_ms: int
    payload: bytes = b""

    @property
    def payload_len(self) -> int:
        return len(self.payload)


def encode_frame(stub: FrameStub) -> bytes:
    if stub.payload_len > MAX_DATAGRAM:
        raise ProtocolError(
            f"payload {stub.payload_len} B exceeds single-datagram limit {MAX_DATAGRAM};"
            " use fragment_frame"
        )
    return _FRAME_HEADER.pack(stub.frame_id, stub.capture_t_ms, stub.payload_len) + stub.payload


def parse_frame(data: bytes) -> FrameStub:
    if len(data) < _FRAME_HEADER.size:
        raise ProtocolError(f"frame header truncated at byte {len(data)} (need {_FRAME_HEADER.size})")
    frame_id, capture_t, payload_len = _FRAME_HEADER.unpack_from(data)
    body = data[_FRAME_HEADER.size:]
    if len(body) != payload_len:
        raise ProtocolError(
            f"frame length mismatch at byte {_FRAME_HEADER.size}: header says {payload_len}, got {len(body)}"
        )
    return FrameStub(frame_id, capture_t, bytes(body))


@dataclass(frozen=True, slots=True)
class VideoFragment:
    """One datagram's worth of a fragmented frame."""

    frame_id: int
    capture_t_ms: int
    total_len: int
    index: int
    count: int
    chunk: bytes


def encode_fragment(frag: VideoFragment) -> bytes:
    if len(frag.chunk) > MAX_DATAGRAM:
        raise ProtocolError(f"fragment chunk {len(frag.chunk)} B exceeds {MAX_DATAGRAM}")
    return (
        _FRAG_HEADER.pack(frag.frame_id, frag.capture_t_ms, frag.total_len, frag.index, frag.count)
        + frag.chunk
    )


def parse_fragment(data: bytes) -> VideoFragment:
    if len(data) < _FRAG_HEADER.size:
        raise ProtocolError(f"fragment header truncated at byte {len(data)} (need {_FRAG_HEADER.size})")
    frame_id, capture_t, total_len, index, count = _FRAG_HEADER.unpack_from(data)
    if count == 0 or index >= count:
        raise ProtocolError(f"fragment index {index}/{count} out of range")
    return VideoFragment(frame_id, capture_t, total_len, index, count, bytes(data[_FRAG_HEADER.size:]))


def fragment_frame(stub: FrameStub, mtu: int = MAX_DATAGRAM) -> list[bytes]:
    """Split a frame into <= mtu-byte chunks, each wearing the fragment header."""
    if mtu <= 0 or mtu > MAX_DATAGRAM:
        raise ProtocolError(f"mtu must be in (0, {MAX_DATAGRAM}]")
    total = stub.payload_len
    count = max(1, -(-total // mtu))
    out = []
    for i in range(count):
        chunk = stub.payload[i * mtu : (i + 1) * mtu]
        out.append(encode_fragment(VideoFragment(stub.frame_id, stub.capture_t_ms, total, i, count, chunk)))
    return out


class FrameReassembler:
    """Collects fragments of the newest frame; older incomplete frames are discarded."""

    def __init__(self):
        self._frame_id = -1
        self._capture_t = 0
        self._chunks: dict[int, bytes] = {}
        self._count = 0
        self._total = 0

    def feed(self, data: bytes) -> FrameStub | None:
        frag = parse_fragment(data)
        if frag.frame_id < self._frame_id:
            return None  # stale straggler
        if frag.frame_id != self._frame_id:
            self._frame_id = frag.frame_id
            self._capture_t = frag.capture_t_ms
            self._chunks = {}
            self._count = frag.count
            self._total = frag.total_len
        self._chunks[frag.index] = frag.chunk
        if len(self._chunks) == self._count:
            payload = b"".join(self._chunks[i] for i in range(self._count))
            if len(payload) != self._total:
                raise ProtocolError(
                    f"reassembled frame {self._frame_id}: {len(payload)} B != announced {self._total}"
                )
            frame = FrameStub(self._frame_id, self._capture_t, payload)
            self._chunks = {}
            return frame
        return None
