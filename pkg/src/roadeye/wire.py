"""Binary perception-message codec and pipeline phase stamping.

Frame layout, all little-endian:
  magic "CMM1" | u32 payload length | f64 frame time | 4 x f64 phase stamps
  | u32 record count | records.
Record: f64 t, i32 id, f64 lat, f64 lon, f64 alt, f32 w, f32 l, f32 h,
f32 theta. Unset phase stamps travel as NaN.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

WIRE_MAGIC = b"CMM1"
_HEADER = struct.Struct("<4sI")
_FRAME_META = struct.Struct("<d4dI")
_RECORD = struct.Struct("<di3d4f")

HEADER_BYTES = _HEADER.size + _FRAME_META.size  # 52
RECORD_BYTES = _RECORD.size  # 52

PHASES = ("sensor", "edge_in", "edge_out", "onboard")


class WireFormatError(ValueError):
    """Rejected frame bytes; the message names the offset and field."""


def _f32(v: float) -> float:
    return float(np.float32(v))


@dataclass
class PerceptionMessage:
    """One georeferenced object record crossing the wire.

    Dims and heading are quantized to float32 on construction so encoded
    frames round-trip field-exactly.
    """

    t: float
    id: int
    lat: float
    lon: float
    alt: float
    w: float
    l: float
    h: float
    theta: float  # degrees clockwise from north, [0, 360)

    def __post_init__(self):
        self.w = _f32(self.w)
        self.l = _f32(self.l)
        self.h = _f32(self.h)
        theta = _f32(self.theta % 360.0)
        self.theta = 0.0 if theta == 360.0 else theta
        self.validate()

    def validate(self):
        if not -90.0 <= self.lat <= 90.0:
            raise WireFormatError(f"lat {self.lat} outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise WireFormatError(f"lon {self.lon} outside (-180, 180]")
        if not 0.0 <= self.theta < 360.0:
            raise WireFormatError(f"theta {self.theta} outside [0, 360)")
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise WireFormatError("dims must be positive")
        if not -(2 ** 31) <= self.id < 2 ** 31:
            raise WireFormatError(f"id {self.id} does not fit in i32")

    def to_dict(self) -> dict:
        return {
            "t": self.t, "id": self.id, "lat": self.lat, "lon": self.lon,
            "alt": self.alt, "w": self.w, "l": self.l, "h": self.h,
            "theta": self.theta,
        }


@dataclass
class PhaseStamps:
    """One wall-clock stamp per pipeline phase boundary, seconds."""

    t_sensor: float | None = None
    t_edge_in: float | None = None
    t_edge_out: float | None = None
    t_onboard: float | None = None

    def as_tuple(self) -> tuple:
        return (self.t_sensor, self.t_edge_in, self.t_edge_out, self.t_onboard)


_PHASE_FIELD = {
    "sensor": "t_sensor",
    "edge_in": "t_edge_in",
    "edge_out": "t_edge_out",
    "onboard": "t_onboard",
}


def stamp_phase(stamps: PhaseStamps, phase: str, now: float) -> PhaseStamps:
    """Return stamps with `phase` set; each phase may be stamped once."""
    field_name = _PHASE_FIELD.get(phase)
    if field_name is None:
        raise ValueError(f"unknown phase {phase!r}, expected one of {PHASES}")
    if getattr(stamps, field_name) is not None:
        raise ValueError(f"phase {phase!r} already stamped")
    return replace(stamps, **{field_name: now})


def encode_frame(msgs: list[PerceptionMessage], stamps: PhaseStamps, t_frame: float = 0.0) -> bytes:
    """Serialize one frame; refuses messages violating their invariants."""
    for m in msgs:
        m.validate()
    stamp_vals = [math.nan if s is None else s for s in stamps.as_tuple()]
    payload = bytearray()
    payload += _FRAME_META.pack(t_frame, *stamp_vals, len(msgs))
    for m in msgs:
        payload += _RECORD.pack(m.t, m.id, m.lat, m.lon, m.alt, m.w, m.l, m.h, m.theta)
    return _HEADER.pack(WIRE_MAGIC, len(payload)) + bytes(payload)


@dataclass
class DecodedFrame:
    messages: list[PerceptionMessage]
    stamps: PhaseStamps
    t_frame: float


def decode_frame(data: bytes) -> DecodedFrame:
    """Exact inverse of encode_frame; rejects malformed bytes outright."""
    if len(data) < _HEADER.size:
        raise WireFormatError(f"truncated header at byte {len(data)}: need {_HEADER.size} bytes")
    magic, payload_len = _HEADER.unpack_from(data, 0)
    if magic != WIRE_MAGIC:
        raise WireFormatError(f"bad magic at offset 0: {magic!r}")
    if len(data) != _HEADER.size + payload_len:
        raise WireFormatError(
            f"length mismatch at offset 4: header says {payload_len} payload bytes, "
            f"frame has {len(data) - _HEADER.size}"
        )
    off = _HEADER.size
    if payload_len < _FRAME_META.size:
        raise WireFormatError(f"truncated frame meta at byte {off}")
    t_frame, s0, s1, s2, s3, count = _FRAME_META.unpack_from(data, off)
    off += _FRAME_META.size
    expected = _FRAME_META.size + count * RECORD_BYTES
    if payload_len != expected:
        raise WireFormatError(
            f"record area mismatch at byte {off}: {count} records need "
            f"{expected} payload bytes, header says {payload_len}"
        )
    msgs = []
    for k in range(count):
        t, mid, lat, lon, alt, w, l, h, theta = _RECORD.unpack_from(data, off)
        try:
            msgs.append(PerceptionMessage(t=t, id=mid, lat=lat, lon=lon, alt=alt,
                                          w=w, l=l, h=h, theta=theta))
        except WireFormatError as e:
            raise WireFormatError(f"record {k} at byte {off}: {e}") from None
        off += RECORD_BYTES
    stamps = PhaseStamps(
        *(None if math.isnan(v) else v for v in (s0, s1, s2, s3))
    )
    return DecodedFrame(messages=msgs, stamps=stamps, t_frame=t_frame)


def frame_length(data: bytes) -> int | None:
    """Total frame byte length from a buffer holding at least the header."""
    if len(data) < _HEADER.size:
        return None
    magic, payload_len = _HEADER.unpack_from(data, 0)
    if magic != WIRE_MAGIC:
        raise WireFormatError(f"bad magic at offset 0: {magic!r}")
    return _HEADER.size + payload_len


def read_frame_bytes(sock) -> bytes | None:
    """Read one length-delimited frame from a socket; None on clean EOF."""
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    magic, payload_len = _HEADER.unpack_from(header, 0)
    if magic != WIRE_MAGIC:
        raise WireFormatError(f"bad magic at offset 0: {magic!r}")
    payload = _recv_exact(sock, payload_len)
    if payload is None:
        raise WireFormatError(f"stream truncated inside payload at byte {_HEADER.size}")
    return header + payload


def _recv_exact(sock, n: int) -> bytes | None:
    """n bytes from the socket; None on EOF at a frame boundary."""
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise WireFormatError(f"stream ended mid-read after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def iter_frames_from_file(path):
    """Yield raw frame byte strings from a concatenated-frames file."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0
    while off < len(data):
        head = data[off:off + _HEADER.size]
        if len(head) < _HEADER.size:
            raise WireFormatError(f"truncated header at byte {off}")
        total = frame_length(head)
        if off + total > len(data):
            raise WireFormatError(f"truncated frame at byte {off}")
        yield data[off:off + total]
        off += total
