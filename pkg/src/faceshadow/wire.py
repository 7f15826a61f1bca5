"""Length-prefixed binary framing for frames in and control values out.

All multi-byte integers are little-endian.  Frame messages carry a u32
payload length capped at 16 MiB; control messages are fixed 150 bytes.
Decoders raise only WireError subtypes, never crash, and never allocate
past the declared caps; the stream decoder resynchronizes on the next magic
after corruption.

Recorded-session files interleave a "VFS1" sidecar chunk (the toy motion
parameters) after each frame message; live wire traffic does not need it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptFrameError,
    IncompleteMessageError,
    ProtocolError,
    ValidationError,
)
from .mapping import CONTROL_DIM, ControlVector
from .motion import MotionParams

FRAME_MAGIC = b"VFF1"
CONTROL_MAGIC = b"VFC1"
SIDECAR_MAGIC = b"VFS1"

MAX_PAYLOAD_BYTES = 16 * 1024 * 1024
MAX_SIDECAR_KEYPOINTS = 4096

FORMAT_F32_GRID = 0
FORMAT_OPAQUE = 1

_FRAME_HEADER = struct.Struct("<4sIQQHHB")            # magic, length, seq, ts, w, h, fmt
_CONTROL_STRUCT = struct.Struct(f"<4sQQQH{CONTROL_DIM}f")
_SIDECAR_HEADER = struct.Struct("<4sI")               # magic, keypoint count

CONTROL_MESSAGE_SIZE = _CONTROL_STRUCT.size           # 150 bytes


def _check_u(value: int, bits: int, name: str) -> int:
    value = int(value)
    if not 0 <= value < (1 << bits):
        raise ValidationError(f"{name}={value} does not fit in u{bits}")
    return value


@dataclass(frozen=True)
class FrameMessage:
    seq: int
    capture_ts: int          # microseconds since epoch
    width: int
    height: int
    format: int              # 0 = f32 grid row-major, 1 = opaque encoded image
    payload: bytes

    def __post_init__(self):
        _check_u(self.seq, 64, "seq")
        _check_u(self.capture_ts, 64, "capture_ts")
        _check_u(self.width, 16, "width")
        _check_u(self.height, 16, "height")
        if self.format not in (FORMAT_F32_GRID, FORMAT_OPAQUE):
            raise ValidationError(f"unknown frame format {self.format}")
        if len(self.payload) > MAX_PAYLOAD_BYTES:
            raise ValidationError(f"payload exceeds {MAX_PAYLOAD_BYTES} bytes")
        if self.format == FORMAT_F32_GRID and len(self.payload) != 4 * self.width * self.height:
            raise ValidationError(
                f"format-0 payload must be {4 * self.width * self.height} bytes, "
                f"got {len(self.payload)}"
            )

    def grid(self) -> np.ndarray:
        if self.format != FORMAT_F32_GRID:
            raise ValidationError("payload is not a float32 grid")
        return (
            np.frombuffer(self.payload, dtype="<f4")
            .reshape(self.height, self.width)
            .astype(np.float64)
        )

    @classmethod
    def from_grid(cls, seq: int, capture_ts: int, grid: np.ndarray) -> "FrameMessage":
        h, w = grid.shape
        return cls(
            seq=seq, capture_ts=capture_ts, width=w, height=h,
            format=FORMAT_F32_GRID,
            payload=np.ascontiguousarray(grid, dtype="<f4").tobytes(),
        )


@dataclass(frozen=True)
class ControlMessage:
    seq: int
    capture_ts: int
    send_ts: int
    values: tuple[float, ...]
    count: int = CONTROL_DIM

    def __post_init__(self):
        _check_u(self.seq, 64, "seq")
        _check_u(self.capture_ts, 64, "capture_ts")
        _check_u(self.send_ts, 64, "send_ts")
        if self.count != CONTROL_DIM:
            raise ValidationError(f"count must be {CONTROL_DIM}, got {self.count}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) != CONTROL_DIM:
            raise ValidationError(f"expected {CONTROL_DIM} values, got {len(vals)}")
        arr = np.asarray(vals)
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("control values must be finite and in [0, 1]")
        if self.send_ts < self.capture_ts:
            raise ValidationError("send_ts must be >= capture_ts")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_vector(cls, cv: ControlVector) -> "ControlMessage":
        # f32 storage quantizes; round-trip values must stay in [0, 1]
        quantized = np.asarray(cv.values, dtype="<f4").astype(np.float64)
        quantized = np.clip(quantized, 0.0, 1.0)
        return cls(
            seq=cv.seq, capture_ts=cv.capture_ts, send_ts=cv.send_ts,
            values=tuple(quantized),
        )

    def to_vector(self) -> ControlVector:
        return ControlVector(
            values=np.asarray(self.values), seq=self.seq,
            capture_ts=self.capture_ts, send_ts=self.send_ts,
        )


# ---------------------------------------------------------------------------
# frame codec

def encode_frame(msg: FrameMessage) -> bytes:
    header = _FRAME_HEADER.pack(
        FRAME_MAGIC, len(msg.payload), msg.seq, msg.capture_ts,
        msg.width, msg.height, msg.format,
    )
    return header + msg.payload


def parse_frame(data: bytes) -> tuple[FrameMessage, int]:
    """Parse one frame message from the head of `data`; returns (msg, consumed)."""
    if len(data) < 4:
        raise IncompleteMessageError("not enough bytes for magic")
    if data[:4] != FRAME_MAGIC:
        raise ProtocolError(f"bad frame magic {bytes(data[:4])!r}")
    if len(data) < _FRAME_HEADER.size:
        raise IncompleteMessageError("frame header truncated")
    _, length, seq, ts, width, height, fmt = _FRAME_HEADER.unpack_from(data)
    if length > MAX_PAYLOAD_BYTES:
        raise CorruptFrameError(f"declared payload {length} exceeds cap")
    if fmt not in (FORMAT_F32_GRID, FORMAT_OPAQUE):
        raise CorruptFrameError(f"unknown format byte {fmt}")
    if fmt == FORMAT_F32_GRID and length != 4 * width * height:
        raise CorruptFrameError(
            f"format-0 length {length} inconsistent with {width}x{height}"
        )
    end = _FRAME_HEADER.size + length
    if len(data) < end:
        raise IncompleteMessageError(f"payload truncated ({len(data)} < {end})")
    payload = bytes(data[_FRAME_HEADER.size : end])
    return (
        FrameMessage(
            seq=seq, capture_ts=ts, width=width, height=height,
            format=fmt, payload=payload,
        ),
        end,
    )


def decode_frame(data: bytes) -> FrameMessage:
    """Decode exactly one frame message occupying the whole buffer."""
    msg, consumed = parse_frame(data)
    if consumed != len(data):
        raise CorruptFrameError(f"{len(data) - consumed} trailing bytes after frame")
    return msg


# ---------------------------------------------------------------------------
# control codec

def encode_control(msg: ControlMessage) -> bytes:
    return _CONTROL_STRUCT.pack(
        CONTROL_MAGIC, msg.seq, msg.capture_ts, msg.send_ts, msg.count, *msg.values
    )


def encode_control_vector(cv: ControlVector, send_ts: int) -> bytes:
    """Pack a validated ControlVector directly (transmit hot path).

    Skips the ControlMessage detour; struct's f64->f32 rounding is monotone,
    so values stay inside [0, 1] on the wire.
    """
    return _CONTROL_STRUCT.pack(
        CONTROL_MAGIC, cv.seq, cv.capture_ts, max(send_ts, cv.capture_ts),
        CONTROL_DIM, *cv.values.tolist(),
    )


def parse_control(data: bytes) -> tuple[ControlMessage, int]:
    if len(data) < 4:
        raise IncompleteMessageError("not enough bytes for magic")
    if data[:4] != CONTROL_MAGIC:
        raise ProtocolError(f"bad control magic {bytes(data[:4])!r}")
    if len(data) < CONTROL_MESSAGE_SIZE:
        raise IncompleteMessageError("control message truncated")
    fields = _CONTROL_STRUCT.unpack_from(data)
    _, seq, capture_ts, send_ts, count, *values = fields
    if count != CONTROL_DIM:
        raise ProtocolError(f"control count must be {CONTROL_DIM}, got {count}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ProtocolError("control values outside [0, 1]")
    if send_ts < capture_ts:
        raise ProtocolError("send_ts precedes capture_ts")
    msg = ControlMessage(
        seq=seq, capture_ts=capture_ts, send_ts=send_ts, values=tuple(values)
    )
    return msg, CONTROL_MESSAGE_SIZE


def decode_control(data: bytes) -> ControlMessage:
    msg, consumed = parse_control(data)
    if consumed != len(data):
        raise CorruptFrameError(f"{len(data) - consumed} trailing bytes after control")
    return msg


# ---------------------------------------------------------------------------
# motion sidecar (recorded-session files)

def encode_sidecar(params: MotionParams) -> bytes:
    k = params.k
    body = np.concatenate(
        [
            np.array([params.scale]),
            params.rotation.ravel(),
            params.deformation.ravel(),
            params.translation,
        ]
    ).astype("<f8")
    return _SIDECAR_HEADER.pack(SIDECAR_MAGIC, k) + body.tobytes()


def parse_sidecar(data: bytes) -> tuple[MotionParams, int]:
    if len(data) < 4:
        raise IncompleteMessageError("not enough bytes for magic")
    if data[:4] != SIDECAR_MAGIC:
        raise ProtocolError(f"bad sidecar magic {bytes(data[:4])!r}")
    if len(data) < _SIDECAR_HEADER.size:
        raise IncompleteMessageError("sidecar header truncated")
    _, k = _SIDECAR_HEADER.unpack_from(data)
    if k > MAX_SIDECAR_KEYPOINTS:
        raise CorruptFrameError(f"sidecar keypoint count {k} exceeds cap")
    n_floats = 1 + 9 + 3 * k + 3
    end = _SIDECAR_HEADER.size + 8 * n_floats
    if len(data) < end:
        raise IncompleteMessageError("sidecar body truncated")
    body = np.frombuffer(data[_SIDECAR_HEADER.size : end], dtype="<f8")
    try:
        params = MotionParams(
            scale=float(body[0]),
            rotation=body[1:10].reshape(3, 3),
            deformation=body[10 : 10 + 3 * k].reshape(k, 3),
            translation=body[10 + 3 * k :],
        )
    except (ValidationError, ValueError) as exc:
        raise CorruptFrameError(f"sidecar parameters invalid: {exc}") from exc
    return params, end


# ---------------------------------------------------------------------------
# stream decoding with resynchronization

class StreamDecoder:
    """Incremental decoder that scans for a magic and skips corrupt spans."""

    def __init__(self, magic: bytes, parse):
        self.magic = magic
        self.parse = parse
        self.buffer = b""
        self.resync_count = 0

    def feed(self, data: bytes) -> list:
        self.buffer += data
        out = []
        while True:
            idx = self.buffer.find(self.magic)
            if idx < 0:
                # keep a possible partial magic at the tail
                self.buffer = self.buffer[-(len(self.magic) - 1):] if self.buffer else b""
                break
            if idx > 0:
                self.buffer = self.buffer[idx:]
                self.resync_count += 1
            try:
                msg, consumed = self.parse(self.buffer)
            except IncompleteMessageError:
                break
            except (ProtocolError, CorruptFrameError):
                # advance past this magic byte and rescan
                self.buffer = self.buffer[1:]
                self.resync_count += 1
                continue
            out.append(msg)
            self.buffer = self.buffer[consumed:]
        return out


def frame_stream_decoder() -> StreamDecoder:
    return StreamDecoder(FRAME_MAGIC, parse_frame)


def control_stream_decoder() -> StreamDecoder:
    return StreamDecoder(CONTROL_MAGIC, parse_control)
