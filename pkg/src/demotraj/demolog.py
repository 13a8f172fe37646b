"""Recording container and TUM trajectory text I/O.

Container layout (all little-endian)::

    magic     8 bytes   b"SROILOG1"
    version   u16       1
    records   repeated until end of stream:
        channel        u8
        timestamp_ns   u64   nanoseconds since recording start
        payload_len    u32
        payload        payload_len bytes

Payloads per channel:

    0x01 ButtonEvent       u8 kind (0 short, 1 long)
    0x02 ImuSample         6 x f64 (accel xyz, gyro xyz)
    0x03 JointState        u16 n, n x f64
    0x04 TagDetection      u32 id, 8 x f64 (u, v for TL, TR, BR, BL)
    0x05 PoseSample        7 x f64 (tx ty tz qx qy qz qw)
    0x06 CameraIntrinsics  4 x f64 (fx fy cx cy), u32 w, u32 h,
                           5 x f64 distortion (k1 k2 p1 p2 k3), f64 baseline
    0x07 FrameMeta         u64 frame index, u16 path length, UTF-8 path

Records on unknown channels are skipped with a :class:`LogWarning`.
"""

from __future__ import annotations

import enum
import io
import math
import struct
import warnings
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from typing import BinaryIO, Iterable, NamedTuple, Sequence, Union

from .errors import FormatError, ParseError, TruncationError
from .geom import Pose, Rotation

MAGIC = b"SROILOG1"
VERSION = 1
HEADER = struct.Struct("<8sH")
RECORD_HEADER = struct.Struct("<BQI")
U64_MAX = 2**64 - 1


class LogWarning(UserWarning):
    """Recoverable oddity found while reading a container."""


class Channel(enum.IntEnum):
    BUTTON = 0x01
    IMU = 0x02
    JOINT_STATE = 0x03
    TAG_DETECTION = 0x04
    POSE = 0x05
    CAMERA_INTRINSICS = 0x06
    FRAME_META = 0x07


class ButtonKind(enum.IntEnum):
    SHORT = 0
    LONG = 1


def _floats(values: Iterable[float], n: int, what: str) -> tuple[float, ...]:
    t = tuple(float(v) for v in values)
    if len(t) != n:
        raise ValueError(f"{what}: expected {n} values, got {len(t)}")
    return t


def _require_finite(values: Iterable[float], what: str) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{what}: non-finite value")


@dataclass(frozen=True)
class ButtonEvent:
    kind: ButtonKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ButtonKind(self.kind))


@dataclass(frozen=True)
class ImuSample:
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "accel", _floats(self.accel, 3, "accel"))
        object.__setattr__(self, "gyro", _floats(self.gyro, 3, "gyro"))
        _require_finite(self.accel + self.gyro, "IMU sample")


@dataclass(frozen=True)
class JointStateSample:
    positions: tuple[float, ...]

    def __post_init__(self) -> None:
        pos = tuple(float(v) for v in self.positions)
        if len(pos) > 0xFFFF:
            raise ValueError("too many joints for one record")
        _require_finite(pos, "joint state")
        object.__setattr__(self, "positions", pos)


@dataclass(frozen=True)
class TagDetectionRecord:
    """Corner pixels ordered top-left, top-right, bottom-right, bottom-left."""

    tag_id: int
    corners: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not 0 <= int(self.tag_id) <= 0xFFFFFFFF:
            raise ValueError(f"tag id {self.tag_id} does not fit in u32")
        corners = tuple((float(u), float(v)) for u, v in self.corners)
        if len(corners) != 4:
            raise ValueError(f"expected 4 corners, got {len(corners)}")
        _require_finite([c for uv in corners for c in uv], "tag corners")
        if len(set(corners)) != 4:
            raise ValueError("tag corners must be pairwise distinct")
        object.__setattr__(self, "tag_id", int(self.tag_id))
        object.__setattr__(self, "corners", corners)


@dataclass(frozen=True)
class PoseSample:
    """Camera pose in the odometry frame."""

    pose: Pose


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: tuple[float, float, float, float, float] = (0.0,) * 5
    baseline: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "distortion", _floats(self.distortion, 5, "distortion"))
        vals = (self.fx, self.fy, self.cx, self.cy, self.baseline) + self.distortion
        _require_finite(vals, "camera intrinsics")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < int(self.width) <= 0xFFFFFFFF and 0 < int(self.height) <= 0xFFFFFFFF):
            raise ValueError("image size must be positive")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def has_distortion(self) -> bool:
        return any(d != 0.0 for d in self.distortion)


@dataclass(frozen=True)
class FrameMeta:
    frame_index: int
    path: str

    def __post_init__(self) -> None:
        if not 0 <= int(self.frame_index) <= U64_MAX:
            raise ValueError("frame index does not fit in u64")
        if len(self.path.encode("utf-8")) > 0xFFFF:
            raise ValueError("frame path too long")


Payload = Union[
    ButtonEvent,
    ImuSample,
    JointStateSample,
    TagDetectionRecord,
    PoseSample,
    CameraIntrinsics,
    FrameMeta,
]

_CHANNEL_OF = {
    ButtonEvent: Channel.BUTTON,
    ImuSample: Channel.IMU,
    JointStateSample: Channel.JOINT_STATE,
    TagDetectionRecord: Channel.TAG_DETECTION,
    PoseSample: Channel.POSE,
    CameraIntrinsics: Channel.CAMERA_INTRINSICS,
    FrameMeta: Channel.FRAME_META,
}


@dataclass(frozen=True)
class Record:
    timestamp_ns: int
    payload: Payload

    def __post_init__(self) -> None:
        if type(self.payload) not in _CHANNEL_OF:
            raise TypeError(f"unsupported payload type {type(self.payload).__name__}")
        if not 0 <= int(self.timestamp_ns) <= U64_MAX:
            raise ValueError(f"timestamp {self.timestamp_ns} does not fit in u64")
        object.__setattr__(self, "timestamp_ns", int(self.timestamp_ns))

    @property
    def channel(self) -> Channel:
        return _CHANNEL_OF[type(self.payload)]


@dataclass(frozen=True)
class LogFile:
    records: tuple[Record, ...] = ()
    version: int = VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    def channel(self, channel: Channel) -> list[Record]:
        return [r for r in self.records if r.channel == channel]

    def poses(self) -> list[StampedPose]:
        return [
            StampedPose(r.timestamp_ns, r.payload.pose)
            for r in self.records
            if r.channel == Channel.POSE
        ]

    def intrinsics(self) -> CameraIntrinsics | None:
        for r in self.records:
            if r.channel == Channel.CAMERA_INTRINSICS:
                return r.payload
        return None


class StampedPose(NamedTuple):
    timestamp_ns: int
    pose: Pose


# -- encoding ---------------------------------------------------------------


def encode_payload(payload: Payload) -> bytes:
    if isinstance(payload, ButtonEvent):
        return struct.pack("<B", payload.kind)
    if isinstance(payload, ImuSample):
        return struct.pack("<6d", *payload.accel, *payload.gyro)
    if isinstance(payload, JointStateSample):
        n = len(payload.positions)
        return struct.pack(f"<H{n}d", n, *payload.positions)
    if isinstance(payload, TagDetectionRecord):
        flat = [c for uv in payload.corners for c in uv]
        return struct.pack("<I8d", payload.tag_id, *flat)
    if isinstance(payload, PoseSample):
        return struct.pack("<7d", *payload.pose.tum_fields())
    if isinstance(payload, CameraIntrinsics):
        p = payload
        return struct.pack(
            "<4dII5dd", p.fx, p.fy, p.cx, p.cy, p.width, p.height, *p.distortion, p.baseline
        )
    if isinstance(payload, FrameMeta):
        path = payload.path.encode("utf-8")
        return struct.pack("<QH", payload.frame_index, len(path)) + path
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


def encode_log(log: LogFile) -> bytes:
    out = [HEADER.pack(MAGIC, log.version)]
    for rec in log.records:
        body = encode_payload(rec.payload)
        out.append(RECORD_HEADER.pack(rec.channel, rec.timestamp_ns, len(body)))
        out.append(body)
    return b"".join(out)


def write_log(log: LogFile, destination: BinaryIO) -> int:
    """Serialise ``log`` into a binary sink and return the number of bytes written."""
    data = encode_log(log)
    destination.write(data)
    return len(data)


# -- decoding ---------------------------------------------------------------


def _decode_pose(body: bytes) -> PoseSample:
    fields = struct.unpack("<7d", body)
    if not all(math.isfinite(v) for v in fields):
        raise ValueError("non-finite pose value")
    q = fields[3:]
    n = math.sqrt(sum(c * c for c in q))
    if abs(n - 1.0) > 1e-6:
        warnings.warn(
            f"pose quaternion norm {n:.9g} deviates from 1; renormalised",
            LogWarning,
            stacklevel=4,
        )
    return PoseSample(Pose(Rotation.from_xyzw(q), fields[:3]))


def _decode_joint_state(body: bytes) -> JointStateSample:
    if len(body) < 2:
        raise ValueError("joint state payload shorter than its count field")
    (n,) = struct.unpack_from("<H", body)
    if len(body) != 2 + 8 * n:
        raise ValueError(f"joint count {n} does not match payload length {len(body)}")
    return JointStateSample(struct.unpack_from(f"<{n}d", body, 2))


def _decode_frame_meta(body: bytes) -> FrameMeta:
    if len(body) < 10:
        raise ValueError("frame meta payload shorter than its fixed fields")
    index, n = struct.unpack_from("<QH", body)
    if len(body) != 10 + n:
        raise ValueError(f"path length {n} does not match payload length {len(body)}")
    return FrameMeta(index, body[10:].decode("utf-8"))


def decode_payload(channel: Channel, body: bytes) -> Payload:
    """Decode one payload.  Raises ``ValueError``/``struct.error`` on bad content."""
    if channel == Channel.BUTTON:
        (kind,) = struct.unpack("<B", body)
        return ButtonEvent(ButtonKind(kind))
    if channel == Channel.IMU:
        v = struct.unpack("<6d", body)
        return ImuSample(v[:3], v[3:])
    if channel == Channel.JOINT_STATE:
        return _decode_joint_state(body)
    if channel == Channel.TAG_DETECTION:
        tag_id, *flat = struct.unpack("<I8d", body)
        return TagDetectionRecord(tag_id, tuple(zip(flat[0::2], flat[1::2])))
    if channel == Channel.POSE:
        return _decode_pose(body)
    if channel == Channel.CAMERA_INTRINSICS:
        v = struct.unpack("<4dII5dd", body)
        return CameraIntrinsics(*v[:6], distortion=v[6:11], baseline=v[11])
    if channel == Channel.FRAME_META:
        return _decode_frame_meta(body)
    raise ValueError(f"no decoder for channel {channel}")


def _read_exact(source: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = source.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_log(source: BinaryIO | bytes) -> LogFile:
    """Parse a container from a binary stream (or a bytes object).

    Raises :class:`FormatError` on a bad header or undecodable payload and
    :class:`TruncationError` when the stream ends inside a record.  Records
    on unknown channels are skipped with a :class:`LogWarning`; timestamps
    going backwards within a channel are kept but also warned about.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(bytes(source))
    head = _read_exact(source, HEADER.size)
    if len(head) < 8 or head[:8] != MAGIC:
        raise FormatError(f"bad magic {head[:8]!r}: expected {MAGIC!r}")
    if len(head) < HEADER.size:
        raise TruncationError("stream ends inside the header", offset=len(head))
    _, version = HEADER.unpack(head)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (expected {VERSION})")

    offset = HEADER.size
    records: list[Record] = []
    last_ts: dict[int, int] = {}
    while True:
        rh = _read_exact(source, RECORD_HEADER.size)
        if not rh:
            break
        if len(rh) < RECORD_HEADER.size:
            channel = rh[0]
            raise TruncationError(
                f"record header truncated at byte offset {offset} (channel 0x{channel:02x})",
                offset=offset,
                channel=channel,
            )
        channel, ts, n = RECORD_HEADER.unpack(rh)
        body = _read_exact(source, n)
        if len(body) < n:
            raise TruncationError(
                f"payload truncated at byte offset {offset} (channel 0x{channel:02x}): "
                f"declared {n} bytes, {len(body)} available",
                offset=offset,
                channel=channel,
            )
        try:
            ch = Channel(channel)
        except ValueError:
            warnings.warn(
                f"skipping record with unknown channel 0x{channel:02x} at byte offset {offset}",
                LogWarning,
                stacklevel=2,
            )
            offset += RECORD_HEADER.size + n
            continue
        try:
            payload = decode_payload(ch, body)
        except (ValueError, struct.error, UnicodeDecodeError) as exc:
            raise FormatError(
                f"bad {ch.name} payload at byte offset {offset}: {exc}"
            ) from exc
        if ts < last_ts.get(ch, 0):
            warnings.warn(
                f"{ch.name} timestamp {ts} at byte offset {offset} precedes the previous one",
                LogWarning,
                stacklevel=2,
            )
        last_ts[ch] = max(ts, last_ts.get(ch, 0))
        records.append(Record(ts, payload))
        offset += RECORD_HEADER.size + n
    return LogFile(tuple(records), version)


def save_log(log: LogFile, path) -> int:
    with open(path, "wb") as fh:
        return write_log(log, fh)


def load_log(path) -> LogFile:
    with open(path, "rb") as fh:
        return read_log(fh)


# -- TUM text ---------------------------------------------------------------

_NS = Decimal(1_000_000_000)


def _seconds_to_ns(token: str) -> int:
    d = Decimal(token)
    if not d.is_finite():
        raise InvalidOperation
    return int((d * _NS).to_integral_value(rounding=ROUND_HALF_EVEN))


def format_seconds(ns: int) -> str:
    """Exact decimal rendering of a nanosecond timestamp in seconds."""
    sign = "-" if ns < 0 else ""
    s, frac = divmod(abs(ns), 1_000_000_000)
    return f"{sign}{s}.{frac:09d}"


def import_tum(text: str) -> list[StampedPose]:
    """Parse ``t tx ty tz qx qy qz qw`` lines (t in seconds).

    Blank lines and lines starting with ``#`` are skipped.  Quaternions are
    renormalised.  Timestamps are rounded to the nearest nanosecond.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"line {lineno}: expected 8 fields, got {len(parts)}", lineno)
        try:
            t_ns = _seconds_to_ns(parts[0])
            values = [float(p) for p in parts[1:]]
        except (ValueError, InvalidOperation):
            raise ParseError(f"line {lineno}: invalid number in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(f"line {lineno}: non-finite value", lineno)
        try:
            pose = Pose.from_tum_fields(values)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}", lineno) from None
        out.append(StampedPose(t_ns, pose))
    return out


def export_tum(stream: Sequence[StampedPose], header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for t_ns, pose in stream:
        vals = " ".join(repr(v) for v in pose.tum_fields())
        lines.append(f"{format_seconds(t_ns)} {vals}")
    return "\n".join(lines) + "\n"


def load_tum(path) -> list[StampedPose]:
    with open(path, encoding="utf-8") as fh:
        return import_tum(fh.read())


def save_tum(stream: Sequence[StampedPose], path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(export_tum(stream, header))


__all__ = [
    "MAGIC",
    "VERSION",
    "ButtonEvent",
    "ButtonKind",
    "CameraIntrinsics",
    "Channel",
    "FrameMeta",
    "ImuSample",
    "JointStateSample",
    "LogFile",
    "LogWarning",
    "PoseSample",
    "Record",
    "StampedPose",
    "TagDetectionRecord",
    "encode_log",
    "export_tum",
    "import_tum",
    "load_log",
    "load_tum",
    "read_log",
    "save_log",
    "save_tum",
    "write_log",
]
