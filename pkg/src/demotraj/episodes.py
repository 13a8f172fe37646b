"""Split a recording into demonstrations and time-align its streams.

A long press toggles the recording session on and off.  Inside a session,
short presses pair up as (start, end) of one demonstration.  Toggle events
themselves are not part of any session window.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

from . import geom
from .demolog import (
    ButtonKind,
    Channel,
    FrameMeta,
    JointStateSample,
    LogFile,
    Record,
    StampedPose,
    TagDetectionRecord,
    encode_payload,
)
from .errors import InsufficientDataError, PreconditionError
from .geom import Pose

DEFAULT_TOLERANCE_NS = 50_000_000
DEFAULT_RATE_HZ = 30.0


def canonical_order(records: Sequence[Record]) -> list[Record]:
    """Sort by (timestamp, channel, encoded payload) so interleaving does not matter."""
    return sorted(records, key=lambda r: (r.timestamp_ns, r.channel, encode_payload(r.payload)))


@dataclass(frozen=True)
class Episode:
    start_ns: int
    end_ns: int
    records: tuple[Record, ...] = ()

    def __post_init__(self) -> None:
        if not self.start_ns < self.end_ns:
            raise ValueError(f"episode start {self.start_ns} must precede end {self.end_ns}")
        for r in self.records:
            if not self.start_ns <= r.timestamp_ns <= self.end_ns:
                raise ValueError(f"record at {r.timestamp_ns} outside episode bounds")

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns

    def poses(self) -> list[StampedPose]:
        return [
            StampedPose(r.timestamp_ns, r.payload.pose)
            for r in self.records
            if r.channel == Channel.POSE
        ]

    def tag_detections(self) -> list[tuple[int, TagDetectionRecord]]:
        return [(r.timestamp_ns, r.payload) for r in self.records if r.channel == Channel.TAG_DETECTION]

    def joint_states(self) -> list[tuple[int, JointStateSample]]:
        return [(r.timestamp_ns, r.payload) for r in self.records if r.channel == Channel.JOINT_STATE]

    def frames(self) -> list[tuple[int, FrameMeta]]:
        return [(r.timestamp_ns, r.payload) for r in self.records if r.channel == Channel.FRAME_META]


class Segmentation(NamedTuple):
    episodes: list[Episode]
    warnings: list[str]


def _fmt_s(ns: int) -> str:
    return f"{ns / 1e9:.3f}s"


def segment_episodes(log: LogFile) -> Segmentation:
    records = canonical_order(log.records)
    presses = [r for r in records if r.channel == Channel.BUTTON]
    warnings: list[str] = []
    windows: list[tuple[int, int]] = []

    in_session = False
    pending: int | None = None
    for rec in presses:
        t = rec.timestamp_ns
        if rec.payload.kind == ButtonKind.LONG:
            if in_session and pending is not None:
                warnings.append(f"unpaired press at {_fmt_s(pending)} dropped at session end")
                pending = None
            in_session = not in_session
            continue
        if not in_session:
            warnings.append(f"short press at {_fmt_s(t)} outside a recording session ignored")
        elif pending is None:
            pending = t
        else:
            if t > pending:
                windows.append((pending, t))
            else:
                warnings.append(f"zero-length demonstration at {_fmt_s(t)} dropped")
            pending = None
    if in_session:
        if pending is not None:
            warnings.append(f"unpaired press at {_fmt_s(pending)} dropped at end of log")
        warnings.append("recording session still open at end of log")

    episodes = []
    stamps = [r.timestamp_ns for r in records]
    for start, end in windows:
        lo = bisect.bisect_left(stamps, start)
        hi = bisect.bisect_right(stamps, end)
        body = tuple(r for r in records[lo:hi] if r.channel != Channel.BUTTON)
        episodes.append(Episode(start, end, body))
    return Segmentation(episodes, warnings)


def _check_sorted(ts: Sequence[int], name: str) -> None:
    for k in range(1, len(ts)):
        if ts[k] < ts[k - 1]:
            raise PreconditionError(f"{name} timestamps are not sorted (index {k})")


def associate_nearest(
    a_times: Sequence[int], b_times: Sequence[int], tolerance_ns: int = DEFAULT_TOLERANCE_NS
) -> list[tuple[int, int | None]]:
    """Match every A timestamp to the nearest B timestamp.

    Returns ``(i, j)`` pairs with ``j = None`` where no B sample lies within
    ``tolerance_ns``.  Ties go to the earlier B sample.
    """
    _check_sorted(a_times, "A")
    _check_sorted(b_times, "B")
    out: list[tuple[int, int | None]] = []
    for i, t in enumerate(a_times):
        k = bisect.bisect_left(b_times, t)
        best = None
        best_d = None
        for j in (k - 1, k):
            if 0 <= j < len(b_times):
                d = abs(b_times[j] - t)
                if best_d is None or d < best_d:
                    best, best_d = j, d
        if best is not None and best_d <= tolerance_ns:
            out.append((i, best))
        else:
            out.append((i, None))
    return out


def _grid(t0: int, t1: int, rate_hz: float) -> list[int]:
    if not rate_hz > 0:
        raise ValueError(f"resample rate must be positive, got {rate_hz}")
    period = Fraction(1_000_000_000) / Fraction(rate_hz)
    n = int((t1 - t0) / period)
    return [t0 + round(k * period) for k in range(n + 1)]


def interpolate_at(stream: Sequence[StampedPose], times: Sequence[int]) -> list[StampedPose]:
    """Pose at each query time by interpolation between bracketing samples.

    Query times must lie within the stream's span.
    """
    ts = [s.timestamp_ns for s in stream]
    _check_sorted(ts, "pose")
    out = []
    for t in times:
        if not ts[0] <= t <= ts[-1]:
            raise ValueError(f"query time {t} outside stream span [{ts[0]}, {ts[-1]}]")
        k = bisect.bisect_left(ts, t)
        if ts[k] == t:
            out.append(StampedPose(t, stream[k].pose))
            continue
        a, b = stream[k - 1], stream[k]
        s = (t - a.timestamp_ns) / (b.timestamp_ns - a.timestamp_ns)
        out.append(StampedPose(t, geom.interpolate(a.pose, b.pose, s)))
    return out


def resample_poses(stream: Sequence[StampedPose], rate_hz: float = DEFAULT_RATE_HZ) -> list[StampedPose]:
    if len(stream) < 2:
        raise InsufficientDataError(f"need at least 2 pose samples to resample, got {len(stream)}")
    grid = _grid(stream[0].timestamp_ns, stream[-1].timestamp_ns, rate_hz)
    return interpolate_at(stream, grid)


@dataclass(frozen=True)
class SyncedSample:
    timestamp_ns: int
    pose: Pose
    gripper_width: float | None = None
    gripper_state: float | None = None


@dataclass
class SyncedEpisode:
    start_ns: int
    end_ns: int
    samples: list[SyncedSample]
    frames: list[tuple[int, FrameMeta]] = field(default_factory=list)
    missing_gripper_frames: int = 0
    source: str = ""


def synchronize(
    poses: Sequence[StampedPose],
    gripper: Sequence,
    tolerance_ns: int = DEFAULT_TOLERANCE_NS,
) -> list[SyncedSample]:
    """Attach the nearest gripper sample (within tolerance) to every pose.

    ``gripper`` holds objects with ``timestamp_ns``, ``width`` and ``state``
    attributes (see :class:`demotraj.gripper.GripperStateSample`).
    """
    pairs = associate_nearest(
        [p.timestamp_ns for p in poses], [g.timestamp_ns for g in gripper], tolerance_ns
    )
    out = []
    for i, j in pairs:
        t, pose = poses[i]
        if j is None:
            out.append(SyncedSample(t, pose))
        else:
            out.append(SyncedSample(t, pose, gripper[j].width, gripper[j].state))
    return out
