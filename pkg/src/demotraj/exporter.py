"""Imitation-learning dataset layout.

::

    <dest>/manifest.json
    <dest>/episode_0000/trajectory.csv   t_ns,x,y,z,qx,qy,qz,qw,gripper
    <dest>/episode_0000/meta.json

Poses are re-expressed relative to each episode's first pose.  The gripper
column holds the normalised state, or is empty where no gripper
observation was associated with the sample.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import geom
from .demolog import CameraIntrinsics
from .episodes import (
    DEFAULT_TOLERANCE_NS,
    Episode,
    SyncedEpisode,
    resample_poses,
    synchronize,
)
from .errors import InsufficientDataError, ValidationError
from .geom import Pose, Rotation
from .gripper import GripperConfig, gripper_state_stream, group_frames

FORMAT_VERSION = 1
CSV_HEADER = "t_ns,x,y,z,qx,qy,qz,qw,gripper"
FRAME_CONVENTION = (
    "pose of the camera at each sample expressed in the camera frame of the episode's "
    "first sample; quaternion order qx,qy,qz,qw (Hamilton)"
)
IDENTITY_TOL = 1e-9
QUAT_NORM_TOL = 1e-6


@dataclass
class DatasetManifest:
    format_version: int
    episode_count: int
    sample_rate_hz: float
    frame_convention: str
    source_logs: list[str]
    gripper_calibration: dict | None
    skipped_episodes: int = 0
    generator: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def prepare_episode(
    episode: Episode,
    rate_hz: float,
    config: GripperConfig | None = None,
    intrinsics: CameraIntrinsics | None = None,
    tolerance_ns: int = DEFAULT_TOLERANCE_NS,
    smooth: bool = False,
    source: str = "",
) -> SyncedEpisode:
    """Resample an episode's poses to ``rate_hz`` and attach gripper states."""
    poses = episode.poses()
    try:
        grid = resample_poses(poses, rate_hz)
    except InsufficientDataError:
        grid = list(poses)
    gripper = []
    missing = 0
    if config is not None and intrinsics is not None:
        stream = gripper_state_stream(
            group_frames(episode.tag_detections()),
            intrinsics,
            config.geometry,
            config.calibration,
            smooth,
        )
        gripper, missing = stream.samples, stream.skipped_frames
    return SyncedEpisode(
        episode.start_ns,
        episode.end_ns,
        synchronize(grid, gripper, tolerance_ns),
        episode.frames(),
        missing,
        source,
    )


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def episode_rows(episode: SyncedEpisode) -> list[str]:
    first = episode.samples[0].pose
    lines = [CSV_HEADER]
    for k, s in enumerate(episode.samples):
        rel = Pose() if k == 0 else geom.relative(first, s.pose)
        grip = "" if s.gripper_state is None else _fmt(s.gripper_state)
        fields = [str(s.timestamp_ns)] + [_fmt(v) for v in rel.tum_fields()] + [grip]
        lines.append(",".join(fields))
    return lines


def _write_episode(directory: Path, episode: SyncedEpisode, index: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "trajectory.csv").write_text("\n".join(episode_rows(episode)) + "\n", encoding="utf-8")
    meta = {
        "index": index,
        "source": episode.source,
        "start_ns": episode.start_ns,
        "end_ns": episode.end_ns,
        "sample_count": len(episode.samples),
        "gripper_samples": sum(1 for s in episode.samples if s.gripper_state is not None),
        "missing_gripper_frames": episode.missing_gripper_frames,
        "frames": [
            {"t_ns": t, "frame_index": f.frame_index, "path": f.path} for t, f in episode.frames
        ],
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def export_dataset(
    episodes: Sequence[SyncedEpisode],
    destination,
    sample_rate_hz: float,
    gripper_calibration: dict | None = None,
    warnings: list[str] | None = None,
) -> DatasetManifest:
    """Write episodes and a manifest under ``destination``.

    Episodes with fewer than two samples are skipped (and counted).  The
    manifest is written last.
    """
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    if not os.access(dest, os.W_OK):
        raise PermissionError(f"destination {dest} is not writable")
    kept = []
    skipped = 0
    for k, ep in enumerate(episodes):
        if len(ep.samples) < 2:
            skipped += 1
            if warnings is not None:
                warnings.append(f"episode {k} skipped: {len(ep.samples)} synced samples")
            continue
        kept.append(ep)
    for index, ep in enumerate(kept):
        _write_episode(dest / f"episode_{index:04d}", ep, index)
    sources = sorted({ep.source for ep in episodes if ep.source})
    manifest = DatasetManifest(
        FORMAT_VERSION,
        len(kept),
        float(sample_rate_hz),
        FRAME_CONVENTION,
        sources,
        gripper_calibration,
        skipped,
    )
    (dest / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


@dataclass
class ValidationReport:
    manifest_errors: list[str] = field(default_factory=list)
    episodes: dict[str, list[str]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.manifest_errors and all(not v for v in self.episodes.values())

    @property
    def error_count(self) -> int:
        return len(self.manifest_errors) + sum(len(v) for v in self.episodes.values())

    def summary(self) -> str:
        lines = [f"manifest: {e}" for e in self.manifest_errors]
        for name, errs in sorted(self.episodes.items()):
            lines.append(f"{name}: {'PASS' if not errs else 'FAIL'}")
            lines.extend(f"  {e}" for e in errs)
        return "\n".join(lines)


def read_trajectory_csv(path) -> list[tuple[int, Pose, float | None, float]]:
    """Rows as ``(t_ns, pose, gripper_or_None, raw_quaternion_norm)``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 9:
                raise ValueError(f"line {lineno}: expected 9 fields")
            vals = [float(p) for p in parts[1:8]]
            grip = float(parts[8]) if parts[8] else None
            # quaternion is kept raw here so validation can see its norm
            q = vals[3:]
            n = math.sqrt(sum(c * c for c in q))
            if not n > 0:
                raise ValueError(f"line {lineno}: zero quaternion")
            rows.append((int(parts[0]), Pose(Rotation.from_xyzw(q), vals[:3]), grip, n))
    return rows


def _check_episode(path: Path) -> list[str]:
    errs: list[str] = []
    csv_path = path / "trajectory.csv"
    if not csv_path.is_file():
        return ["missing trajectory.csv"]
    if not (path / "meta.json").is_file():
        errs.append("missing meta.json")
    try:
        rows = read_trajectory_csv(csv_path)
    except (OSError, ValueError) as exc:
        return errs + [f"unreadable trajectory.csv: {exc}"]
    if len(rows) < 2:
        errs.append(f"only {len(rows)} rows")
    for k, (t, pose, grip, qnorm) in enumerate(rows):
        if abs(qnorm - 1.0) > QUAT_NORM_TOL:
            errs.append(f"row {k}: quaternion norm {qnorm:.9g} is not 1")
        if grip is not None and not 0.0 <= grip <= 1.0:
            errs.append(f"row {k}: gripper state {grip} outside [0, 1]")
        if k and t <= rows[k - 1][0]:
            errs.append(f"row {k}: timestamp {t} not strictly increasing")
    if rows and not rows[0][1].isclose(Pose(), IDENTITY_TOL):
        errs.append("first pose is not identity")
    return errs


def validate_dataset(directory) -> ValidationReport:
    root = Path(directory)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        count = int(manifest["episode_count"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read manifest in {root}: {exc}") from None
    report = ValidationReport()
    if manifest.get("format_version") != FORMAT_VERSION:
        report.manifest_errors.append(f"unsupported format version {manifest.get('format_version')!r}")
    dirs = sorted(p.name for p in root.glob("episode_*") if p.is_dir())
    expected = [f"episode_{k:04d}" for k in range(count)]
    if dirs != expected:
        report.manifest_errors.append(
            f"manifest mismatch: manifest lists {count} episodes, found {len(dirs)} directories"
        )
    for name in dirs:
        report.episodes[name] = _check_episode(root / name)
    return report
