"""Deterministic synthetic demonstration logs with known ground truth.

Scenario files are ``key = value`` lines plus ``segment`` lines::

    seed = 7
    duration_s = 60
    sigma_t = 0.005
    segment translate x 0.05 5      # move 5 cm along world x over 5 s
    segment rotate z 15 5           # rotate 15 deg about body z over 5 s

With a kinematic chain the script is given in joint space instead::

    chain = arm.urdf
    chain_base = base_link
    chain_tip = tool0
    handeye = 0 0 0.05 0 0 0 1
    joints_start = 0 0 0 0 0 0
    segment joints 5 0.1 0.2 0 0 0 0   # move to these joint values over 5 s

Random numbers come from the PCG64 bit generator seeded with the scenario
seed.  Each raw 64-bit output is turned into a uniform on (0, 1) from its
top 53 bits, and normals are drawn with the Box-Muller transform, so a
seed gives the same bytes on any platform and numpy release.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .demolog import (
    ButtonEvent,
    ButtonKind,
    CameraIntrinsics,
    FrameMeta,
    JointStateSample,
    LogFile,
    PoseSample,
    Record,
    TagDetectionRecord,
    encode_log,
    export_tum,
)
from .episodes import canonical_order
from .errors import ConfigurationError, FormatError
from .geom import Pose, Rotation
from .gripper import (
    GripperCalibration,
    GripperConfig,
    TagGeometry,
    format_gripper_config,
    project_points,
    tag_corner_points,
)
from .kinchain import KinematicChain, camera_reference_trajectory, load_chain

PRNG_DESCRIPTION = {
    "bit_generator": "PCG64",
    "seeding": "numpy.random.PCG64(seed)",
    "uniform": "((raw >> 11) + 0.5) * 2**-53",
    "normal": "Box-Muller, cos branch then sin branch",
}

AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
LEFT_TAG_ID = 0
RIGHT_TAG_ID = 1


class Segment(NamedTuple):
    kind: str  # translate | rotate | joints
    axis: str
    amount: float | tuple[float, ...]  # metres, degrees, or joint targets
    duration_s: float


def default_script(duration_s: float) -> list[Segment]:
    """+-5 cm along each axis, then +-15 deg about each axis, equal durations."""
    segs = []
    for a in "xyz":
        segs += [Segment("translate", a, 0.05, 0.0), Segment("translate", a, -0.05, 0.0)]
    for a in "xyz":
        segs += [Segment("rotate", a, 15.0, 0.0), Segment("rotate", a, -15.0, 0.0)]
    d = duration_s / len(segs)
    return [s._replace(duration_s=d) for s in segs]


@dataclass
class Scenario:
    seed: int = 0
    duration_s: float = 60.0
    rate_hz: float = 30.0
    sigma_t: float = 0.0
    sigma_r: float = 0.0
    pixel_noise: float = 0.0
    tag_side_m: float = 0.015
    tag_depth_m: float = 0.25
    width_min_m: float = 0.02
    width_max_m: float = 0.08
    width_period_s: float = 4.0
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(800.0, 800.0, 640.0, 360.0, 1280, 720)
    )
    buttons: list[tuple[float, ButtonKind]] | None = None
    segments: list[Segment] = field(default_factory=list)
    chain: KinematicChain | None = None
    handeye: Pose = field(default_factory=Pose)
    joints_start: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.rate_hz > 0 or not self.duration_s > 0:
            raise ConfigurationError("rate_hz and duration_s must be positive")
        for name in ("sigma_t", "sigma_r", "pixel_noise"):
            if not getattr(self, name) >= 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not 0 < self.width_min_m <= self.width_max_m:
            raise ConfigurationError("need 0 < width_min_m <= width_max_m")
        if not self.tag_side_m > 0 or not self.tag_depth_m > 0 or not self.width_period_s > 0:
            raise ConfigurationError("tag_side_m, tag_depth_m and width_period_s must be positive")
        if self.chain is not None:
            if len(self.joints_start) != self.chain.dof:
                raise ConfigurationError(
                    f"joints_start has {len(self.joints_start)} values, chain has {self.chain.dof} joints"
                )
            if any(s.kind != "joints" or len(s.amount) != self.chain.dof for s in self.segments):
                raise ConfigurationError(f"chain scenarios need 'segment joints' lines with {self.chain.dof} values")
        elif any(s.kind == "joints" for s in self.segments):
            raise ConfigurationError("joint segments need a chain")

    @property
    def frame_count(self) -> int:
        return int(Fraction(self.duration_s) * Fraction(self.rate_hz))

    def frame_times(self) -> list[int]:
        period = Fraction(1_000_000_000) / Fraction(self.rate_hz)
        return [round(k * period) for k in range(self.frame_count)]

    def script(self) -> list[Segment]:
        if self.segments:
            return list(self.segments)
        return [] if self.chain is not None else default_script(self.duration_s)

    def button_schedule(self) -> list[tuple[int, ButtonKind]]:
        if self.buttons is not None:
            sched = self.buttons
        else:
            # one session holding one episode that covers nearly the whole run
            end = self.duration_s
            sched = [(0.01, ButtonKind.LONG), (0.02, ButtonKind.SHORT),
                     (end - 0.2, ButtonKind.SHORT), (end - 0.1, ButtonKind.LONG)]
        return [(round(Fraction(t) * 1_000_000_000), k) for t, k in sched]

    def gripper_config(self) -> GripperConfig:
        return GripperConfig(
            TagGeometry(self.tag_side_m, LEFT_TAG_ID, RIGHT_TAG_ID),
            GripperCalibration(self.width_min_m, self.width_max_m),
        )

    def width_at(self, t_ns: int) -> float:
        phase = 2.0 * math.pi * (t_ns / 1e9) / self.width_period_s
        return self.width_min_m + (self.width_max_m - self.width_min_m) * 0.5 * (1.0 - math.cos(phase))


_FLOAT_KEYS = {
    "duration_s", "rate_hz", "sigma_t", "sigma_r", "pixel_noise", "tag_side_m", "tag_depth_m",
    "width_min_m", "width_max_m", "width_period_s",
}


def _floats(text: str, lineno: int) -> list[float]:
    try:
        return [float(v) for v in text.split()]
    except ValueError:
        raise FormatError(f"scenario line {lineno}: expected numbers, got {text!r}") from None


def parse_scenario(text: str, base_dir=None) -> Scenario:
    """Parse a scenario file; relative chain paths resolve against ``base_dir``."""
    kw: dict = {}
    segments: list[Segment] = []
    chain_path = base = tip = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("segment"):
            parts = line.split()
            try:
                if parts[1] in ("translate", "rotate") and len(parts) == 5 and parts[2] in AXES:
                    segments.append(Segment(parts[1], parts[2], float(parts[3]), float(parts[4])))
                elif parts[1] == "joints" and len(parts) >= 4:
                    vals = _floats(" ".join(parts[3:]), lineno)
                    segments.append(Segment("joints", "", tuple(vals), float(parts[2])))
                else:
                    raise ValueError
            except (ValueError, IndexError):
                raise FormatError(f"scenario line {lineno}: bad segment {line!r}") from None
            if not segments[-1].duration_s > 0:
                raise FormatError(f"scenario line {lineno}: segment duration must be positive")
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep:
            raise FormatError(f"scenario line {lineno}: expected key = value")
        if key == "seed":
            try:
                kw["seed"] = int(value)
            except ValueError:
                raise FormatError(f"scenario line {lineno}: seed must be an integer") from None
        elif key in _FLOAT_KEYS:
            v = _floats(value, lineno)
            if len(v) != 1:
                raise FormatError(f"scenario line {lineno}: {key} needs one number")
            kw[key] = v[0]
        elif key == "intrinsics":
            v = _floats(value, lineno)
            if len(v) not in (6, 11):
                raise FormatError(f"scenario line {lineno}: intrinsics need fx fy cx cy width height [k1 k2 p1 p2 k3]")
            kw["intrinsics"] = CameraIntrinsics(v[0], v[1], v[2], v[3], int(v[4]), int(v[5]), tuple(v[6:]) or (0.0,) * 5)
        elif key == "buttons":
            sched = []
            for tok in value.split():
                kind, _, at = tok.partition("@")
                if kind not in ("short", "long"):
                    raise FormatError(f"scenario line {lineno}: bad button {tok!r}")
                sched.append((float(_floats(at, lineno)[0]), ButtonKind[kind.upper()]))
            kw["buttons"] = sched
        elif key == "chain":
            chain_path = value
        elif key == "chain_base":
            base = value
        elif key == "chain_tip":
            tip = value
        elif key == "handeye":
            v = _floats(value, lineno)
            if len(v) != 7:
                raise FormatError(f"scenario line {lineno}: handeye needs tx ty tz qx qy qz qw")
            kw["handeye"] = Pose.from_tum_fields(v)
        elif key == "joints_start":
            kw["joints_start"] = tuple(_floats(value, lineno))
        else:
            raise FormatError(f"scenario line {lineno}: unknown key {key!r}")
    if chain_path is not None:
        if base is None or tip is None:
            raise ConfigurationError("chain needs chain_base and chain_tip")
        path = Path(chain_path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        kw["chain"] = load_chain(path, base, tip).chain
    return Scenario(segments=segments, **kw)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)


class GaussianStream:
    """Standard normals from PCG64 raw output via Box-Muller."""

    def __init__(self, seed: int) -> None:
        self._bits = np.random.PCG64(seed)

    def uniform(self, n: int) -> np.ndarray:
        raw = self._bits.random_raw(n)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        return np.column_stack((r * np.cos(theta), r * np.sin(theta))).ravel()[:n]


def _scripted_pose(script: Sequence[Segment], t_s: float) -> Pose:
    pose = Pose()
    for seg in script:
        s = min(1.0, max(0.0, t_s / seg.duration_s))
        if seg.kind == "translate":
            step = Pose.from_translation([seg.amount * s * c for c in AXES[seg.axis]])
            pose = step @ pose
        else:
            pose = pose @ Pose(Rotation.from_axis_angle(AXES[seg.axis], math.radians(seg.amount) * s))
        t_s -= seg.duration_s
        if t_s <= 0:
            break
    return pose


def _scripted_joints(start: Sequence[float], script: Sequence[Segment], t_s: float) -> tuple[float, ...]:
    q = tuple(float(v) for v in start)
    for seg in script:
        s = min(1.0, max(0.0, t_s / seg.duration_s))
        q = tuple(a + s * (b - a) for a, b in zip(q, seg.amount))
        t_s -= seg.duration_s
        if t_s <= 0:
            break
    return q


class SynthOutput(NamedTuple):
    raw: LogFile
    truth: LogFile
    widths: list[tuple[int, float]]
    gripper: GripperConfig


def generate(scenario: Scenario) -> SynthOutput:
    """Noisy raw log plus ground truth (noiseless poses, buttons, widths)."""
    sc = scenario
    times = sc.frame_times()
    n = len(times)
    script = sc.script()
    if sc.chain is not None:
        joints = [(t, _scripted_joints(sc.joints_start, script, t / 1e9)) for t in times]
        truth_poses = [p.pose for p in camera_reference_trajectory(sc.chain, joints, sc.handeye)]
    else:
        joints = []
        truth_poses = [_scripted_pose(script, t / 1e9) for t in times]

    noise = GaussianStream(sc.seed)
    trans = noise.normal(3 * n).reshape(n, 3)
    axes = noise.normal(3 * n).reshape(n, 3)
    angles = noise.normal(n)
    pixels = noise.normal(16 * n).reshape(n, 2, 4, 2)

    corners = tag_corner_points(sc.tag_side_m)
    buttons = [Record(t, ButtonEvent(k)) for t, k in sc.button_schedule()]
    raw = [Record(0, sc.intrinsics)] + list(buttons)
    truth = list(buttons)
    widths = []
    for k, (t, gt) in enumerate(zip(times, truth_poses)):
        est = gt
        if sc.sigma_r > 0:
            est = est @ Pose(Rotation.from_axis_angle(axes[k], sc.sigma_r * angles[k]))
        if sc.sigma_t > 0:
            est = Pose(est.rotation, np.add(est.translation, sc.sigma_t * trans[k]))
        raw.append(Record(t, PoseSample(est)))
        truth.append(Record(t, PoseSample(gt)))
        w = sc.width_at(t)
        widths.append((t, w))
        for side, tag_id in enumerate((LEFT_TAG_ID, RIGHT_TAG_ID)):
            x = (-0.5 if side == 0 else 0.5) * w
            px = project_points(Pose.from_translation((x, 0.0, sc.tag_depth_m)), corners, sc.intrinsics)
            if sc.pixel_noise > 0:
                px = px + sc.pixel_noise * pixels[k, side]
            raw.append(Record(t, TagDetectionRecord(tag_id, tuple(map(tuple, px)))))
        raw.append(Record(t, FrameMeta(k, f"frames/{k:06d}.png")))
        if joints:
            raw.append(Record(t, JointStateSample(joints[k][1])))
    return SynthOutput(
        LogFile(canonical_order(raw)), LogFile(canonical_order(truth)), widths, sc.gripper_config()
    )


def write_outputs(out: SynthOutput, directory, scenario: Scenario | None = None) -> list[Path]:
    """Write raw.log, truth.log, truth.tum, widths.csv, gripper.cfg, manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "raw.log": encode_log(out.raw),
        "truth.log": encode_log(out.truth),
        "truth.tum": export_tum(out.truth.poses(), header="ground truth camera poses").encode(),
        "widths.csv": ("t_ns,width_m\n" + "".join(f"{t},{w:.17g}\n" for t, w in out.widths)).encode(),
        "gripper.cfg": format_gripper_config(out.gripper).encode(),
    }
    manifest = {"generator": "demotraj.synthgen", "prng": PRNG_DESCRIPTION, "files": sorted(files)}
    if scenario is not None:
        manifest["seed"] = scenario.seed
        manifest["frames"] = scenario.frame_count
    files["manifest.json"] = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    paths = []
    for name, data in files.items():
        (d / name).write_bytes(data)
        paths.append(d / name)
    return paths
