"""Gripper opening from the two fiducial tags on the finger slider.

Each tag's pose is recovered from its four corner pixels with a planar
homography.  The opening is the distance between the two tag centres and
is mapped linearly onto a normalised [0, 1] actuator state.

Tag frame convention: origin at the tag centre, x to the right, y down,
z pointing away from the viewer, so a tag facing the camera squarely has
identity rotation.  Corners are ordered TL, TR, BR, BL.
"""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .demolog import CameraIntrinsics, TagDetectionRecord
from .errors import BehindCameraError, ConfigurationError, RankDeficiencyError
from .geom import Pose, Rotation

UNDISTORT_ITERATIONS = 10
UNDISTORT_TOL = 1e-10
SMOOTH_WINDOW = 5
REFINE_ITERATIONS = 20
REFINE_TOL = 1e-12


@dataclass(frozen=True)
class TagGeometry:
    side_m: float
    left_id: int
    right_id: int

    def __post_init__(self) -> None:
        if not self.side_m > 0:
            raise ConfigurationError(f"tag side must be positive, got {self.side_m}")
        if self.left_id == self.right_id:
            raise ConfigurationError("left and right tag ids must differ")


@dataclass(frozen=True)
class GripperCalibration:
    w_min: float
    w_max: float

    def __post_init__(self) -> None:
        if not 0 <= self.w_min < self.w_max:
            raise ConfigurationError(
                f"need 0 <= w_min < w_max, got w_min={self.w_min}, w_max={self.w_max}"
            )

    def state(self, width: float) -> float:
        s = (width - self.w_min) / (self.w_max - self.w_min)
        return min(1.0, max(0.0, s))


class GripperStateSample(NamedTuple):
    timestamp_ns: int
    width: float
    state: float


class GripperStream(NamedTuple):
    samples: list[GripperStateSample]
    skipped_frames: int
    warnings: list[str]


@dataclass(frozen=True)
class GripperConfig:
    geometry: TagGeometry
    calibration: GripperCalibration


def canonical_corners(side: float) -> np.ndarray:
    h = 0.5 * side
    return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


# -- camera model --------------------------------------------------------------


def distort_normalized(xy: np.ndarray, dist: Sequence[float]) -> np.ndarray:
    """Apply the (k1, k2, p1, p2, k3) radial-tangential model to normalised points."""
    k1, k2, p1, p2, k3 = dist
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.column_stack([xd, yd])


def undistort_normalized(xy_d: np.ndarray, dist: Sequence[float]) -> np.ndarray:
    """Invert :func:`distort_normalized` by fixed-point iteration."""
    k1, k2, p1, p2, k3 = dist
    xy = xy_d.copy()
    for _ in range(UNDISTORT_ITERATIONS):
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
        dy = p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
        new = np.column_stack([(xy_d[:, 0] - dx) / radial, (xy_d[:, 1] - dy) / radial])
        step = np.max(np.abs(new - xy))
        xy = new
        if step < UNDISTORT_TOL:
            break
    return xy


def pixels_to_normalized(pixels, intr: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    xy = np.column_stack([(px[:, 0] - intr.cx) / intr.fx, (px[:, 1] - intr.cy) / intr.fy])
    if intr.has_distortion:
        xy = undistort_normalized(xy, intr.distortion)
    return xy


def project_points(pose: Pose, points, intr: CameraIntrinsics) -> np.ndarray:
    """Project tag-frame 3D points through ``pose`` (tag in camera) to pixels."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = pts @ pose.rotation.matrix().T + np.asarray(pose.translation)
    xy = cam[:, :2] / cam[:, 2:3]
    if intr.has_distortion:
        xy = distort_normalized(xy, intr.distortion)
    return np.column_stack([intr.fx * xy[:, 0] + intr.cx, intr.fy * xy[:, 1] + intr.cy])


def tag_corner_points(side: float) -> np.ndarray:
    c = canonical_corners(side)
    return np.column_stack([c, np.zeros(4)])


# -- homography pose -----------------------------------------------------------


def _normalizer(pts: np.ndarray) -> np.ndarray:
    mean = pts.mean(axis=0)
    d = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1]])


def _check_general_position(pts: np.ndarray) -> None:
    scale = max(np.linalg.norm(a - b) for a, b in itertools.combinations(pts, 2))
    if scale == 0:
        raise RankDeficiencyError("tag corners coincide")
    for a, b, c in itertools.combinations(pts, 3):
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area < 1e-9 * scale * scale:
            raise RankDeficiencyError("three or more tag corners are collinear")


def homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT homography mapping ``src`` (Nx2) onto ``dst`` (Nx2), Hartley-normalised."""
    ts, td = _normalizer(src), _normalizer(dst)
    s = (np.column_stack([src, np.ones(len(src))]) @ ts.T)[:, :2]
    d = (np.column_stack([dst, np.ones(len(dst))]) @ td.T)[:, :2]
    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.asarray(rows)
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-12 * sv[0]:
        raise RankDeficiencyError("homography system is rank deficient")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _reprojection(r: np.ndarray, t: np.ndarray, pts: np.ndarray, xy: np.ndarray, scale: np.ndarray):
    cam = pts @ r.T + t
    return ((cam[:, :2] / cam[:, 2:3] - xy) * scale).ravel(), cam


def refine_pose(
    r: np.ndarray, t: np.ndarray, pts: np.ndarray, xy: np.ndarray, scale=(1.0, 1.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton on pixel reprojection error, rotation perturbed on the right."""
    scale = np.asarray(scale, dtype=float)
    res, cam = _reprojection(r, t, pts, xy, scale)
    cost = float(res @ res)
    for _ in range(REFINE_ITERATIONS):
        jac = np.empty((2 * len(pts), 6))
        for k, (p, c) in enumerate(zip(pts, cam)):
            x, y, z = c
            dproj = np.array([[1 / z, 0, -x / z**2], [0, 1 / z, -y / z**2]]) * scale[:, None]
            skew = np.array([[0, -p[2], p[1]], [p[2], 0, -p[0]], [-p[1], p[0], 0]])
            jac[2 * k : 2 * k + 2, :3] = dproj @ (-r @ skew)
            jac[2 * k : 2 * k + 2, 3:] = dproj
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        r_new = r @ Rotation.from_rotvec(step[:3]).matrix()
        t_new = t + step[3:]
        res_new, cam_new = _reprojection(r_new, t_new, pts, xy, scale)
        cost_new = float(res_new @ res_new)
        if not cost_new <= cost:
            break
        r, t, res, cam, cost = r_new, t_new, res_new, cam_new, cost_new
        if np.max(np.abs(step)) < REFINE_TOL:
            break
    return r, t


def estimate_tag_pose(corners, intr: CameraIntrinsics, side: float, refine: bool = True) -> Pose:
    """Pose of a square tag in the camera frame from its four corner pixels.

    The homography decomposition gives a closed-form estimate; with
    ``refine`` it is then polished by minimising pixel reprojection error,
    which matters for small tags where the algebraic fit is biased in depth.
    """
    px = np.asarray(corners, dtype=float).reshape(4, 2)
    xy = pixels_to_normalized(px, intr)
    _check_general_position(xy)
    h = homography(canonical_corners(side), xy)
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    n1, n2 = np.linalg.norm(h1), np.linalg.norm(h2)
    lam = 1.0 / math.sqrt(n1 * n2)
    if h3[2] < 0:
        lam = -lam
    t = lam * h3
    if not t[2] > 0:
        raise BehindCameraError("tag centre does not lie in front of the camera")
    r1 = math.copysign(1.0, lam) * h1 / n1
    r2 = math.copysign(1.0, lam) * h2 / n2
    r = _nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    if refine:
        r, t = refine_pose(r, t, tag_corner_points(side), xy, (intr.fx, intr.fy))
        if not t[2] > 0:
            raise BehindCameraError("tag centre does not lie in front of the camera")
    depths = tag_corner_points(side) @ r[2] + t[2]
    if np.any(depths <= 0):
        raise BehindCameraError("part of the tag lies behind the camera")
    return Pose(Rotation.from_matrix(r), t)


# -- width and state -------------------------------------------------------------


def gripper_width(left: Pose, right: Pose) -> float:
    a, b = left.translation, right.translation
    return math.dist(a, b)


def group_frames(
    detections: Iterable[tuple[int, TagDetectionRecord]],
) -> list[tuple[int, list[TagDetectionRecord]]]:
    """Group timestamped detections into per-frame lists, ordered by time."""
    frames: dict[int, list[TagDetectionRecord]] = {}
    for t, det in detections:
        frames.setdefault(t, []).append(det)
    return sorted(frames.items())


def moving_median(values: Sequence[float], window: int = SMOOTH_WINDOW) -> list[float]:
    half = window // 2
    n = len(values)
    return [statistics.median(values[max(0, k - half) : min(n, k + half + 1)]) for k in range(n)]


def gripper_state_stream(
    frames: Iterable[tuple[int, Sequence[TagDetectionRecord]]],
    intr: CameraIntrinsics,
    geometry: TagGeometry,
    calib: GripperCalibration,
    smooth: bool = False,
) -> GripperStream:
    """One gripper sample per frame in which both tags were detected.

    Frames missing a tag, or whose corners give no valid pose, are skipped
    and counted.
    """
    stamps: list[int] = []
    widths: list[float] = []
    skipped = 0
    warnings: list[str] = []
    for t, dets in frames:
        left = [d for d in dets if d.tag_id == geometry.left_id]
        right = [d for d in dets if d.tag_id == geometry.right_id]
        if not left or not right:
            skipped += 1
            continue
        try:
            pl = estimate_tag_pose(left[0].corners, intr, geometry.side_m)
            pr = estimate_tag_pose(right[0].corners, intr, geometry.side_m)
        except (RankDeficiencyError, BehindCameraError) as exc:
            skipped += 1
            warnings.append(f"frame at {t} ns skipped: {exc}")
            continue
        stamps.append(t)
        widths.append(gripper_width(pl, pr))
    if smooth:
        widths = moving_median(widths)
    samples = [GripperStateSample(t, w, calib.state(w)) for t, w in zip(stamps, widths)]
    return GripperStream(samples, skipped, warnings)


_CONFIG_KEYS = ("tag_side_m", "tag_id_left", "tag_id_right", "w_min_m", "w_max_m")


def parse_gripper_config(text: str) -> GripperConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"gripper config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigurationError(f"gripper config line {lineno}: unknown key {key!r}")
        values[key] = value
    missing = [k for k in _CONFIG_KEYS if k not in values]
    if missing:
        raise ConfigurationError(f"gripper config missing keys: {', '.join(missing)}")
    try:
        geometry = TagGeometry(
            float(values["tag_side_m"]), int(values["tag_id_left"]), int(values["tag_id_right"])
        )
        calib = GripperCalibration(float(values["w_min_m"]), float(values["w_max_m"]))
    except ValueError as exc:
        raise ConfigurationError(f"gripper config: {exc}") from None
    return GripperConfig(geometry, calib)


def load_gripper_config(path) -> GripperConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_gripper_config(fh.read())


def format_gripper_config(cfg: GripperConfig) -> str:
    g, c = cfg.geometry, cfg.calibration
    return (
        f"tag_side_m={g.side_m!r}\ntag_id_left={g.left_id}\ntag_id_right={g.right_id}\n"
        f"w_min_m={c.w_min!r}\nw_max_m={c.w_max!r}\n"
    )
