"""Hand-eye calibration (AX = XB) and point-set trajectory alignment."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geom
from .demolog import StampedPose
from .errors import (
    DegenerateMotionError,
    FormatError,
    InsufficientDataError,
    RankDeficiencyError,
)
from .geom import Pose, Rotation

OUTLIER_ANGLE_GAP = 0.1
PARALLEL_AXIS_TOL = 1e-3
# Rotations smaller than this carry no usable axis direction.
MIN_ROTATION = 1e-6


@dataclass(frozen=True)
class MotionPair:
    """``a``: relative end-effector motion, ``b``: relative camera motion, same two stations."""

    a: Pose
    b: Pose

    @property
    def angle_gap(self) -> float:
        return abs(geom.rotation_angle(self.a.rotation) - geom.rotation_angle(self.b.rotation))


@dataclass
class HandEyeResult:
    x: Pose
    rotation_residuals: list[float]
    translation_residuals: list[float]
    used: list[int]
    outliers: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _axis_line_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two lines through the origin (direction sign ignored)."""
    c = abs(float(np.dot(u, v)))
    s = float(np.linalg.norm(np.cross(u, v)))
    return math.atan2(s, c)


def _procrustes(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Rotation ``R`` minimising ``sum |dst_i - R src_i|^2`` (proper, det +1)."""
    m = dst.T @ src
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def solve_hand_eye(pairs: Sequence[MotionPair]) -> HandEyeResult:
    """Closed-form two-stage AX = XB solve.

    Rotation: the log vectors satisfy ``log(R_A) = R_X log(R_B)``; ``R_X`` is
    their orthogonal least-squares fit.  Translation: stack
    ``(R_A - I) t_X = R_X t_B - t_A`` over all pairs and solve by linear
    least squares.
    """
    warnings: list[str] = []
    used: list[int] = []
    outliers: list[int] = []
    for k, p in enumerate(pairs):
        if p.angle_gap >= OUTLIER_ANGLE_GAP:
            outliers.append(k)
            warnings.append(
                f"pair {k} excluded: rotation angles differ by {p.angle_gap:.4f} rad"
            )
        elif geom.rotation_angle(p.a.rotation) < MIN_ROTATION:
            warnings.append(f"pair {k} has no rotation and cannot constrain the solution")
        else:
            used.append(k)
    if len(used) < 2:
        raise InsufficientDataError(
            f"hand-eye calibration needs at least 2 usable motion pairs, got {len(used)}"
        )

    alpha = np.array([pairs[k].a.rotation.rotvec() for k in used])
    beta = np.array([pairs[k].b.rotation.rotvec() for k in used])
    axes = alpha / np.linalg.norm(alpha, axis=1, keepdims=True)
    widest = max(_axis_line_angle(u, v) for u, v in itertools.combinations(axes, 2))
    if widest <= PARALLEL_AXIS_TOL:
        raise DegenerateMotionError(
            "degenerate motion: all rotation axes are parallel "
            f"(largest angle between axes {widest:.2e} rad <= {PARALLEL_AXIS_TOL} rad)"
        )

    r_x = _procrustes(beta, alpha)

    c_rows = []
    d_rows = []
    for k in used:
        a, b = pairs[k].a, pairs[k].b
        c_rows.append(a.rotation.matrix() - np.eye(3))
        d_rows.append(r_x @ np.asarray(b.translation) - np.asarray(a.translation))
    t_x, *_ = np.linalg.lstsq(np.vstack(c_rows), np.concatenate(d_rows), rcond=None)

    x = Pose(Rotation.from_matrix(r_x), t_x)
    rot_res, trans_res = [], []
    for p in pairs:
        ax = p.a @ x
        xb = x @ p.b
        rot_res.append(geom.rotation_angle(geom.relative(ax, xb).rotation))
        trans_res.append(math.dist(ax.translation, xb.translation))
    return HandEyeResult(x, rot_res, trans_res, used, outliers, warnings)


def parse_pairs_csv(text: str) -> list[MotionPair]:
    """14 comma- or space-separated floats per line: A then B, each ``tx ty tz qx qy qz qw``."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        if len(fields) != 14:
            raise FormatError(f"pairs line {lineno}: expected 14 values, got {len(fields)}")
        try:
            v = [float(f) for f in fields]
            if not all(math.isfinite(f) for f in v):
                raise ValueError("non-finite value")
            pairs.append(MotionPair(Pose.from_tum_fields(v[:7]), Pose.from_tum_fields(v[7:])))
        except ValueError as exc:
            raise FormatError(f"pairs line {lineno}: {exc}") from None
    return pairs


def format_pairs_csv(pairs: Sequence[MotionPair]) -> str:
    lines = ["# A: tx,ty,tz,qx,qy,qz,qw  B: tx,ty,tz,qx,qy,qz,qw"]
    for p in pairs:
        lines.append(",".join(f"{v:.17g}" for v in p.a.tum_fields() + p.b.tum_fields()))
    return "\n".join(lines) + "\n"


# -- trajectory alignment --------------------------------------------------------


class AlignMode(str, enum.Enum):
    NONE = "none"
    RIGID = "rigid"
    SIMILARITY = "similarity"


@dataclass(frozen=True)
class AlignmentResult:
    rotation: Rotation = Rotation()
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    residual_rmse: float = 0.0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError(f"alignment scale must be positive, got {self.scale}")
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))

    def apply_point(self, p) -> tuple[float, float, float]:
        r = self.rotation.apply([self.scale * v for v in p])
        return tuple(r[k] + self.translation[k] for k in range(3))


def _residual_rmse(est: np.ndarray, ref: np.ndarray, r: np.ndarray, t: np.ndarray, s: float) -> float:
    d = ref - (s * est @ r.T + t)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def umeyama_align(est, ref, mode: AlignMode | str = AlignMode.RIGID) -> AlignmentResult:
    """Least-squares ``(s, R, t)`` mapping ``est`` points onto ``ref`` points."""
    mode = AlignMode(mode)
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    ref = np.asarray(ref, dtype=float).reshape(-1, 3)
    if est.shape != ref.shape:
        raise InsufficientDataError(f"point counts differ: {len(est)} vs {len(ref)}")
    n = len(est)
    if n < 3:
        raise InsufficientDataError(f"alignment needs at least 3 points, got {n}")
    if mode is AlignMode.NONE:
        return AlignmentResult(residual_rmse=_residual_rmse(est, ref, np.eye(3), np.zeros(3), 1.0))

    mu_e, mu_r = est.mean(axis=0), ref.mean(axis=0)
    de, dr = est - mu_e, ref - mu_r
    sigma = dr.T @ de / n
    u, d, vt = np.linalg.svd(sigma)
    if d[0] == 0.0 or d[1] <= 1e-12 * d[0]:
        raise RankDeficiencyError("point sets are degenerate (collinear or coincident)")
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    r = u @ sign @ vt
    if mode is AlignMode.SIMILARITY:
        var_e = np.mean(np.sum(de * de, axis=1))
        s = float(np.trace(np.diag(d) @ sign) / var_e)
    else:
        s = 1.0
    t = mu_r - s * r @ mu_e
    return AlignmentResult(Rotation.from_matrix(r), t, s, _residual_rmse(est, ref, r, t, s))


def apply_alignment(traj: Sequence[StampedPose], a: AlignmentResult) -> list[StampedPose]:
    """Map each pose ``(R_p, t_p)`` to ``(R_a R_p, R_a (s t_p) + t_a)``."""
    return [
        StampedPose(t, Pose(a.rotation * p.rotation, a.apply_point(p.translation)))
        for t, p in traj
    ]
