"""Independent reference implementations used only by the tests.

Everything here works on 4x4 homogeneous matrices and converts quaternions
through scipy, so it shares no code path with ``demotraj.geom``.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation as SciRot

from demotraj.geom import Pose, Rotation


def to_mat(p: Pose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = SciRot.from_quat(p.rotation.xyzw).as_matrix()
    m[:3, 3] = p.translation
    return m


def from_mat(m: np.ndarray) -> Pose:
    q = SciRot.from_matrix(m[:3, :3]).as_quat()
    return Pose(Rotation.from_xyzw(q), m[:3, 3])


def rot_angle(m3: np.ndarray) -> float:
    c = (np.trace(m3) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def mat_close(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute element difference."""
    return float(np.max(np.abs(a - b)))


def random_pose(rng: np.random.Generator, scale: float = 1.0, max_angle: float | None = None) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle if max_angle is not None else np.pi)
    q = np.concatenate([axis * np.sin(angle / 2), [np.cos(angle / 2)]])
    if rng.random() < 0.5:
        q = -q
    return Pose(Rotation.from_xyzw(q), rng.normal(scale=scale, size=3))


def rz(deg: float) -> Rotation:
    return Rotation.from_axis_angle((0, 0, 1), np.radians(deg))


def ape_matrix(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return np.linalg.inv(est) @ ref


def rpe_matrix(est_i, est_j, ref_i, ref_j) -> np.ndarray:
    return np.linalg.inv(np.linalg.inv(ref_i) @ ref_j) @ (np.linalg.inv(est_i) @ est_j)


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rzm = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rzm @ ry @ rx


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def project(points_cam: np.ndarray, fx, fy, cx, cy) -> np.ndarray:
    """Pinhole projection of Nx3 camera-frame points to pixels."""
    p = np.asarray(points_cam, float)
    return np.column_stack([fx * p[:, 0] / p[:, 2] + cx, fy * p[:, 1] / p[:, 2] + cy])
