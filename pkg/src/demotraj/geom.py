"""Rigid-transform algebra on unit quaternions.

Quaternions are stored in (qx, qy, qz, qw) order, the same order used by
TUM trajectory files, and use the Hamilton product.  A :class:`Pose`
``T`` maps a point ``p`` expressed in its child frame into its parent
frame as ``R @ p + t``.

All values are immutable and all functions are pure.  Arithmetic is done
on plain Python floats: for 3- and 4-vectors this is faster than numpy,
and it keeps equality and hashing trivial.  Use :meth:`Pose.matrix` and
:meth:`Pose.from_matrix` to move into numpy for batched work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, SingularityError

Vec3 = tuple[float, float, float]

# Drift allowed before a quaternion is rescaled.  Renormalising an already
# normalised quaternion can flip its last bit, so small drift is left alone
# to keep construction idempotent (needed for bit-exact round trips).
_RENORM_TOL = 1e-14
_SMALL_ANGLE = 1e-8
LOG_ANGLE_LIMIT = math.pi - 1e-6


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion.  ``q`` and ``-q`` compare equal."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    w: float = 1.0

    def __post_init__(self) -> None:
        x, y, z, w = float(self.x), float(self.y), float(self.z), float(self.w)
        n = math.sqrt(x * x + y * y + z * z + w * w)
        if not math.isfinite(n) or n == 0.0:
            raise ValueError(f"quaternion ({x}, {y}, {z}, {w}) cannot be normalised")
        if abs(n - 1.0) > _RENORM_TOL:
            x, y, z, w = x / n, y / n, z / n, w / n
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)

    @classmethod
    def identity(cls) -> Rotation:
        return _IDENTITY_ROT

    @classmethod
    def from_xyzw(cls, q: Sequence[float]) -> Rotation:
        if len(q) != 4:
            raise ValueError(f"expected 4 quaternion components, got {len(q)}")
        return cls(q[0], q[1], q[2], q[3])

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> Rotation:
        ax, ay, az = (float(a) for a in axis)
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if n == 0.0:
            raise ValueError("rotation axis has zero length")
        s = math.sin(0.5 * angle) / n
        return cls(ax * s, ay * s, az * s, math.cos(0.5 * angle))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> Rotation:
        rx, ry, rz = (float(r) for r in rotvec)
        theta = math.sqrt(rx * rx + ry * ry + rz * rz)
        if theta < _SMALL_ANGLE:
            k = 0.5 - theta * theta / 48.0
        else:
            k = math.sin(0.5 * theta) / theta
        return cls(rx * k, ry * k, rz * k, math.cos(0.5 * theta))

    @classmethod
    def from_rpy(cls, roll: float, pitch: float, yaw: float) -> Rotation:
        """Fixed-axis XYZ angles: roll about x, then pitch about y, then yaw about z."""
        return (
            cls.from_axis_angle((0, 0, 1), yaw)
            * cls.from_axis_angle((0, 1, 0), pitch)
            * cls.from_axis_angle((1, 0, 0), roll)
        )

    @classmethod
    def from_matrix(cls, m) -> Rotation:
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        trace = m[0, 0] + m[1, 1] + m[2, 2]
        if trace > 0.0:
            s = 2.0 * math.sqrt(trace + 1.0)
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return cls(float(x), float(y), float(z), float(w))

    @property
    def xyzw(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.w)

    def __mul__(self, other: Rotation) -> Rotation:
        if not isinstance(other, Rotation):
            return NotImplemented
        ax, ay, az, aw = self.x, self.y, self.z, self.w
        bx, by, bz, bw = other.x, other.y, other.z, other.w
        return Rotation(
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        )

    def inverse(self) -> Rotation:
        return Rotation(-self.x, -self.y, -self.z, self.w)

    def apply(self, v: Sequence[float]) -> Vec3:
        """Rotate a 3-vector."""
        vx, vy, vz = v
        x, y, z, w = self.x, self.y, self.z, self.w
        # v + 2w (u x v) + 2 u x (u x v), with u the vector part
        cx = y * vz - z * vy
        cy = z * vx - x * vz
        cz = x * vy - y * vx
        ccx = y * cz - z * cy
        ccy = z * cx - x * cz
        ccz = x * cy - y * cx
        return (
            vx + 2.0 * (w * cx + ccx),
            vy + 2.0 * (w * cy + ccy),
            vz + 2.0 * (w * cz + ccz),
        )

    def matrix(self) -> np.ndarray:
        x, y, z, w = self.x, self.y, self.z, self.w
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )

    def angle(self) -> float:
        return rotation_angle(self)

    def rotvec(self) -> Vec3:
        x, y, z, w = self.x, self.y, self.z, self.w
        if w < 0.0:
            x, y, z, w = -x, -y, -z, -w
        s = math.sqrt(x * x + y * y + z * z)
        if s < _SMALL_ANGLE:
            k = 2.0 / w
        else:
            k = 2.0 * math.atan2(s, w) / s
        return (x * k, y * k, z * k)

    def isclose(self, other: Rotation, tol: float = 1e-9) -> bool:
        return rotation_angle(self.inverse() * other) <= tol

    def _canonical(self) -> tuple[float, float, float, float]:
        q = self.xyzw
        for c in (self.w, self.x, self.y, self.z):
            if c != 0.0:
                return q if c > 0.0 else tuple(-a for a in q)
        return q

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Rotation):
            return NotImplemented
        return self._canonical() == other._canonical()

    def __hash__(self) -> int:
        return hash(self._canonical())


_IDENTITY_ROT = Rotation(0.0, 0.0, 0.0, 1.0)


def _vec3(v: Iterable[float]) -> Vec3:
    t = tuple(float(a) for a in v)
    if len(t) != 3:
        raise ValueError(f"expected a 3-vector, got {len(t)} components")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class Pose:
    rotation: Rotation = _IDENTITY_ROT
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", _vec3(self.translation))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> Pose:
        return cls(_IDENTITY_ROT, t)

    @classmethod
    def from_tum_fields(cls, fields: Sequence[float]) -> Pose:
        """Build from ``tx ty tz qx qy qz qw``."""
        if len(fields) != 7:
            raise ValueError(f"expected 7 pose fields, got {len(fields)}")
        return cls(Rotation.from_xyzw(fields[3:7]), fields[0:3])

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        return cls(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    def tum_fields(self) -> tuple[float, ...]:
        return self.translation + self.rotation.xyzw

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation
        return m

    def transform_point(self, p: Sequence[float]) -> Vec3:
        r = self.rotation.apply(p)
        t = self.translation
        return (r[0] + t[0], r[1] + t[1], r[2] + t[2])

    def __matmul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return compose(self, other)

    def inverse(self) -> Pose:
        return inverse(self)

    def isclose(self, other: Pose, tol: float = 1e-9) -> bool:
        d = relative(self, other)
        return rotation_angle(d.rotation) <= tol and _norm(
            _sub(self.translation, other.translation)
        ) <= tol


@dataclass(frozen=True)
class Twist:
    """Element of se(3): ``rotation`` is a rotation vector (rad), ``translation`` in meters."""

    rotation: Vec3 = (0.0, 0.0, 0.0)
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", _vec3(self.rotation))
        object.__setattr__(self, "translation", _vec3(self.translation))

    def vector(self) -> np.ndarray:
        return np.array(self.rotation + self.translation)


def _sub(a: Sequence[float], b: Sequence[float]) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _norm(a: Sequence[float]) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose(a.rotation * b.rotation, a.transform_point(b.translation))


def inverse(p: Pose) -> Pose:
    r_inv = p.rotation.inverse()
    t = r_inv.apply(p.translation)
    return Pose(r_inv, (-t[0], -t[1], -t[2]))


def relative(a: Pose, b: Pose) -> Pose:
    """``a⁻¹ ∘ b``: the pose of ``b`` seen from ``a``."""
    r_inv = a.rotation.inverse()
    return Pose(r_inv * b.rotation, r_inv.apply(_sub(b.translation, a.translation)))


def rotation_angle(r: Rotation) -> float:
    """Axis-angle magnitude in ``[0, π]``."""
    s = math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z)
    return 2.0 * math.atan2(s, abs(r.w))


def slerp(a: Rotation, b: Rotation, s: float) -> Rotation:
    ax, ay, az, aw = a.xyzw
    bx, by, bz, bw = b.xyzw
    dot = ax * bx + ay * by + az * bz + aw * bw
    if dot < 0.0:
        bx, by, bz, bw, dot = -bx, -by, -bz, -bw, -dot
    if dot > 1.0 - 1e-12:
        wa, wb = 1.0 - s, s
    else:
        omega = math.acos(min(dot, 1.0))
        sin_omega = math.sin(omega)
        wa = math.sin((1.0 - s) * omega) / sin_omega
        wb = math.sin(s * omega) / sin_omega
    return Rotation(
        wa * ax + wb * bx, wa * ay + wb * by, wa * az + wb * bz, wa * aw + wb * bw
    )


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Shortest-arc slerp on rotation, linear on translation."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"interpolation fraction {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    ta, tb = a.translation, b.translation
    t = tuple(ta[k] + s * (tb[k] - ta[k]) for k in range(3))
    return Pose(slerp(a.rotation, b.rotation, s), t)


def _skew(v: Sequence[float]) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def log(p: Pose) -> Twist:
    theta = rotation_angle(p.rotation)
    if theta >= LOG_ANGLE_LIMIT:
        raise SingularityError(
            f"rotation angle {theta:.9f} rad is too close to pi for a unique logarithm"
        )
    phi = p.rotation.rotvec()
    k = _skew(phi)
    if theta < 1e-6:
        c = 1.0 / 12.0
    else:
        c = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / (
            theta * theta
        )
    v_inv = np.eye(3) - 0.5 * k + c * (k @ k)
    return Twist(phi, v_inv @ np.asarray(p.translation))


def exp(t: Twist) -> Pose:
    phi = t.rotation
    theta = _norm(phi)
    k = _skew(phi)
    if theta < 1e-6:
        a, b = 0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0
    else:
        a = (1.0 - math.cos(theta)) / (theta * theta)
        b = (theta - math.sin(theta)) / (theta**3)
    v = np.eye(3) + a * k + b * (k @ k)
    return Pose(Rotation.from_rotvec(phi), v @ np.asarray(t.translation))
