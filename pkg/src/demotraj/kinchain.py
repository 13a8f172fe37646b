"""Serial kinematic chains from a URDF subset, and forward kinematics.

Only what forward kinematics needs is read: ``link`` names and ``joint``
elements with their ``type``, ``origin`` (xyz + rpy), ``axis``, ``parent``
and ``child``.  Everything else is skipped with a warning.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .demolog import JointStateSample, StampedPose
from .errors import (
    ConfigurationError,
    FormatError,
    TopologyError,
    UnsupportedJointError,
    UnsupportedTopologyError,
)
from .geom import Pose, Rotation, compose

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FIXED = "fixed"
_KINDS = {"revolute": REVOLUTE, "continuous": REVOLUTE, "prismatic": PRISMATIC, "fixed": FIXED}

_JOINT_CHILDREN = {"origin", "axis", "parent", "child"}


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str
    origin: Pose
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    parent: str = ""
    child: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (REVOLUTE, PRISMATIC, FIXED):
            raise UnsupportedJointError(f"joint {self.name!r}: unsupported type {self.kind!r}")
        ax = tuple(float(a) for a in self.axis)
        n = math.sqrt(sum(a * a for a in ax))
        if self.kind != FIXED:
            if not (math.isfinite(n) and n > 0):
                raise FormatError(f"joint {self.name!r}: axis must be a non-zero vector")
            ax = tuple(a / n for a in ax)
        object.__setattr__(self, "axis", ax)

    @property
    def actuated(self) -> bool:
        return self.kind != FIXED

    def motion(self, q: float) -> Pose:
        if self.kind == REVOLUTE:
            return Pose(Rotation.from_axis_angle(self.axis, q))
        if self.kind == PRISMATIC:
            return Pose.from_translation(tuple(a * q for a in self.axis))
        return Pose()


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple[Joint, ...]
    base: str = ""
    tip: str = ""

    def __post_init__(self) -> None:
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise FormatError("joint names must be unique")

    @property
    def actuated_joints(self) -> list[Joint]:
        return [j for j in self.joints if j.actuated]

    @property
    def dof(self) -> int:
        return sum(1 for j in self.joints if j.actuated)


class ParsedChain(NamedTuple):
    chain: KinematicChain
    warnings: list[str]


def _floats_attr(el: ET.Element | None, attr: str, default: tuple[float, ...], where: str):
    if el is None or el.get(attr) is None:
        return default
    try:
        vals = tuple(float(v) for v in el.get(attr).split())
    except ValueError:
        raise FormatError(f"{where}: {attr}={el.get(attr)!r} is not numeric") from None
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        raise FormatError(f"{where}: {attr} needs 3 finite numbers")
    return vals


def _parse_joint(el: ET.Element, warnings: list[str]) -> Joint:
    name = el.get("name")
    if not name:
        raise FormatError("joint element without a name")
    where = f"joint {name!r}"
    jtype = el.get("type", "")
    if jtype not in _KINDS:
        raise UnsupportedJointError(f"{where}: unsupported type {jtype!r}")
    for child in el:
        if child.tag not in _JOINT_CHILDREN:
            warnings.append(f"ignored element <{child.tag}> in {where}")
    origin_el = el.find("origin")
    xyz = _floats_attr(origin_el, "xyz", (0.0, 0.0, 0.0), where)
    rpy = _floats_attr(origin_el, "rpy", (0.0, 0.0, 0.0), where)
    axis = _floats_attr(el.find("axis"), "xyz", (1.0, 0.0, 0.0), where)
    parent = el.find("parent")
    child = el.find("child")
    if parent is None or child is None or not parent.get("link") or not child.get("link"):
        raise FormatError(f"{where}: parent and child links are required")
    return Joint(
        name,
        _KINDS[jtype],
        Pose(Rotation.from_rpy(*rpy), xyz),
        axis,
        parent.get("link"),
        child.get("link"),
    )


def parse_chain(xml_text: str, base: str, tip: str) -> ParsedChain:
    """Extract the serial joint path from link ``base`` to link ``tip``."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise FormatError(f"malformed XML at line {line}, column {col}: {exc}") from None
    warnings: list[str] = []
    joints: list[Joint] = []
    links: set[str] = set()
    for el in root:
        if el.tag == "link":
            if el.get("name"):
                links.add(el.get("name"))
            for sub in el:
                warnings.append(f"ignored element <{sub.tag}> in link {el.get('name')!r}")
        elif el.tag == "joint":
            joints.append(_parse_joint(el, warnings))
        else:
            warnings.append(f"ignored element <{el.tag}>")

    names = [j.name for j in joints]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise FormatError(f"duplicate joint names: {', '.join(dupes)}")

    by_child: dict[str, Joint] = {}
    children_of: dict[str, list[Joint]] = {}
    for j in joints:
        if j.child in by_child:
            raise UnsupportedTopologyError(f"link {j.child!r} has more than one parent joint")
        by_child[j.child] = j
        children_of.setdefault(j.parent, []).append(j)

    for name in (base, tip):
        if name not in links and name not in by_child and name not in children_of:
            raise TopologyError(f"link {name!r} not found")

    path: list[Joint] = []
    link = tip
    visited = {tip}
    while link != base:
        j = by_child.get(link)
        if j is None:
            raise TopologyError(f"no joint path from {base!r} to {tip!r}")
        path.append(j)
        link = j.parent
        if link in visited:
            raise TopologyError(f"kinematic loop through link {link!r}")
        visited.add(link)
    path.reverse()

    for j in path:
        siblings = children_of.get(j.parent, [])
        if len(siblings) > 1:
            raise UnsupportedTopologyError(
                f"link {j.parent!r} branches into joints "
                + ", ".join(repr(s.name) for s in siblings)
            )
    return ParsedChain(KinematicChain(tuple(path), base, tip), warnings)


def load_chain(path, base: str, tip: str) -> ParsedChain:
    with open(path, encoding="utf-8") as fh:
        return parse_chain(fh.read(), base, tip)


def forward_kinematics(chain: KinematicChain, q: Sequence[float]) -> Pose:
    """Tip pose in the base frame for joint values ``q`` (actuated joints, chain order)."""
    if len(q) != chain.dof:
        raise ConfigurationError(
            f"chain has {chain.dof} actuated joints, configuration has {len(q)} values"
        )
    pose = Pose()
    k = 0
    for j in chain.joints:
        pose = compose(pose, j.origin)
        if j.actuated:
            pose = compose(pose, j.motion(q[k]))
            k += 1
    return pose


def camera_reference_trajectory(
    chain: KinematicChain,
    joint_stream: Sequence[tuple[int, JointStateSample | Sequence[float]]],
    handeye: Pose,
) -> list[StampedPose]:
    """Camera poses in the robot base frame: ``FK(q) ∘ X`` per joint sample.

    ``handeye`` is the camera pose in the end-effector frame.
    """
    out = []
    for t, q in joint_stream:
        values = q.positions if isinstance(q, JointStateSample) else q
        out.append(StampedPose(t, compose(forward_kinematics(chain, values), handeye)))
    return out


def parse_joint_csv(text: str) -> list[tuple[int, tuple[float, ...]]]:
    """Rows ``t_ns,q1,...,qn``; ``#`` lines are comments."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            t = int(parts[0])
            q = tuple(float(p) for p in parts[1:])
        except ValueError:
            raise FormatError(f"joints line {lineno}: cannot parse {line!r}") from None
        if not all(math.isfinite(v) for v in q):
            raise FormatError(f"joints line {lineno}: non-finite joint value")
        rows.append((t, q))
    return rows
