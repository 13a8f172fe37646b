"""Absolute and relative pose error between two trajectories.

For associated pose pairs ``(est_i, ref_i)``:

* APE error pose ``E_i = est_i⁻¹ · ref_i`` (after aligning ``est``)
* RPE error pose ``E_ij = (ref_i⁻¹ · ref_j)⁻¹ · (est_i⁻¹ · est_j)``, ``j = i + delta``

Magnitudes are the translation norm (meters) and rotation angle
(radians) of the error pose.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from . import geom
from .calib import AlignmentResult, AlignMode, apply_alignment, umeyama_align
from .demolog import StampedPose
from .episodes import DEFAULT_TOLERANCE_NS, associate_nearest
from .errors import FormatError, InsufficientDataError
from .geom import Pose

METRICS = ("rmse", "mean", "median", "std")


@dataclass(frozen=True)
class TrajectoryPair:
    est: Sequence[StampedPose]
    ref: Sequence[StampedPose]
    association: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "association", tuple(self.association))
        for i, j in self.association:
            if not (0 <= i < len(self.est) and 0 <= j < len(self.ref)):
                raise IndexError(f"association ({i}, {j}) out of range")

    @classmethod
    def associate(
        cls,
        est: Sequence[StampedPose],
        ref: Sequence[StampedPose],
        tolerance_ns: int = DEFAULT_TOLERANCE_NS,
    ) -> TrajectoryPair:
        """Pair each estimated pose with the nearest reference pose in time."""
        matches = associate_nearest(
            [s.timestamp_ns for s in est], [s.timestamp_ns for s in ref], tolerance_ns
        )
        return cls(est, ref, tuple((i, j) for i, j in matches if j is not None))

    @classmethod
    def by_index(cls, est: Sequence[StampedPose], ref: Sequence[StampedPose]) -> TrajectoryPair:
        n = min(len(est), len(ref))
        return cls(est, ref, tuple((k, k) for k in range(n)))

    def matched(self) -> tuple[list[Pose], list[Pose]]:
        return (
            [self.est[i].pose for i, _ in self.association],
            [self.ref[j].pose for _, j in self.association],
        )


class ErrorSample(NamedTuple):
    i: int
    j: int | None
    error: Pose
    translation: float
    rotation: float


def _sample(i: int, j: int | None, e: Pose) -> ErrorSample:
    t = e.translation
    return ErrorSample(
        i, j, e, math.sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]), geom.rotation_angle(e.rotation)
    )


def align_pair(pair: TrajectoryPair, mode: AlignMode | str) -> AlignmentResult:
    est, ref = pair.matched()
    if AlignMode(mode) is AlignMode.NONE:
        return AlignmentResult()
    return umeyama_align([p.translation for p in est], [p.translation for p in ref], mode)


def ape(pair: TrajectoryPair, alignment: AlignmentResult | None = None) -> list[ErrorSample]:
    if not pair.association:
        raise InsufficientDataError("APE needs at least one associated pose pair")
    est, ref = pair.matched()
    if alignment is not None:
        est = [p.pose for p in apply_alignment([StampedPose(0, p) for p in est], alignment)]
    return [_sample(k, None, geom.relative(e, r)) for k, (e, r) in enumerate(zip(est, ref))]


def rpe(pair: TrajectoryPair, delta: int = 1) -> list[ErrorSample]:
    if delta < 1:
        raise ValueError(f"RPE index gap must be >= 1, got {delta}")
    n = len(pair.association)
    if n <= delta:
        raise InsufficientDataError(f"RPE with delta {delta} needs more than {delta} pairs, got {n}")
    est, ref = pair.matched()
    out = []
    for i in range(n - delta):
        j = i + delta
        d_est = geom.relative(est[i], est[j])
        d_ref = geom.relative(ref[i], ref[j])
        out.append(_sample(i, j, geom.relative(d_ref, d_est)))
    return out


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    median: float
    std: float

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def stats(values: Sequence[float]) -> ErrorStats:
    """RMSE, mean, median and population standard deviation."""
    if len(values) == 0:
        raise InsufficientDataError("statistics need at least one sample")
    vals = [float(v) for v in values]
    n = len(vals)
    mean = math.fsum(vals) / n
    rmse = math.sqrt(math.fsum(v * v for v in vals) / n)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n)
    return ErrorStats(rmse, mean, statistics.median(vals), std)


def magnitudes(samples: Sequence[ErrorSample], rotation: bool = False) -> list[float]:
    return [s.rotation if rotation else s.translation for s in samples]


class RunMetrics(NamedTuple):
    label: str
    ape: ErrorStats
    rpe: ErrorStats


def evaluate(
    est: Sequence[StampedPose],
    ref: Sequence[StampedPose],
    label: str = "run",
    align: AlignMode | str = AlignMode.NONE,
    rpe_delta: int = 1,
    tolerance_ns: int = DEFAULT_TOLERANCE_NS,
    rotation: bool = False,
) -> RunMetrics:
    """Associate, align, and summarise APE and RPE for one run."""
    pair = TrajectoryPair.associate(est, ref, tolerance_ns)
    if not pair.association:
        raise InsufficientDataError("no estimated pose lies within tolerance of a reference pose")
    alignment = align_pair(pair, align)
    a = stats(magnitudes(ape(pair, alignment), rotation))
    r = stats(magnitudes(rpe(pair, rpe_delta), rotation))
    return RunMetrics(label, a, r)


def _average(runs: Sequence[RunMetrics]) -> RunMetrics:
    def mean_of(group: str) -> ErrorStats:
        return ErrorStats(
            *(math.fsum(getattr(getattr(r, group), m) for r in runs) / len(runs) for m in METRICS)
        )

    return RunMetrics("Average", mean_of("ape"), mean_of("rpe"))


def report_table(runs: Sequence[RunMetrics], unit: str = "m") -> str:
    """Fixed-width table with APE and RPE column groups and an Average row."""
    if not runs:
        raise InsufficientDataError("report needs at least one run")
    label_w = max(len("Average"), len("Run"), *(len(r.label) for r in runs))
    col_w = 11
    heads = [f"{'RMSE' if m == 'rmse' else m.capitalize()} ({unit})" for m in METRICS]
    group_w = 4 * col_w + 3

    def row(label: str, cells: Sequence[str]) -> str:
        left = " ".join(c.rjust(col_w) for c in cells[:4])
        right = " ".join(c.rjust(col_w) for c in cells[4:])
        return f"{label.ljust(label_w)} | {left} | {right}"

    def values(r: RunMetrics) -> list[str]:
        return [f"{getattr(r.ape, m):.5f}" for m in METRICS] + [
            f"{getattr(r.rpe, m):.5f}" for m in METRICS
        ]

    rule = "-" * (label_w + 2 * group_w + 6)
    lines = [
        f"{'':{label_w}} | {'APE'.center(group_w)} | {'RPE'.center(group_w)}",
        row("Run", heads + heads),
        rule,
    ]
    lines += [row(r.label, values(r)) for r in runs]
    lines.append(rule)
    lines.append(row("Average", values(_average(runs))))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def format_metrics(runs: Sequence[RunMetrics]) -> str:
    """``run.group.metric=value`` lines, 17 significant digits."""
    lines = []
    for r in runs:
        for group in ("ape", "rpe"):
            for m in METRICS:
                lines.append(f"{r.label}.{group}.{m}={getattr(getattr(r, group), m):.17g}")
    return "\n".join(lines) + "\n"


def parse_metrics(text: str) -> list[RunMetrics]:
    """Inverse of :func:`format_metrics`; run order follows first appearance."""
    values: dict[str, dict[str, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        label, _, rest = key.strip().rpartition(".")
        label, _, group = label.rpartition(".")
        if not sep or not label or group not in ("ape", "rpe") or rest not in METRICS:
            raise FormatError(f"metrics line {lineno}: expected run.(ape|rpe).metric=value")
        try:
            values.setdefault(label, {})[f"{group}.{rest}"] = float(val)
        except ValueError:
            raise FormatError(f"metrics line {lineno}: bad number {val!r}") from None
    runs = []
    for label, v in values.items():
        try:
            a = ErrorStats(*(v[f"ape.{m}"] for m in METRICS))
            r = ErrorStats(*(v[f"rpe.{m}"] for m in METRICS))
        except KeyError as exc:
            raise FormatError(f"run {label!r} is missing metric {exc.args[0]}") from None
        runs.append(RunMetrics(label, a, r))
    return runs
