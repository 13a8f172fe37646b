"""``demotraj`` command line: one subcommand per post-processing stage.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
or degenerate-geometry error.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .calib import parse_pairs_csv, solve_hand_eye
from .demolog import (
    MAGIC,
    Channel,
    LogFile,
    export_tum,
    format_seconds,
    load_log,
    load_tum,
    save_log,
    save_tum,
)
from .episodes import DEFAULT_RATE_HZ, segment_episodes
from .errors import DataError, DemoTrajError, FormatError
from .exporter import export_dataset, prepare_episode, validate_dataset
from .geom import Pose
from .gripper import gripper_state_stream, group_frames, load_gripper_config
from .kinchain import camera_reference_trajectory, forward_kinematics, load_chain, parse_joint_csv
from .synthgen import generate, load_scenario, write_outputs
from .trajeval import evaluate, format_metrics, parse_metrics, report_table

USAGE_ERROR = 1
ALIGN_CHOICES = {"none": "none", "se3": "rigid", "sim3": "similarity"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _read_log(path) -> LogFile:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        log = load_log(path)
    for w in caught:
        _warn(str(w.message))
    return log


def _read_trajectory(path):
    """TUM text or a binary log's pose channel, decided by the file's magic."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return _read_log(path).poses()
    return load_tum(path)


def _write_text(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _pose_arg(text: str) -> Pose:
    """Seven numbers ``tx ty tz qx qy qz qw``, inline or as a file path."""
    if Path(text).is_file():
        text = Path(text).read_text(encoding="utf-8")
    fields = [v for v in text.replace(",", " ").split() if v]
    try:
        values = [float(v) for v in fields]
    except ValueError:
        raise FormatError(f"expected 7 numbers for a pose, got {text.strip()!r}") from None
    if len(values) != 7:
        raise FormatError(f"expected 7 numbers for a pose, got {len(values)}")
    return Pose.from_tum_fields(values)


def _positive(kind):
    def parse(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _pose_line(pose: Pose) -> str:
    return " ".join(repr(v) for v in pose.tum_fields())


# -- subcommands ------------------------------------------------------------------


def cmd_inspect(args) -> int:
    log = _read_log(args.log)
    print(f"version {log.version}, {len(log.records)} records")
    for ch in Channel:
        recs = log.channel(ch)
        if recs:
            t0 = min(r.timestamp_ns for r in recs)
            t1 = max(r.timestamp_ns for r in recs)
            print(f"{ch.name.lower():16s} {len(recs):8d}  {format_seconds(t0)} .. {format_seconds(t1)}")
    if log.records:
        span = max(r.timestamp_ns for r in log.records) - min(r.timestamp_ns for r in log.records)
        print(f"span {format_seconds(span)} s")
    return 0


def cmd_segment(args) -> int:
    log = _read_log(args.log)
    seg = segment_episodes(log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    intrinsics = log.channel(Channel.CAMERA_INTRINSICS)
    for k, ep in enumerate(seg.episodes):
        save_log(LogFile(tuple(intrinsics) + ep.records, log.version), out / f"episode_{k:04d}.log")
        if args.tum:
            save_tum(ep.poses(), out / f"episode_{k:04d}.tum")
    for w in seg.warnings:
        _warn(w)
    print(f"{len(seg.episodes)} episodes, {len(seg.warnings)} warnings")
    return 0


def cmd_eval(args) -> int:
    est = _read_trajectory(args.est)
    ref = _read_trajectory(args.ref)
    label = args.label or Path(args.est).stem
    run = evaluate(
        est,
        ref,
        label,
        ALIGN_CHOICES[args.align],
        args.rpe_delta,
        round(args.tolerance_ms * 1_000_000),
        args.rotation,
    )
    unit = "rad" if args.rotation else "m"
    _write_text(report_table([run], unit), args.out)
    if args.kv:
        Path(args.kv).write_text(format_metrics([run]), encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    runs = []
    for path in args.metrics:
        runs.extend(parse_metrics(Path(path).read_text(encoding="utf-8")))
    _write_text(report_table(runs, args.unit), args.out)
    return 0


def cmd_handeye(args) -> int:
    pairs = parse_pairs_csv(Path(args.pairs).read_text(encoding="utf-8"))
    res = solve_hand_eye(pairs)
    for w in res.warnings:
        _warn(w)
    used_rot = [res.rotation_residuals[k] for k in res.used]
    used_trans = [res.translation_residuals[k] for k in res.used]
    _write_text(_pose_line(res.x) + "\n", args.out)
    print(
        f"{len(res.used)} pairs used, {len(res.outliers)} excluded; "
        f"max residual {max(used_rot):.3g} rad, {max(used_trans):.3g} m",
        file=sys.stderr,
    )
    return 0


def cmd_fk(args) -> int:
    parsed = load_chain(args.chain, args.base, args.tip)
    for w in parsed.warnings:
        _warn(w)
    rows = parse_joint_csv(Path(args.joints).read_text(encoding="utf-8"))
    if args.handeye:
        stream = camera_reference_trajectory(parsed.chain, rows, _pose_arg(args.handeye))
    else:
        stream = [(t, forward_kinematics(parsed.chain, q)) for t, q in rows]
    _write_text(export_tum(stream), args.out)
    return 0


def cmd_gripper(args) -> int:
    log = _read_log(args.log)
    cfg = load_gripper_config(args.config)
    intr = log.intrinsics()
    if intr is None:
        raise DataError("log has no camera intrinsics record")
    dets = [(r.timestamp_ns, r.payload) for r in log.channel(Channel.TAG_DETECTION)]
    stream = gripper_state_stream(group_frames(dets), intr, cfg.geometry, cfg.calibration, args.smooth)
    for w in stream.warnings:
        _warn(w)
    lines = ["t_ns,width_m,state"]
    lines += [f"{s.timestamp_ns},{s.width:.17g},{s.state:.17g}" for s in stream.samples]
    _write_text("\n".join(lines) + "\n", args.out)
    print(f"{len(stream.samples)} samples, {stream.skipped_frames} frames skipped", file=sys.stderr)
    return 0


def _prepare(job):
    return prepare_episode(*job)


def cmd_export(args) -> int:
    log = _read_log(args.log)
    cfg = load_gripper_config(args.config) if args.config else None
    intr = log.intrinsics()
    if cfg is not None and intr is None:
        raise DataError("log has no camera intrinsics record; cannot estimate gripper state")
    seg = segment_episodes(log)
    for w in seg.warnings:
        _warn(w)
    tol = round(args.tolerance_ms * 1_000_000)
    source = Path(args.log).name
    jobs = [(ep, args.rate, cfg, intr, tol, args.smooth, source) for ep in seg.episodes]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            synced = list(pool.map(_prepare, jobs))
    else:
        synced = [_prepare(j) for j in jobs]
    calib = None
    if cfg is not None:
        calib = {"w_min_m": cfg.calibration.w_min, "w_max_m": cfg.calibration.w_max}
    notes: list[str] = []
    manifest = export_dataset(synced, args.out, args.rate, calib, notes)
    for w in notes:
        _warn(w)
    report = validate_dataset(args.out)
    print(
        f"{manifest.episode_count} episodes exported, {manifest.skipped_episodes} skipped, "
        f"{report.error_count} validation errors"
    )
    return 0 if report.ok else 2


def cmd_validate(args) -> int:
    report = validate_dataset(args.dataset)
    print(report.summary())
    print(f"{report.error_count} validation errors")
    return 0 if report.ok else 2


def cmd_synth(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    paths = write_outputs(generate(scenario), args.out, scenario)
    print(f"wrote {len(paths)} files to {args.out} (seed {scenario.seed})")
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="demotraj", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("inspect", help="per-channel record counts and time span")
    s.add_argument("log")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("segment", help="split a log into demonstration episodes")
    s.add_argument("log")
    s.add_argument("--out", required=True, help="directory for episode_NNNN.log files")
    s.add_argument("--tum", action="store_true", help="also write each episode's poses as TUM text")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", help="APE/RPE of an estimated trajectory against a reference")
    s.add_argument("--est", required=True, help="TUM file or binary log")
    s.add_argument("--ref", required=True, help="TUM file or binary log")
    s.add_argument("--align", choices=sorted(ALIGN_CHOICES), default="none")
    s.add_argument("--rpe-delta", type=_positive(int), default=1, help="index gap for RPE (default 1)")
    s.add_argument("--tolerance-ms", type=_positive(float), default=50.0, help="association tolerance")
    s.add_argument("--rotation", action="store_true", help="report rotation error (rad) instead of translation")
    s.add_argument("--label", help="run label (default: est file stem)")
    s.add_argument("--out", help="report file (default stdout)")
    s.add_argument("--kv", help="also write machine-readable metrics here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="combine metrics files from eval --kv into one table")
    s.add_argument("metrics", nargs="+")
    s.add_argument("--unit", default="m")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("handeye", help="solve AX = XB from paired relative motions")
    s.add_argument("--pairs", required=True, help="14 values per line: A then B as tx ty tz qx qy qz qw")
    s.add_argument("--out", help="write X as 'tx ty tz qx qy qz qw' (default stdout)")
    s.set_defaults(func=cmd_handeye)

    s = sub.add_parser("fk", help="forward kinematics of a joint stream")
    s.add_argument("--chain", required=True, help="URDF file")
    s.add_argument("--base", required=True)
    s.add_argument("--tip", required=True)
    s.add_argument("--joints", required=True, help="CSV rows t_ns,q1,...,qn")
    s.add_argument("--handeye", help="camera pose in the tip frame (7 numbers or a file); output camera poses")
    s.add_argument("--out", help="TUM output (default stdout)")
    s.set_defaults(func=cmd_fk)

    s = sub.add_parser("gripper", help="per-frame gripper width and state from tag detections")
    s.add_argument("--log", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--smooth", action="store_true", help="moving median over 5 frames")
    s.add_argument("--out", help="CSV output (default stdout)")
    s.set_defaults(func=cmd_gripper)

    s = sub.add_parser("export", help="segment, resample, attach gripper state, write a dataset")
    s.add_argument("--log", required=True)
    s.add_argument("--config", help="gripper config; without it the gripper column stays empty")
    s.add_argument("--out", required=True)
    s.add_argument("--rate", type=_positive(float), default=DEFAULT_RATE_HZ, help="resample rate in Hz")
    s.add_argument("--tolerance-ms", type=_positive(float), default=50.0)
    s.add_argument("--smooth", action="store_true")
    s.add_argument("--jobs", type=_positive(int), default=1, help="worker processes for per-episode work")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("validate", help="check an exported dataset")
    s.add_argument("dataset")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="generate a synthetic log with ground truth")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.set_defaults(func=cmd_synth)
    return p


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except DemoTrajError as exc:
        print(f"demotraj {args.command}: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"demotraj {args.command}: {_one_line(exc)}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
