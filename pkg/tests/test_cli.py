import json
import subprocess
import sys

import pytest

from demotraj import calib, cli
from demotraj.calib import MotionPair
from demotraj.demolog import load_log, load_tum
from demotraj.geom import Pose, Rotation

from oracles import random_pose
from test_kinchain import random_chain, urdf
from test_trajeval import REFERENCE_AVERAGE, REFERENCE_ROWS

SUBCOMMANDS = ["inspect", "segment", "eval", "report", "handeye", "fk", "gripper", "export",
               "validate", "synth"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    (d / "s.cfg").write_text(
        "seed = 3\nduration_s = 6\nsigma_t = 0.005\n"
        "buttons = long@0.01 short@0.1 short@2.5 short@3 short@5.8 long@5.9\n"
    )
    assert cli.main(["synth", "--scenario", str(d / "s.cfg"), "--out", str(d / "out")]) == 0
    return d / "out"


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([cmd, "--help"])
    assert exc.value.code == 0
    assert "usage:" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    code, _, err = run(capsys, "eval", "--est", "a", "--ref", "b", "--bogus")
    assert code == 1 and len(err.strip().splitlines()) == 1
    assert run(capsys, "eval", "--est", "a", "--ref", "b", "--align", "affine")[0] == 1
    assert run(capsys, "eval", "--est", "a", "--ref", "b", "--rpe-delta", "0")[0] == 1
    assert run(capsys, "segment", "x.log")[0] == 1


def test_data_errors_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "inspect", tmp_path / "missing.log")
    assert code == 2 and len(err.strip().splitlines()) == 1
    (tmp_path / "bad.log").write_bytes(b"NOTALOG!" + b"\0" * 10)
    code, _, err = run(capsys, "inspect", tmp_path / "bad.log")
    assert code == 2 and "SROILOG1" in err


def test_numerical_error_exit_3(tmp_path, capsys):
    motions = [Pose(Rotation.from_axis_angle((0, 0, 1), a), (a, 0, 0)) for a in (0.3, 0.7)]
    (tmp_path / "p.csv").write_text(calib.format_pairs_csv([MotionPair(b, b) for b in motions]))
    code, _, err = run(capsys, "handeye", "--pairs", tmp_path / "p.csv")
    assert code == 3 and "parallel" in err


def test_inspect(synth_dir, capsys):
    code, out, _ = run(capsys, "inspect", synth_dir / "raw.log")
    assert code == 0
    assert "pose" in out and "tag_detection" in out and "button" in out
    assert out.strip().splitlines()[-1].startswith("span 5.9")


def test_segment_and_eval(synth_dir, tmp_path, capsys):
    code, out, err = run(capsys, "segment", synth_dir / "raw.log", "--out", tmp_path, "--tum")
    assert code == 0 and out.strip() == "2 episodes, 0 warnings"
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "episode_0000.log", "episode_0000.tum", "episode_0001.log", "episode_0001.tum"]
    sub = load_log(tmp_path / "episode_0001.log")
    assert sub.intrinsics() is not None
    code, out, _ = run(capsys, "eval", "--est", tmp_path / "episode_0000.tum", "--ref",
                       synth_dir / "truth.tum", "--align", "none", "--kv", tmp_path / "m.kv")
    assert code == 0 and "RMSE (m)" in out and "episode_0000" in out
    code, out2, _ = run(capsys, "eval", "--est", tmp_path / "episode_0000.log", "--ref",
                        synth_dir / "truth.log", "--label", "episode_0000")
    assert out2 == out
    code, out, _ = run(capsys, "eval", "--est", tmp_path / "episode_0000.tum", "--ref",
                       synth_dir / "truth.tum", "--align", "se3", "--rotation")
    assert code == 0 and "RMSE (rad)" in out


def test_report_renders_reference_average(tmp_path, capsys):
    lines = []
    for label, v in REFERENCE_ROWS.items():
        for g, vals in (("ape", v[:4]), ("rpe", v[4:])):
            for m, x in zip(("rmse", "mean", "median", "std"), vals):
                lines.append(f"{label}.{g}.{m}={x}")
    (tmp_path / "runs.kv").write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "report", tmp_path / "runs.kv")
    avg = next(l for l in out.splitlines() if l.startswith("Average"))
    assert code == 0 and [c for c in avg.split() if c != "|"][1:] == REFERENCE_AVERAGE


def test_handeye(tmp_path, capsys, rng):
    x = random_pose(rng, scale=0.1)
    pairs = []
    for _ in range(6):
        b = Pose(Rotation.from_axis_angle(rng.normal(size=3), rng.uniform(0.3, 1.2)), rng.normal(size=3) * 0.1)
        pairs.append(MotionPair(x @ b @ x.inverse(), b))
    (tmp_path / "p.csv").write_text(calib.format_pairs_csv(pairs))
    code, out, err = run(capsys, "handeye", "--pairs", tmp_path / "p.csv")
    assert code == 0 and "6 pairs used" in err
    got = Pose.from_tum_fields([float(v) for v in out.split()])
    assert got.isclose(x, 1e-9)


def test_fk(tmp_path, capsys, rng):
    joints = random_chain(rng)
    (tmp_path / "arm.urdf").write_text(urdf(joints))
    (tmp_path / "q.csv").write_text("0,0,0,0,0,0,0\n1000000000,0.1,0.2,0.3,0.4,0.5,0.6\n")
    code, _, _ = run(capsys, "fk", "--chain", tmp_path / "arm.urdf", "--base", "l0", "--tip", "tool0",
                     "--joints", tmp_path / "q.csv", "--out", tmp_path / "fk.tum")
    assert code == 0 and len(load_tum(tmp_path / "fk.tum")) == 2
    code, out, _ = run(capsys, "fk", "--chain", tmp_path / "arm.urdf", "--base", "l0", "--tip", "tool0",
                       "--joints", tmp_path / "q.csv", "--handeye", "0 0 0.1 0 0 0 1")
    assert code == 0 and len(out.strip().splitlines()) == 2
    code, _, err = run(capsys, "fk", "--chain", tmp_path / "arm.urdf", "--base", "l0", "--tip", "nowhere",
                       "--joints", tmp_path / "q.csv")
    assert code == 2 and "nowhere" in err


def test_gripper(synth_dir, capsys):
    code, out, err = run(capsys, "gripper", "--log", synth_dir / "raw.log", "--config",
                         synth_dir / "gripper.cfg")
    assert code == 0 and "0 frames skipped" in err
    rows = out.strip().splitlines()
    assert rows[0] == "t_ns,width_m,state" and len(rows) == 181
    truth = (synth_dir / "widths.csv").read_text().strip().splitlines()[1:]
    for r, t in zip(rows[1:], truth):
        assert abs(float(r.split(",")[1]) - float(t.split(",")[1])) < 1e-9


def test_export_deterministic_across_jobs(synth_dir, tmp_path, capsys):
    outs = []
    for jobs in (1, 3):
        d = tmp_path / f"j{jobs}"
        code, out, _ = run(capsys, "export", "--log", synth_dir / "raw.log", "--config",
                           synth_dir / "gripper.cfg", "--out", d, "--jobs", jobs)
        assert code == 0 and out.strip() == "2 episodes exported, 0 skipped, 0 validation errors"
        outs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    assert outs[0] == outs[1]
    manifest = json.loads(outs[0][next(k for k in outs[0] if k.name == "manifest.json")])
    assert manifest["gripper_calibration"] == {"w_min_m": 0.02, "w_max_m": 0.08}
    code, out, _ = run(capsys, "validate", tmp_path / "j1")
    assert code == 0 and out.strip().endswith("0 validation errors")


def test_synth_seed_override(tmp_path, capsys):
    (tmp_path / "s.cfg").write_text("seed = 1\nduration_s = 1\nsigma_t = 0.01\n")
    for name, seed in (("a", 5), ("b", 5), ("c", 6)):
        assert run(capsys, "synth", "--scenario", tmp_path / "s.cfg", "--out", tmp_path / name,
                   "--seed", seed)[0] == 0
    raw = [(tmp_path / n / "raw.log").read_bytes() for n in "abc"]
    assert raw[0] == raw[1] != raw[2]
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 5


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "demotraj.cli", "inspect", str(tmp_path / "none")],
                         capture_output=True, text=True)
    assert res.returncode == 2 and res.stderr.count("\n") == 1
