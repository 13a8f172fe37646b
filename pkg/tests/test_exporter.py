import json

import numpy as np
import pytest

from demotraj import exporter, geom
from demotraj.demolog import FrameMeta, PoseSample, Record
from demotraj.episodes import Episode, SyncedEpisode, SyncedSample
from demotraj.errors import ValidationError

from oracles import random_pose


def synced(rng, n, t0=0, grip=True):
    samples = []
    for k in range(n):
        state = float(rng.uniform()) if grip else None
        samples.append(SyncedSample(t0 + k * 33_333_333, random_pose(rng), None, state))
    return SyncedEpisode(t0, t0 + n * 33_333_333, samples,
                         [(t0, FrameMeta(0, "frames/000000.png"))], source="demo.log")


def test_export_layout_and_validate(tmp_path, rng):
    eps = [synced(rng, 20), synced(rng, 15, t0=10**10)]
    m = exporter.export_dataset(eps, tmp_path, 30.0, {"w_min": 0.0, "w_max": 0.08})
    assert m.episode_count == 2 and m.skipped_episodes == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["episode_0000", "episode_0001", "manifest.json"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["episode_count"] == 2 and manifest["source_logs"] == ["demo.log"]
    meta = json.loads((tmp_path / "episode_0000" / "meta.json").read_text())
    assert meta["frames"] == [{"t_ns": 0, "frame_index": 0, "path": "frames/000000.png"}]
    csv = (tmp_path / "episode_0001" / "trajectory.csv").read_text().splitlines()
    assert csv[0] == "t_ns,x,y,z,qx,qy,qz,qw,gripper"
    assert csv[1].split(",")[1:8] == ["0", "0", "0", "0", "0", "0", "1"]
    report = exporter.validate_dataset(tmp_path)
    assert report.ok and report.error_count == 0


def test_round_trip_and_relative_invariance(tmp_path, rng):
    ep = synced(rng, 40)
    exporter.export_dataset([ep], tmp_path, 30.0)
    rows = exporter.read_trajectory_csv(tmp_path / "episode_0000" / "trajectory.csv")
    first = ep.samples[0].pose
    for (t, pose, grip, _), s in zip(rows, ep.samples):
        assert t == s.timestamp_ns and grip == s.gripper_state
        want = geom.relative(first, s.pose)
        assert np.max(np.abs(np.subtract(pose.tum_fields(), want.tum_fields()))) <= 1e-12
    for i, j in [(0, 5), (3, 39), (17, 18)]:
        a = geom.relative(rows[i][1], rows[j][1])
        b = geom.relative(ep.samples[i].pose, ep.samples[j].pose)
        assert a.isclose(b, 1e-9)


def test_missing_gripper_leaves_empty_cell(tmp_path, rng):
    exporter.export_dataset([synced(rng, 3, grip=False)], tmp_path, 30.0)
    lines = (tmp_path / "episode_0000" / "trajectory.csv").read_text().splitlines()
    assert all(line.endswith(",") for line in lines[1:])
    assert exporter.validate_dataset(tmp_path).ok


def test_short_episode_skipped(tmp_path, rng):
    warnings = []
    m = exporter.export_dataset([synced(rng, 1), synced(rng, 5)], tmp_path, 30.0, warnings=warnings)
    assert m.episode_count == 1 and m.skipped_episodes == 1 and len(warnings) == 1
    assert json.loads((tmp_path / "manifest.json").read_text())["skipped_episodes"] == 1


def test_corrupted_quaternion_fails(tmp_path, rng):
    exporter.export_dataset([synced(rng, 5), synced(rng, 5)], tmp_path, 30.0)
    path = tmp_path / "episode_0001" / "trajectory.csv"
    lines = path.read_text().splitlines()
    cells = lines[3].split(",")
    cells[4:8] = ["0", "0", "0", "1.5"]
    lines[3] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    report = exporter.validate_dataset(tmp_path)
    assert report.episodes["episode_0000"] == []
    assert any("quaternion norm" in e for e in report.episodes["episode_0001"])
    assert "episode_0001: FAIL" in report.summary()


def test_row_invariant_violations(tmp_path, rng):
    exporter.export_dataset([synced(rng, 5)], tmp_path, 30.0)
    path = tmp_path / "episode_0000" / "trajectory.csv"
    lines = path.read_text().splitlines()
    c1, c2 = lines[1].split(","), lines[2].split(",")
    c1[1] = "0.5"
    c2[0] = c1[0]
    c2[8] = "1.2"
    lines[1], lines[2] = ",".join(c1), ",".join(c2)
    path.write_text("\n".join(lines) + "\n")
    errs = exporter.validate_dataset(tmp_path).episodes["episode_0000"]
    assert any("identity" in e for e in errs)
    assert any("strictly increasing" in e for e in errs)
    assert any("outside [0, 1]" in e for e in errs)


def test_manifest_mismatch_and_unreadable(tmp_path, rng):
    exporter.export_dataset([synced(rng, 5), synced(rng, 5)], tmp_path, 30.0)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["episode_count"] = 3
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    report = exporter.validate_dataset(tmp_path)
    assert not report.ok and "manifest mismatch" in report.manifest_errors[0]
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ValidationError):
        exporter.validate_dataset(tmp_path)
    with pytest.raises(ValidationError):
        exporter.validate_dataset(tmp_path / "nowhere")


def test_prepare_episode_resamples_without_gripper(rng):
    poses = [Record(k * 50_000_000, PoseSample(random_pose(rng, max_angle=0.1))) for k in range(11)]
    ep = Episode(0, 500_000_000, poses)
    out = exporter.prepare_episode(ep, 30.0)
    ts = [s.timestamp_ns for s in out.samples]
    assert ts[0] == 0 and ts[-1] == 500_000_000
    assert len(ts) == 16 and all(s.gripper_state is None for s in out.samples)
