import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demotraj import trajeval
from demotraj.calib import AlignmentResult
from demotraj.demolog import StampedPose
from demotraj.errors import FormatError, InsufficientDataError
from demotraj.geom import Pose
from demotraj.trajeval import ErrorStats, RunMetrics, TrajectoryPair

from oracles import ape_matrix, mat_close, random_pose, rpe_matrix, to_mat

REFERENCE_ROWS = {
    "run1 (ArUco)": (0.00788, 0.00604, 0.00371, 0.00506, 0.00128, 0.00092, 0.00060, 0.00089),
    "run2": (0.00736, 0.00572, 0.00385, 0.00463, 0.00109, 0.00074, 0.00047, 0.00080),
    "run3": (0.00771, 0.00603, 0.00403, 0.00481, 0.00117, 0.00079, 0.00045, 0.00086),
    "run4": (0.00738, 0.00537, 0.00298, 0.00506, 0.00117, 0.00074, 0.00041, 0.00090),
    "run5": (0.01012, 0.00755, 0.00429, 0.00674, 0.00131, 0.00083, 0.00045, 0.00101),
    "run6": (0.00748, 0.00585, 0.00398, 0.00466, 0.00118, 0.00083, 0.00052, 0.00085),
    "run7": (0.00776, 0.00593, 0.00392, 0.00501, 0.00107, 0.00070, 0.00040, 0.00081),
    "run8": (0.00751, 0.00566, 0.00346, 0.00494, 0.00135, 0.00088, 0.00052, 0.00102),
}
REFERENCE_AVERAGE = "0.00790 0.00602 0.00378 0.00511 0.00120 0.00080 0.00048 0.00089".split()


def reference_runs():
    return [RunMetrics(k, ErrorStats(*v[:4]), ErrorStats(*v[4:])) for k, v in REFERENCE_ROWS.items()]


def traj(poses, t0=0, dt=33_333_333):
    return [StampedPose(t0 + k * dt, p) for k, p in enumerate(poses)]


def random_traj(rng, n):
    return traj([random_pose(rng) for _ in range(n)])


def test_ape_identical_is_zero(rng):
    x = random_traj(rng, 50)
    samples = trajeval.ape(TrajectoryPair.by_index(x, x))
    assert all(s.translation == 0.0 and s.rotation < 1e-7 for s in samples)


def test_ape_right_offset(rng):
    ref = random_traj(rng, 50)
    d = Pose.from_translation((0.01, 0, 0))
    est = [StampedPose(s.timestamp_ns, s.pose @ d) for s in ref]
    samples = trajeval.ape(TrajectoryPair.by_index(est, ref))
    for s in samples:
        assert abs(s.translation - 0.01) < 1e-12
        assert s.error.isclose(d.inverse(), 1e-12)


def test_ape_rpe_match_matrix_oracle(rng):
    for _ in range(10):
        est, ref = random_traj(rng, 40), random_traj(rng, 40)
        pair = TrajectoryPair.by_index(est, ref)
        for s, (e, r) in zip(trajeval.ape(pair), zip(est, ref)):
            assert mat_close(to_mat(s.error), ape_matrix(to_mat(e.pose), to_mat(r.pose))) < 1e-12
        for delta in (1, 3):
            samples = trajeval.rpe(pair, delta)
            assert len(samples) == 40 - delta
            for s in samples:
                i, j = s.i, s.j
                want = rpe_matrix(to_mat(est[i].pose), to_mat(est[j].pose),
                                  to_mat(ref[i].pose), to_mat(ref[j].pose))
                assert mat_close(to_mat(s.error), want) < 1e-12


def test_rpe_invariances(rng):
    ref = random_traj(rng, 30)
    assert all(s.translation < 1e-12 for s in trajeval.rpe(TrajectoryPair.by_index(ref, ref)))
    g = random_pose(rng)
    est = [StampedPose(s.timestamp_ns, g @ s.pose) for s in ref]
    assert all(s.translation < 1e-12 and s.rotation < 1e-6
               for s in trajeval.rpe(TrajectoryPair.by_index(est, ref)))

    est = random_traj(rng, 30)
    base = trajeval.rpe(TrajectoryPair.by_index(est, ref))
    moved = trajeval.rpe(TrajectoryPair.by_index(
        [StampedPose(s.timestamp_ns, g @ s.pose) for s in est],
        [StampedPose(s.timestamp_ns, g @ s.pose) for s in ref]))
    for a, b in zip(base, moved):
        assert abs(a.translation - b.translation) < 1e-12


def test_rpe_count_and_errors(rng):
    x = random_traj(rng, 10)
    assert len(trajeval.rpe(TrajectoryPair.by_index(x, x), 1)) == 9
    with pytest.raises(InsufficientDataError):
        trajeval.rpe(TrajectoryPair.by_index(x, x), 10)
    with pytest.raises(InsufficientDataError):
        trajeval.ape(TrajectoryPair(x, x, ()))


def test_ape_common_rebase_preserves_translation_norm(rng):
    est, ref = random_traj(rng, 30), random_traj(rng, 30)
    g = random_pose(rng)
    a = trajeval.ape(TrajectoryPair.by_index(est, ref))
    b = trajeval.ape(TrajectoryPair.by_index(
        [StampedPose(s.timestamp_ns, g @ s.pose) for s in est],
        [StampedPose(s.timestamp_ns, g @ s.pose) for s in ref]))
    for x, y in zip(a, b):
        assert abs(x.translation - y.translation) < 1e-12


def test_ape_with_alignment_removes_global_transform(rng):
    ref = traj([random_pose(rng) for _ in range(30)])
    g = random_pose(rng)
    est = [StampedPose(s.timestamp_ns, g @ s.pose) for s in ref]
    pair = TrajectoryPair.by_index(est, ref)
    alignment = trajeval.align_pair(pair, "rigid")
    assert all(s.translation < 1e-9 for s in trajeval.ape(pair, alignment))
    assert trajeval.ape(pair, AlignmentResult()) == trajeval.ape(pair)


def test_association_drops_gaps():
    est = traj([Pose()] * 5, dt=100)
    ref = traj([Pose()] * 3, t0=1000, dt=100)
    pair = TrajectoryPair.associate(est, ref, tolerance_ns=10)
    assert pair.association == ()
    pair = TrajectoryPair.associate(est, traj([Pose()] * 3, t0=205, dt=100), tolerance_ns=10)
    assert pair.association == ((2, 0), (3, 1), (4, 2))


def test_stats_examples():
    s = trajeval.stats([0.01, 0.01, 0.01])
    assert s.rmse == pytest.approx(0.01, abs=1e-17) and s.mean == pytest.approx(0.01, abs=1e-17)
    assert s.median == 0.01 and s.std == pytest.approx(0.0, abs=1e-17)
    s = trajeval.stats([0.003, 0.004, 0.005])
    # direct arithmetic: mean of squares = (9 + 16 + 25) / 3 * 1e-6
    assert s.mean == pytest.approx(0.004, abs=1e-15)
    assert s.median == 0.004
    assert s.rmse == pytest.approx(math.sqrt(50 / 3) * 1e-3, abs=1e-15)
    assert s.std == pytest.approx(math.sqrt(2 / 3) * 1e-3, abs=1e-15)
    assert round(s.rmse, 7) == 0.0040825 and round(s.std, 8) == 0.0008165
    assert trajeval.stats([1.0, 3.0]).median == 2.0
    with pytest.raises(InsufficientDataError):
        trajeval.stats([])


@settings(max_examples=300)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=200))
def test_stats_rmse_identity(values):
    s = trajeval.stats(values)
    assert abs(s.rmse**2 - (s.mean**2 + s.std**2)) <= 1e-12 * max(1.0, s.rmse**2)


def test_report_single_run():
    run = RunMetrics("run1", ErrorStats(0.00788, 0.00604, 0.00371, 0.00506),
                     ErrorStats(0.00128, 0.00092, 0.00060, 0.00089))
    text = trajeval.report_table([run])
    assert "0.00788" in text
    lines = text.splitlines()
    run_line = next(l for l in lines if l.startswith("run1"))
    avg_line = next(l for l in lines if l.startswith("Average"))
    assert run_line.split()[1:] == avg_line.split()[1:]
    assert "RMSE (m)" in lines[1] and "Median (m)" in lines[1] and "Std (m)" in lines[1]


def test_report_reference_average_row():
    text = trajeval.report_table(reference_runs())
    avg = next(l for l in text.splitlines() if l.startswith("Average"))
    assert [c for c in avg.split() if c != "|"][1:] == REFERENCE_AVERAGE


def test_metrics_round_trip():
    runs = reference_runs()
    text = trajeval.format_metrics(runs)
    assert "run2.ape.rmse=0.0073600000000000002" in text
    assert trajeval.parse_metrics(text) == runs
    with pytest.raises(FormatError):
        trajeval.parse_metrics("nonsense\n")
    with pytest.raises(FormatError, match="missing"):
        trajeval.parse_metrics("r.ape.rmse=1\n")


def test_evaluate_noise_free(rng):
    ref = random_traj(rng, 100)
    m = trajeval.evaluate(ref, ref, "x", align="none")
    assert m.ape.rmse == 0.0 and m.rpe.rmse < 1e-12
