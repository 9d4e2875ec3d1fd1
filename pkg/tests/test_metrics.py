import math

import numpy as np
import pytest

from miniswarm.metrics import (
    LatencyReport,
    associate,
    compute_ape,
    format_latency_table,
    format_success_table,
    latency_stats,
    read_trajectory,
    write_trajectory,
    SuccessReport,
)
from miniswarm.state import Pose4


def traj(times, xs=None):
    xs = xs if xs is not None else [0.0] * len(times)
    return [(t, Pose4(x, 0, 1, 0, t)) for t, x in zip(times, xs)]


class TestAssociate:
    def test_nearest_within_tolerance(self):
        pair = associate(traj([0.00, 0.11, 0.21]), traj([0.0, 0.1, 0.2]), tol_s=0.05)
        assert pair.associations == [(0, 0), (1, 1), (2, 2)]
        assert pair.unmatched_est == 0

    def test_shifted_matching(self):
        # est shifted +0.2 s at 10 Hz sampling: pairing shifts by 2 indices
        est_times = [round(0.2 + 0.1 * i, 10) for i in range(8)]
        ref_times = [round(0.1 * i, 10) for i in range(10)]
        pair = associate(traj(est_times), traj(ref_times), tol_s=0.05)
        assert pair.associations == [(i, i + 2) for i in range(8)]

    def test_disjoint_errors(self):
        with pytest.raises(ValueError, match="disjoint"):
            associate(traj([0.0, 0.1]), traj([5.0, 5.1]), tol_s=0.05)

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError, match="sorted"):
            associate(traj([0.1, 0.0]), traj([0.0, 0.1]))

    def test_unmatched_counted(self):
        pair = associate(traj([0.0, 0.1, 3.0]), traj([0.0, 0.1]), tol_s=0.05)
        assert pair.unmatched_est == 1


class TestApe:
    def test_identical_zero(self):
        t = traj([0.0, 0.1, 0.2], [1, 2, 3])
        ape = compute_ape(associate(t, t))
        assert ape.rmse_m == 0 and ape.mean_m == 0 and ape.max_m == 0

    def test_constant_offset(self):
        ref = traj([0.0, 0.1, 0.2], [0, 1, 2])
        est = traj([0.0, 0.1, 0.2], [0.03, 1.03, 2.03])
        ape = compute_ape(associate(est, ref))
        assert ape.rmse_m == pytest.approx(0.03)
        assert ape.mean_m == pytest.approx(0.03)
        assert ape.max_m == pytest.approx(0.03)

    def test_two_pair_rmse(self):
        # errors 0.0 and 0.04 -> rmse = sqrt(0.0016/2) ~ 0.0283
        ref = traj([0.0, 0.1], [0.0, 0.0])
        est = traj([0.0, 0.1], [0.0, 0.04])
        ape = compute_ape(associate(est, ref))
        assert ape.rmse_m == pytest.approx(math.sqrt(0.0016 / 2))

    def test_time_shift_invariance(self):
        rng = np.random.default_rng(3)
        times = np.cumsum(rng.uniform(0.05, 0.15, 40))
        xs = rng.uniform(-1, 1, 40)
        est = traj(times, xs + 0.01)
        ref = traj(times, xs)
        a = compute_ape(associate(est, ref))
        shift = 11.5
        b = compute_ape(associate(traj(times + shift, xs + 0.01), traj(times + shift, xs)))
        assert a.rmse_m == pytest.approx(b.rmse_m)

    def test_translation_alignment_removes_constant_offset(self):
        ref = traj([0.0, 0.1, 0.2], [0, 1, 2])
        est = traj([0.0, 0.1, 0.2], [0.5, 1.5, 2.5])
        raw = compute_ape(associate(est, ref))
        aligned = compute_ape(associate(est, ref), align="translation")
        assert raw.rmse_m == pytest.approx(0.5)
        assert aligned.rmse_m == pytest.approx(0.0, abs=1e-12)


class TestLatencyStats:
    def test_constant(self):
        rep = latency_stats([10, 10, 10])
        assert (rep.min_ms, rep.max_ms, rep.mean_ms, rep.std_ms) == (10, 10, 10, 0)

    def test_two_sample_mean(self):
        rep = latency_stats([4.14, 66.3])
        assert rep.mean_ms == pytest.approx(35.22)

    def test_matches_brute_force_reference(self):
        rng = np.random.default_rng(0)
        xs = list(rng.uniform(1, 50, 500))
        rep = latency_stats(xs)
        # independent reference: plain Python accumulation
        mean = sum(xs) / len(xs)
        var = sum((x - mean) ** 2 for x in xs) / len(xs)
        assert rep.mean_ms == pytest.approx(mean)
        assert rep.std_ms == pytest.approx(math.sqrt(var))
        assert rep.min_ms == min(xs) and rep.max_ms == max(xs)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            latency_stats([])

    def test_report_invariants(self):
        with pytest.raises(ValueError):
            LatencyReport(min_ms=5, max_ms=4, mean_ms=4.5, std_ms=0, count=2)
        with pytest.raises(ValueError):
            LatencyReport(min_ms=1, max_ms=2, mean_ms=1.5, std_ms=0, count=0)


class TestTrajectoryFiles:
    def test_roundtrip(self, tmp_path):
        t = traj([0.0, 0.5, 1.0], [0.1, 0.2, 0.3])
        path = tmp_path / "drone0.est.txt"
        write_trajectory(path, t)
        back = read_trajectory(path)
        assert len(back) == 3
        for (t0, p0), (t1, p1) in zip(t, back):
            assert t0 == pytest.approx(t1)
            assert p0.x == pytest.approx(p1.x)


class TestTables:
    def test_latency_table_layout(self):
        rep = latency_stats([1.0, 2.0])
        text = format_latency_table([("Fleet <-> Relay Link", "UDP/Ethernet", rep)])
        assert "Component" in text and "Mean" in text
        assert "UDP/Ethernet" in text

    def test_success_table(self):
        rep = SuccessReport("mle", 10, 9, (0.03,), {"timeout": 1}, 10.5, 40.0)
        text = format_success_table([rep])
        assert "90%" in text
        assert "timeout:1" in text
