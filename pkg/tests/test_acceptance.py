"""Acceptance suite: one test per primary criterion, at stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to get one PASS line per
criterion. Criterion 6 flies 200 full missions and dominates the runtime.
"""

import random
import time
from pathlib import Path

import numpy as np
import pytest

from miniswarm import protocol
from miniswarm.cli import main as cli_main
from miniswarm.config import load_config
from miniswarm.control import compute_error, world_to_body
from miniswarm.experiments import (
    bench_latency,
    equivariance_commands,
    run_success_experiment,
    step_response,
    video_bitrate_mbps,
)
from miniswarm.localization import OracleNoise, run_localizer_rate
from miniswarm.metrics import format_success_table
from miniswarm.state import Pose4

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def report(num: int, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def test_c1_yaw_wrap_oracle_equivalence():
    # brute force over k in {-3..3}, vectorized, computed up front
    ks = np.arange(-3, 4) * 360.0
    poses = [Pose4(0, 0, 0, float(y)) for y in range(-180, 180)]
    t0 = time.perf_counter()
    mismatches = 0
    for d in range(-180, 180):
        target = poses[d + 180]
        base = float(d)
        for y in range(-180, 180):
            got = compute_error(target, poses[y + 180]).e_yaw
            cands = base - y + ks
            want = cands[np.argmin(np.abs(cands))]
            if got != want:
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 1.0
    report(1, ok, f"360x360 yaw pairs, {mismatches} mismatches, {elapsed:.2f} s (< 1 s)")


def test_c2_controller_convergence():
    t0 = time.perf_counter()
    resp = step_response(offset_m=1.0, duration=10.0)
    elapsed = time.perf_counter() - t0
    ok = (
        resp.final_error < 0.05
        and resp.settle_t is not None
        and resp.settle_t <= 10.0
        and resp.overshoot_frac < 0.30
        and elapsed < 1.0
    )
    report(2, ok, (
        f"1 m step: settled at {resp.settle_t:.2f} s, final error "
        f"{resp.final_error * 100:.2f} cm (< 5), overshoot {resp.overshoot_frac:.1%} (< 30%), "
        f"runtime {elapsed:.2f} s (< 1 s)"
    ))


def test_c3_rotation_equivariance():
    waypoints = [(1.0, 0.5, 0.3), (0.5, -0.5, 0.0), (0.0, 0.0, 0.2)]
    base = equivariance_commands(0.0, waypoints)
    worst = 0.0
    for yaw in (45.0, 90.0):
        run = equivariance_commands(yaw, waypoints)
        assert len(run) == len(base)
        for b0, b in zip(base, run):
            ex, ey = world_to_body(yaw, (b0.vx, b0.vy))
            worst = max(worst, abs(b.vx - ex), abs(b.vy - ey),
                        abs(b.vz - b0.vz), abs(b.yaw_rate - b0.yaw_rate))
    ok = worst < 1e-6
    report(3, ok, f"yaw 0/45/90 body commands equal up to R(yaw): worst dev {worst:.2e} (< 1e-6)")


@pytest.fixture(scope="module")
def table_i_bench():
    cfg = load_config(CONFIGS / "table-i.cfg")
    return bench_latency(cfg, probes=10_000, seed=42)


def test_c4_table_i_reproduction(table_i_bench):
    rows, _ = table_i_bench
    wired, fwd, wireless = rows[0][2], rows[1][2], rows[2][2]
    ok_wired = abs(wired.mean_ms - 0.89) / 0.89 <= 0.10
    ok_fwd = 0.02 <= fwd.mean_ms <= 0.10
    ok_wireless = abs(wireless.mean_ms - 25.9) / 25.9 <= 0.05 and wireless.min_ms >= 4.14
    ok = ok_wired and ok_fwd and ok_wireless
    report(4, ok, (
        f"10^4 probes: wired mean {wired.mean_ms:.3f} ms (0.89 +/-10%), "
        f"forward {fwd.mean_ms:.3f} ms ([0.02, 0.1]), "
        f"wireless mean {wireless.mean_ms:.3f} ms (25.9 +/-5%) min {wireless.min_ms:.2f} (>= 4.14)"
    ))


def test_c5_end_to_end_command_latency(table_i_bench):
    _, e2e = table_i_bench
    ok = e2e.mean_ms < 27.0
    report(5, ok, f"one-way fleet->drone mean {e2e.mean_ms:.3f} ms (< 27)")


def test_c6_success_rate_gap():
    cfg = load_config(CONFIGS / "slam-compare.cfg")
    t0 = time.perf_counter()
    reports = run_success_experiment(cfg, trials=100, seed=1)
    elapsed = time.perf_counter() - t0
    by_mode = {r.mode: r for r in reports}
    mle, map_ = by_mode["mle"], by_mode["map"]
    print("\n" + format_success_table(reports), end="")
    ok = (
        mle.success_rate >= 0.95
        and map_.success_rate <= 0.30
        and mle.per_trial_ape
        and mle.mean_ape_m <= 0.06
        and elapsed < 300.0
    )
    report(6, ok, (
        f"100 outage trials: MLE {mle.success_rate:.0%} (>= 95%), "
        f"MAP {map_.success_rate:.0%} (<= 30%), MLE APE {mle.mean_ape_m * 100:.2f} cm (<= 6), "
        f"runtime {elapsed:.0f} s (< 300)"
    ))


def test_c7_fix_rate_cap():
    frames = [((i + 1) / 30.0, i + 1, Pose4(0, 0, 1, 0, (i + 1) / 30.0)) for i in range(900)]
    rate = run_localizer_rate(frames, OracleNoise(), cap_hz=10.8, seed=7)
    ok = 10.0 <= rate <= 11.0
    report(7, ok, f"30 fps in, 10.8 Hz cap: measured {rate:.2f} Hz (in [10.0, 11.0])")


def test_c8_video_bandwidth():
    cfg = load_config(CONFIGS / "ntu-mission.cfg")
    mbps = video_bitrate_mbps(cfg, duration=20.0)
    ok = abs(mbps - 2.876) / 2.876 <= 0.05
    report(8, ok, f"default frame sizing: {mbps:.4f} Mbps (2.876 +/-5%)")


def test_c9_determinism_byte_identical(tmp_path):
    cfg = tmp_path / "fast.cfg"
    cfg.write_text(
        "drones: {count: 1}\n"
        "mission: {letters: [T], spacing: 0.25, dwell: 0.2}\n"
        "duration_s: 60.0\n"
    )
    pairs = []
    for name in ("a", "b"):
        sim_out = tmp_path / f"sim-{name}"
        assert cli_main(["sim", "run", "--config", str(cfg), "--seed", "5",
                         "--out", str(sim_out)]) == 0
        lat_out = tmp_path / f"lat-{name}"
        assert cli_main(["bench", "latency", "--config", str(CONFIGS / "table-i.cfg"),
                         "--probes", "2000", "--seed", "5", "--out", str(lat_out)]) == 0
        slam_out = tmp_path / f"slam-{name}"
        assert cli_main(["bench", "slam-compare", "--config", str(cfg), "--trials", "2",
                         "--seed", "5", "--out", str(slam_out)]) == 0
        pairs.append((sim_out, lat_out, slam_out))
    same = True
    for rel, idx in (("report.txt", 0), ("events.log", 0),
                     ("trajectories/drone0.est.txt", 0), ("report.txt", 1),
                     ("report.txt", 2), ("report.json", 2)):
        a = (pairs[0][idx] / rel).read_bytes()
        b = (pairs[1][idx] / rel).read_bytes()
        same = same and a == b
    report(9, same, "sim run + bench latency + bench slam-compare: byte-identical reports per seed")


def test_c10_protocol_roundtrip_100k_per_type():
    rng = random.Random(99)
    n = 100_000
    failures = 0

    verbs = [protocol.Enter(), protocol.Takeoff(), protocol.Land(),
             protocol.Emergency(), protocol.QueryBattery()]
    for i in range(n):
        if i % 3 == 0:
            msg = verbs[rng.randrange(5)]
        else:
            msg = protocol.Rc(rng.randint(-100, 100), rng.randint(-100, 100),
                              rng.randint(-100, 100), rng.randint(-100, 100))
        if protocol.parse_command(protocol.encode_command(msg)) != msg:
            failures += 1

    for _ in range(n):
        msg = protocol.TelemetryMsg(
            pitch=rng.randint(-89, 89), roll=rng.randint(-89, 89), yaw=rng.randint(-180, 179),
            vgx=rng.randint(-99, 99), vgy=rng.randint(-99, 99), vgz=rng.randint(-99, 99),
            bat=rng.randint(0, 100), h=rng.randint(0, 3000), seq=rng.randrange(1 << 20),
        )
        if protocol.parse_telemetry(protocol.encode_telemetry(msg)) != msg:
            failures += 1

    for _ in range(n):
        stub = protocol.FrameStub(
            rng.randrange(1 << 32), rng.randrange(1 << 48),
            rng.randbytes(rng.randrange(0, 256)),
        )
        if protocol.parse_frame(protocol.encode_frame(stub)) != stub:
            failures += 1

    report(10, failures == 0, f"3 x 10^5 encode/parse round trips, {failures} failures")


def test_c11_safety_properties():
    from miniswarm.fleet import (
        ControlConfig, DroneSession, FixEvent, OperatorEvent, ReplyEvent, SafetyConfig,
        SendRc, SessionFsm, TelemetryEvent, TickEvent, session_step,
    )
    from miniswarm.localization import PoseFix

    safety, ctrl_cfg = SafetyConfig(), ControlConfig()
    rng = np.random.default_rng(2024)
    rc_violations = 0
    threshold_misses = 0
    for _ in range(1000):
        s = DroneSession(0, "10.0.0.11")
        t = 0.0
        for _ in range(40):
            t += float(rng.uniform(0.02, 0.5))
            roll = rng.random()
            if roll < 0.3:
                bat = int(rng.integers(5, 100))
                ev = TelemetryEvent(protocol.TelemetryMsg(bat=bat, seq=1), t)
            elif roll < 0.5:
                pose = Pose4(float(rng.uniform(-1, 1)), 0, 1, 0, t)
                ev = FixEvent(PoseFix(0, pose, 1, t, True), t)
            elif roll < 0.62:
                ev = ReplyEvent(b"ok" if rng.random() < 0.8 else b"error", t)
            elif roll < 0.75:
                ev = OperatorEvent(str(rng.choice(
                    ["connect", "takeoff", "land", "estop", "reset"])), t)
            else:
                ev = TickEvent(t, 0.05)
            was_flying = s.fsm == SessionFsm.FLYING
            _, actions = session_step(s, ev, safety, ctrl_cfg)
            if any(isinstance(a, SendRc) for a in actions) and not was_flying:
                rc_violations += 1
            # threshold triggers, same event:
            if was_flying and isinstance(ev, TelemetryEvent) and ev.msg.bat < safety.batt_land_pct:
                if s.fsm != SessionFsm.LANDING:
                    threshold_misses += 1
            if was_flying and isinstance(ev, TickEvent):
                gap_t = t - s.last_telemetry_t
                gap_f = t - s.latest_fix_t
                if (gap_t > safety.t_link_lost or gap_f > safety.t_link_lost) and s.fsm not in (
                    SessionFsm.FAILSAFE, SessionFsm.LANDING,
                ):
                    threshold_misses += 1
    ok = rc_violations == 0 and threshold_misses == 0
    report(11, ok, (
        f"1000 random event schedules: {rc_violations} rc datagrams outside FLYING, "
        f"{threshold_misses} threshold transitions missed"
    ))
