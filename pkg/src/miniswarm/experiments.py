"""Benchmark harnesses: step response, rotation equivariance, latency tables,
video bitrate, and the snapshot-vs-sequential localization success experiment.

Every harness is seeded and deterministic: the same (config, trials, seed)
reproduces reports bit-for-bit. Trials are independent, each owning a
private fabric and clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import FleetConfig
from .control import (
    ControllerState,
    DEFAULT_FILTER,
    DEFAULT_GAINS,
    DEFAULT_LIMITS,
    RcCommand,
    pd_control,
    saturate_to_rc,
    step_controller_full,
    world_to_body,
)
from .endpoint import PlantParams
from .fabric import DRONE_HOST, FLEET_HOST, LinkProfile, build_fabric
from .metrics import ApeReport, LatencyReport, SuccessReport, associate, compute_ape, latency_stats
from .sim import SwarmSimulation
from .state import BodyVelocityCmd, Pose4

__all__ = [
    "StepResponse",
    "step_response",
    "equivariance_commands",
    "bench_latency",
    "video_bitrate_mbps",
    "run_success_experiment",
    "trial_seed",
]


# --- controller step response -------------------------------------------------


@dataclass(frozen=True)
class StepResponse:
    times: np.ndarray
    positions: np.ndarray  # x(t) toward a 1 m target
    overshoot_frac: float
    settle_t: float | None  # first time |error| stays < tolerance
    final_error: float


def step_response(
    offset_m: float = 1.0,
    duration: float = 10.0,
    gains=DEFAULT_GAINS,
    coeffs=DEFAULT_FILTER,
    limits=DEFAULT_LIMITS,
    plant: PlantParams = PlantParams(),
    ctrl_hz: float = 20.0,
    physics_hz: float = 100.0,
    settle_tol_m: float = 0.05,
) -> StepResponse:
    """Single-drone step response through the full wire path (rc-quantized).

    The plant is the standard first-order lag; measurement is perfect, so
    this isolates the controller/plant pair from localization effects.
    """
    dt_p = 1.0 / physics_hz
    per_ctrl = max(1, round(physics_hz / ctrl_hz))
    dt_c = dt_p * per_ctrl
    target = Pose4(offset_m, 0, 0, 0)
    pose = Pose4(0, 0, 0, 0)
    vel = 0.0
    ctrl = ControllerState()
    rc = RcCommand()
    times, xs = [0.0], [0.0]
    n = int(duration * physics_hz)
    for k in range(1, n + 1):
        t = k * dt_p
        if (k - 1) % per_ctrl == 0:
            ctrl, _, rc = step_controller_full(ctrl, pose, target, dt_c, gains, coeffs, limits)
        u = rc.b / 100.0 * plant.v_scale
        vel += dt_p * (u - vel) / plant.tau_v
        pose = Pose4(pose.x + vel * dt_p, 0, 0, 0, t)
        times.append(t)
        xs.append(pose.x)
    xs = np.asarray(xs)
    times = np.asarray(times)
    overshoot = max(0.0, float(xs.max() - offset_m)) / offset_m
    err = np.abs(xs - offset_m)
    settle_t = None
    beyond = np.nonzero(err >= settle_tol_m)[0]
    if err[-1] < settle_tol_m:
        settle_t = 0.0 if len(beyond) == 0 else float(times[beyond[-1] + 1])
    return StepResponse(times, xs, overshoot, settle_t, float(err[-1]))


# --- rotation equivariance ------------------------------------------------------


def equivariance_commands(
    yaw_deg: float,
    waypoints_rel: list[tuple[float, float, float]],
    duration: float = 8.0,
    gains=DEFAULT_GAINS,
    coeffs=DEFAULT_FILTER,
    plant: PlantParams = PlantParams(),
    ctrl_hz: float = 20.0,
    arrival_radius: float = 0.08,
) -> list[BodyVelocityCmd]:
    """Fly a relative mission at a fixed heading; returns pre-saturation commands.

    The plant consumes the continuous body command directly (no integer
    quantization) because axis-aligned rounding is not rotation-equivariant;
    this is the rotation contract of the controller itself.
    """
    dt = 1.0 / ctrl_hz
    pose = Pose4(0, 0, 1, yaw_deg)
    vel = BodyVelocityCmd()
    ctrl = ControllerState()
    wp_index = 0
    out: list[BodyVelocityCmd] = []
    n = int(duration * ctrl_hz)
    for k in range(1, n + 1):
        dx, dy, dz = waypoints_rel[wp_index]
        target = Pose4(dx, dy, 1 + dz, yaw_deg)
        err = math.dist((pose.x, pose.y, pose.z), (target.x, target.y, target.z))
        if err < arrival_radius and wp_index + 1 < len(waypoints_rel):
            wp_index += 1
            dx, dy, dz = waypoints_rel[wp_index]
            target = Pose4(dx, dy, 1 + dz, yaw_deg)
        ctrl, body, _ = step_controller_full(ctrl, pose, target, dt, gains, coeffs)
        out.append(body)
        vel = BodyVelocityCmd(
            vel.vx + dt * (body.vx - vel.vx) / plant.tau_v,
            vel.vy + dt * (body.vy - vel.vy) / plant.tau_v,
            vel.vz + dt * (body.vz - vel.vz) / plant.tau_v,
            0.0,
        )
        wx, wy = world_to_body(-pose.yaw, (vel.vx, vel.vy))
        pose = Pose4(pose.x + wx * dt, pose.y + wy * dt, pose.z + vel.vz * dt, yaw_deg, k * dt)
    return out


# --- latency bench ----------------------------------------------------------------


def bench_latency(
    config: FleetConfig, probes: int = 10_000, seed: int | None = None, spacing_s: float = 0.1
) -> tuple[list[tuple[str, str, LatencyReport]], LatencyReport]:
    """One-way per-hop and end-to-end latency over the calibrated path.

    Returns rows shaped like the calibration table (wired, forwarding,
    wireless) plus the end-to-end fleet->drone report. Probes are spaced
    wider than the worst-case jitter so FIFO ordering cannot bias samples.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    wired, wireless, fwd = config.link_profiles(horizon=0.0)  # no outages during probing
    wired = LinkProfile(wired.delay_min_ms, wired.delay_mean_ms, wired.delay_max_ms,
                        wired.jitter_shape, wired.loss_prob)
    wireless = LinkProfile(wireless.delay_min_ms, wireless.delay_mean_ms, wireless.delay_max_ms,
                           wireless.jitter_shape, wireless.loss_prob)
    fabric = build_fabric(1, wired, wireless, seed=config.seed if seed is None else seed,
                          forward_latency_ms=fwd)
    fabric.attach("net0", DRONE_HOST, None)
    records = fabric.probe_one_way(
        f"fleet:{FLEET_HOST}", ("10.0.0.11", 9), count=probes, spacing_s=spacing_s
    )
    per_hop: dict[str, list[float]] = {"wired": [], "forward": [], "wireless": []}
    total = []
    for _, _, _, hops in records:
        for link_id, t_in, t_out in hops:
            name = "forward" if link_id == "forward" else ("wired" if link_id.startswith("wired") else "wireless")
            per_hop[name].append((t_out - t_in) * 1e3)
        total.append((hops[-1][2] - hops[0][1]) * 1e3)
    rows = [
        ("Fleet <-> Relay Link", "UDP/Ethernet", latency_stats(per_hop["wired"])),
        ("Relay Forwarding", "Address rewrite", latency_stats(per_hop["forward"])),
        ("Relay <-> Drone Link", "UDP/Wi-Fi", latency_stats(per_hop["wireless"])),
    ]
    return rows, latency_stats(total)


# --- video bitrate -------------------------------------------------------------------


def video_bitrate_mbps(config: FleetConfig, duration: float = 20.0) -> float:
    """Long-run delivered video payload bitrate for one drone, no impairment."""
    from .endpoint import DroneEndpoint
    from . import protocol

    fabric = build_fabric(1, LinkProfile.fixed(0.5), LinkProfile.fixed(5.0), seed=config.seed)
    ep = DroneEndpoint(fabric, 0, params=config.plant_params(), video=config.video_config())
    payload_bytes = 0

    def count(t, src, dst, payload):
        nonlocal payload_bytes
        if dst[1] == protocol.VIDEO_PORT:
            payload_bytes += len(payload) - 20  # fragment header excluded

    fabric.set_handler(f"fleet:{FLEET_HOST}", count)
    ep.start()
    # margin covers transit of the frame captured at `duration` but not the next capture
    fabric.run_until(duration + 0.02)
    return payload_bytes * 8.0 / duration / 1e6


# --- success experiment -----------------------------------------------------------------


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence((seed, trial)).generate_state(1)[0])


def run_success_experiment(
    config: FleetConfig,
    trials: int,
    seed: int | None = None,
    modes: tuple[str, ...] = ("mle", "map"),
) -> list[SuccessReport]:
    """Repeated full missions under the scenario's impairment, per localization mode.

    success <=> the mission completes within the trial cap, every drone's
    max tracking error stays under the configured threshold, and the
    estimator never reaches FAILED_GLOBAL. APE statistics cover successful
    trials only (there is no meaningful trajectory to score in a failed one).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base_seed = config.seed if seed is None else seed
    threshold = float(config.experiment["success_error_m"])
    timeout = float(config.experiment["timeout_s"])
    reports = []
    for mode in modes:
        successes = 0
        apes: list[float] = []
        reasons: dict[str, int] = {}
        fix_rates: list[float] = []
        end_ts: list[float] = []
        for trial in range(trials):
            sim = SwarmSimulation(config, mode=mode, seed=trial_seed(base_seed, trial))
            res = sim.run(duration=timeout, fail_fast=True)
            ok = (
                res.mission_complete
                and not any(res.failed_global)
                and max(res.max_tracking_error) < threshold
            )
            end_ts.append(res.end_t)
            fix_rates.extend(res.fix_rates())
            if ok:
                successes += 1
                drone_rmse = []
                for est, ref in zip(res.est_tracks, res.ref_tracks):
                    if est and ref:
                        pair = associate(est, ref, tol_s=0.05)
                        drone_rmse.append(compute_ape(pair).rmse_m)
                if drone_rmse:
                    apes.append(float(np.mean(drone_rmse)))
            else:
                reason = res.failure_reason or "unknown"
                reasons[reason] = reasons.get(reason, 0) + 1
        reports.append(SuccessReport(
            mode=mode,
            trials=trials,
            successes=successes,
            per_trial_ape=tuple(apes),
            failure_reasons=reasons,
            mean_fix_rate_hz=float(np.mean(fix_rates)) if fix_rates else 0.0,
            mean_end_t=float(np.mean(end_ts)) if end_ts else 0.0,
        ))
    return reports
