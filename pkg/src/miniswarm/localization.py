"""Localization oracles: stateless per-frame relocalization vs sequential estimation.

The visual pipeline is abstracted to a noise oracle gated on frame delivery,
which preserves the two properties the benchmarks exercise: the snapshot
(MLE) path depends only on the current frame and the shared prior map, while
the sequential (MAP) path fuses odometry prediction with fixes and therefore
inherits drift, loss-of-tracking, and re-association failure modes.

Per-frame randomness is keyed by (seed, drone, frame_id), so a fix never
depends on how frame events interleave across drones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .state import BodyVelocityCmd, Pose4, normalize_yaw
from .control import world_to_body
from .endpoint import replace_pose

__all__ = [
    "PoseFix",
    "OracleNoise",
    "MapStatus",
    "MapEstimatorParams",
    "MapEstimatorState",
    "mle_fix",
    "map_step",
    "Relocalizer",
    "SequentialMapLocalizer",
    "run_localizer_rate",
]

DEFAULT_RATE_CAP_HZ = 10.8


@dataclass(frozen=True, slots=True)
class PoseFix:
    """One localization result; pose fields are meaningless when valid is False."""

    drone_id: int
    pose: Pose4
    frame_id: int
    fix_t: float
    valid: bool = True


@dataclass(frozen=True)
class OracleNoise:
    sigma_pos: float = 0.02  # m, per axis
    sigma_yaw: float = 1.0  # deg
    p_fail: float = 0.02
    proc_latency_ms: float = 92.6  # mean per-frame processing delay

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_yaw < 0:
            raise ValueError("sigmas must be >= 0")
        if not 0.0 <= self.p_fail <= 1.0:
            raise ValueError("p_fail must be a probability")


def _frame_rng(seed: int, drone_id: int, frame_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, drone_id, frame_id))))


def mle_fix(
    ground_truth: Pose4,
    arrival_t: float,
    frame_id: int,
    drone_id: int,
    noise: OracleNoise,
    seed: int,
) -> PoseFix | None:
    """Independent per-frame relocalization against the prior map.

    Succeeds with probability 1 - p_fail; the estimate is the ground truth
    at capture time plus Gaussian noise. Output is a pure function of this
    frame's inputs and the keyed random draw.
    """
    rng = _frame_rng(seed, drone_id, frame_id)
    failed = rng.random() < noise.p_fail
    dx, dy, dz = noise.sigma_pos * rng.standard_normal(3)
    dyaw = noise.sigma_yaw * rng.standard_normal()
    latency = noise.proc_latency_ms * 1e-3 * rng.uniform(0.5, 1.5)
    if failed:
        return None
    est = Pose4(
        ground_truth.x + dx,
        ground_truth.y + dy,
        ground_truth.z + dz,
        normalize_yaw(ground_truth.yaw + dyaw),
        ground_truth.t,
    )
    return PoseFix(drone_id, est, frame_id, arrival_t + latency, True)


class Relocalizer:
    """Rate-capped snapshot localizer for one drone's frame stream.

    The cap models compute-bound relocalization: fixes are attempted no
    faster than cap_hz no matter how fast frames arrive. Skipped frames
    consume nothing; failed attempts consume a processing slot.
    """

    def __init__(self, drone_id: int, noise: OracleNoise = OracleNoise(),
                 cap_hz: float = DEFAULT_RATE_CAP_HZ, seed: int = 0):
        if cap_hz <= 0:
            raise ValueError("cap_hz must be > 0")
        self.drone_id = drone_id
        self.noise = noise
        self.cap_hz = cap_hz
        self.seed = seed
        # bucket depth 1.5 keeps the fractional credit between frame-quantized
        # attempts (long-run rate == cap) while limiting post-gap catch-up
        self._credits = 1.0
        self._last_t = 0.0
        self.attempts = 0
        self.fixes = 0

    def process_frame(self, truth: Pose4, arrival_t: float, frame_id: int) -> PoseFix | None:
        self._credits = min(1.5, self._credits + (arrival_t - self._last_t) * self.cap_hz)
        self._last_t = arrival_t
        if self._credits < 1.0:
            return None  # compute-bound: frame skipped
        self._credits -= 1.0
        self.attempts += 1
        fix = mle_fix(truth, arrival_t, frame_id, self.drone_id, self.noise, self.seed)
        if fix is None:
            # attempt consumed the slot but produced nothing usable
            return PoseFix(self.drone_id, Pose4(0, 0, 0, 0, truth.t), frame_id, arrival_t, False)
        self.fixes += 1
        return fix


def run_localizer_rate(
    frames: list[tuple[float, int, Pose4]],
    noise: OracleNoise = OracleNoise(),
    cap_hz: float = DEFAULT_RATE_CAP_HZ,
    seed: int = 0,
) -> float:
    """Achieved valid-fix rate (Hz) over a frame arrival stream of >= 1 s."""
    if not frames:
        return 0.0
    duration = frames[-1][0] - frames[0][0]
    if duration < 1.0:
        raise ValueError("need at least one second of frames")
    loc = Relocalizer(0, noise, cap_hz, seed)
    loc._last_t = frames[0][0]
    n = 0
    for arrival_t, frame_id, truth in frames:
        fix = loc.process_frame(truth, arrival_t, frame_id)
        if fix is not None and fix.valid:
            n += 1
    return n / duration


# --- sequential (MAP-style) estimator ---------------------------------------


class MapStatus(enum.Enum):
    TRACKING = "TRACKING"
    LOST = "LOST"
    FAILED_GLOBAL = "FAILED_GLOBAL"


@dataclass(frozen=True)
class MapEstimatorParams:
    lam: float = 0.8  # complementary blend gain toward a fix
    t_lost: float = 1.0  # s without a fix before tracking is declared lost
    p_reassoc_fail: float = 0.3  # chance a re-association attempt fails for good
    bias_rw_sigma: float = 0.01  # m/s per sqrt(s) odometry bias random walk
    odom_sigma: float = 0.005  # m/s white noise a caller typically adds to odometry

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must be in (0, 1]")
        if not 0.0 <= self.p_reassoc_fail <= 1.0:
            raise ValueError("p_reassoc_fail must be a probability")


@dataclass(frozen=True)
class MapEstimatorState:
    est_pose: Pose4
    est_vel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    last_fix_t: float = 0.0
    status: MapStatus = MapStatus.TRACKING
    odom_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)


def map_step(
    state: MapEstimatorState,
    dt: float,
    odom: BodyVelocityCmd,
    fix: PoseFix | None,
    params: MapEstimatorParams,
    rng: np.random.Generator,
    now: float,
) -> MapEstimatorState:
    """One predict/update cycle of the sequential estimator.

    Prediction dead-reckons (odom + bias) with the bias random-walking.
    A fix while TRACKING blends in with gain lam; losing fixes for t_lost
    drops to LOST; a fix while LOST re-associates, failing permanently
    (FAILED_GLOBAL, absorbing) with probability p_reassoc_fail.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")

    bias = state.odom_bias
    if params.bias_rw_sigma > 0:
        step = params.bias_rw_sigma * np.sqrt(dt) * rng.standard_normal(3)
        bias = (bias[0] + step[0], bias[1] + step[1], bias[2] + step[2])

    vx = odom.vx + bias[0]
    vy = odom.vy + bias[1]
    vz = odom.vz + bias[2]
    wx, wy = world_to_body(-state.est_pose.yaw, (vx, vy))
    pose = Pose4(
        state.est_pose.x + wx * dt,
        state.est_pose.y + wy * dt,
        state.est_pose.z + vz * dt,
        normalize_yaw(state.est_pose.yaw + odom.yaw_rate * dt),
        now,
    )
    vel = (wx, wy, vz)
    status = state.status
    last_fix_t = state.last_fix_t

    if status == MapStatus.FAILED_GLOBAL:
        return MapEstimatorState(pose, vel, last_fix_t, status, bias)

    if fix is not None and fix.valid:
        if status == MapStatus.LOST:
            if rng.random() < params.p_reassoc_fail:
                return MapEstimatorState(pose, vel, last_fix_t, MapStatus.FAILED_GLOBAL, bias)
            pose = replace_pose(fix.pose, t=now)  # snap back onto the map frame
            return MapEstimatorState(pose, vel, now, MapStatus.TRACKING, bias)
        lam = params.lam
        pose = Pose4(
            pose.x + lam * (fix.pose.x - pose.x),
            pose.y + lam * (fix.pose.y - pose.y),
            pose.z + lam * (fix.pose.z - pose.z),
            normalize_yaw(pose.yaw + lam * _wrap(fix.pose.yaw - pose.yaw)),
            now,
        )
        return MapEstimatorState(pose, vel, now, MapStatus.TRACKING, bias)

    if status == MapStatus.TRACKING and now - last_fix_t > params.t_lost:
        status = MapStatus.LOST
    return MapEstimatorState(pose, vel, last_fix_t, status, bias)


def _wrap(d: float) -> float:
    return (d + 180.0) % 360.0 - 180.0


class SequentialMapLocalizer:
    """Per-drone wrapper owning estimator state, its RNG, and odometry noising."""

    def __init__(self, drone_id: int, start_pose: Pose4,
                 params: MapEstimatorParams = MapEstimatorParams(), seed: int = 0):
        self.drone_id = drone_id
        self.params = params
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, drone_id, 1 << 20))))
        self.state = MapEstimatorState(est_pose=start_pose)
        self.failed_ever = False

    def step(self, dt: float, true_body_vel: BodyVelocityCmd, fix: PoseFix | None, now: float) -> Pose4:
        noisy = BodyVelocityCmd(
            true_body_vel.vx + self.params.odom_sigma * self.rng.standard_normal(),
            true_body_vel.vy + self.params.odom_sigma * self.rng.standard_normal(),
            true_body_vel.vz + self.params.odom_sigma * self.rng.standard_normal(),
            true_body_vel.yaw_rate,
        )
        self.state = map_step(self.state, dt, noisy, fix, self.params, self.rng, now)
        if self.state.status == MapStatus.FAILED_GLOBAL:
            self.failed_ever = True
        return self.state.est_pose
