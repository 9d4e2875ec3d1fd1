"""Position-based PD controller over body-frame velocity commands.

The pipeline per drone per control period is
compute_error -> filter_step -> pd_control -> saturate_to_rc. Everything is
a pure function of an explicit ControllerState, so n controllers run
side-by-side without shared mutation.

Axis mapping to the wire (integer percent in [-100, 100]):

    field  direction           source
    a      rightward           -vy / v_max_xy * 100
    b      forward              vx / v_max_xy * 100
    c      upward               vz / v_max_z  * 100
    d      clockwise yaw       -yaw_rate / w_max * 100

Yaw is positive counter-clockwise seen from above, hence the sign flips on
a and d. Rounding is half-away-from-zero so +/-0.5 percent becomes +/-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .state import BodyVelocityCmd, ErrorVector4, Pose4, normalize_yaw

__all__ = [
    "GainSet",
    "FilterCoeffs",
    "ControllerState",
    "RateLimits",
    "RcCommand",
    "compute_error",
    "filter_step",
    "world_to_body",
    "pd_control",
    "saturate_to_rc",
    "step_controller",
    "step_controller_full",
    "DEFAULT_GAINS",
    "DEFAULT_FILTER",
    "DEFAULT_LIMITS",
    "MIN_DT",
]

MIN_DT = 1e-4  # below this a finite difference is numerically meaningless

_ZERO4 = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True)
class GainSet:
    """Proportional and derivative gains, ordered (x, y, z, yaw)."""

    kp: tuple[float, float, float, float]
    kd: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.kp) != 4 or len(self.kd) != 4:
            raise ValueError("gains are 4-vectors (x, y, z, yaw)")
        if any(g < 0 for g in self.kp) or any(g < 0 for g in self.kd):
            raise ValueError("gains must be >= 0")


@dataclass(frozen=True, slots=True)
class FilterCoeffs:
    """First-order filter weights: new = alpha * old + beta * raw."""

    alpha: float = 0.7
    beta: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must be in [0, 1)")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must be in (0, 1]")
        if self.alpha + self.beta > 1.2:
            raise ValueError("alpha + beta > 1.2 amplifies noise; rejected")


@dataclass(frozen=True, slots=True)
class RateLimits:
    """Physical command limits used for wire saturation."""

    v_max_xy: float = 1.0
    v_max_z: float = 0.8
    w_max: float = 100.0

    def __post_init__(self):
        if self.v_max_xy <= 0 or self.v_max_z <= 0 or self.w_max <= 0:
            raise ValueError("limits must be > 0")


@dataclass(frozen=True, slots=True)
class ControllerState:
    """Explicit per-drone filter memory; zero until the first step initializes it."""

    prev_error: ErrorVector4 = ErrorVector4()
    filtered_deriv: tuple[float, float, float, float] = _ZERO4
    filtered_error: tuple[float, float, float, float] = _ZERO4
    last_t: float = 0.0
    initialized: bool = False


@dataclass(frozen=True, slots=True)
class RcCommand:
    """Saturated integer wire form of a body velocity command."""

    a: int = 0
    b: int = 0
    c: int = 0
    d: int = 0

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if not isinstance(v, int) or not -100 <= v <= 100:
                raise ValueError(f"rc field {name}={v!r} outside [-100, 100]")


DEFAULT_GAINS = GainSet(kp=(0.8, 0.8, 1.0, 1.0), kd=(0.3, 0.3, 0.2, 0.0))
DEFAULT_FILTER = FilterCoeffs(alpha=0.7, beta=0.3)
DEFAULT_LIMITS = RateLimits(v_max_xy=1.0, v_max_z=0.8, w_max=100.0)


def _wrap_deg(d: float) -> float:
    """Shortest signed representation of an angle difference in degrees."""
    return (d + 180.0) % 360.0 - 180.0


def compute_error(target: Pose4, pose: Pose4) -> ErrorVector4:
    """World-frame target-minus-pose errors with wrapped yaw.

    The yaw error is yaw_d - yaw + 360*k with k in {-1, 0, 1} chosen to
    minimize the magnitude, so |e_yaw| <= 180. The +/-180 tie resolves to
    -180, matching normalize_yaw's half-open range.
    """
    d = target.yaw - pose.yaw
    best = d - 360.0
    mag = abs(best)
    for cand in (d, d + 360.0):
        if abs(cand) < mag:
            best = cand
            mag = abs(cand)
    return ErrorVector4(target.x - pose.x, target.y - pose.y, target.z - pose.z, best)


def filter_step(
    state: ControllerState,
    raw_error: ErrorVector4,
    dt: float,
    coeffs: FilterCoeffs = DEFAULT_FILTER,
    filter_proportional: bool = False,
    prop_coeffs: FilterCoeffs | None = None,
) -> ControllerState:
    """Advance the derivative filter by one control period.

    The raw derivative is a backward difference of the error (yaw differenced
    on wrapped values). By default the proportional path passes the raw error
    through; with filter_proportional the error itself is low-passed with
    prop_coeffs (falling back to coeffs).
    """
    if dt < MIN_DT:
        raise ValueError(f"dt={dt} below minimum {MIN_DT}")

    raw = raw_error.as_row()
    if not state.initialized:
        return ControllerState(
            prev_error=raw_error,
            filtered_deriv=_ZERO4,
            filtered_error=raw,
            last_t=state.last_t + dt,
            initialized=True,
        )

    prev = state.prev_error.as_row()
    rd0 = (raw[0] - prev[0]) / dt
    rd1 = (raw[1] - prev[1]) / dt
    rd2 = (raw[2] - prev[2]) / dt
    rd3 = _wrap_deg(raw[3] - prev[3]) / dt
    a, b = coeffs.alpha, coeffs.beta
    fd = state.filtered_deriv
    deriv = (a * fd[0] + b * rd0, a * fd[1] + b * rd1, a * fd[2] + b * rd2, a * fd[3] + b * rd3)

    if filter_proportional:
        pc = prop_coeffs or coeffs
        fe = state.filtered_error
        err = (
            pc.alpha * fe[0] + pc.beta * raw[0],
            pc.alpha * fe[1] + pc.beta * raw[1],
            pc.alpha * fe[2] + pc.beta * raw[2],
            pc.alpha * fe[3] + pc.beta * raw[3],
        )
    else:
        err = raw

    return ControllerState(
        prev_error=raw_error,
        filtered_deriv=deriv,
        filtered_error=err,
        last_t=state.last_t + dt,
        initialized=True,
    )


def world_to_body(yaw: float, vec_xy: tuple[float, float]) -> tuple[float, float]:
    """Rotate a world-frame xy vector into the body frame of a drone at `yaw` deg.

    R = [[cos, sin], [-sin, cos]]; norm-preserving.
    """
    r = math.radians(yaw)
    c, s = math.cos(r), math.sin(r)
    x, y = vec_xy
    return (c * x + s * y, -s * x + c * y)


def pd_control(ctrl: ControllerState, yaw: float, gains: GainSet = DEFAULT_GAINS) -> BodyVelocityCmd:
    """PD law on the filtered state, rotated into the body frame.

    The xy block goes through world_to_body; z and yaw pass straight through.
    """
    e = ctrl.filtered_error
    de = ctrl.filtered_deriv
    kp, kd = gains.kp, gains.kd
    ux = kp[0] * e[0] + kd[0] * de[0]
    uy = kp[1] * e[1] + kd[1] * de[1]
    uz = kp[2] * e[2] + kd[2] * de[2]
    uw = kp[3] * e[3] + kd[3] * de[3]
    bx, by = world_to_body(yaw, (ux, uy))
    return BodyVelocityCmd(bx, by, uz, uw)


def _round_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _clamp100(v: int) -> int:
    return -100 if v < -100 else (100 if v > 100 else v)


def saturate_to_rc(cmd: BodyVelocityCmd, limits: RateLimits = DEFAULT_LIMITS) -> RcCommand:
    """Scale a continuous command onto the integer wire range (see axis table)."""
    for v in cmd.as_row():
        if not math.isfinite(v):
            raise ValueError("cannot saturate a non-finite command")
    return RcCommand(
        a=_clamp100(_round_away(-cmd.vy / limits.v_max_xy * 100.0)),
        b=_clamp100(_round_away(cmd.vx / limits.v_max_xy * 100.0)),
        c=_clamp100(_round_away(cmd.vz / limits.v_max_z * 100.0)),
        d=_clamp100(_round_away(-cmd.yaw_rate / limits.w_max * 100.0)),
    )


def step_controller_full(
    ctrl: ControllerState,
    pose: Pose4,
    target: Pose4,
    dt: float,
    gains: GainSet = DEFAULT_GAINS,
    coeffs: FilterCoeffs = DEFAULT_FILTER,
    limits: RateLimits = DEFAULT_LIMITS,
    filter_proportional: bool = False,
    prop_coeffs: FilterCoeffs | None = None,
) -> tuple[ControllerState, BodyVelocityCmd, RcCommand]:
    """One full control period; also returns the pre-saturation command."""
    err = compute_error(target, pose)
    ctrl = filter_step(ctrl, err, dt, coeffs, filter_proportional, prop_coeffs)
    body = pd_control(ctrl, pose.yaw, gains)
    return ctrl, body, saturate_to_rc(body, limits)


def step_controller(
    ctrl: ControllerState,
    pose: Pose4,
    target: Pose4,
    dt: float,
    gains: GainSet = DEFAULT_GAINS,
    coeffs: FilterCoeffs = DEFAULT_FILTER,
    limits: RateLimits = DEFAULT_LIMITS,
    filter_proportional: bool = False,
    prop_coeffs: FilterCoeffs | None = None,
) -> tuple[ControllerState, RcCommand]:
    """compute_error -> filter_step -> pd_control -> saturate_to_rc."""
    ctrl, _, rc = step_controller_full(
        ctrl, pose, target, dt, gains, coeffs, limits, filter_proportional, prop_coeffs
    )
    return ctrl, rc


def reset_controller(ctrl: ControllerState) -> ControllerState:
    """Drop filter memory so the next step behaves like a first step."""
    return replace(ctrl, initialized=False, filtered_deriv=_ZERO4, filtered_error=_ZERO4)
