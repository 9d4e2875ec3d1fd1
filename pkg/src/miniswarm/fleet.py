"""Central fleet coordinator: per-drone session FSMs, safety, and missions.

Sessions are logically independent state machines advanced by events
(telemetry, localization fixes, command replies, operator commands, and the
shared 20 Hz tick). Rc datagrams are emitted exclusively from the FLYING
tick branch, which makes the no-rc-outside-FLYING property structural.

Safety layering, tightest first:
  fix older than t_fix_stale  -> hold position (zero-error target, rc ~ 0)
  telemetry or fix gap beyond t_link_lost -> FAILSAFE (no rc at all; the
      plant's own rc timeout hovers it), recovering to FLYING if the link
      returns within hover_before_land, else landing
  battery below batt_land_pct -> land
  operator e-stop -> EMERGENCY, absorbing until reset
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from . import protocol
from .control import (
    ControllerState,
    DEFAULT_FILTER,
    DEFAULT_GAINS,
    DEFAULT_LIMITS,
    FilterCoeffs,
    GainSet,
    RateLimits,
    RcCommand,
    reset_controller,
    step_controller_full,
)
from .localization import (
    MapEstimatorParams,
    OracleNoise,
    PoseFix,
    Relocalizer,
    SequentialMapLocalizer,
)
from .state import BodyVelocityCmd, DroneHealth, Pose4

__all__ = [
    "SessionFsm",
    "SafetyConfig",
    "ControlConfig",
    "LocalizationConfig",
    "Geofence",
    "MissionPlan",
    "DroneSession",
    "plan_letter_trajectory",
    "session_step",
    "MissionRunner",
    "FleetManager",
    "TelemetryEvent",
    "FixEvent",
    "ReplyEvent",
    "OperatorEvent",
    "TickEvent",
    "SendCommand",
    "SendRc",
    "Alert",
    "Rejection",
    "LETTER_STROKES",
]


class SessionFsm(enum.Enum):
    IDLE = "IDLE"
    CONNECTING = "CONNECTING"
    READY = "READY"
    TAKING_OFF = "TAKING_OFF"
    FLYING = "FLYING"
    LANDING = "LANDING"
    LANDED = "LANDED"
    FAILSAFE = "FAILSAFE"
    EMERGENCY = "EMERGENCY"


@dataclass(frozen=True)
class SafetyConfig:
    batt_land_pct: float = 15.0
    t_link_lost: float = 2.0
    t_fix_stale: float = 0.5
    hover_before_land: float = 3.0
    retry_s: float = 1.0  # critical command re-send interval


@dataclass(frozen=True)
class ControlConfig:
    gains: GainSet = DEFAULT_GAINS
    coeffs: FilterCoeffs = DEFAULT_FILTER
    limits: RateLimits = DEFAULT_LIMITS
    rate_hz: float = 20.0
    filter_proportional: bool = False
    prop_coeffs: FilterCoeffs | None = None


@dataclass(frozen=True)
class LocalizationConfig:
    mode: str = "mle"  # "mle" | "map"
    noise: OracleNoise = OracleNoise()
    rate_cap_hz: float = 10.8
    map_params: MapEstimatorParams = MapEstimatorParams()

    def __post_init__(self):
        if self.mode not in ("mle", "map"):
            raise ValueError(f"unknown localization mode {self.mode!r}")


@dataclass(frozen=True)
class Geofence:
    min_xyz: tuple[float, float, float] = (-5.0, -5.0, 0.0)
    max_xyz: tuple[float, float, float] = (5.0, 5.0, 3.0)

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.min_xyz, self.max_xyz)):
            raise ValueError("geofence must have min < max per axis")

    def contains(self, pose: Pose4) -> bool:
        p = (pose.x, pose.y, pose.z)
        return all(lo <= v <= hi for v, lo, hi in zip(p, self.min_xyz, self.max_xyz))


# --- letter trajectories -----------------------------------------------------

# strokes in the unit square of a vertical plane: u along width, w along height
LETTER_STROKES: dict[str, tuple[tuple[tuple[float, float], tuple[float, float]], ...]] = {
    "N": (((0, 0), (0, 1)), ((0, 1), (1, 0)), ((1, 0), (1, 1))),
    "T": (((0, 1), (1, 1)), ((0.5, 1), (0.5, 0))),
    "U": (((0, 1), (0, 0)), ((0, 0), (1, 0)), ((1, 0), (1, 1))),
}


def plan_letter_trajectory(
    letter: str,
    origin: Pose4,
    width: float = 0.6,
    height: float = 1.0,
    spacing: float = 0.1,
) -> list[Pose4]:
    """Sample a letter's strokes every `spacing` meters in the x-z plane at the origin.

    Waypoints that exactly repeat an earlier one (stroke joints, shared
    corners) are emitted once. Yaw is held at the origin's yaw.
    """
    if width <= 0 or height <= 0 or spacing <= 0:
        raise ValueError("width, height, spacing must be > 0")
    strokes = LETTER_STROKES.get(letter.upper())
    if strokes is None:
        raise ValueError(f"unknown letter {letter!r}; have {sorted(LETTER_STROKES)}")

    waypoints: list[Pose4] = []
    seen: set[tuple[int, int]] = set()
    for (u0, w0), (u1, w1) in strokes:
        x0, z0 = u0 * width, w0 * height
        x1, z1 = u1 * width, w1 * height
        length = math.hypot(x1 - x0, z1 - z0)
        n = max(1, math.ceil(length / spacing - 1e-9))
        for i in range(n + 1):
            f = min(1.0, i / n)
            x, z = x0 + f * (x1 - x0), z0 + f * (z1 - z0)
            key = (round(x * 1e9), round(z * 1e9))
            if key in seen:
                continue
            seen.add(key)
            waypoints.append(Pose4(origin.x + x, origin.y, origin.z + z, origin.yaw))
    return waypoints


@dataclass
class MissionPlan:
    """Per-drone waypoint sequences plus the arrival rule."""

    waypoints: list[list[Pose4]]
    arrival_radius: float = 0.1
    dwell: float = 0.5
    name: str = "mission"

    def __post_init__(self):
        if not self.waypoints or any(not wps for wps in self.waypoints):
            raise ValueError("every drone needs a non-empty waypoint list")
        if self.arrival_radius <= 0 or self.dwell < 0:
            raise ValueError("arrival_radius must be > 0 and dwell >= 0")

    def check_geofence(self, fence: Geofence) -> None:
        for i, wps in enumerate(self.waypoints):
            for wp in wps:
                if not fence.contains(wp):
                    raise ValueError(f"drone {i} waypoint {wp.position()} outside geofence")


def ntu_mission_plan(
    n: int,
    letters: tuple[str, ...] = ("N", "T", "U"),
    base: Pose4 = Pose4(0.0, 0.0, 1.0, 0.0),
    width: float = 0.6,
    height: float = 1.0,
    spacing: float = 0.1,
    lateral_offset: float = 1.0,
    arrival_radius: float = 0.1,
    dwell: float = 0.5,
) -> MissionPlan:
    """Letters drawn side by side in one vertical plane, one drone per letter."""
    if n > len(letters):
        raise ValueError(f"{n} drones but only {len(letters)} letters")
    wps = []
    for i in range(n):
        origin = Pose4(base.x + i * lateral_offset, base.y, base.z, base.yaw)
        wps.append(plan_letter_trajectory(letters[i], origin, width, height, spacing))
    return MissionPlan(wps, arrival_radius, dwell, name="".join(letters[:n]).lower())


# --- session events and actions ----------------------------------------------


@dataclass(frozen=True)
class TelemetryEvent:
    msg: protocol.TelemetryMsg
    t: float


@dataclass(frozen=True)
class FixEvent:
    fix: PoseFix
    t: float


@dataclass(frozen=True)
class ReplyEvent:
    text: bytes
    t: float


@dataclass(frozen=True)
class OperatorEvent:
    cmd: str  # connect | takeoff | land | estop | reset
    t: float


@dataclass(frozen=True)
class TickEvent:
    t: float
    dt: float


@dataclass(frozen=True)
class SendCommand:
    msg: protocol.CommandMsg


@dataclass(frozen=True)
class SendRc:
    rc: RcCommand
    body: BodyVelocityCmd  # pre-saturation command, kept for analysis


@dataclass(frozen=True)
class Alert:
    text: str


@dataclass(frozen=True)
class Rejection:
    reason: str


@dataclass
class DroneSession:
    drone_id: int
    fleet_addr: str  # the relay's unique fleet-side host
    fsm: SessionFsm = SessionFsm.IDLE
    controller: ControllerState = field(default_factory=ControllerState)
    health: DroneHealth = field(default_factory=DroneHealth)
    current_target: Pose4 | None = None
    latest_pose: Pose4 | None = None  # newest usable estimate
    latest_fix_t: float = -1e9
    last_telemetry_t: float = -1e9
    failsafe_since: float = 0.0
    hold_position: bool = False
    _holding: bool = False
    _last_cmd_sent: float = -1e9
    _pending_verb: protocol.CommandMsg | None = None


def _enter_pending(session: DroneSession, fsm: SessionFsm, msg: protocol.CommandMsg, t: float) -> list:
    session.fsm = fsm
    session._pending_verb = msg
    session._last_cmd_sent = t
    return [SendCommand(msg)]


def _gaps_ok(session: DroneSession, safety: SafetyConfig, now: float) -> bool:
    return (
        now - session.last_telemetry_t <= safety.t_link_lost
        and now - session.latest_fix_t <= safety.t_link_lost
    )


def session_step(
    session: DroneSession,
    event,
    safety: SafetyConfig = SafetyConfig(),
    control: ControlConfig = ControlConfig(),
) -> tuple[DroneSession, list]:
    """Apply one event to a session; returns (session, actions).

    The session is mutated in place (one owner per drone); actions are
    SendCommand / SendRc / Alert / Rejection records for the caller to route.
    """
    fsm = session.fsm
    actions: list = []

    if isinstance(event, TelemetryEvent):
        session.last_telemetry_t = event.t
        session.health = DroneHealth(
            battery_pct=float(event.msg.bat), last_telemetry_t=event.t, link_up=True
        )
        if fsm == SessionFsm.FLYING and event.msg.bat < safety.batt_land_pct:
            actions.append(Alert(f"drone {session.drone_id}: battery {event.msg.bat}% low, landing"))
            actions += _enter_pending(session, SessionFsm.LANDING, protocol.Land(), event.t)
        elif fsm == SessionFsm.FAILSAFE and _gaps_ok(session, safety, event.t):
            session.fsm = SessionFsm.FLYING
            session.controller = reset_controller(session.controller)
            actions.append(Alert(f"drone {session.drone_id}: link restored, resuming"))
        return session, actions

    if isinstance(event, FixEvent):
        if event.fix.valid:
            session.latest_pose = event.fix.pose
            session.latest_fix_t = event.fix.fix_t
            if fsm == SessionFsm.FAILSAFE and _gaps_ok(session, safety, event.t):
                session.fsm = SessionFsm.FLYING
                session.controller = reset_controller(session.controller)
                actions.append(Alert(f"drone {session.drone_id}: localization restored, resuming"))
        return session, actions

    if isinstance(event, ReplyEvent):
        text = event.text
        if fsm == SessionFsm.CONNECTING and text == b"ok":
            session.fsm = SessionFsm.READY
            session._pending_verb = None
            actions.append(Alert(f"drone {session.drone_id}: connected"))
        elif fsm == SessionFsm.TAKING_OFF and text == b"ok":
            session.fsm = SessionFsm.FLYING
            session._pending_verb = None
            session.controller = reset_controller(session.controller)
            actions.append(Alert(f"drone {session.drone_id}: airborne"))
        elif fsm == SessionFsm.LANDING and text == b"ok":
            session.fsm = SessionFsm.LANDED
            session._pending_verb = None
            actions.append(Alert(f"drone {session.drone_id}: landed"))
        return session, actions

    if isinstance(event, OperatorEvent):
        cmd, t = event.cmd, event.t
        if cmd == "estop":
            session.fsm = SessionFsm.EMERGENCY
            session._pending_verb = None
            actions.append(SendCommand(protocol.Emergency()))
            actions.append(Alert(f"drone {session.drone_id}: EMERGENCY stop"))
        elif cmd == "reset":
            if fsm != SessionFsm.EMERGENCY:
                actions.append(Rejection(f"drone {session.drone_id} not in EMERGENCY"))
            else:
                session.fsm = SessionFsm.IDLE
                session.controller = ControllerState()
                actions.append(Alert(f"drone {session.drone_id}: reset to IDLE"))
        elif cmd == "connect":
            if fsm != SessionFsm.IDLE:
                actions.append(Rejection(f"drone {session.drone_id} already connected ({fsm.value})"))
            else:
                actions += _enter_pending(session, SessionFsm.CONNECTING, protocol.Enter(), t)
        elif cmd == "takeoff":
            if fsm != SessionFsm.READY:
                actions.append(Rejection(f"cannot take off from {fsm.value}"))
            else:
                actions += _enter_pending(session, SessionFsm.TAKING_OFF, protocol.Takeoff(), t)
        elif cmd == "land":
            if fsm not in (SessionFsm.FLYING, SessionFsm.FAILSAFE, SessionFsm.TAKING_OFF):
                actions.append(Rejection(f"cannot land from {fsm.value}"))
            else:
                actions += _enter_pending(session, SessionFsm.LANDING, protocol.Land(), t)
        else:
            actions.append(Rejection(f"unknown operator command {cmd!r}"))
        return session, actions

    if isinstance(event, TickEvent):
        now = event.t
        if fsm in (SessionFsm.CONNECTING, SessionFsm.TAKING_OFF, SessionFsm.LANDING):
            if session._pending_verb is not None and now - session._last_cmd_sent >= safety.retry_s:
                session._last_cmd_sent = now
                actions.append(SendCommand(session._pending_verb))
            return session, actions

        if fsm == SessionFsm.FLYING:
            if session.health.battery_pct < safety.batt_land_pct and session.last_telemetry_t > -1e9:
                actions.append(Alert(f"drone {session.drone_id}: battery low, landing"))
                actions += _enter_pending(session, SessionFsm.LANDING, protocol.Land(), now)
                return session, actions
            if not _gaps_ok(session, safety, now):
                session.fsm = SessionFsm.FAILSAFE
                session.failsafe_since = now
                actions.append(Alert(f"drone {session.drone_id}: link/localization gap, FAILSAFE"))
                return session, actions
            pose = session.latest_pose
            if pose is None:
                return session, actions
            stale = now - session.latest_fix_t > safety.t_fix_stale
            if session.hold_position or stale:
                if not session._holding:
                    session.controller = reset_controller(session.controller)
                    session._holding = True
                target = pose
            else:
                session._holding = False
                target = session.current_target
                if target is None:
                    target = pose
            session.controller, body, rc = step_controller_full(
                session.controller, pose, target, event.dt,
                control.gains, control.coeffs, control.limits,
                control.filter_proportional, control.prop_coeffs,
            )
            actions.append(SendRc(rc, body))
            return session, actions

        if fsm == SessionFsm.FAILSAFE:
            if now - session.failsafe_since > safety.hover_before_land:
                actions.append(Alert(f"drone {session.drone_id}: failsafe expired, landing"))
                actions += _enter_pending(session, SessionFsm.LANDING, protocol.Land(), now)
            return session, actions

        return session, actions

    raise TypeError(f"unknown session event {event!r}")


# --- mission sequencing -------------------------------------------------------


class MissionRunner:
    """Advances per-drone waypoint indices from estimated poses."""

    def __init__(self, plan: MissionPlan, safety: SafetyConfig):
        self.plan = plan
        self.safety = safety
        self.index = [0] * len(plan.waypoints)
        self.inside_since: list[float | None] = [None] * len(plan.waypoints)
        self.started = False
        self.paused = False
        self.complete = False
        self.events: list[tuple[float, str]] = []

    def start(self, t: float) -> None:
        self.started = True
        self.events.append((t, f"mission {self.plan.name} started"))

    def progress(self) -> list[tuple[int, int]]:
        return [(self.index[i], len(w)) for i, w in enumerate(self.plan.waypoints)]

    def tick(self, t: float, sessions: list[DroneSession]) -> None:
        """Set per-session targets; advance waypoints; detect completion."""
        if not self.started or self.complete:
            return
        if self.paused:
            for s in sessions:
                s.hold_position = True
            return
        all_done = True
        for i, session in enumerate(sessions):
            wps = self.plan.waypoints[i]
            idx = self.index[i]
            if idx >= len(wps):
                session.current_target = wps[-1]
                session.hold_position = False
                continue
            all_done = False
            session.current_target = wps[idx]
            stale = t - session.latest_fix_t > self.safety.t_fix_stale
            session.hold_position = stale
            if stale or session.latest_pose is None:
                self.inside_since[i] = None
                continue
            p = session.latest_pose
            wp = wps[idx]
            dist = math.sqrt((p.x - wp.x) ** 2 + (p.y - wp.y) ** 2 + (p.z - wp.z) ** 2)
            if dist < self.plan.arrival_radius:
                if self.inside_since[i] is None:
                    self.inside_since[i] = t
                elif t - self.inside_since[i] >= self.plan.dwell:
                    self.index[i] = idx + 1
                    self.inside_since[i] = None
                    self.events.append((t, f"drone {i} waypoint {idx + 1}/{len(wps)}"))
            else:
                self.inside_since[i] = None
        if all_done and not self.complete:
            self.complete = True
            self.events.append((t, "mission complete"))
