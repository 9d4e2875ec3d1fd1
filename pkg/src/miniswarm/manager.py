"""Fleet-side network node: routes datagrams to sessions and runs the tick loop.

One FleetManager owns all sessions, the per-drone localizers, and the
mission runner. It attaches at the fleet host of the fabric; drones are
identified by the unique relay address each datagram arrives from.

Localization modes:
  mle  -- fixes come straight from the rate-capped per-frame oracle and are
          delivered when processing completes; a quiet link means stale
          fixes and the safety layers take over.
  map  -- the same measurement stream feeds a sequential estimator that
          always has a pose (dead-reckoned through gaps), so control never
          pauses; the failure modes move into the estimator instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import protocol
from .endpoint import unpack_truth
from .fabric import Fabric, FLEET_HOST
from .fleet import (
    Alert,
    ControlConfig,
    DroneSession,
    FixEvent,
    LocalizationConfig,
    MissionPlan,
    MissionRunner,
    OperatorEvent,
    Rejection,
    ReplyEvent,
    SafetyConfig,
    SendCommand,
    SendRc,
    SessionFsm,
    TelemetryEvent,
    TickEvent,
    session_step,
)
from .localization import PoseFix, Relocalizer, SequentialMapLocalizer
from .state import BodyVelocityCmd, Pose4

__all__ = ["FleetManager"]

ALERT_RING = 200


@dataclass
class DronePipeline:
    """Per-drone receive-side machinery."""

    reassembler: protocol.FrameReassembler = field(default_factory=protocol.FrameReassembler)
    relocalizer: Relocalizer | None = None
    maploc: SequentialMapLocalizer | None = None
    pending_fix: PoseFix | None = None
    frames_seen: int = 0
    valid_fixes: int = 0
    max_tracking_error: float = 0.0
    est_track: list[tuple[float, Pose4]] = field(default_factory=list)
    last_truth: Pose4 | None = None  # from the newest frame payload


class FleetManager:
    def __init__(
        self,
        fabric: Fabric,
        relay_hosts: list[str],
        control: ControlConfig = ControlConfig(),
        safety: SafetyConfig = SafetyConfig(),
        localization: LocalizationConfig = LocalizationConfig(),
        seed: int = 0,
        truth_peek=None,  # drone_id -> (Pose4, BodyVelocityCmd); odometry oracle for map mode
        reset_hook=None,  # drone_id -> None; physical reset on operator reset
        log_tracks: bool = True,
        start_poses: list[Pose4] | None = None,  # map-mode estimator initialization
    ):
        self.fabric = fabric
        self.relay_hosts = list(relay_hosts)
        self.control = control
        self.safety = safety
        self.localization = localization
        self.seed = seed
        self.truth_peek = truth_peek
        self.reset_hook = reset_hook
        self.log_tracks = log_tracks

        self.n = len(relay_hosts)
        self.key = f"fleet:{FLEET_HOST}"
        fabric.set_handler(self.key, self.on_datagram)
        self._host_to_id = {h: i for i, h in enumerate(relay_hosts)}

        self.sessions = [DroneSession(i, relay_hosts[i]) for i in range(self.n)]
        self.pipelines = []
        for i in range(self.n):
            pipe = DronePipeline(
                relocalizer=Relocalizer(i, localization.noise, localization.rate_cap_hz, seed)
            )
            if localization.mode == "map":
                start = start_poses[i] if start_poses else Pose4(0, 0, 0, 0)
                pipe.maploc = SequentialMapLocalizer(i, start, localization.map_params, seed)
            self.pipelines.append(pipe)

        self.missions: dict[str, MissionPlan] = {}
        self.runner: MissionRunner | None = None
        self.alerts: list[tuple[float, str]] = []
        self.listeners: list = []  # callables taking one event dict
        self.rc_log: list[tuple[float, int, str]] = []  # (t, drone, fsm) per rc datagram
        self._ticking = False

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        if not self._ticking:
            self._ticking = True
            self.fabric.schedule_in(1.0 / self.control.rate_hz, self.tick)

    def add_mission(self, name: str, plan: MissionPlan) -> None:
        self.missions[name] = plan

    # -- operator surface ------------------------------------------------------

    def command(self, name: str, arg=None) -> tuple[bool, str]:
        """Fleet-level operator command; returns (accepted, reason)."""
        now = self.fabric.now
        if name == "takeoff_all":
            not_ready = [s.drone_id for s in self.sessions if s.fsm != SessionFsm.READY]
            if not_ready:
                return False, f"drones {not_ready} not READY"
            for s in self.sessions:
                self._apply(s, OperatorEvent("takeoff", now))
            return True, "taking off"
        if name == "land_all":
            any_air = any(
                s.fsm in (SessionFsm.FLYING, SessionFsm.FAILSAFE, SessionFsm.TAKING_OFF)
                for s in self.sessions
            )
            if not any_air:
                return False, "no drone airborne"
            for s in self.sessions:
                if s.fsm in (SessionFsm.FLYING, SessionFsm.FAILSAFE, SessionFsm.TAKING_OFF):
                    self._apply(s, OperatorEvent("land", now))
            return True, "landing"
        if name == "estop":
            for s in self.sessions:
                self._apply(s, OperatorEvent("estop", now))
            return True, "emergency stop"
        if name == "connect_all":
            for s in self.sessions:
                if s.fsm == SessionFsm.IDLE:
                    self._apply(s, OperatorEvent("connect", now))
            return True, "connecting"
        if name == "start_mission":
            plan = self.missions.get(arg or "")
            if plan is None:
                return False, f"unknown mission {arg!r}"
            not_flying = [s.drone_id for s in self.sessions if s.fsm != SessionFsm.FLYING]
            if not_flying:
                return False, "not all airborne"
            if len(plan.waypoints) != self.n:
                return False, f"mission is for {len(plan.waypoints)} drones, fleet has {self.n}"
            self.runner = MissionRunner(plan, self.safety)
            self.runner.start(now)
            self._emit({"kind": "mission", "t": now, "text": f"mission {plan.name} started"})
            return True, f"mission {plan.name} started"
        if name == "pause":
            if self.runner is None or not self.runner.started or self.runner.complete:
                return False, "no active mission"
            self.runner.paused = True
            return True, "paused"
        if name == "resume":
            if self.runner is None or not self.runner.paused:
                return False, "mission not paused"
            self.runner.paused = False
            return True, "resumed"
        if name == "reset":
            try:
                drone_id = int(arg)
            except (TypeError, ValueError):
                return False, "reset needs a drone_id"
            if not 0 <= drone_id < self.n:
                return False, f"no drone {drone_id}"
            session = self.sessions[drone_id]
            if session.fsm != SessionFsm.EMERGENCY:
                return False, f"drone {drone_id} not in EMERGENCY"
            self._apply(session, OperatorEvent("reset", self.fabric.now))
            if self.reset_hook is not None:
                self.reset_hook(drone_id)
            return True, f"drone {drone_id} reset"
        return False, f"unknown command {name!r}"

    # -- datagram ingress --------------------------------------------------------

    def on_datagram(self, t: float, src, dst, payload: bytes) -> None:
        drone_id = self._host_to_id.get(src[0])
        if drone_id is None:
            return
        port = dst[1]
        session = self.sessions[drone_id]
        if port == protocol.COMMAND_PORT:
            self._apply(session, ReplyEvent(payload, t))
        elif port == protocol.TELEMETRY_PORT:
            try:
                msg = protocol.parse_telemetry(payload)
            except protocol.ProtocolError:
                return
            self._apply(session, TelemetryEvent(msg, t))
        elif port == protocol.VIDEO_PORT:
            try:
                frame = self.pipelines[drone_id].reassembler.feed(payload)
            except protocol.ProtocolError:
                return
            if frame is not None:
                self._on_frame(drone_id, frame, t)

    def _on_frame(self, drone_id: int, frame: protocol.FrameStub, t: float) -> None:
        pipe = self.pipelines[drone_id]
        pipe.frames_seen += 1
        capture_t = frame.capture_t_ms * 1e-3
        truth = unpack_truth(frame.payload, capture_t)
        pipe.last_truth = truth
        fix = pipe.relocalizer.process_frame(truth, t, frame.frame_id)
        if fix is None:
            return  # compute-bound skip
        if not fix.valid:
            self._emit({"kind": "fix", "t": t, "drone_id": drone_id, "valid": False})
            return
        pipe.valid_fixes += 1
        err = math.dist(fix.pose.position(), truth.position())
        if self.localization.mode == "mle":
            if err > pipe.max_tracking_error:
                pipe.max_tracking_error = err
            if self.log_tracks:
                pipe.est_track.append((fix.pose.t, fix.pose))
            self.fabric.schedule(max(fix.fix_t, t), self._deliver_fix, drone_id, fix)
        else:
            pipe.pending_fix = fix  # consumed by the estimator at the next tick

    def _deliver_fix(self, drone_id: int, fix: PoseFix) -> None:
        session = self.sessions[drone_id]
        self._apply(session, FixEvent(fix, self.fabric.now))
        p = fix.pose
        self._emit({
            "kind": "fix", "t": self.fabric.now, "drone_id": drone_id, "valid": True,
            "pose": {"x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw, "t": p.t},
        })

    # -- tick loop ----------------------------------------------------------------

    def tick(self) -> None:
        now = self.fabric.now
        dt = 1.0 / self.control.rate_hz

        if self.localization.mode == "map":
            for i, pipe in enumerate(self.pipelines):
                if pipe.maploc is None:
                    continue
                odom = BodyVelocityCmd()
                truth = None
                if self.truth_peek is not None:
                    truth, odom = self.truth_peek(i)
                fix = pipe.pending_fix
                pipe.pending_fix = None
                est = pipe.maploc.step(dt, odom, fix, now)
                session = self.sessions[i]
                session.latest_pose = est
                session.latest_fix_t = now  # the estimator always has an answer
                if truth is not None:
                    err = math.dist(est.position(), truth.position())
                    if err > pipe.max_tracking_error:
                        pipe.max_tracking_error = err
                if self.log_tracks:
                    pipe.est_track.append((now, est))

        if self.runner is not None:
            was_complete = self.runner.complete
            self.runner.tick(now, self.sessions)
            for t_ev, text in self.runner.events:
                if t_ev == now:
                    self._emit({"kind": "mission", "t": t_ev, "text": text})
            if self.runner.complete and not was_complete:
                pass  # completion event already emitted via runner.events

        for session in self.sessions:
            self._apply(session, TickEvent(now, dt))

        self.fabric.schedule_in(dt, self.tick)

    # -- action routing -------------------------------------------------------------

    def _apply(self, session: DroneSession, event) -> None:
        before = session.fsm
        _, actions = session_step(session, event, self.safety, self.control)
        if session.fsm != before:
            self._emit({
                "kind": "fsm", "t": self.fabric.now, "drone_id": session.drone_id,
                "from": before.value, "to": session.fsm.value,
            })
        addr = (session.fleet_addr, protocol.COMMAND_PORT)
        for action in actions:
            if isinstance(action, SendCommand):
                self.fabric.send(self.key, addr, protocol.encode_command(action.msg))
            elif isinstance(action, SendRc):
                self.rc_log.append((self.fabric.now, session.drone_id, session.fsm.value))
                rc = action.rc
                self.fabric.send(
                    self.key, addr,
                    protocol.encode_command(protocol.Rc(rc.a, rc.b, rc.c, rc.d)),
                )
            elif isinstance(action, Alert):
                self.alerts.append((self.fabric.now, action.text))
                del self.alerts[:-ALERT_RING]
                self._emit({"kind": "alert", "t": self.fabric.now, "text": action.text})
            elif isinstance(action, Rejection):
                self._emit({"kind": "rejection", "t": self.fabric.now, "text": action.reason})

    def _emit(self, event: dict) -> None:
        for fn in self.listeners:
            fn(event)

    # -- introspection ------------------------------------------------------------------

    def all_in(self, *states: SessionFsm) -> bool:
        return all(s.fsm in states for s in self.sessions)

    def mission_complete(self) -> bool:
        return self.runner is not None and self.runner.complete

    def snapshot(self) -> dict:
        drones = []
        for s, pipe in zip(self.sessions, self.pipelines):
            pose = s.latest_pose
            target = s.current_target
            drones.append({
                "drone_id": s.drone_id,
                "fsm": s.fsm.value,
                "pose": None if pose is None else {
                    "x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw, "t": pose.t,
                },
                "battery": s.health.battery_pct,
                "link_up": self.fabric.now - s.last_telemetry_t <= self.safety.t_link_lost,
                "fix_age": self.fabric.now - s.latest_fix_t,
                "target": None if target is None else {
                    "x": target.x, "y": target.y, "z": target.z, "yaw": target.yaw,
                },
                "max_tracking_error": pipe.max_tracking_error,
            })
        mission = None
        if self.runner is not None:
            mission = {
                "name": self.runner.plan.name,
                "started": self.runner.started,
                "paused": self.runner.paused,
                "complete": self.runner.complete,
                "progress": self.runner.progress(),
            }
        return {
            "t": self.fabric.now,
            "drones": drones,
            "mission": mission,
            "alerts": [{"t": t, "text": text} for t, text in self.alerts[-20:]],
        }
