"""Virtual COTS drone: 4-DoF kinematic plant behind the wire protocol.

The plant is a first-order velocity lag with no attitude dynamics; commands
arrive as integer rc percentages and relax toward the scaled setpoint with
time constants tau_v / tau_w. A stale rc (older than rc_timeout) zeroes the
setpoint, which is the hover failsafe the fleet side relies on.

Each endpoint serves three logical ports: command (8889, request/reply),
telemetry (8890, 10 Hz), video (11111, 30 fps fragment stream). The video
payload carries the ground-truth pose at capture time in its first bytes;
that is the "image" the localization oracle works from.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, replace

from . import protocol
from .control import RcCommand, world_to_body
from .state import BodyVelocityCmd, Pose4, normalize_yaw

__all__ = [
    "FlightMode",
    "PlantParams",
    "PlantState",
    "VideoConfig",
    "dynamics_step",
    "handle_command",
    "emit_telemetry",
    "DroneEndpoint",
    "TRUTH_STRUCT",
    "pack_truth",
    "unpack_truth",
]

MAX_DYNAMICS_DT = 0.05

TRUTH_STRUCT = struct.Struct(">dddd")  # x, y, z, yaw embedded at payload start


def pack_truth(pose: Pose4, size: int) -> bytes:
    head = TRUTH_STRUCT.pack(pose.x, pose.y, pose.z, pose.yaw)
    if size < len(head):
        raise ValueError(f"frame payload of {size} B cannot carry the {len(head)} B pose")
    return head + b"\x00" * (size - len(head))


def unpack_truth(payload: bytes, t: float) -> Pose4:
    x, y, z, yaw = TRUTH_STRUCT.unpack_from(payload)
    return Pose4(x, y, z, yaw, t)


class FlightMode(enum.Enum):
    GROUNDED = "GROUNDED"
    TAKING_OFF = "TAKING_OFF"
    AIRBORNE = "AIRBORNE"
    LANDING = "LANDING"
    EMERGENCY = "EMERGENCY"


@dataclass(frozen=True)
class PlantParams:
    tau_v: float = 0.4  # s, velocity lag
    tau_w: float = 0.25  # s, yaw-rate lag
    v_scale: float = 1.0  # m/s at rc 100
    w_scale: float = 100.0  # deg/s at rc 100
    takeoff_alt: float = 1.0  # m
    battery_rate: float = 8.0  # %/min while motors run
    rc_timeout: float = 0.5  # s, stale rc -> hover
    takeoff_s: float = 2.0
    land_s: float = 2.0

    def __post_init__(self):
        for name in ("tau_v", "tau_w", "v_scale", "w_scale", "takeoff_alt",
                     "battery_rate", "rc_timeout", "takeoff_s", "land_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PlantState:
    pose: Pose4 = Pose4(0, 0, 0, 0)
    vel_body: BodyVelocityCmd = BodyVelocityCmd()
    battery_pct: float = 100.0
    flight_mode: FlightMode = FlightMode.GROUNDED
    last_rc: RcCommand = RcCommand()
    last_rc_t: float = -1e9


def _commanded_velocity(state: PlantState, now: float, params: PlantParams) -> BodyVelocityCmd:
    if now - state.last_rc_t > params.rc_timeout:
        return BodyVelocityCmd()  # failsafe hover
    rc = state.last_rc
    return BodyVelocityCmd(
        vx=rc.b / 100.0 * params.v_scale,
        vy=-rc.a / 100.0 * params.v_scale,
        vz=rc.c / 100.0 * params.v_scale,
        yaw_rate=-rc.d / 100.0 * params.w_scale,
    )


def dynamics_step(state: PlantState, dt: float, params: PlantParams, now: float) -> PlantState:
    """Advance the plant by dt seconds ending at `now`."""
    if not 0.0 < dt <= MAX_DYNAMICS_DT:
        raise ValueError(f"dt={dt} outside (0, {MAX_DYNAMICS_DT}]")

    mode = state.flight_mode
    if mode == FlightMode.GROUNDED:
        return state
    if mode == FlightMode.EMERGENCY:
        if state.vel_body.as_row() != (0, 0, 0, 0) or state.pose.z > 0:
            # motors cut: free-fall abstracted to an instant drop
            return replace(state, vel_body=BodyVelocityCmd(),
                           pose=replace_pose(state.pose, z=0.0, t=now))
        return state

    drain = params.battery_rate / 60.0 * dt
    battery = max(0.0, state.battery_pct - drain)
    pose = state.pose

    if mode == FlightMode.TAKING_OFF:
        climb = params.takeoff_alt / params.takeoff_s
        z = pose.z + climb * dt
        if z >= params.takeoff_alt:
            return replace(state, battery_pct=battery, flight_mode=FlightMode.AIRBORNE,
                           pose=replace_pose(pose, z=params.takeoff_alt, t=now))
        return replace(state, battery_pct=battery, pose=replace_pose(pose, z=z, t=now))

    if mode == FlightMode.LANDING:
        descend = params.takeoff_alt / params.land_s
        z = pose.z - descend * dt
        if z <= 0.0:
            return replace(state, battery_pct=battery, flight_mode=FlightMode.GROUNDED,
                           vel_body=BodyVelocityCmd(),
                           pose=replace_pose(pose, z=0.0, t=now))
        return replace(state, battery_pct=battery, pose=replace_pose(pose, z=z, t=now))

    # AIRBORNE: relax body velocity toward the (possibly failsafed) command
    u = _commanded_velocity(state, now, params)
    v = state.vel_body
    kv = dt / params.tau_v
    kw = dt / params.tau_w
    new_v = BodyVelocityCmd(
        vx=v.vx + kv * (u.vx - v.vx),
        vy=v.vy + kv * (u.vy - v.vy),
        vz=v.vz + kv * (u.vz - v.vz),
        yaw_rate=v.yaw_rate + kw * (u.yaw_rate - v.yaw_rate),
    )
    # body -> world is the inverse (transpose) of the world -> body rotation
    wx, wy = world_to_body(-pose.yaw, (new_v.vx, new_v.vy))
    new_pose = Pose4(
        x=pose.x + wx * dt,
        y=pose.y + wy * dt,
        z=max(0.0, pose.z + new_v.vz * dt),
        yaw=normalize_yaw(pose.yaw + new_v.yaw_rate * dt),
        t=now,
    )
    return replace(state, battery_pct=battery, vel_body=new_v, pose=new_pose)


def replace_pose(pose: Pose4, **kw) -> Pose4:
    return Pose4(
        kw.get("x", pose.x), kw.get("y", pose.y), kw.get("z", pose.z),
        kw.get("yaw", pose.yaw), kw.get("t", pose.t),
    )


def handle_command(state: PlantState, msg: protocol.CommandMsg, t: float) -> tuple[PlantState, bytes | None]:
    """Apply one parsed command; returns the new state and an immediate reply.

    Takeoff and Land acknowledge on completion (the endpoint sends those
    deferred replies when the dynamics finish the transition).
    """
    if isinstance(msg, protocol.Enter):
        return state, b"ok"
    if state.flight_mode == FlightMode.EMERGENCY:
        return state, b"error"
    if isinstance(msg, protocol.Rc):
        rc = RcCommand(msg.a, msg.b, msg.c, msg.d)
        return replace(state, last_rc=rc, last_rc_t=t), None
    if isinstance(msg, protocol.QueryBattery):
        return state, str(int(state.battery_pct)).encode()
    if isinstance(msg, protocol.Takeoff):
        if state.flight_mode == FlightMode.TAKING_OFF:
            return state, None  # idempotent retry; completion ack re-armed
        if state.flight_mode != FlightMode.GROUNDED:
            return state, b"error"
        return replace(state, flight_mode=FlightMode.TAKING_OFF), None
    if isinstance(msg, protocol.Land):
        if state.flight_mode == FlightMode.LANDING:
            return state, None
        if state.flight_mode not in (FlightMode.TAKING_OFF, FlightMode.AIRBORNE):
            return state, b"error"
        return replace(state, flight_mode=FlightMode.LANDING), None
    if isinstance(msg, protocol.Emergency):
        return replace(state, flight_mode=FlightMode.EMERGENCY, vel_body=BodyVelocityCmd(),
                       pose=replace_pose(state.pose, z=0.0)), b"ok"
    return state, b"error"


def emit_telemetry(state: PlantState, seq: int) -> protocol.TelemetryMsg:
    """Quantize plant state onto the wire: speeds truncate to dm/s, height to cm."""
    v = state.vel_body
    return protocol.TelemetryMsg(
        pitch=0,
        roll=0,
        yaw=int(state.pose.yaw),
        vgx=int(v.vx * 10.0),
        vgy=int(v.vy * 10.0),
        vgz=int(v.vz * 10.0),
        bat=int(state.battery_pct),
        h=int(round(state.pose.z * 100.0)),
        seq=seq,
    )


@dataclass(frozen=True)
class VideoConfig:
    fps: float = 30.0
    frame_bytes: int = 11_983  # 30 fps * 11983 B * 8 = 2.876 Mbps
    mtu: int = protocol.MAX_DATAGRAM


class DroneEndpoint:
    """One virtual drone attached to its private fabric segment."""

    def __init__(self, fabric, index: int, params: PlantParams = PlantParams(),
                 video: VideoConfig = VideoConfig(), start_pose: Pose4 = Pose4(0, 0, 0, 0),
                 physics_hz: float = 50.0):
        from .fabric import DRONE_HOST, GATEWAY_HOST

        self.fabric = fabric
        self.index = index
        self.params = params
        self.video = video
        self.state = PlantState(pose=start_pose)
        self.telemetry_seq = 0
        self.frame_id = 0
        self.physics_dt = 1.0 / physics_hz
        self._gateway = GATEWAY_HOST
        self._pending_reply: tuple[FlightMode, tuple] | None = None
        self.key = fabric.attach(f"net{index}", DRONE_HOST, self.on_datagram)

    # -- protocol ----------------------------------------------------------

    def on_datagram(self, t: float, src, dst, payload: bytes) -> None:
        if dst[1] != protocol.COMMAND_PORT:
            return
        try:
            msg = protocol.parse_command(payload)
        except protocol.ProtocolError:
            self.fabric.send(self.key, (src[0], src[1]), b"error")
            return
        self.state, reply = handle_command(self.state, msg, t)
        after = self.state.flight_mode
        if reply is not None:
            self.fabric.send(self.key, (src[0], src[1]), reply)
        elif isinstance(msg, (protocol.Takeoff, protocol.Land)) and after in (
            FlightMode.TAKING_OFF, FlightMode.LANDING
        ):
            target = FlightMode.AIRBORNE if after == FlightMode.TAKING_OFF else FlightMode.GROUNDED
            self._pending_reply = (target, (src[0], src[1]))

    def reset(self) -> None:
        """Operator-level reset: back to GROUNDED at the current spot, motors idle."""
        self.state = PlantState(pose=replace_pose(self.state.pose, z=0.0),
                                battery_pct=self.state.battery_pct)
        self._pending_reply = None

    # -- periodic activities -------------------------------------------------

    def start(self) -> None:
        self.fabric.schedule_in(self.physics_dt, self.tick_dynamics)
        self.fabric.schedule_in(0.1, self.tick_telemetry)
        self.fabric.schedule_in(1.0 / self.video.fps, self.tick_video)

    def tick_dynamics(self) -> None:
        now = self.fabric.now
        self.state = dynamics_step(self.state, self.physics_dt, self.params, now)
        if self._pending_reply and self.state.flight_mode == self._pending_reply[0]:
            _, addr = self._pending_reply
            self._pending_reply = None
            self.fabric.send(self.key, addr, b"ok")
        self.fabric.schedule_in(self.physics_dt, self.tick_dynamics)

    def tick_telemetry(self) -> None:
        self.telemetry_seq += 1
        msg = emit_telemetry(self.state, self.telemetry_seq)
        self.fabric.send(self.key, (self._gateway, protocol.TELEMETRY_PORT),
                         protocol.encode_telemetry(msg))
        self.fabric.schedule_in(0.1, self.tick_telemetry)

    def tick_video(self) -> None:
        if self.state.flight_mode != FlightMode.EMERGENCY:
            self.frame_id += 1
            now = self.fabric.now
            stub = protocol.FrameStub(
                self.frame_id,
                int(now * 1000.0),
                pack_truth(replace_pose(self.state.pose, t=now), self.video.frame_bytes),
            )
            for wire in protocol.fragment_frame(stub, self.video.mtu):
                self.fabric.send(self.key, (self._gateway, protocol.VIDEO_PORT), wire)
        self.fabric.schedule_in(1.0 / self.video.fps, self.tick_video)
