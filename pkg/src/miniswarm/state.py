"""Shared domain types and fleet-level state matrices.

All records here are immutable values; yaw is always degrees in [-180, 180),
the world frame is the shared prior-map frame, and timestamps are
simulation-clock seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose4",
    "BodyVelocityCmd",
    "ErrorVector4",
    "DroneHealth",
    "FleetState",
    "normalize_yaw",
    "assemble_fleet_state",
]


def normalize_yaw(angle: float) -> float:
    """Wrap an angle in degrees into [-180, 180).

    Equivalent to repeated +/-360 shifts; idempotent.
    """
    if not math.isfinite(angle):
        raise ValueError(f"yaw must be finite, got {angle!r}")
    return (angle + 180.0) % 360.0 - 180.0


@dataclass(frozen=True, slots=True)
class Pose4:
    """Position (m) plus yaw (deg) of one drone in the world frame."""

    x: float
    y: float
    z: float
    yaw: float
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.yaw)


@dataclass(frozen=True, slots=True)
class BodyVelocityCmd:
    """Continuous body-frame velocity command.

    vx forward, vy left, vz up (m/s); yaw_rate counter-clockwise (deg/s).
    """

    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        for name in ("vx", "vy", "vz", "yaw_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.vx, self.vy, self.vz, self.yaw_rate)


@dataclass(frozen=True, slots=True)
class ErrorVector4:
    """World-frame position error (m) plus wrapped yaw error (deg, |e_yaw| <= 180)."""

    ex: float = 0.0
    ey: float = 0.0
    ez: float = 0.0
    e_yaw: float = 0.0

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.ex, self.ey, self.ez, self.e_yaw)

    def norm_pos(self) -> float:
        return math.sqrt(self.ex * self.ex + self.ey * self.ey + self.ez * self.ez)


@dataclass(frozen=True, slots=True)
class DroneHealth:
    battery_pct: float = 100.0
    last_telemetry_t: float = 0.0
    link_up: bool = True


@dataclass(frozen=True)
class FleetState:
    """Snapshot of the whole fleet at time t.

    Row i of every matrix refers to drone i. Matrices are (n, 4) float
    arrays ordered (x, y, z, yaw) / (vx, vy, vz, yaw_rate).
    """

    n: int
    poses: np.ndarray
    targets: np.ndarray
    errors: np.ndarray
    commands: np.ndarray
    health: tuple[DroneHealth, ...]
    t: float
    pose_records: tuple[Pose4, ...] = field(default=(), repr=False)
    target_records: tuple[Pose4, ...] = field(default=(), repr=False)


def assemble_fleet_state(
    per_drone: list[tuple[Pose4, Pose4, DroneHealth]],
    t: float,
    commands: list[BodyVelocityCmd] | None = None,
    stale_after: float = 2.0,
) -> FleetState:
    """Build the fleet state matrices from per-drone (pose, target, health) rows.

    Errors are computed row-per-row with the controller's compute_error;
    link_up is re-derived from the telemetry age against `stale_after`.
    """
    from .control import compute_error  # avoids a module cycle; control imports our types

    if not per_drone:
        raise ValueError("fleet must contain at least one drone")
    n = len(per_drone)
    if commands is not None and len(commands) != n:
        raise ValueError(f"expected {n} command rows, got {len(commands)}")

    poses = np.zeros((n, 4))
    targets = np.zeros((n, 4))
    errors = np.zeros((n, 4))
    cmd_rows = np.zeros((n, 4))
    health_out = []
    pose_records = []
    target_records = []
    for i, (pose, target, health) in enumerate(per_drone):
        poses[i] = pose.as_row()
        targets[i] = target.as_row()
        errors[i] = compute_error(target, pose).as_row()
        if commands is not None:
            cmd_rows[i] = commands[i].as_row()
        link_up = (t - health.last_telemetry_t) <= stale_after
        health_out.append(
            DroneHealth(health.battery_pct, health.last_telemetry_t, link_up)
        )
        pose_records.append(pose)
        target_records.append(target)

    return FleetState(
        n=n,
        poses=poses,
        targets=targets,
        errors=errors,
        commands=cmd_rows,
        health=tuple(health_out),
        t=t,
        pose_records=tuple(pose_records),
        target_records=tuple(target_records),
    )
