"""Closed-loop swarm simulation: endpoints, relays, fleet manager, mission.

One SwarmSimulation owns a seeded fabric and everything attached to it.
run() advances the virtual clock through the standard sequence (connect,
take off, fly the mission) and returns a RunResult with trajectories,
tracking errors, and failure diagnostics. Experiments terminate trials
early as soon as an outcome is decided (estimator failed globally,
tracking diverged, or the mission finished).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import FleetConfig
from .endpoint import DroneEndpoint
from .fabric import build_fabric
from .fleet import SessionFsm
from .localization import MapStatus
from .manager import FleetManager
from .state import Pose4

__all__ = ["SwarmSimulation", "RunResult"]

TRUTH_LOG_HZ = 20.0
DIRECTOR_HZ = 4.0


@dataclass
class RunResult:
    mission_complete: bool = False
    mission_completed_t: float | None = None
    end_t: float = 0.0
    failure_reason: str | None = None
    max_tracking_error: list[float] = field(default_factory=list)
    failed_global: list[bool] = field(default_factory=list)
    valid_fixes: list[int] = field(default_factory=list)
    frames_seen: list[int] = field(default_factory=list)
    est_tracks: list[list[tuple[float, Pose4]]] = field(default_factory=list)
    ref_tracks: list[list[tuple[float, Pose4]]] = field(default_factory=list)
    rc_outside_flying: int = 0
    drop_counts: dict = field(default_factory=dict)
    alerts: list[tuple[float, str]] = field(default_factory=list)
    mission_events: list[tuple[float, str]] = field(default_factory=list)

    def fix_rates(self) -> list[float]:
        if self.end_t <= 0:
            return [0.0] * len(self.valid_fixes)
        return [n / self.end_t for n in self.valid_fixes]


class SwarmSimulation:
    def __init__(
        self,
        config: FleetConfig,
        mode: str | None = None,
        seed: int | None = None,
        log_events: bool = False,
        log_tracks: bool = True,
        land_after_mission: bool = False,
    ):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.mode = mode or config.mode
        self.land_after_mission = land_after_mission
        self.duration = config.duration_s

        wired, wireless, fwd = config.link_profiles(horizon=self.duration + 30.0)
        self.fabric = build_fabric(
            config.n_drones, wired, wireless, seed=self.seed,
            forward_latency_ms=fwd, log_events=log_events,
        )

        plant = config.plant_params()
        video = config.video_config()
        self.endpoints = [
            DroneEndpoint(self.fabric, i, params=plant, video=video,
                          start_pose=config.start_pose(i))
            for i in range(config.n_drones)
        ]

        loc = config.localization_config()
        if self.mode != loc.mode:
            loc = type(loc)(mode=self.mode, noise=loc.noise,
                            rate_cap_hz=loc.rate_cap_hz, map_params=loc.map_params)
        self.manager = FleetManager(
            self.fabric,
            relay_hosts=[r for r in self.fabric.relays],
            control=config.control_config(),
            safety=config.safety_config(),
            localization=loc,
            seed=self.seed,
            truth_peek=self._truth_peek,
            reset_hook=self._reset_endpoint,
            log_tracks=log_tracks,
            start_poses=[config.start_pose(i) for i in range(config.n_drones)],
        )
        self.manager.add_mission("ntu", config.mission_plan())

        self.ref_tracks: list[list[tuple[float, Pose4]]] = [[] for _ in self.endpoints]
        self._log_tracks = log_tracks
        self._phase = "connect"
        self._mission_completed_t: float | None = None
        self._failure: str | None = None
        self._success_error_m = float(config.experiment["success_error_m"])
        self._fail_fast = False

    # -- hooks ----------------------------------------------------------------

    def _truth_peek(self, drone_id: int):
        plant = self.endpoints[drone_id].state
        return plant.pose, plant.vel_body

    def _reset_endpoint(self, drone_id: int) -> None:
        self.endpoints[drone_id].reset()

    # -- periodic jobs -----------------------------------------------------------

    def _log_truth(self) -> None:
        now = self.fabric.now
        for i, ep in enumerate(self.endpoints):
            pose = ep.state.pose
            self.ref_tracks[i].append((now, Pose4(pose.x, pose.y, pose.z, pose.yaw, now)))
        self.fabric.schedule_in(1.0 / TRUTH_LOG_HZ, self._log_truth)

    def _direct(self) -> None:
        """Mission director: connect -> takeoff -> mission -> (land) -> done."""
        m = self.manager
        if self._phase == "connect":
            if m.all_in(SessionFsm.READY):
                ok, _ = m.command("takeoff_all")
                if ok:
                    self._phase = "takeoff"
        elif self._phase == "takeoff":
            if m.all_in(SessionFsm.FLYING):
                ok, _ = m.command("start_mission", "ntu")
                if ok:
                    self._phase = "mission"
        elif self._phase == "mission":
            if m.mission_complete():
                self._mission_completed_t = self.fabric.now
                if self.land_after_mission:
                    m.command("land_all")
                    self._phase = "landing"
                else:
                    self._phase = "done"
        elif self._phase == "landing":
            if m.all_in(SessionFsm.LANDED, SessionFsm.EMERGENCY):
                self._phase = "done"
        if self._fail_fast and self._failure is None:
            for pipe in m.pipelines:
                if pipe.maploc is not None and pipe.maploc.failed_ever:
                    self._failure = "failed_global"
                    break
                if pipe.max_tracking_error > self._success_error_m:
                    self._failure = "tracking_diverged"
                    break
        self.fabric.schedule_in(1.0 / DIRECTOR_HZ, self._direct)

    # -- run -----------------------------------------------------------------------

    def run(self, duration: float | None = None, fail_fast: bool = False) -> RunResult:
        self._fail_fast = fail_fast
        t_end = self.fabric.now + (self.duration if duration is None else duration)
        for ep in self.endpoints:
            ep.start()
        self.manager.start()
        if self._log_tracks:
            self.fabric.schedule_in(1.0 / TRUTH_LOG_HZ, self._log_truth)
        self.fabric.schedule_in(0.01, self.manager.command, "connect_all")
        self.fabric.schedule_in(0.02, self._direct)

        self.fabric.run_until(t_end, stop=self._should_stop)
        return self._collect()

    def _should_stop(self) -> bool:
        return self._phase == "done" or self._failure is not None

    def _collect(self) -> RunResult:
        m = self.manager
        complete = m.mission_complete()
        result = RunResult(
            mission_complete=complete,
            mission_completed_t=self._mission_completed_t,
            end_t=self.fabric.now,
            failure_reason=self._failure,
            max_tracking_error=[p.max_tracking_error for p in m.pipelines],
            failed_global=[p.maploc.failed_ever if p.maploc else False for p in m.pipelines],
            valid_fixes=[p.valid_fixes for p in m.pipelines],
            frames_seen=[p.frames_seen for p in m.pipelines],
            est_tracks=[list(p.est_track) for p in m.pipelines],
            ref_tracks=[list(t) for t in self.ref_tracks],
            rc_outside_flying=sum(1 for (_, _, fsm) in m.rc_log if fsm != "FLYING"),
            drop_counts=dict(self.fabric.drop_counts),
            alerts=list(m.alerts),
            mission_events=list(m.runner.events) if m.runner else [],
        )
        if result.failure_reason is None and not complete:
            reasons = []
            if any(result.failed_global):
                reasons.append("failed_global")
            if any(e > self._success_error_m for e in result.max_tracking_error):
                reasons.append("tracking_diverged")
            if not any(result.valid_fixes):
                reasons.append("no localization")
            result.failure_reason = ",".join(reasons) if reasons else "timeout"
        elif result.failure_reason is None and complete:
            if any(result.failed_global):
                result.failure_reason = "failed_global"
            elif any(e > self._success_error_m for e in result.max_tracking_error):
                result.failure_reason = "tracking_diverged"
        return result
