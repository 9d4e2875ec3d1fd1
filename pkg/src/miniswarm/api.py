"""Service API for live fleet operation: snapshot, commands, event stream.

The fleet runs on its own thread, pacing the virtual fabric against the wall
clock. The API layer never touches sessions directly: commands are queued
and executed on the fleet thread between ticks, and reads see immutable
snapshot documents. The websocket stream carries every fleet event (fixes,
FSM transitions, alerts, mission progress) plus 10 Hz snapshots.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from collections import deque

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .config import FleetConfig
from .sim import SwarmSimulation

__all__ = ["FleetRuntime", "create_app", "serve_forever"]

EVENT_RING = 5000
TICK_S = 0.05


class FleetRuntime:
    """Owns the simulation thread; exposes thread-safe snapshot/command/events."""

    def __init__(self, config: FleetConfig, paced: bool = True, speed: float = 1.0):
        self.config = config
        self.paced = paced
        self.speed = speed
        self.sim = SwarmSimulation(config, log_tracks=False)
        self.manager = self.sim.manager
        self._events: deque = deque(maxlen=EVENT_RING)
        self._event_seq = 0
        self._lock = threading.Lock()
        self._snapshot: dict = {"t": 0.0, "drones": [], "mission": None, "alerts": []}
        self._commands: deque = deque()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.manager.listeners.append(self._on_event)
        for ep in self.sim.endpoints:
            ep.start()
        self.manager.start()
        self.sim.fabric.schedule_in(0.01, self.manager.command, "connect_all")
        self._refresh_snapshot()

    # -- fleet thread side -------------------------------------------------

    def _on_event(self, event: dict) -> None:
        with self._lock:
            self._event_seq += 1
            self._events.append((self._event_seq, event))

    def _refresh_snapshot(self) -> None:
        snap = self.manager.snapshot()
        with self._lock:
            self._snapshot = snap

    def advance(self, sim_seconds: float) -> None:
        """Run the fabric forward, executing queued commands first."""
        while self._commands:
            name, arg, done = self._commands.popleft()
            result = self.manager.command(name, arg)
            done["result"] = result
            done["event"].set()
        self.sim.fabric.run_until(self.sim.fabric.now + sim_seconds)
        self._refresh_snapshot()

    def _loop(self) -> None:
        next_wall = time.monotonic()
        while not self._stop.is_set():
            self.advance(TICK_S)
            next_wall += TICK_S / self.speed
            delay = next_wall - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_wall = time.monotonic()  # fell behind; don't spiral

    def start(self) -> None:
        if self.paced and self._thread is None:
            self._thread = threading.Thread(target=self._loop, name="fleet", daemon=True)
            self._thread.start()

    def shutdown(self, land: bool = True, timeout: float = 10.0) -> None:
        """Land whatever is airborne, then stop the fleet thread."""
        if land:
            accepted, _ = self.command("land_all")
            if accepted and self.paced and self._thread is not None:
                deadline = time.monotonic() + timeout
                while time.monotonic() < deadline:
                    snap = self.snapshot()
                    if all(d["fsm"] in ("LANDED", "IDLE", "EMERGENCY", "READY")
                           for d in snap["drones"]):
                        break
                    time.sleep(0.1)
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    # -- API side ------------------------------------------------------------

    def snapshot(self) -> dict:
        with self._lock:
            return self._snapshot

    def command(self, name: str, arg=None, timeout: float = 5.0) -> tuple[bool, str]:
        """Queue a command for the fleet thread; blocks until executed."""
        done = {"event": threading.Event(), "result": (False, "not executed")}
        self._commands.append((name, arg, done))
        if not self.paced:
            self.advance(0.0)
        elif not done["event"].wait(timeout):
            return False, "fleet thread unresponsive"
        return done["result"]

    def events_since(self, seq: int) -> tuple[int, list[dict]]:
        with self._lock:
            out = [e for s, e in self._events if s > seq]
            latest = self._event_seq
        return latest, out


def create_app(runtime: FleetRuntime) -> FastAPI:
    app = FastAPI(title="miniswarm fleet API")

    @app.get("/api/snapshot")
    def snapshot():
        return runtime.snapshot()

    @app.post("/api/command")
    async def command(body: dict):
        name = body.get("type")
        if not isinstance(name, str):
            return JSONResponse({"accepted": False, "reason": "missing command type"},
                                status_code=400)
        arg = body.get("arg")
        accepted, reason = await asyncio.to_thread(runtime.command, name, arg)
        return {"accepted": accepted, "reason": reason}

    @app.websocket("/api/events")
    async def events(ws: WebSocket):
        await ws.accept()
        seq = 0
        try:
            await ws.send_text(json.dumps({"kind": "snapshot", **runtime.snapshot()}))
            while True:
                seq, batch = runtime.events_since(seq)
                for event in batch:
                    await ws.send_text(json.dumps(event))
                await ws.send_text(json.dumps({"kind": "snapshot", **runtime.snapshot()}))
                await asyncio.sleep(0.05)  # 20 Hz snapshot + event drain
        except (WebSocketDisconnect, RuntimeError):
            return

    return app


def serve_forever(config: FleetConfig, host: str, port: int) -> int:
    """Run the fleet and its API until interrupted; lands the fleet on exit."""
    import uvicorn

    runtime = FleetRuntime(config, paced=True)
    runtime.start()
    app = create_app(runtime)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        runtime.shutdown(land=True)
    return 0
