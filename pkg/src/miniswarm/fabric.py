"""Deterministic message fabric with address-translating relay nodes.

Topology is hub-and-spoke: one fleet-side host, one relay per drone, and
every drone binding the same fixed address inside its own private network
segment (deliberately recreating the off-the-shelf IP conflict the relays
exist to solve). Each drone path is two links: fleet <-> relay (wired) and
relay <-> drone (wireless). Relays rewrite the fixed drone address to their
unique fleet-side address on the way up and invert the mapping on the way
down, forwarding each datagram statelessly after a fixed forward latency.

The fabric owns a virtual clock and a single event heap; identical
(topology, profiles, seed, send schedule) replays bit-exactly. Every
datagram ends as exactly one of {delivered, dropped-with-reason}, and
delivery order per link matches send order.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "LinkProfile",
    "RelayNode",
    "Fabric",
    "FabricError",
    "PathDeadError",
    "build_fabric",
    "fit_shifted_lognormal",
    "periodic_outages",
    "DRONE_HOST",
    "GATEWAY_HOST",
    "FLEET_HOST",
    "ECHO_PORT",
    "RELAY_ECHO_PORT",
    "SINK_PORT",
]

Addr = tuple[str, int]

DRONE_HOST = "192.168.10.1"  # every drone, in its own segment
GATEWAY_HOST = "192.168.10.2"  # the relay as seen from the drone
FLEET_HOST = "10.0.0.1"

ECHO_PORT = 7  # echoed by the final addressee (end-to-end probes)
RELAY_ECHO_PORT = 8  # echoed by the relay itself (per-hop probes)
SINK_PORT = 9  # swallowed at the final addressee (one-way probes)

_DEFAULT_PORTS = (8889, 8890, 11111, ECHO_PORT, SINK_PORT)


class FabricError(Exception):
    pass


class PathDeadError(FabricError):
    """Every probe on the path was lost."""


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _truncated_lognormal_mean(mu: float, sigma: float, cap: float) -> float:
    """E[X | X <= cap] for X ~ LogNormal(mu, sigma)."""
    lc = math.log(cap)
    denom = _phi((lc - mu) / sigma)
    if denom <= 0.0:
        return cap
    num = _phi((lc - mu - sigma * sigma) / sigma)
    return math.exp(mu + 0.5 * sigma * sigma) * num / denom


def fit_shifted_lognormal(delay_min: float, delay_mean: float, delay_max: float) -> tuple[float, float]:
    """Fit (mu, sigma) so that min + truncated-LogNormal(mu, sigma) has the given mean.

    The shift is the minimum, the truncation cap is (max - min), and mu is
    tied to sigma by placing the cap three log-sigmas above the median. The
    remaining free parameter is solved so the mean *after truncation* lands
    on target, which is what makes long-run empirical means reproduce the
    calibration table instead of sagging below it.
    """
    cap = delay_max - delay_min
    target = delay_mean - delay_min
    if cap <= 0 or target <= 0:
        raise ValueError("need delay_min < delay_mean < delay_max for a lognormal fit")

    def gap(sigma: float) -> float:
        mu = math.log(cap) - 3.0 * sigma
        return _truncated_lognormal_mean(mu, sigma, cap) - target

    lo, hi = 1e-4, 4.0
    if gap(lo) < 0:
        raise ValueError("mean too close to max for this jitter family")
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 64.0:
            raise ValueError("no lognormal fit for the given (min, mean, max)")
    sigma = brentq(gap, lo, hi, xtol=1e-12)
    return math.log(cap) - 3.0 * sigma, sigma


@dataclass(frozen=True)
class LinkProfile:
    """Delay distribution, loss, and outage schedule for one link."""

    delay_min_ms: float = 0.0
    delay_mean_ms: float = 0.0
    delay_max_ms: float = 0.0
    jitter_shape: str = "fixed"  # "fixed" | "shifted-lognormal"
    loss_prob: float = 0.0
    outages: tuple[tuple[float, float], ...] = ()
    bandwidth_cap_mbps: float | None = None

    def __post_init__(self):
        if self.jitter_shape not in ("fixed", "shifted-lognormal"):
            raise ValueError(f"unknown jitter shape {self.jitter_shape!r}")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be a probability")
        if self.jitter_shape == "shifted-lognormal":
            if not self.delay_min_ms <= self.delay_mean_ms <= self.delay_max_ms:
                raise ValueError("need delay_min <= delay_mean <= delay_max")
        for start, dur in self.outages:
            if dur < 0:
                raise ValueError("outage duration must be >= 0")

    @staticmethod
    def fixed(delay_ms: float, loss_prob: float = 0.0, outages=()) -> "LinkProfile":
        return LinkProfile(delay_ms, delay_ms, delay_ms, "fixed", loss_prob, tuple(outages))


def periodic_outages(start: float, period: float, duration: float, horizon: float) -> tuple[tuple[float, float], ...]:
    """Materialize a periodic outage schedule up to `horizon` seconds."""
    if period <= 0 or duration < 0:
        raise ValueError("period must be > 0 and duration >= 0")
    out = []
    t = start
    while t < horizon:
        out.append((t, duration))
        t += period
    return tuple(out)


@dataclass(frozen=True)
class RelayNode:
    """Bridge translating the fixed drone-side address to a unique fleet-side one."""

    index: int
    fleet_host: str
    forward_latency_ms: float = 0.03
    drone_host: str = DRONE_HOST
    gateway_host: str = GATEWAY_HOST
    upstream_host: str = FLEET_HOST
    port_map: tuple[tuple[int, int], ...] = tuple((p, p) for p in _DEFAULT_PORTS)


class _Link:
    __slots__ = (
        "link_id", "profile", "rng", "last_delivery", "next_free",
        "outage_starts", "outage_ends", "mu", "sigma", "sent", "delivered", "dropped",
    )

    def __init__(self, link_id: str, profile: LinkProfile, rng: np.random.Generator):
        self.link_id = link_id
        self.profile = profile
        self.rng = rng
        self.last_delivery = [0.0, 0.0]  # per direction FIFO floor
        self.next_free = [0.0, 0.0]  # per direction serializer (bandwidth cap)
        self.outage_starts = [s for s, _ in profile.outages]
        self.outage_ends = [s + d for s, d in profile.outages]
        if profile.jitter_shape == "shifted-lognormal" and profile.delay_max_ms > profile.delay_min_ms:
            self.mu, self.sigma = fit_shifted_lognormal(
                profile.delay_min_ms, profile.delay_mean_ms, profile.delay_max_ms
            )
        else:
            self.mu = self.sigma = 0.0
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    def in_outage(self, t: float) -> bool:
        i = bisect_right(self.outage_starts, t) - 1
        return i >= 0 and t < self.outage_ends[i]

    def sample_delay_s(self) -> float:
        p = self.profile
        if p.jitter_shape == "fixed" or p.delay_max_ms <= p.delay_min_ms:
            return p.delay_mean_ms * 1e-3
        cap = p.delay_max_ms - p.delay_min_ms
        x = math.exp(self.mu + self.sigma * self.rng.standard_normal())
        while x > cap:
            x = math.exp(self.mu + self.sigma * self.rng.standard_normal())
        return (p.delay_min_ms + x) * 1e-3


@dataclass
class _Datagram:
    src: Addr
    dst: Addr
    payload: bytes
    trace: list | None = None


@dataclass
class _PendingProbe:
    sent_t: float
    origin: str
    done: bool = False
    rtt: float = 0.0


MAX_QUEUE_DELAY_S = 0.100  # bandwidth-capped datagrams waiting longer are dropped


class Fabric:
    """Discrete-event scheduler plus the bridged relay topology."""

    def __init__(self, seed: int = 0, log_events: bool = False):
        self.seed = seed
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._handlers: dict[str, object] = {}
        self._addr_index: dict[tuple[str, str], str] = {}  # (namespace, host) -> node key
        self.links: dict[str, _Link] = {}
        self.relays: dict[str, RelayNode] = {}  # fleet_host -> relay
        self._relay_by_gw: dict[str, RelayNode] = {}  # namespace -> relay
        self._link_of: dict[tuple[str, str], tuple[str, int]] = {}  # (namespace, dst host) -> (link id, direction)
        self._link_of_node: dict[tuple[str, str], tuple[str, int]] = {}  # (src key, dst host) override
        self._seed_counter = 0
        self.log_events = log_events
        self.events: list[tuple] = []
        self.drop_counts: dict[str, int] = {}
        self.delivered_bytes: dict[tuple[str, str, int], int] = {}  # (dst key, src host, port)
        self._probes: dict[int, _PendingProbe] = {}
        self._probe_seq = 0
        self.trace_records: list[tuple] = []

    # -- wiring ------------------------------------------------------------

    def _next_rng(self) -> np.random.Generator:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seed, self._seed_counter))))
        self._seed_counter += 1
        return rng

    def attach(self, namespace: str, host: str, handler) -> str:
        """Register a node; returns its key. handler(t, src, dst, payload) or None."""
        key = f"{namespace}:{host}"
        if key in self._handlers:
            raise FabricError(f"address {host} already attached in segment {namespace}")
        self._handlers[key] = handler
        self._addr_index[(namespace, host)] = key
        return key

    def add_link(self, link_id: str, profile: LinkProfile) -> None:
        if link_id in self.links:
            raise FabricError(f"duplicate link {link_id}")
        self.links[link_id] = _Link(link_id, profile, self._next_rng())

    def set_link_profile(self, link_id: str, profile: LinkProfile) -> None:
        """Swap a link's impairment profile in place (keeps its RNG stream)."""
        link = self.links[link_id]
        link.profile = profile
        link.outage_starts = [s for s, _ in profile.outages]
        link.outage_ends = [s + d for s, d in profile.outages]
        if profile.jitter_shape == "shifted-lognormal" and profile.delay_max_ms > profile.delay_min_ms:
            link.mu, link.sigma = fit_shifted_lognormal(
                profile.delay_min_ms, profile.delay_mean_ms, profile.delay_max_ms
            )

    # -- clock -------------------------------------------------------------

    def schedule(self, t: float, fn, *args) -> None:
        if t < self.now:
            raise FabricError(f"cannot schedule into the past ({t} < {self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def schedule_in(self, dt: float, fn, *args) -> None:
        self.schedule(self.now + dt, fn, *args)

    def run_until(self, t_end: float, stop=None) -> None:
        """Process events up to and including t_end; stop() may end the run early."""
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            t, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
            if stop is not None and stop():
                break
        if self.now < t_end and (stop is None or not stop()):
            self.now = t_end

    def pending(self) -> int:
        return len(self._heap)

    # -- datagram path -----------------------------------------------------

    def set_handler(self, key: str, handler) -> None:
        if key not in self._handlers:
            raise FabricError(f"unknown node {key}")
        self._handlers[key] = handler

    def send(self, src_key: str, dst: Addr, payload: bytes, trace: list | None = None) -> None:
        """Inject a datagram from an attached node; delivery is event-driven."""
        namespace, src_host = src_key.split(":", 1)
        hop = self._link_of_node.get((src_key, dst[0])) or self._link_of.get((namespace, dst[0]))
        if hop is None:
            raise FabricError(f"no route from segment {namespace} to {dst[0]}")
        link_id, direction = hop
        dgram = _Datagram((src_host, dst[1]), dst, payload, trace)
        self._traverse(link_id, direction, dgram, namespace)

    def _drop(self, link: _Link, dgram: _Datagram, reason: str) -> None:
        link.dropped += 1
        self.drop_counts[reason] = self.drop_counts.get(reason, 0) + 1
        if self.log_events:
            self.events.append((self.now, dgram.src, dgram.dst, len(dgram.payload), "drop", reason))

    def _traverse(self, link_id: str, direction: int, dgram: _Datagram, namespace: str) -> None:
        link = self.links[link_id]
        link.sent += 1
        if link.in_outage(self.now):
            self._drop(link, dgram, "outage")
            return
        p = link.profile
        if p.loss_prob > 0.0 and link.rng.random() < p.loss_prob:
            self._drop(link, dgram, "loss")
            return
        delay = link.sample_delay_s()
        depart = self.now
        if p.bandwidth_cap_mbps:
            tx = len(dgram.payload) * 8.0 / (p.bandwidth_cap_mbps * 1e6)
            start = max(self.now, link.next_free[direction])
            if start - self.now > MAX_QUEUE_DELAY_S:
                self._drop(link, dgram, "bandwidth")
                return
            link.next_free[direction] = start + tx
            depart = start + tx
        arrive = max(depart + delay, link.last_delivery[direction])
        link.last_delivery[direction] = arrive
        if dgram.trace is not None:
            dgram.trace.append((link_id, self.now, arrive))
        self.schedule(arrive, self._arrive, link_id, direction, dgram, namespace)

    def _arrive(self, link_id: str, direction: int, dgram: _Datagram, namespace: str) -> None:
        link = self.links[link_id]
        link.delivered += 1
        dst_host = dgram.dst[0]

        relay = self.relays.get(dst_host)
        if relay is not None:
            self._relay_down(relay, dgram)
            return
        if dst_host == GATEWAY_HOST:
            gw_relay = self._relay_by_gw.get(namespace)
            if gw_relay is not None:
                self._relay_up(gw_relay, dgram, namespace)
                return

        key = self._addr_index.get((namespace, dst_host))
        if key is None:
            self._drop(link, dgram, "unknown-address")
            return
        if self.log_events:
            self.events.append((self.now, dgram.src, dgram.dst, len(dgram.payload), "deliver", ""))
        port = dgram.dst[1]
        bkey = (key, dgram.src[0], port)
        self.delivered_bytes[bkey] = self.delivered_bytes.get(bkey, 0) + len(dgram.payload)

        if port == ECHO_PORT or port == RELAY_ECHO_PORT:
            self._echo(key, dgram)
            return
        if dgram.trace is not None:
            self.trace_records.append((self.now, dgram.src, dgram.dst, tuple(dgram.trace)))
        if port == SINK_PORT:
            return
        handler = self._handlers[key]
        if handler is not None:
            handler(self.now, dgram.src, dgram.dst, dgram.payload)

    def _mapped_port(self, relay: RelayNode, port: int) -> int | None:
        for a, b in relay.port_map:
            if a == port:
                return b
        return None

    def _relay_down(self, relay: RelayNode, dgram: _Datagram) -> None:
        """Fleet-side arrival: rewrite to the fixed drone address, forward wireless."""
        if dgram.dst[1] == RELAY_ECHO_PORT:
            self._echo(f"fleet:{relay.fleet_host}", dgram)
            return
        namespace = f"net{relay.index}"
        port = self._mapped_port(relay, dgram.dst[1])
        if port is None:
            self._drop(self.links[f"wireless{relay.index}"], dgram, "no-map")
            return
        fwd = _Datagram(
            (relay.gateway_host, dgram.src[1]),
            (relay.drone_host, port),
            dgram.payload,
            dgram.trace,
        )
        if fwd.trace is not None:
            fwd.trace.append(("forward", self.now, self.now + relay.forward_latency_ms * 1e-3))
        self.schedule_in(
            relay.forward_latency_ms * 1e-3,
            self._traverse, f"wireless{relay.index}", 0, fwd, namespace,
        )

    def _relay_up(self, relay: RelayNode, dgram: _Datagram, namespace: str) -> None:
        """Drone-side arrival at the gateway: rewrite to the unique fleet address."""
        if dgram.dst[1] == RELAY_ECHO_PORT:
            self._echo(f"{namespace}:{relay.gateway_host}", dgram)
            return
        port = self._mapped_port(relay, dgram.dst[1])
        if port is None:
            self._drop(self.links[f"wired{relay.index}"], dgram, "no-map")
            return
        fwd = _Datagram(
            (relay.fleet_host, dgram.src[1]),
            (relay.upstream_host, port),
            dgram.payload,
            dgram.trace,
        )
        if fwd.trace is not None:
            fwd.trace.append(("forward", self.now, self.now + relay.forward_latency_ms * 1e-3))
        self.schedule_in(
            relay.forward_latency_ms * 1e-3,
            self._traverse, f"wired{relay.index}", 1, fwd, "fleet",
        )

    # -- probes ------------------------------------------------------------

    def _echo(self, key: str, dgram: _Datagram) -> None:
        if dgram.payload.startswith(b"PROBE:"):
            probe_id = int(dgram.payload.split(b":", 2)[1])
            probe = self._probes.get(probe_id)
            if probe is not None and key == probe.origin:
                if not probe.done:
                    probe.done = True
                    probe.rtt = self.now - probe.sent_t
                return
        self.send(key, (dgram.src[0], dgram.dst[1]), dgram.payload)

    def probe_rtt(
        self,
        path: tuple[str, Addr],
        count: int = 1,
        spacing_s: float = 0.1,
        payload_size: int = 64,
    ) -> list[float]:
        """Echo `count` datagrams over `path`; returns round-trip times in ms.

        Probes are spaced so per-link FIFO clamping cannot bias the samples.
        Lost probes are skipped; losing all of them raises PathDeadError.
        """
        if count < 1:
            raise ValueError("count must be >= 1")
        src_key, dst = path
        ids = []
        for i in range(count):
            self._probe_seq += 1
            pid = self._probe_seq
            ids.append(pid)
            body = b"PROBE:%d:" % pid
            body += b"\x00" * max(0, payload_size - len(body))
            self.schedule_in(i * spacing_s, self._send_probe, pid, src_key, dst, body)
        self.run_until(self.now + count * spacing_s + 10.0)
        samples = [self._probes[pid].rtt * 1e3 for pid in ids if self._probes[pid].done]
        for pid in ids:
            del self._probes[pid]
        if not samples:
            raise PathDeadError(f"all {count} probes to {dst} lost")
        return samples

    def _send_probe(self, pid: int, src_key: str, dst: Addr, body: bytes) -> None:
        self._probes[pid] = _PendingProbe(sent_t=self.now, origin=src_key)
        self.send(src_key, dst, body)

    def probe_one_way(
        self,
        src_key: str,
        dst: Addr,
        count: int = 1,
        spacing_s: float = 0.1,
        payload_size: int = 64,
    ) -> list[tuple]:
        """Send traced datagrams to a sink; returns (t, src, dst, hops) records."""
        if count < 1:
            raise ValueError("count must be >= 1")
        before = len(self.trace_records)
        body = b"\x00" * payload_size
        for i in range(count):
            self.schedule_in(i * spacing_s, self._send_traced, src_key, dst, body)
        self.run_until(self.now + count * spacing_s + 10.0)
        records = self.trace_records[before:]
        if not records:
            raise PathDeadError(f"all {count} one-way probes to {dst} lost")
        return records

    def _send_traced(self, src_key: str, dst: Addr, body: bytes) -> None:
        self.send(src_key, dst, body, trace=[])

    # -- event log export ----------------------------------------------------

    def format_events(self) -> str:
        lines = []
        for t, src, dst, size, outcome, reason in self.events:
            lines.append(
                f"{t:.6f} {src[0]}:{src[1]} {dst[0]}:{dst[1]} {size} {outcome}"
                + (f" {reason}" if reason else "")
            )
        return "\n".join(lines) + ("\n" if lines else "")


def build_fabric(
    n: int,
    wired: LinkProfile,
    wireless: LinkProfile,
    seed: int = 0,
    forward_latency_ms: float = 0.03,
    fleet_host: str = FLEET_HOST,
    relay_hosts: list[str] | None = None,
    log_events: bool = False,
) -> Fabric:
    """Wire up n relay paths: n wired + n wireless links behind one fleet host."""
    if n < 1:
        raise FabricError("topology needs at least one drone")
    if relay_hosts is None:
        relay_hosts = [f"10.0.0.{11 + i}" for i in range(n)]
    if len(relay_hosts) != n:
        raise FabricError(f"expected {n} relay hosts, got {len(relay_hosts)}")
    if len(set(relay_hosts)) != n or fleet_host in relay_hosts:
        raise FabricError("fleet-side addresses must be unique fabric-wide")

    fabric = Fabric(seed=seed, log_events=log_events)
    for i, host in enumerate(relay_hosts):
        relay = RelayNode(index=i, fleet_host=host, forward_latency_ms=forward_latency_ms,
                          upstream_host=fleet_host)
        fabric.relays[host] = relay
        fabric._relay_by_gw[f"net{i}"] = relay
        fabric.add_link(f"wired{i}", wired)
        fabric.add_link(f"wireless{i}", wireless)
        # route tables: fleet segment reaches each relay by its unique host;
        # each drone segment reaches only its gateway
        fabric._link_of[("fleet", host)] = (f"wired{i}", 0)
        fabric._link_of[(f"net{i}", GATEWAY_HOST)] = (f"wireless{i}", 1)
        fabric._link_of[(f"net{i}", DRONE_HOST)] = (f"wireless{i}", 0)  # relay drone-side sends
        fabric._link_of_node[(f"fleet:{host}", fleet_host)] = (f"wired{i}", 1)  # relay echo replies
        fabric.attach(f"net{i}", GATEWAY_HOST, None)  # relay presence for per-hop probes
    fabric.attach("fleet", fleet_host, None)  # replaced by the fleet manager on wiring
    for host in relay_hosts:
        fabric.attach("fleet", host, None)  # relay fleet-side presence (per-hop probes)
    return fabric
