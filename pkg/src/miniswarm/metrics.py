"""Trajectory association, absolute pose error, and latency statistics.

APE is translational only and computed in the shared world frame with no
alignment transform: estimates and references already live in the same
prior-map frame, and aligning first would hide exactly the global
re-association failures the success experiment measures. A translation-only
aligned mode exists for diagnostics.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .state import Pose4

__all__ = [
    "TrajPair",
    "LatencyReport",
    "ApeReport",
    "SuccessReport",
    "associate",
    "compute_ape",
    "latency_stats",
    "format_latency_table",
    "format_success_table",
]

Sample = tuple[float, Pose4]


@dataclass(frozen=True)
class TrajPair:
    est: list[Sample]
    ref: list[Sample]
    associations: list[tuple[int, int]]
    unmatched_est: int = 0
    unmatched_ref: int = 0


@dataclass(frozen=True)
class LatencyReport:
    min_ms: float
    max_ms: float
    mean_ms: float
    std_ms: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("latency report needs at least one sample")
        if not self.min_ms <= self.mean_ms <= self.max_ms:
            raise ValueError("latency stats violate min <= mean <= max")


@dataclass(frozen=True)
class ApeReport:
    rmse_m: float
    mean_m: float
    max_m: float
    count: int


@dataclass(frozen=True)
class SuccessReport:
    mode: str
    trials: int
    successes: int
    per_trial_ape: tuple[float, ...]  # RMSE of successful trials only
    failure_reasons: dict[str, int]
    mean_fix_rate_hz: float = 0.0
    mean_end_t: float = 0.0

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def mean_ape_m(self) -> float:
        return float(np.mean(self.per_trial_ape)) if self.per_trial_ape else float("nan")


def associate(est: list[Sample], ref: list[Sample], tol_s: float = 0.05) -> TrajPair:
    """Match each estimate to the nearest-in-time reference within tol_s.

    Both inputs must be time-sorted; every estimate is used at most once,
    unmatched samples are counted. Zero matches is an error (disjoint
    trajectories tell you the evaluation itself is broken).
    """
    if any(a[0] > b[0] for a, b in zip(est, est[1:])) or any(
        a[0] > b[0] for a, b in zip(ref, ref[1:])
    ):
        raise ValueError("trajectories must be time-sorted")
    ref_times = [t for t, _ in ref]
    pairs = []
    for i, (t, _) in enumerate(est):
        j = bisect_left(ref_times, t)
        best = None
        for cand in (j - 1, j):
            if 0 <= cand < len(ref_times):
                d = abs(ref_times[cand] - t)
                if best is None or d < best[1]:
                    best = (cand, d)
        if best is not None and best[1] <= tol_s:
            pairs.append((i, best[0]))
    if not pairs:
        raise ValueError("disjoint trajectories: no timestamp pairs within tolerance")
    matched_ref = {j for _, j in pairs}
    return TrajPair(
        est=list(est), ref=list(ref), associations=pairs,
        unmatched_est=len(est) - len(pairs), unmatched_ref=len(ref) - len(matched_ref),
    )


def compute_ape(pair: TrajPair, align: str = "none") -> ApeReport:
    """Translational APE over the associated pairs; align in {'none','translation'}."""
    if align not in ("none", "translation"):
        raise ValueError(f"unknown alignment mode {align!r}")
    if not pair.associations:
        raise ValueError("no associations to evaluate")
    est = np.array([pair.est[i][1].position() for i, _ in pair.associations])
    ref = np.array([pair.ref[j][1].position() for _, j in pair.associations])
    if align == "translation":
        est = est - (est.mean(axis=0) - ref.mean(axis=0))
    err = np.linalg.norm(est - ref, axis=1)
    return ApeReport(
        rmse_m=float(np.sqrt(np.mean(err**2))),
        mean_m=float(err.mean()),
        max_m=float(err.max()),
        count=len(err),
    )


def latency_stats(samples_ms: list[float]) -> LatencyReport:
    """Exact min/max/mean and population standard deviation."""
    if not samples_ms:
        raise ValueError("no latency samples")
    arr = np.asarray(samples_ms, dtype=float)
    return LatencyReport(
        min_ms=float(arr.min()),
        max_ms=float(arr.max()),
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),  # population (ddof=0)
        count=int(arr.size),
    )


def write_trajectory(path, samples: list[Sample], valid: bool = True) -> None:
    """One line per sample: t x y z yaw valid."""
    with open(path, "w") as f:
        f.write("# t x y z yaw valid\n")
        for t, pose in samples:
            f.write(
                f"{t:.6f} {pose.x:.6f} {pose.y:.6f} {pose.z:.6f} {pose.yaw:.6f} {int(valid)}\n"
            )


def read_trajectory(path) -> list[Sample]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t, x, y, z, yaw, valid = line.split()
            if int(valid):
                out.append((float(t), Pose4(float(x), float(y), float(z), float(yaw), float(t))))
    return out


def format_latency_table(rows: list[tuple[str, str, LatencyReport]]) -> str:
    """Aligned text table: Component | Protocol | Min | Max | Mean (ms)."""
    header = f"{'Component':<28} {'Protocol':<18} {'Min':>9} {'Max':>9} {'Mean':>9}"
    rule = "-" * len(header)
    lines = [header, rule]
    for component, proto, rep in rows:
        lines.append(
            f"{component:<28} {proto:<18} {rep.min_ms:>9.3f} {rep.max_ms:>9.3f} {rep.mean_ms:>9.3f}"
        )
    return "\n".join(lines) + "\n"


def format_success_table(reports: list[SuccessReport]) -> str:
    header = (
        f"{'Method':<12} {'APE rmse (cm)':>14} {'Fix rate (Hz)':>14} "
        f"{'Success rate':>13} {'Trials':>7}  Failure reasons"
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        ape = f"{r.mean_ape_m * 100:.2f}" if r.per_trial_ape else "n/a"
        reasons = ", ".join(f"{k}:{v}" for k, v in sorted(r.failure_reasons.items())) or "-"
        lines.append(
            f"{r.mode:<12} {ape:>14} {r.mean_fix_rate_hz:>14.2f} "
            f"{r.success_rate:>12.0%} {r.trials:>7}  {reasons}"
        )
    return "\n".join(lines) + "\n"
