"""Command line entry point.

    miniswarm sim run --config ntu-mission.cfg --seed 1 --out runs/demo
    miniswarm bench latency --config table-i.cfg --probes 10000
    miniswarm bench slam-compare --config slam-compare.cfg --trials 100
    miniswarm serve --config ntu-mission.cfg --listen 127.0.0.1:8080

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
Every command honors --seed; repeated runs with the same seed write
byte-identical reports.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, FleetConfig, load_config

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _load(args) -> FleetConfig:
    cfg = load_config(args.config)
    seed = getattr(args, "seed", None)
    duration = getattr(args, "duration", None)
    if seed is not None or duration is not None:
        cfg = cfg.with_overrides(seed=seed, duration_s=duration)
    return cfg


def _outdir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sim_run(args) -> int:
    from .metrics import associate, compute_ape, write_trajectory
    from .sim import SwarmSimulation

    cfg = _load(args)
    out = _outdir(args, f"runs/sim-seed{cfg.seed}")
    sim = SwarmSimulation(cfg, log_events=True, land_after_mission=True)
    result = sim.run()

    (out / "effective-config.yaml").write_text(cfg.effective_yaml())
    (out / "events.log").write_text(sim.fabric.format_events())
    traj = out / "trajectories"
    traj.mkdir(exist_ok=True)
    ape_lines = []
    for i, (est, ref) in enumerate(zip(result.est_tracks, result.ref_tracks)):
        write_trajectory(traj / f"drone{i}.est.txt", est)
        write_trajectory(traj / f"drone{i}.ref.txt", ref)
        if est and ref:
            ape = compute_ape(associate(est, ref))
            ape_lines.append(
                f"drone {i}: APE rmse {ape.rmse_m * 100:.2f} cm  mean {ape.mean_m * 100:.2f} cm"
                f"  max {ape.max_m * 100:.2f} cm  ({ape.count} pairs)"
            )

    lines = [
        f"mission: {'complete' if result.mission_complete else 'incomplete'}",
        f"completed_t: {result.mission_completed_t}",
        f"end_t: {result.end_t:.2f}",
        f"failure: {result.failure_reason}",
        f"fix_counts: {result.valid_fixes}",
        f"frames: {result.frames_seen}",
        f"max_tracking_error_m: {[round(e, 4) for e in result.max_tracking_error]}",
        f"rc_outside_flying: {result.rc_outside_flying}",
        f"drops: {json.dumps(result.drop_counts, sort_keys=True)}",
        *ape_lines,
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"artifacts: {out}")
    return 0 if result.mission_complete else RUNTIME_ERROR


def cmd_bench_latency(args) -> int:
    from .experiments import bench_latency
    from .metrics import format_latency_table

    cfg = _load(args)
    out = _outdir(args, f"runs/latency-seed{cfg.seed}")
    rows, e2e = bench_latency(cfg, probes=args.probes)
    table = format_latency_table(rows)
    table += (
        f"\nEnd-to-end fleet->drone (one way, {e2e.count} probes): "
        f"mean {e2e.mean_ms:.3f} ms  min {e2e.min_ms:.3f}  max {e2e.max_ms:.3f}"
        f"  std {e2e.std_ms:.3f}\n"
    )
    (out / "effective-config.yaml").write_text(cfg.effective_yaml())
    (out / "report.txt").write_text(table)
    print(table, end="")
    print(f"artifacts: {out}")
    return 0


def cmd_bench_slam_compare(args) -> int:
    from .experiments import run_success_experiment
    from .metrics import format_success_table

    cfg = _load(args)
    out = _outdir(args, f"runs/slam-compare-seed{cfg.seed}")
    reports = run_success_experiment(cfg, trials=args.trials)
    table = format_success_table(reports)
    (out / "effective-config.yaml").write_text(cfg.effective_yaml())
    (out / "report.txt").write_text(table)
    summary = {
        r.mode: {
            "trials": r.trials,
            "successes": r.successes,
            "success_rate": round(r.success_rate, 4),
            "mean_ape_m": None if not r.per_trial_ape else round(r.mean_ape_m, 6),
            "mean_fix_rate_hz": round(r.mean_fix_rate_hz, 4),
            "failure_reasons": dict(sorted(r.failure_reasons.items())),
        }
        for r in reports
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(table, end="")
    print(f"artifacts: {out}")
    return 0


def cmd_serve(args) -> int:
    from .api import serve_forever

    cfg = _load(args)
    host, _, port = args.listen.rpartition(":")
    try:
        return serve_forever(cfg, host or "127.0.0.1", int(port))
    except OSError as e:
        print(f"bind failed: {e}", file=sys.stderr)
        return RUNTIME_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miniswarm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, duration=False):
        p.add_argument("--config", help="fleet configuration file (YAML)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="artifacts directory")
        if duration:
            p.add_argument("--duration", type=float, default=None, help="sim duration cap (s)")

    sim = sub.add_parser("sim", help="run simulations").add_subparsers(dest="sub", required=True)
    run = sim.add_parser("run", help="run a full mission headless")
    common(run, duration=True)
    run.set_defaults(fn=cmd_sim_run)

    bench = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="sub", required=True)
    lat = bench.add_parser("latency", help="per-hop and end-to-end latency table")
    common(lat)
    lat.add_argument("--probes", type=int, default=10_000)
    lat.set_defaults(fn=cmd_bench_latency)
    slam = bench.add_parser("slam-compare", help="snapshot vs sequential localization success rates")
    common(slam)
    slam.add_argument("--trials", type=int, default=100)
    slam.set_defaults(fn=cmd_bench_slam_compare)

    serve = sub.add_parser("serve", help="run the fleet live with the service API")
    serve.add_argument("--config", help="fleet configuration file (YAML)")
    serve.add_argument("--seed", type=int, default=None)
    serve.add_argument("--listen", default="127.0.0.1:8008")
    serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "probes", 1) < 1 or getattr(args, "trials", 1) < 1:
        parser.error("--probes/--trials must be >= 1")  # exits 2
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except KeyboardInterrupt:
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
