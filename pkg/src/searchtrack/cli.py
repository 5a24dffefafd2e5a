"""Command line entry point: generate, run, mc, metrics."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import ConfigError, load_scenario, save_scenario
from .harness import POLICIES, run_episode, run_monte_carlo
from .metrics import MetricConfig, ospa2_window
from .world import ScenarioKind, generate_scenario


def _read_traj(path) -> list[dict]:
    """Long-format CSV (step, track, x, y) to one {track: (x, y)} per step."""
    rows = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(r for r in fh if not r.startswith("#")):
            step = int(row["step"])
            rows.setdefault(step, {})[row["track"]] = (float(row["x"]), float(row["y"]))
    if not rows:
        return []
    first, last = min(rows), max(rows)
    return [rows.get(k, {}) for k in range(first, last + 1)]


def cmd_generate(args) -> dict:
    sc = generate_scenario(args.kind, seed=args.seed)
    save_scenario(sc, args.out)
    return {"written": str(args.out)}


def cmd_run(args) -> dict:
    sc = load_scenario(args.config)
    ep = run_episode(sc, args.seed, args.policy)
    out = Path(args.out)
    out.write_text(ep.to_csv())
    stem = out.with_suffix("")
    truth, est = Path(f"{stem}.truth.csv"), Path(f"{stem}.est.csv")
    truth.write_text(ep.trajectories_csv("truth"))
    est.write_text(ep.trajectories_csv("estimates"))
    result = {"written": [str(out), str(truth), str(est)], "steps": len(ep.records)}
    if ep.failure:
        raise RuntimeError(f"episode failed: {ep.failure}")
    result["final_ospa2"] = ep.final_ospa2
    return result


def cmd_mc(args) -> dict:
    sc = load_scenario(args.config)
    summary = run_monte_carlo(sc, args.runs, args.base_seed, args.jobs, args.policy)
    Path(args.out).write_text(summary.to_json())
    return {"written": str(args.out), "mean_final_ospa2": summary.mean_final_ospa2,
            "margin_95": summary.margin_95, "failed": summary.failed_count}


def cmd_metrics(args) -> dict:
    truth, est = _read_traj(args.truth), _read_traj(args.est)
    n = max(len(truth), len(est))
    truth += [{}] * (n - len(truth))
    est += [{}] * (n - len(est))
    cfg = MetricConfig(cutoff=args.cutoff, order=args.order, window=args.window)
    series = ospa2_window(truth, est, cfg)
    return {"steps": n, "final": series[-1]._asdict() if series else None,
            "mean_total": sum(r.total for r in series) / n if n else 0.0}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="searchtrack")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a scenario config")
    g.add_argument("kind", choices=[k.value for k in ScenarioKind])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--policy", choices=POLICIES, default="unisat")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("mc", help="seeded Monte Carlo batch")
    m.add_argument("--config", required=True)
    m.add_argument("--runs", type=int, required=True)
    m.add_argument("--base-seed", type=int, default=0)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--out", required=True)
    m.add_argument("--policy", choices=POLICIES, default="unisat")
    m.set_defaults(func=cmd_mc)

    t = sub.add_parser("metrics", help="OSPA^2 between trajectory CSVs")
    t.add_argument("--truth", required=True)
    t.add_argument("--est", required=True)
    t.add_argument("--cutoff", type=float, default=50.0)
    t.add_argument("--order", type=float, default=1.0)
    t.add_argument("--window", type=int, default=10)
    t.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (ConfigError, OSError, ValueError, RuntimeError, KeyError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump(result, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
