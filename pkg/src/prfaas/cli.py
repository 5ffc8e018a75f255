"""Command-line front end: solve, sweep, simulate, compare, bandwidth.

Exit codes: 0 on success, 2 on configuration errors, 3 when the search space
or deployment is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import RunConfig, load_config
from .exceptions import ConfigError, InfeasibleConfigError, InfeasibleSpaceError, PrfaasError
from .optimizer import (
    ALLOCATION_SWEEP_HEADER,
    THRESHOLD_SWEEP_HEADER,
    SearchSpace,
    default_t_grid,
    optimize,
    sweep_allocation,
    sweep_threshold,
    write_rows_csv,
)
from .profiles import instances_from_gpus, kv_throughput, load_profile
from .scheduler import DecisionLog
from .simulator import SimMetrics
from .simulator import run as run_simulation
from .throughput import DeploymentConfig, ThroughputReport, evaluate
from .workload import WorkloadSpec

log = logging.getLogger("prfaas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

COMPARE_HEADER = (
    "name", "threshold", "n_prfaas", "n_p", "n_d", "theta_prfaas", "theta_pdp", "theta_pdd",
    "lambda_max", "ratio", "bottleneck", "egress_load", "ttft_mean", "ttft_p90",
)


def _header() -> dict[str, Any]:
    return {"schema_version": 1, "tool_version": __version__}


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out_dir or (cfg.output_dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_len(text: str) -> float:
    t = text.strip().upper()
    if t.endswith("K"):
        return float(t[:-1]) * 1024
    return float(t)


def solve_deployment(cfg: RunConfig, name: str | None = None) -> tuple[DeploymentConfig, ThroughputReport, dict]:
    """Optimise (or just evaluate) one deployment of ``cfg``."""
    spec = cfg.deployment(name)
    dep = cfg.build(spec)
    if not spec.optimize:
        report = evaluate(dep)
        return dep, report, {"t_star": dep.threshold if dep.n_prfaas else None, "np_star": dep.pd.prefill_instances,
                             "nd_star": dep.pd.decode_instances, "optimized": False}
    dist = dep.length_dist
    space = SearchSpace(dep, t_grid=default_t_grid(dist, cfg.optimizer.t_points), refine=cfg.optimizer.refine)
    opt = optimize(space)
    best = dep.with_split(opt.np_star, opt.nd_star).with_threshold(opt.t_star)
    summary = {"t_star": opt.t_star if opt.threshold_used else None, "np_star": opt.np_star,
               "nd_star": opt.nd_star, "optimized": True}
    return best, opt.report, summary


# -- subcommands -----------------------------------------------------------------
def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    best, report, summary = solve_deployment(cfg, args.deployment)
    out = _out_dir(args, cfg)
    result = {**_header(), "deployment": best.name, **summary, "lambda_max": report.lambda_max, "report": report.to_dict()}
    (out / "solve.json").write_text(_dump(result))
    write_rows_csv(out / "threshold_sweep.csv", THRESHOLD_SWEEP_HEADER,
                   sweep_threshold(best, default_t_grid(best.length_dist, cfg.optimizer.t_points)))
    write_rows_csv(out / "allocation_sweep.csv", ALLOCATION_SWEEP_HEADER, sweep_allocation(best))
    sys.stdout.write(_dump(result))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    dep = cfg.build(cfg.deployment(args.deployment))
    out = _out_dir(args, cfg)
    grid = default_t_grid(dep.length_dist, cfg.optimizer.t_points)
    thr = sweep_threshold(dep, grid) if dep.n_prfaas else []
    alloc = sweep_allocation(dep)
    write_rows_csv(out / "threshold_sweep.csv", THRESHOLD_SWEEP_HEADER, thr)
    write_rows_csv(out / "allocation_sweep.csv", ALLOCATION_SWEEP_HEADER, alloc)
    sys.stdout.write(_dump({**_header(), "deployment": dep.name, "threshold_rows": len(thr), "allocation_rows": len(alloc),
                            "files": ["threshold_sweep.csv", "allocation_sweep.csv"]}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    best, report, summary = solve_deployment(cfg, args.deployment)
    duration = cfg.simulator.duration if args.duration is None else args.duration
    factors = args.load_factor or cfg.simulator.load_factors
    seed = cfg.workload.seed if args.seed is None else args.seed
    out = _out_dir(args, cfg)
    dlog = DecisionLog()
    runs = []
    for lf in factors:
        rate = lf * report.lambda_max
        wl = WorkloadSpec(cfg.workload.length_dist, cfg.workload.output_len, rate, cfg.workload.process, seed)
        if duration > 0:
            metrics = run_simulation(best, wl, duration, seed, cfg.sim_options(), dlog)
        else:
            metrics = SimMetrics(0.0, 0.0, rate, link_capacity_gbps=best.egress_gbps, threshold_final=best.threshold)
        tag = f"lf{lf:g}"
        metrics.write_json(out / f"sim_{tag}.json")
        metrics.write_timeseries(out / f"sim_{tag}_timeseries.csv")
        runs.append({"load_factor": lf, "offered_rate": rate, **metrics.to_dict()})
    (out / "decisions.ndjson").write_text(dlog.dumps())
    result = {**_header(), "deployment": best.name, "lambda_max": report.lambda_max, "seed": seed,
              "duration": duration, "runs": runs}
    (out / "simulate.json").write_text(_dump(result))
    sys.stdout.write(_dump(result))
    return EXIT_OK


def compare_deployments(cfg: RunConfig) -> list[dict[str, Any]]:
    rows = []
    for spec in cfg.deployments:
        best, report, summary = solve_deployment(cfg, spec.name)
        d = report.to_dict()
        rows.append({
            "name": spec.name,
            "threshold": summary["t_star"],
            "n_prfaas": d["n_prfaas"],
            "n_p": d["n_p"],
            "n_d": d["n_d"],
            "theta_prfaas": d["theta_prfaas"],
            "theta_pdp": d["theta_pdp"],
            "theta_pdd": d["theta_pdd"],
            "lambda_max": d["lambda_max"],
            "bottleneck": d["bottleneck"],
            "egress_load": d["egress_load"],
            "ttft_mean": d["ttft_mean"],
            "ttft_p90": d["ttft_p90"],
        })
    base_name = cfg.baseline or rows[0]["name"]
    base = next(r for r in rows if r["name"] == base_name)["lambda_max"]
    for r in rows:
        r["ratio"] = r["lambda_max"] / base
    return rows


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    rows = compare_deployments(cfg)
    out = _out_dir(args, cfg)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for r in rows:
            w.writerow(["" if r[k] is None else r[k] for k in COMPARE_HEADER])
    result = {**_header(), "baseline": cfg.baseline or rows[0]["name"], "rows": rows}
    (out / "compare.json").write_text(_dump(result))
    if args.json:
        sys.stdout.write(_dump(result))
    else:
        sys.stdout.write(_table(rows))
    return EXIT_OK


def _table(rows) -> str:
    cols = ("name", "threshold", "n_p", "n_d", "theta_prfaas", "theta_pdp", "theta_pdd", "lambda_max", "ratio", "ttft_mean", "ttft_p90")
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)
    cells = [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def cmd_bandwidth(args) -> int:
    try:
        profile = load_profile(args.profile)
    except PrfaasError as exc:
        raise ConfigError(str(exc)) from exc
    if args.gpus < 0:
        raise ConfigError("--gpus must be >= 0")
    parallelism = args.parallelism or profile.parallelism
    length = _parse_len(args.length)
    n_inst = instances_from_gpus(args.gpus, parallelism)
    phi = float(kv_throughput(profile, length, extrapolate=True))
    gbps = n_inst * phi
    result = {**_header(), "profile": profile.name, "gpus": args.gpus, "parallelism": parallelism,
              "instances": n_inst, "length": length, "kv_throughput_gbps": phi, "egress_gbps": gbps}
    sys.stdout.write(_dump(result))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prfaas", description="Capacity planning and simulation for cross-datacenter prefill offload.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False):
        p.add_argument("--config", default=None, help="JSON config path or builtin:<name> (default: builtin:case_study)")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--deployment", default=None, help="deployment name (default: the active one)")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("solve", help="optimise threshold and PD split")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="write threshold and allocation sweeps at the configured point")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="run the discrete-event simulator at multiples of the solved rate")
    common(p, seed=True)
    p.add_argument("--load-factor", type=float, action="append", default=None)
    p.add_argument("--duration", type=float, default=None, help="simulated seconds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="evaluate every deployment at its optimum")
    common(p)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bandwidth", help="egress demand of a prefill fleet")
    p.add_argument("--profile", default="ring-2.5-1t")
    p.add_argument("--gpus", type=int, required=True)
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--length", default="32K", help="mean uncached length, e.g. 32768 or 32K")
    p.set_defaults(func=cmd_bandwidth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (InfeasibleSpaceError, InfeasibleConfigError) as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
