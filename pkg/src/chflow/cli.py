"""Command-line front end: simulate, sweep, envelope, audit, validate-potential.

Exit codes: 0 on success, 2 when a hypothesis or inequality the theory
guarantees is violated by the data, 1 on runtime failure.
"""

import argparse
import csv
import json
import sys

import numpy as np

from .diagnostics import energy_dissipation_audit
from .functionals import EnergyReport
from .harness import load_config, run_single, run_sweep
from .potential import (
    HypothesisViolation,
    canonical_names,
    compute_convex_envelope,
    compute_unstable_set,
    make_potential,
    validate_hypotheses,
)

__all__ = ["main"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _cmd_simulate(args):
    cfg = load_config(args.config)
    record = run_single(cfg, args.mode)
    print(
        json.dumps(
            {
                "mode": args.mode,
                "completed": record.completed,
                "snapshots": int(record.times.size),
                "final_time": float(record.times[-1]),
                "output_dir": str(cfg.output_dir),
            }
        )
    )
    return 0


def _cmd_sweep(args):
    cfg = load_config(args.config)
    report = run_sweep(cfg)
    payload = {
        "rows": [
            {
                "eps": row.eps,
                "sup_t_d2_to_limit": row.sup_t_d2_to_limit,
                "slope_gap_L2": row.slope_gap_L2,
                "energy_gap_final": row.energy_gap_final,
                "wrinkle_summary": row.wrinkle_summary,
            }
            for row in report.rows
        ],
        "grids": {f"{eps:g}": n for eps, n in report.grids.items()},
        "failures": [{"eps": eps, "error": msg} for eps, msg in report.failures],
    }
    print(json.dumps(_jsonable(payload), sort_keys=True))
    return 1 if report.failures else 0


def _cmd_envelope(args):
    spec = make_potential(args.potential)
    env = compute_convex_envelope(spec)
    unstable = compute_unstable_set(spec, env)
    print(
        json.dumps(
            _jsonable(
                {
                    "potential": args.potential,
                    "breakpoints": env.breakpoints,
                    "sigma": unstable.intervals,
                    "m0": unstable.m0,
                    "degenerate_first": unstable.degenerate_first,
                }
            ),
            indent=2,
            sort_keys=True,
        )
    )
    return 0


class _CsvTrajectory:
    """Just enough of a trajectory record to drive the dissipation audit."""

    def __init__(self, times, reports, speeds, flavor):
        self.times = np.asarray(times, dtype=float)
        self.reports = reports
        self.flavor = flavor
        self.extras = {"speeds": np.asarray(speeds, dtype=float)}
        self.snapshots = None

    def speeds(self):
        return self.extras["speeds"]


def _cmd_audit(args):
    times, reports, speeds = [], [], []
    limit_like = True
    with open(args.trajectory, newline="") as fh:
        for row in csv.DictReader(fh):
            e_eps = float(row["e_eps"])
            e_star = float(row["e_star"])
            slope_eps = float(row["slope_eps"])
            slope_star = float(row["slope_star"])
            times.append(float(row["t"]))
            speeds.append(float(row["speed"]))
            reports.append(
                EnergyReport(
                    e_eps=e_eps,
                    e_star=e_star,
                    slope_eps=slope_eps,
                    slope_star=slope_star,
                    gap=e_eps - e_star,
                )
            )
            limit_like = limit_like and e_eps == e_star and slope_eps == slope_star
    if len(times) < 2:
        raise ValueError("trajectory has fewer than two rows")
    flavor = args.flavor if args.flavor != "auto" else ("limit" if limit_like else "eps")
    audit = energy_dissipation_audit(_CsvTrajectory(times, reports, speeds, flavor))
    e0 = reports[0].e_star if flavor == "limit" else reports[0].e_eps
    tol_audit = args.tol * abs(e0) + 1e-15
    satisfied = audit.satisfied(tol_audit)
    print(
        json.dumps(
            _jsonable(
                {
                    "flavor": audit.flavor,
                    "times": audit.times,
                    "residuals": audit.residuals,
                    "slope_integral": audit.slope_integral,
                    "speed_integral": audit.speed_integral,
                    "min_residual": audit.min_residual,
                    "tol_audit": tol_audit,
                    "satisfied": satisfied,
                }
            ),
            sort_keys=True,
        )
    )
    return 0 if satisfied else 2


def _cmd_validate_potential(args):
    spec = make_potential(args.potential)
    report = validate_hypotheses(spec)
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return 0 if report["ok"] else 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="chflow",
        description="Periodic 1D interface dynamics and their transport-metric limit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one trajectory and persist artifacts")
    p_sim.add_argument("--mode", required=True, choices=("eps", "limit", "jko", "nonlocal"))
    p_sim.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_sim.set_defaults(func=_cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="run the eps-sweep against the relaxed reference")
    p_sweep.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_env = sub.add_parser("envelope", help="print envelope breakpoints, Sigma, and m0 as JSON")
    p_env.add_argument("--potential", required=True, help=f"one of {canonical_names()}")
    p_env.set_defaults(func=_cmd_envelope)

    p_audit = sub.add_parser("audit", help="energy-dissipation audit of a trajectory CSV")
    p_audit.add_argument("--trajectory", required=True, help="path to trajectory.csv")
    p_audit.add_argument("--tol", type=float, default=1e-3, help="residual tolerance, relative to |E(0)|")
    p_audit.add_argument("--flavor", choices=("auto", "eps", "limit"), default="auto")
    p_audit.set_defaults(func=_cmd_audit)

    p_val = sub.add_parser("validate-potential", help="check structural hypotheses of a potential")
    p_val.add_argument("--potential", required=True, help=f"one of {canonical_names()}")
    p_val.set_defaults(func=_cmd_validate_potential)

    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HypothesisViolation as exc:
        payload = {"hypothesis_violation": str(exc)}
        report = getattr(exc, "report", None)
        if report is not None:
            payload["report"] = _jsonable(report)
        print(json.dumps(payload, sort_keys=True))
        return 2
    except Exception as exc:  # runtime failure contract: exit 1, message on stderr
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
