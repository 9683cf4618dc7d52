"""Experiment orchestration: configs, initial data, sweeps, manifests.

A single JSON document configures every run.  Sweeps reproduce the
vanishing-interface limit at desk scale: one relaxed reference run plus one
regularized run per eps, compared in transport distance, slope, and energy.
"""

import hashlib
import json
import math
import platform
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import energy_dissipation_audit, well_preparedness, wrinkling_report
from .jko import JkoConfig, simulate_jko, write_ledger_csv
from .nonlocal_model import compare_local_nonlocal, make_kernel, simulate_nonlocal
from .potential import (
    HypothesisViolation,
    compute_convex_envelope,
    compute_unstable_set,
    from_polynomial,
    make_potential,
)
from .solvers import SolverConfig, simulate_eps, simulate_limit
from .wasserstein1d import DensityField, w2_periodic

__all__ = [
    "ExperimentConfig",
    "InitialData",
    "SweepReport",
    "SweepRow",
    "collect_versions",
    "config_hash",
    "default_output_times",
    "experiment_from_dict",
    "generate_initial",
    "load_config",
    "run_single",
    "run_sweep",
    "write_manifest",
]

_MODES = ("eps", "limit", "jko", "nonlocal")
_WRINKLE_ETA = 0.05
_WRINKLE_DELTA = 0.125


def _reject_unknown(mapping, allowed, where):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {where} key(s): {', '.join(unknown)}")


def generate_initial(name, params, n):
    """Built-in unit-mass, non-negative initial fields on n cells.

    Generators: "uniform"; "cosine" (1 + a cos(2 pi k x), 0 <= a < 1);
    "bump" (smooth compactly supported bump over a floor, renormalized);
    "two-phase" (tanh steps between two levels at x = 1/4 and 3/4,
    renormalized).  Parameters that would produce negative density raise.
    """
    params = dict(params or {})
    x = (np.arange(int(n)) + 0.5) / int(n)
    if name == "uniform":
        _reject_unknown(params, (), "uniform parameter")
        vals = np.ones(x.size)
    elif name == "cosine":
        _reject_unknown(params, ("a", "k"), "cosine parameter")
        a = float(params.get("a", 0.1))
        k = int(params.get("k", 1))
        if not 0.0 <= a < 1.0:
            raise ValueError("cosine amplitude must satisfy 0 <= a < 1")
        if k < 1:
            raise ValueError("cosine mode must be a positive integer")
        vals = 1.0 + a * np.cos(2.0 * np.pi * k * x)
    elif name == "bump":
        _reject_unknown(params, ("width", "floor", "center"), "bump parameter")
        width = float(params.get("width", 0.5))
        floor = float(params.get("floor", 0.1))
        center = float(params.get("center", 0.5))
        if not 0.0 < width <= 1.0:
            raise ValueError("bump width must lie in (0, 1]")
        if floor < 0.0:
            raise ValueError("bump floor must be nonnegative")
        u = x - center
        u -= np.round(u)
        arg = 1.0 - (2.0 * u / width) ** 2
        vals = floor + np.where(arg > 0.0, np.exp(-1.0 / np.maximum(arg, 1e-300)), 0.0)
    elif name == "two-phase":
        _reject_unknown(params, ("lo", "hi", "width"), "two-phase parameter")
        lo = float(params.get("lo", 0.4))
        hi = float(params.get("hi", 1.6))
        width = float(params.get("width", 0.05))
        if lo < 0.0 or hi < 0.0:
            raise ValueError("two-phase levels must be nonnegative")
        if width <= 0.0:
            raise ValueError("two-phase interface width must be positive")
        vals = lo + (hi - lo) * 0.5 * (np.tanh((x - 0.25) / width) - np.tanh((x - 0.75) / width))
    else:
        raise ValueError(f"unknown initial-data generator {name!r}")
    if float(np.min(vals)) < 0.0:
        raise ValueError("generator parameters produced negative density")
    return DensityField.normalized(vals)


def default_output_times(t_end, count=20):
    """Snapshot times: 0 plus count-1 log-spaced points, dense early."""
    if t_end <= 0.0:
        raise ValueError("t_end must be positive")
    if count < 2:
        raise ValueError("need at least two output times")
    tail = np.geomspace(1e-3 * t_end, t_end, int(count) - 1)
    tail[-1] = t_end
    return (0.0, *(float(t) for t in tail))


@dataclass(frozen=True)
class InitialData:
    """Named generator plus its parameter mapping."""

    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: potential, numerics, data, outputs.

    ``potential`` is a canonical name or a polynomial coefficient tuple.
    ``eps_list`` (strictly decreasing, positive) drives sweeps; single runs
    take eps from the solver section.  Empty ``output_times`` means the
    log-spaced default over [0, t_end].
    """

    potential: object
    solver: SolverConfig
    initial_data: InitialData
    output_dir: str
    jko: JkoConfig | None = None
    eps_list: tuple = ()
    output_times: tuple = ()
    seed: int = 0
    allow_ill_prepared: bool = False
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.potential, str):
            object.__setattr__(self, "potential", tuple(float(c) for c in self.potential))
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if any(e <= 0.0 for e in eps):
            raise ValueError("eps_list entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        times = tuple(float(t) for t in self.output_times)
        object.__setattr__(self, "output_times", times)
        if times:
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("output_times must be strictly increasing")
            if times[0] < 0.0 or times[-1] > self.solver.t_end + 1e-12:
                raise ValueError("output_times must lie within [0, t_end]")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        object.__setattr__(self, "seed", int(self.seed))

    def times(self):
        return self.output_times or default_output_times(self.solver.t_end)


_TOP_KEYS = (
    "potential",
    "solver",
    "jko",
    "eps_list",
    "initial_data",
    "output_times",
    "seed",
    "output_dir",
    "allow_ill_prepared",
    "workers",
)
_SOLVER_KEYS = ("n", "dt", "eps", "t_end", "theta_scheme", "max_newton", "newton_tol", "positivity_mode")
_JKO_KEYS = ("tau", "m", "inner_tol", "inner_max", "reconstruct_bandwidth")
_INITIAL_KEYS = ("name", "params")


def experiment_from_dict(doc):
    """Build an ExperimentConfig from a JSON document, rejecting typos."""
    _reject_unknown(doc, _TOP_KEYS, "config")
    for key in ("potential", "solver", "initial_data", "output_dir"):
        if key not in doc:
            raise ValueError(f"config is missing required key {key!r}")
    solver_doc = dict(doc["solver"])
    _reject_unknown(solver_doc, _SOLVER_KEYS, "solver")
    solver = SolverConfig(**solver_doc)
    jko = None
    if doc.get("jko") is not None:
        jko_doc = dict(doc["jko"])
        _reject_unknown(jko_doc, _JKO_KEYS, "jko")
        jko = JkoConfig(**jko_doc)
    initial_doc = dict(doc["initial_data"])
    _reject_unknown(initial_doc, _INITIAL_KEYS, "initial_data")
    if "name" not in initial_doc:
        raise ValueError("initial_data needs a generator name")
    initial = InitialData(name=initial_doc["name"], params=dict(initial_doc.get("params") or {}))
    cfg = ExperimentConfig(
        potential=doc["potential"],
        solver=solver,
        initial_data=initial,
        output_dir=doc["output_dir"],
        jko=jko,
        eps_list=tuple(doc.get("eps_list") or ()),
        output_times=tuple(doc.get("output_times") or ()),
        seed=doc.get("seed", 0),
        allow_ill_prepared=bool(doc.get("allow_ill_prepared", False)),
        workers=int(doc.get("workers", 1)),
    )
    # dry-run the generator so a bad name or parameter fails at load time
    generate_initial(cfg.initial_data.name, cfg.initial_data.params, cfg.solver.n)
    return cfg


def load_config(path):
    with open(path) as fh:
        return experiment_from_dict(json.load(fh))


def config_as_dict(cfg):
    """JSON-ready canonical form with defaults resolved."""
    return {
        "potential": cfg.potential if isinstance(cfg.potential, str) else list(cfg.potential),
        "solver": asdict(cfg.solver),
        "jko": asdict(cfg.jko) if cfg.jko is not None else None,
        "eps_list": list(cfg.eps_list),
        "initial_data": {"name": cfg.initial_data.name, "params": dict(cfg.initial_data.params)},
        "output_times": list(cfg.times()),
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "allow_ill_prepared": cfg.allow_ill_prepared,
        "workers": cfg.workers,
    }


def config_hash(cfg):
    """sha256 of the canonical config, minus execution-only keys.

    output_dir and workers do not influence any computed number, so two
    configs differing only there share a hash.
    """
    doc = config_as_dict(cfg)
    doc.pop("output_dir")
    doc.pop("workers")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _git_describe():
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except OSError:
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def collect_versions():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "chflow": __version__,
        "git": _git_describe(),
    }


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, cfg, outputs, extra=None):
    """manifest.json: config, config_hash, versions, outputs with hashes."""
    out_dir = Path(out_dir)
    manifest = {
        "config": config_as_dict(cfg),
        "config_hash": config_hash(cfg),
        "versions": collect_versions(),
        "outputs": [
            {"path": str(Path(p).relative_to(out_dir)), "sha256": _sha256_file(p)}
            for p in outputs
        ],
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _potential_of(cfg):
    if isinstance(cfg.potential, str):
        return make_potential(cfg.potential)
    return from_polynomial(cfg.potential)


def _grid_for(eps, n_base):
    """Resolve the interfacial width by at least 8 cells."""
    return max(int(n_base), int(math.ceil(8.0 / eps)))


def _wrinkle_rows(record, unstable):
    rows = []
    for t, snap in zip(record.times, record.snapshots):
        rep = wrinkling_report(snap, unstable, eta=_WRINKLE_ETA, delta=_WRINKLE_DELTA)
        rows.append(
            {
                "t": float(t),
                "violations": len(rep.violations),
                "oscillating_mass_fraction": rep.oscillating_mass_fraction,
                "far_mass_fraction": rep.far_mass_fraction,
                "sigma_localized": rep.sigma_localized,
            }
        )
    return rows


def _audit_as_dict(audit):
    return {
        "flavor": audit.flavor,
        "times": [float(t) for t in audit.times],
        "residuals": [float(r) for r in audit.residuals],
        "slope_integral": audit.slope_integral,
        "speed_integral": audit.speed_integral,
        "min_residual": audit.min_residual,
    }


def _write_final_state(record, path):
    snap = record.snapshots[-1]
    x = (np.arange(snap.n) + 0.5) / snap.n
    with open(path, "w", newline="") as fh:
        fh.write("x,density\n")
        for xi, vi in zip(x, snap.values):
            fh.write(f"{xi!r},{float(vi)!r}\n")


def run_single(cfg, mode):
    """Dispatch one run, attach diagnostics, persist artifacts.

    Writes trajectory.csv, final_state.csv, audit.json, wrinkle.json, and a
    manifest under output_dir/single-<mode>; jko runs add the movement
    ledger and a cross-validation table against the regularized solver,
    cubic nonlocal runs add the matched local comparison.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    spec = _potential_of(cfg)
    env = compute_convex_envelope(spec)
    unstable = compute_unstable_set(spec, env)
    times = cfg.times()
    f0 = generate_initial(cfg.initial_data.name, cfg.initial_data.params, cfg.solver.n)

    out_dir = Path(cfg.output_dir) / f"single-{mode}"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    if mode == "eps":
        record = simulate_eps(f0, cfg.solver, spec, output_times=times, env=env)
    elif mode == "limit":
        limit_cfg = replace(cfg.solver, eps=0.0)
        record = simulate_limit(f0, limit_cfg, env, output_times=times)
    elif mode == "jko":
        if cfg.jko is None:
            raise ValueError("mode=jko needs a jko config section")
        record = simulate_jko(f0, cfg.jko, cfg.solver.eps, spec, cfg.solver.t_end)
        ledger_path = out_dir / "ledger.csv"
        write_ledger_csv(record, ledger_path)
        outputs.append(ledger_path)
        fd_record = simulate_eps(f0, cfg.solver, spec, output_times=record.times, env=env)
        cross_path = out_dir / "cross_validation.csv"
        with open(cross_path, "w", newline="") as fh:
            fh.write("t,d2\n")
            for t, a, b in zip(record.times, record.snapshots, fd_record.snapshots):
                fh.write(f"{float(t)!r},{w2_periodic(a, b)!r}\n")
        outputs.append(cross_path)
    else:
        kern = make_kernel()
        record = simulate_nonlocal(f0, cfg.solver, kern, spec, env=env, output_times=times)
        if getattr(spec, "name", None) == "cubic-motivation":
            comparison = compare_local_nonlocal(
                f0, cfg.solver.eps, kern, spec, cfg.solver.t_end, dt=cfg.solver.dt, n_out=len(times)
            )
            cmp_path = out_dir / "comparison.json"
            with open(cmp_path, "w") as fh:
                json.dump(
                    {
                        "eps": comparison.eps,
                        "eps_eff": comparison.eps_eff,
                        "k0": comparison.k0,
                        "times": list(comparison.times),
                        "gaps": list(comparison.gaps),
                        "sup_nonlocal": comparison.sup_nonlocal,
                        "sup_local": comparison.sup_local,
                    },
                    fh,
                    indent=2,
                    sort_keys=True,
                )
                fh.write("\n")
            outputs.append(cmp_path)

    traj_path = out_dir / "trajectory.csv"
    record.write_csv(traj_path)
    outputs.append(traj_path)

    final_path = out_dir / "final_state.csv"
    _write_final_state(record, final_path)
    outputs.append(final_path)

    audit_path = out_dir / "audit.json"
    audit_payload = (
        _audit_as_dict(energy_dissipation_audit(record))
        if len(record.snapshots) >= 2
        else {"error": "run aborted before the second snapshot"}
    )
    with open(audit_path, "w") as fh:
        json.dump(audit_payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(audit_path)

    wrinkle_path = out_dir / "wrinkle.json"
    with open(wrinkle_path, "w") as fh:
        json.dump(_wrinkle_rows(record, unstable), fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(wrinkle_path)

    write_manifest(out_dir, cfg, outputs, extra={"mode": mode})
    return record


@dataclass(frozen=True)
class SweepRow:
    """Gap columns of one regularized run against the relaxed reference."""

    eps: float
    sup_t_d2_to_limit: float
    slope_gap_L2: float
    energy_gap_final: float
    wrinkle_summary: dict


@dataclass(frozen=True)
class SweepReport:
    """Per-eps rows plus the shared relaxed reference run."""

    rows: tuple
    limit_run: object
    grids: dict = field(default_factory=dict)
    failures: tuple = ()


def _sweep_worker(payload):
    """One regularized run and its gap columns; exceptions become row failures."""
    cfg, eps, times, limit_vals, limit_slopes, limit_energies = payload
    try:
        spec = _potential_of(cfg)
        env = compute_convex_envelope(spec)
        unstable = compute_unstable_set(spec, env)
        n_eps = _grid_for(eps, cfg.solver.n)
        f0 = generate_initial(cfg.initial_data.name, cfg.initial_data.params, n_eps)
        run_cfg = replace(cfg.solver, n=n_eps, eps=eps)
        record = simulate_eps(f0, run_cfg, spec, output_times=times, env=env)
        if not record.completed or len(record.snapshots) != len(limit_vals):
            raise RuntimeError("regularized run aborted before reaching t_end")
        limit_snaps = [DensityField(v) for v in limit_vals]
        d2 = np.array([w2_periodic(a, b) for a, b in zip(record.snapshots, limit_snaps)])
        slopes = np.array([rep.slope_eps for rep in record.reports])
        energies = np.array([rep.e_eps for rep in record.reports])
        t_arr = np.asarray(times, dtype=float)
        slope_gap = float(np.trapezoid((slopes - np.asarray(limit_slopes)) ** 2, t_arr))
        energy_gap = float(np.max(np.abs(energies - np.asarray(limit_energies))))
        wr = wrinkling_report(record.snapshots[-1], unstable, eta=_WRINKLE_ETA, delta=_WRINKLE_DELTA)
        row = SweepRow(
            eps=float(eps),
            sup_t_d2_to_limit=float(np.max(d2)),
            slope_gap_L2=slope_gap,
            energy_gap_final=energy_gap,
            wrinkle_summary={
                "violations": len(wr.violations),
                "oscillating_mass_fraction": wr.oscillating_mass_fraction,
                "far_mass_fraction": wr.far_mass_fraction,
                "sigma_localized": wr.sigma_localized,
            },
        )
        return eps, row, record, None
    except Exception as exc:  # per-eps isolation: the sweep continues
        return eps, None, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg):
    """Relaxed reference plus one regularized run per eps; persist the report.

    The reference runs on the finest grid the sweep needs.  Initial data must
    pass the well-preparedness gate unless allow_ill_prepared is set.  A
    failing eps is recorded and skipped; the remaining runs are unaffected.
    """
    if not cfg.eps_list:
        raise ValueError("run_sweep needs a nonempty eps_list")
    spec = _potential_of(cfg)
    env = compute_convex_envelope(spec)
    times = cfg.times()

    grids = {eps: _grid_for(eps, cfg.solver.n) for eps in cfg.eps_list}
    n_limit = max(grids.values())
    f0_limit = generate_initial(cfg.initial_data.name, cfg.initial_data.params, n_limit)

    family = [
        (eps, generate_initial(cfg.initial_data.name, cfg.initial_data.params, grids[eps]))
        for eps in cfg.eps_list
    ]
    prep = well_preparedness(family, f0_limit, env, spec)
    if not prep.well_prepared and not cfg.allow_ill_prepared:
        raise HypothesisViolation(
            "initial data is not well prepared for this eps family",
            report={"rows": [tuple(map(float, row)) for row in prep.rows]},
        )

    limit_cfg = replace(cfg.solver, n=n_limit, eps=0.0)
    limit_rec = simulate_limit(f0_limit, limit_cfg, env, output_times=times)
    limit_vals = [snap.values for snap in limit_rec.snapshots]
    limit_slopes = tuple(rep.slope_star for rep in limit_rec.reports)
    limit_energies = tuple(rep.e_star for rep in limit_rec.reports)

    payloads = [
        (cfg, eps, times, limit_vals, limit_slopes, limit_energies) for eps in cfg.eps_list
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(payloads))) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    else:
        results = [_sweep_worker(p) for p in payloads]

    out_dir = Path(cfg.output_dir) / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    rows = []
    failures = []
    for eps, row, record, err in results:
        if err is not None:
            failures.append((float(eps), err))
            continue
        rows.append(row)
        run_dir = out_dir / f"eps-{eps:g}"
        run_dir.mkdir(exist_ok=True)
        traj = run_dir / "trajectory.csv"
        record.write_csv(traj)
        outputs.append(traj)

    limit_path = out_dir / "limit_trajectory.csv"
    limit_rec.write_csv(limit_path)
    outputs.append(limit_path)

    report_path = out_dir / "sweep_report.csv"
    with open(report_path, "w", newline="") as fh:
        fh.write(
            "eps,sup_t_d2_to_limit,slope_gap_L2,energy_gap_final,"
            "wrinkle_violations,wrinkle_osc_mass,wrinkle_localized\n"
        )
        for row in rows:
            ws = row.wrinkle_summary
            fh.write(
                f"{row.eps!r},{row.sup_t_d2_to_limit!r},{row.slope_gap_L2!r},"
                f"{row.energy_gap_final!r},{ws['violations']},"
                f"{ws['oscillating_mass_fraction']!r},{int(ws['sigma_localized'])}\n"
            )
    outputs.append(report_path)

    write_manifest(
        out_dir,
        cfg,
        outputs,
        extra={
            "mode": "sweep",
            "grids": {f"{eps:g}": grids[eps] for eps in cfg.eps_list},
            "failures": [{"eps": e, "error": msg} for e, msg in failures],
        },
    )
    return SweepReport(rows=tuple(rows), limit_run=limit_rec, grids=grids, failures=tuple(failures))
