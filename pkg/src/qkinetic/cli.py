"""Command line entry point: ``qkinetic run | verify | sweep``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .collision import CollisionWorkspace, set_threads
from .core import ConfigError, DistributionField, ModelParams, build_grids, load_config
from .diagnostics import e_functional, make_example_data, record, write_csv
from .solver import SolverConfig, SolverError, time_march

log = logging.getLogger("qkinetic")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4

ALL_CHECKS = ("annihilation", "decomposition", "splitting", "lemma_2_3", "lemma_2_5",
              "gamma_estimate", "contraction", "delta_zero_limit")
SWEEP_AXES = ("delta", "rho", "gamma", "resolution")


# ---------------------------------------------------------------- setup helpers

def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_problem(cfg, conservative=False, kernel_cache=None):
    """Grids, parameters and collision workspace described by ``cfg``."""
    params = ModelParams.from_config(cfg)
    vgrid, sphere, space = build_grids(cfg)
    if params.domain_mode != space.mode:
        raise ConfigError("domain_mode mismatch")
    ws = CollisionWorkspace(vgrid, sphere, params, float(cfg.get("cutoff_m", 0.5)),
                            kernel_cache=kernel_cache,
                            conservative=conservative or bool(cfg.get("conservative", False)))
    if "k_signs" in cfg:
        signs = np.asarray(cfg["k_signs"], dtype=float)
        if signs.shape != (3,):
            raise ConfigError("k_signs needs three entries")
        ws.k_signs = signs
    return params, (vgrid, sphere, space), ws


def initial_field(cfg, params, grids, ws):
    """F0 from the ``initial`` block: equilibrium, example (phi mu) or bump."""
    vgrid, _, space = grids
    spec = dict(cfg.get("initial", {"kind": "equilibrium"}))
    kind = spec.get("kind", "equilibrium")
    n_x = len(space.points)
    if kind == "equilibrium":
        return DistributionField(np.tile(ws.tables.mu, (n_x, 1)), params)
    if kind == "example":
        phi = spec.get("phi", {"kind": "cosine", "amplitude": 0.5})
        F0, report = make_example_data(phi, params, (vgrid, space), ws.tables,
                                       M=spec.get("M"), epsilon=spec.get("epsilon"))
        if not report.within_cap:
            raise ConfigError(f"phi exceeds the admissible cap {report.cap:.4g}")
        return F0
    if kind == "bump":
        from .equilibrium import eval_mu

        ref = float(spec.get("reference_delta", params.delta))
        a = float(spec.get("amplitude", 0.3))
        c = np.asarray(spec.get("center", [1.0, 0.0, 0.0]), dtype=float)
        width = float(spec.get("width", 1.0))
        v = vgrid.nodes
        base = eval_mu(v, ref, params.rho)
        F = base * (1 + a * np.exp(-np.sum((v - c) ** 2, axis=1) / width ** 2))
        F = np.tile(F, (n_x, 1))
        if space.mode == "torus1d" and "x_amplitude" in spec:
            x = space.points
            F *= (1 + float(spec["x_amplitude"]) * np.cos(2 * np.pi * x / space.length))[:, None]
        field = DistributionField(F, params)
        hit = field.first_violation()
        if hit is not None:
            raise ConfigError(f"initial bump is not admissible at node {hit[:2]}")
        return field
    raise ConfigError(f"unknown initial kind {kind!r}")


def _threads(args):
    if getattr(args, "threads", None):
        return set_threads(args.threads)
    return set_threads(None)


def _write_snapshot(out_dir, index, t, F, grids, params):
    vgrid, _, space = grids
    stem = out_dir / f"snapshot_{index:04d}"
    F.values.astype("<f8").tofile(stem.with_suffix(".bin"))
    header = {
        "time": t, "shape": list(F.values.shape), "dtype": "<f8", "order": "C",
        "v_max": vgrid.v_max, "n_per_axis": vgrid.n_per_axis,
        "domain_mode": space.mode, "n_x": len(space.points), "length": space.length,
        "delta": params.delta, "rho": params.rho,
    }
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return [stem.with_suffix(".bin"), stem.with_suffix(".json")]


def _write_manifest(out_dir, cfg, seed, start, files):
    manifest = {
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "seed": seed,
        "start_time": start,
        "end_time": time.time(),
        "outputs": {Path(f).name: file_hash(f) for f in files},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------- run

def execute_run(cfg, conservative=False, kernel_cache=None, snapshots=False, out_dir=None):
    """Run one time march; returns (trajectory, files, error or None)."""
    params, grids, ws = build_problem(cfg, conservative, kernel_cache)
    vgrid, _, space = grids
    F0 = initial_field(cfg, params, grids, ws)
    solver_cfg = SolverConfig.from_config({**cfg, "conservative": ws.conservative})
    if solver_cfg.t_end is None and solver_cfg.n_windows is None:
        solver_cfg.n_windows = 1
    diag_grids = (vgrid, space)
    e0 = e_functional(F0, ws.tables, diag_grids)
    files = []
    count = [0]

    def on_window(t, F, report, rec):
        if snapshots and out_dir is not None:
            count[0] += 1
            files.extend(_write_snapshot(out_dir, count[0], t, F, grids, params))

    if snapshots and out_dir is not None:
        files.extend(_write_snapshot(out_dir, 0, 0.0, F0, grids, params))
    diag = lambda t, F, rep: record(t, F, ws.tables, diag_grids, e0, params.beta)
    try:
        traj = time_march(F0, ws, space, solver_cfg, diagnostics=diag, on_window=on_window)
        return traj, files, None
    except SolverError as exc:
        return exc.trajectory or [], files, exc


def cmd_run(args):
    start = time.time()
    try:
        cfg = load_config(args.config)
        _threads(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        traj, files, err = execute_run(cfg, args.conservative_fix, args.kernel_cache,
                                       args.snapshots, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    csv_path = out_dir / "diagnostics.csv"
    write_csv(csv_path, [rec for _, _, rec in traj])
    files.append(csv_path)
    _write_manifest(out_dir, cfg, args.seed, start, files)
    if err is not None:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------- verify

def _combos(cfg):
    deltas = cfg.get("verify_deltas", [cfg.get("delta", 1.0)])
    rhos = cfg.get("verify_rhos", [cfg.get("rho", 1.0)])
    return [(float(d), float(r)) for d in deltas for r in rhos]


def run_checks(cfg, checks, seed=0):
    from . import verifier as V
    from .solver import perturbation, solve_window, suggest_horizon

    reports = []
    base_params, grids, base_ws = build_problem(cfg)
    vgrid, sphere, space = grids
    vcfg = cfg.get("verify", {})
    for delta, rho in _combos(cfg):
        params = base_params.replace(delta=delta, rho=rho)
        ws = base_ws.with_params(params)
        ws.k_signs = base_ws.k_signs
        tag = {"delta": delta, "rho": rho}
        for name in checks:
            if name == "annihilation":
                rep = V.check_annihilation(ws)
            elif name == "decomposition":
                rep = V.check_decomposition(ws, count=int(vcfg.get("decomposition_fields", 20)),
                                            seed=seed)
            elif name == "splitting":
                rep = V.check_splitting(ws, seed=seed)
            elif name == "lemma_2_3":
                rep = V.check_lemma_2_3(params, int(vcfg.get("samples", 100_000)), seed,
                                        vgrid.v_max)
            elif name == "lemma_2_5":
                rep = V.check_lemma_2_5(params, sphere, int(vcfg.get("n_base", 9)),
                                        int(vcfg.get("n_fine", 17)), v_max=vgrid.v_max)
            elif name == "gamma_estimate":
                rep = V.check_gamma_estimate(params, sphere, float(vcfg.get("p", 2.0)),
                                             int(vcfg.get("family_size", 4)), seed,
                                             int(vcfg.get("n_base", 9)),
                                             int(vcfg.get("n_fine", 17)), vgrid.v_max)
            elif name == "contraction":
                rng = V.make_rng(seed, 33)
                scfg = SolverConfig.from_config(cfg)
                runs = {}
                F0 = ws.tables.mu + ws.tables.mu_bar_sqrt * V.random_admissible_perturbation(
                    ws, rng, 0.3)
                H = suggest_horizon(perturbation(F0, ws.tables), params, vgrid,
                                    scfg.horizon_constant)
                for factor in (1.0, 0.5, 0.25):
                    _, rep_w, _ = solve_window(F0[None], H * factor, ws, None, scfg)
                    runs[factor] = [rep_w]
                rep = V.check_contraction(runs)
            elif name == "delta_zero_limit":
                rep = V.check_delta_zero_limit(vgrid, sphere, params)
            else:
                raise ConfigError(f"unknown check {name!r}")
            rep.details = {**rep.details, **tag}
            reports.append(rep)
            log.info("%s %s: %s", name, tag, "pass" if rep.passed else "FAIL")
    return reports


def cmd_verify(args):
    try:
        cfg = load_config(args.config)
        checks = cfg.get("checks", list(ALL_CHECKS))
        if not checks:
            raise ConfigError("no checks requested")
        _threads(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        reports = run_checks(cfg, checks, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = out_dir / "verify_report.json"
    reports.sort(key=lambda r: (r.id, r.details.get("delta", 0), r.details.get("rho", 0)))
    path.write_text(json.dumps([r.as_dict() for r in reports], indent=2))
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.id} delta={r.details.get('delta')} "
              f"rho={r.details.get('rho')} worst={r.worst_ratio:.3e}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


# ---------------------------------------------------------------- sweep

def _axis_config(cfg, axis, value):
    out = dict(cfg)
    if axis == "resolution":
        out["n_per_axis"] = int(value)
    else:
        out[axis] = float(value)
    if axis == "delta":
        init = dict(out.get("initial", {"kind": "equilibrium"}))
        init.setdefault("reference_delta", float(cfg.get("delta", 0.0)))
        out["initial"] = init
    return out


def sweep_slope(finals):
    """Log-log slope of sup|F_delta - F_0| against delta from final fields."""
    if 0.0 not in finals:
        return None
    ref = finals[0.0]
    pts = [(d, float(np.max(np.abs(F - ref)))) for d, F in finals.items() if d > 0]
    pts = [(d, e) for d, e in pts if e > 0]
    if len(pts) < 2:
        return None
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def cmd_sweep(args):
    start = time.time()
    try:
        cfg = load_config(args.config)
        axis = args.axis or cfg.get("sweep_axis")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
        values = cfg.get("sweep_values")
        if not values:
            raise ConfigError("sweep_values must list at least one value")
        _threads(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    records, extra, failures, finals = [], [], {}, {}
    for value in values:
        try:
            traj, _, err = execute_run(_axis_config(cfg, axis, value), args.conservative_fix,
                                       args.kernel_cache)
        except ConfigError as exc:
            failures[str(value)] = f"config: {exc}"
            continue
        if err is not None:
            failures[str(value)] = f"solver: {err}"
        for t, F, rec in traj:
            records.append(rec)
            extra.append({axis: value})
        if traj and err is None:
            finals[float(value)] = traj[-1][1].values
    csv_path = out_dir / "sweep.csv"
    write_csv(csv_path, records, extra)
    summary = {"axis": axis, "values": values, "failures": failures}
    if axis == "delta":
        summary["delta_slope"] = sweep_slope(finals)
    summary_path = out_dir / "sweep_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_manifest(out_dir, cfg, args.seed, start, [csv_path, summary_path])
    return EXIT_OK if not failures else EXIT_SOLVER


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="qkinetic", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out-dir", default="qkinetic_out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: QKINETIC_THREADS or all cores)")
        p.add_argument("--seed", type=int, default=0, help="random seed for sampled checks")
        p.add_argument("--conservative-fix", action="store_true",
                       help="project collision output onto zero mass/momentum/energy change")
        p.add_argument("--kernel-cache", type=int, default=None,
                       help="upper bound in bytes on the collision tables")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("run", help="time march one configuration")
    common(p)
    p.add_argument("--snapshots", action="store_true", help="write full-field snapshots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the estimate checks")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="repeat a run along one parameter axis")
    common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
