"""Command-line interface.

Subcommands: simulate, sweep, operator-check, spectrum, minimize.
Exit code 0 means every asserted bound and tolerance passed.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from .geometry import DetectorSpec, PhysicalConstants, build_grid, geometry_from_dict
from .harness import ExperimentConfig, minimize_product, run_experiment, sweep
from .operator_lab import (
    build_dense,
    povm_completeness,
    semigroup_contraction_check,
    skew_identity_residual,
    spectrum_check,
)

OUTDIR_ENV = "ABCLAB_OUTDIR"


def _load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_json(fh.read())


def _resolve_outdir(args, config: ExperimentConfig) -> Path:
    out = args.out or os.environ.get(OUTDIR_ENV) or config.output_dir or "abclab_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    outdir = _resolve_outdir(args, config)
    report = run_experiment(config)
    stem = f"run_{report.config_hash}"
    (outdir / f"{stem}.json").write_text(report.to_json())
    if args.plots:
        from .detection import conditional_time_moments  # noqa: F401  (import check)
        from .energy import energy_density
        from .plots import plot_detection_record, plot_energy_density
        from .propagator import Propagator, assemble_hamiltonian, evolve
        from .harness import _potential_from_spec, _state_from_spec

        constants = PhysicalConstants(hbar=config.hbar, mass=config.mass)
        grid = build_grid(geometry_from_dict(config.geometry), config.n_interior)
        psi0 = _state_from_spec(grid, config.state, constants)
        potential = _potential_from_spec(grid, config.potential)
        ham = assemble_hamiltonian(grid, DetectorSpec(config.kappa), potential, constants)
        record = evolve(Propagator(ham, dt=config.dt), psi0, config.t_max,
                        stop_residual=config.stop_residual)
        record.to_csv(outdir / f"{stem}_detection.csv")
        plot_detection_record(record, outdir / f"{stem}_w.svg")
        if config.potential.get("kind", "none") == "none":
            dens = energy_density(psi0, padding_factor=config.padding_factor)
            dens.to_csv(outdir / f"{stem}_rho.csv")
            plot_energy_density(dens, outdir / f"{stem}_rho.svg")
    print(f"product={report.product:.6g} bound={report.bound:.6g} "
          f"margin={report.margin:.6g} p_hat={report.p_hat:.6g} "
          f"delta_num={report.delta_num} -> {outdir}")
    return 0 if report.asserts_passed else 1


def _parse_axis(spec: str):
    key, _, values = spec.partition("=")
    if not values:
        raise argparse.ArgumentTypeError(f"axis {spec!r} must look like key=v1,v2,...")
    parsed = []
    for tok in values.split(","):
        try:
            parsed.append(json.loads(tok))
        except json.JSONDecodeError:
            parsed.append(tok)
    return key, parsed


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    outdir = _resolve_outdir(args, config)
    axes = dict(_parse_axis(a) for a in args.axis)
    csv_path = outdir / "sweep.csv"
    rows = sweep(config, axes, workers=args.workers, csv_path=csv_path)
    bad = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} rows -> {csv_path} ({len(bad)} flagged)")
    return 0 if not bad else 1


def _lab_objects(config: ExperimentConfig, lab_n: int):
    constants = PhysicalConstants(hbar=config.hbar, mass=config.mass)
    grid = build_grid(geometry_from_dict(config.geometry), lab_n)
    dt = config.dt if config.dt is not None else grid.dx
    return build_dense(grid, dt=dt, detector=DetectorSpec(config.kappa),
                       constants=constants)


def _cmd_operator_check(args) -> int:
    config = _load_config(args.config)
    outdir = _resolve_outdir(args, config)
    ops = _lab_objects(config, args.lab_n)
    t_list = [0.0, ops.dt, 10 * ops.dt, 100 * ops.dt]
    semi = semigroup_contraction_check(ops, t_list)
    checks = [
        ("skew_identity_residual", skew_identity_residual(ops), 1e-12),
        ("max_step_norm_minus_1", semi.max_norm - 1.0, 1e-10),
        ("semigroup_defect", semi.semigroup_defect, 1e-12),
        ("povm_completeness_residual",
         povm_completeness(ops, 200 * ops.dt, quadrature="cn-midpoint"), 1e-6),
    ]
    rows = [
        {"check": name, "value": f"{val:.6e}", "tolerance": f"{tol:.1e}",
         "pass": bool(val <= tol)}
        for name, val, tol in checks
    ]
    path = outdir / "operator_checks.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["check", "value", "tolerance", "pass"])
        writer.writeheader()
        writer.writerows(rows)
    ok = all(r["pass"] for r in rows)
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['check']}: {r['value']} "
              f"(tol {r['tolerance']})")
    print(f"-> {path}")
    return 0 if ok else 1


def _cmd_spectrum(args) -> int:
    config = _load_config(args.config)
    outdir = _resolve_outdir(args, config)
    ops = _lab_objects(config, args.lab_n)
    rep = spectrum_check(ops)
    path = outdir / "spectrum.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re_E", "im_E"])
        for e in rep.eigenvalues:
            writer.writerow([f"{e.real:.17g}", f"{e.imag:.17g}"])
    print(f"max Im(E) = {rep.max_imag:.3e}, slowest decay rate = {rep.gamma_min:.6g}, "
          f"non-normality = {rep.nonnormality:.3e} -> {path}")
    return 0 if rep.max_imag <= 1e-10 else 1


def _cmd_minimize(args) -> int:
    config = _load_config(args.config)
    outdir = _resolve_outdir(args, config)
    base = config.replace(compute_delta=False)
    result = minimize_product(budget=args.budget, seed=args.seed, base=base)
    payload = {
        "best_params": result.best_params,
        "best_product": result.best_product,
        "delta_num": result.delta_num,
        "floor": result.floor,
        "n_evaluations": result.n_evaluations,
        "converged": result.converged,
    }
    path = outdir / "minimize.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2))
    print(f"best product {result.best_product:.6f} >= floor {result.floor:.6f} "
          f"({result.n_evaluations} evaluations) -> {path}")
    ok = result.best_product >= result.floor and math.isfinite(result.best_product)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="abclab",
        description="Detection-time uncertainty laboratory for absorbing-boundary detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one experiment and write the report")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--plots", action="store_true", help="also write CSV/SVG outputs")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="cartesian sweep over config axes")
    p.add_argument("config")
    p.add_argument("--axis", action="append", required=True,
                   metavar="KEY=V1,V2,...", help="dotted config path and values")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("operator-check", help="dense operator identities")
    p.add_argument("config")
    p.add_argument("--lab-n", type=int, default=126,
                   help="interior nodes for the dense lab (capped at 510)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_operator_check)

    p = sub.add_parser("spectrum", help="eigenvalues of the dense Hamiltonian")
    p.add_argument("config")
    p.add_argument("--lab-n", type=int, default=126)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("minimize", help="exploratory product minimization")
    p.add_argument("config")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_minimize)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
