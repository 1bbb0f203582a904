"""Configuration-driven experiments: single uncertainty-product runs,
parameter sweeps, and the exploratory product-minimization search."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize as _nm_minimize

from .detection import (
    ProductReport,
    conditional_time_moments,
    detection_probability,
    uncertainty_product_report,
)
from .energy import sigmaE_dirichlet, sigmaE_operator, sigmaE_spectral
from .geometry import (
    DetectorSpec,
    Geometry,
    Grid,
    Interval,
    PhysicalConstants,
    WaveFunction,
    build_grid,
    geometry_from_dict,
    make_bump,
    make_gaussian,
    make_mode_superposition,
)
from .propagator import Propagator, assemble_hamiltonian, evolve

__all__ = [
    "ExperimentConfig",
    "UncertaintyReport",
    "MinimizeResult",
    "run_experiment",
    "sweep",
    "minimize_product",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one run; round-trips losslessly through JSON."""

    geometry: dict
    state: dict
    kappa: float = 1.0
    n_interior: int = 2048
    dt: Optional[float] = None            # None means dt = dx
    potential: dict = field(default_factory=lambda: {"kind": "none"})
    t_max: float = 10.0
    stop_residual: Optional[float] = None
    hbar: float = 1.0
    mass: float = 1.0
    eps_tail: float = 1e-6
    max_tail_residual: float = 1e-2
    compute_delta: bool = True
    padding_factor: int = 8
    seed: int = 0
    output_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _state_from_spec(
    grid: Grid, spec: dict, constants: PhysicalConstants
) -> WaveFunction:
    kind = spec.get("kind")
    if kind == "gaussian":
        return make_gaussian(
            grid, x0=float(spec["x0"]), p0=float(spec["p0"]),
            sigma_x=float(spec["sigma_x"]), constants=constants,
        )
    if kind == "bump":
        return make_bump(
            grid, center=float(spec["center"]), half_width=float(spec["half_width"]),
            p0=float(spec.get("p0", 0.0)), constants=constants,
        )
    if kind == "modes":
        coeffs = [
            complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c)
            for c in spec["coefficients"]
        ]
        return make_mode_superposition(grid, coeffs, constants=constants)
    raise ValueError(f"unknown state kind {kind!r}")


def _potential_from_spec(grid: Grid, spec: dict):
    kind = spec.get("kind", "none")
    if kind == "none":
        return None
    if kind == "constant":
        return float(spec["value"])
    if kind == "bump":
        center = float(spec["center"])
        half_width = float(spec["half_width"])
        height = float(spec["height"])
        x = grid.nodes
        s = (x - center) / half_width
        v = np.zeros_like(x)
        inside = np.abs(s) < 1.0
        v[inside] = height * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return v
    raise ValueError(f"unknown potential kind {kind!r}")


@dataclass(frozen=True)
class UncertaintyReport:
    """End-to-end result of one run; deterministic for a fixed config."""

    config: dict
    config_hash: str
    p_hat: float
    sigma_T: float
    mean_T: float
    sigma_E: dict                     # per-route values (may hold None)
    sigma_E_primary: float
    sigma_E_route: str
    product: float
    bound: float
    margin: float
    delta_num: Optional[float]
    residual_norm_sq: float
    norm_balance_defect: float
    prob_route_l2_diff: float
    tail_method: str
    t_max_actual: float
    n_steps: int
    asserts_passed: bool
    trivially_satisfied: bool

    def to_json(self) -> str:
        def clean(x):
            if isinstance(x, float) and math.isnan(x):
                return None
            return x

        d = {k: clean(v) for k, v in dataclasses.asdict(self).items()}
        return json.dumps(d, sort_keys=True, indent=2)


def _prob_route_l2_diff(record) -> float:
    """Relative L2-in-time difference between the current-based and
    amplitude-based detection densities."""
    p1 = np.sum(record.prob1, axis=1)
    p2 = np.sum(record.prob2, axis=1)
    den = math.sqrt(float(np.sum(p2**2)))
    if den == 0.0:
        return 0.0
    return math.sqrt(float(np.sum((p1 - p2) ** 2))) / den


def _energy_routes(
    psi0: WaveFunction, config: ExperimentConfig, potential
) -> tuple[dict, float, str]:
    routes: dict = {
        "free_spectral": None,
        "operator_moments": None,
        "dirichlet_expansion": None,
    }
    pot_kind = config.potential.get("kind", "none")
    op = sigmaE_operator(psi0, potential=potential)
    routes["operator_moments"] = op.sigma_E
    if pot_kind == "none":
        try:
            routes["free_spectral"] = sigmaE_spectral(
                psi0, padding_factor=config.padding_factor
            ).sigma_E
        except ValueError:
            routes["free_spectral"] = None
        if isinstance(psi0.grid.geometry, Interval):
            try:
                routes["dirichlet_expansion"] = sigmaE_dirichlet(psi0).sigma_E
            except ValueError:
                routes["dirichlet_expansion"] = None
    if routes["free_spectral"] is not None:
        return routes, routes["free_spectral"], "free_spectral"
    return routes, routes["operator_moments"], "operator_moments"


def run_experiment(config: ExperimentConfig, _refined: bool = False) -> UncertaintyReport:
    """state -> evolve -> detection stats -> energy stats -> product report.

    When ``compute_delta`` is set, a paired run at half dx and half dt
    estimates the discretization error delta_num of the product.
    """
    constants = PhysicalConstants(hbar=config.hbar, mass=config.mass)
    geometry = geometry_from_dict(config.geometry)
    grid = build_grid(geometry, config.n_interior)
    psi0 = _state_from_spec(grid, config.state, constants)
    potential = _potential_from_spec(grid, config.potential)
    detector = DetectorSpec(kappa=config.kappa)
    ham = assemble_hamiltonian(grid, detector, potential=potential, constants=constants)
    prop = Propagator(ham, dt=config.dt)
    record = evolve(prop, psi0, config.t_max, stop_residual=config.stop_residual)

    stats = conditional_time_moments(
        record, eps_tail=config.eps_tail, max_tail_residual=config.max_tail_residual
    )
    routes, sigma_e, route_name = _energy_routes(psi0, config, potential)
    product_rep: ProductReport = uncertainty_product_report(stats, sigma_e, constants)

    delta_num: Optional[float] = None
    if config.compute_delta and not _refined:
        refined = config.replace(
            n_interior=2 * config.n_interior + 1,
            dt=(config.dt / 2.0) if config.dt is not None else None,
            compute_delta=False,
        )
        rep2 = run_experiment(refined, _refined=True)
        if math.isfinite(product_rep.product) and math.isfinite(rep2.product) and rep2.product != 0:
            delta_num = abs(product_rep.product - rep2.product) / abs(rep2.product)

    balance = record.norm_balance_defect()
    delta_eff = delta_num if delta_num is not None else 0.01
    ok = balance < 1e-12
    if product_rep.trivially_satisfied:
        ok = ok and True
    else:
        ok = ok and product_rep.product >= product_rep.bound * (1.0 - delta_eff)
    if delta_num is not None:
        ok = ok and delta_num < 0.1

    return UncertaintyReport(
        config=config.to_dict(),
        config_hash=config.config_hash(),
        p_hat=stats.p_hat,
        sigma_T=product_rep.sigma_T,
        mean_T=stats.mean_T,
        sigma_E=routes,
        sigma_E_primary=sigma_e,
        sigma_E_route=route_name,
        product=product_rep.product,
        bound=product_rep.bound,
        margin=product_rep.margin,
        delta_num=delta_num,
        residual_norm_sq=record.residual_norm_sq,
        norm_balance_defect=balance,
        prob_route_l2_diff=_prob_route_l2_diff(record),
        tail_method=stats.tail_method,
        t_max_actual=float(record.times[-1]),
        n_steps=record.n_steps,
        asserts_passed=ok,
        trivially_satisfied=product_rep.trivially_satisfied,
    )


def _set_dotted(d: dict, path: str, value) -> None:
    parts = path.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur[p]
    cur[parts[-1]] = value


_SWEEP_COLUMNS = [
    "config_hash", "status", "p_hat", "sigma_T", "sigma_E", "product",
    "bound", "margin", "delta_num", "residual_norm_sq", "error",
]


def _sweep_worker(cfg_dict: dict) -> dict:
    config = ExperimentConfig.from_dict(cfg_dict)
    row = {c: "" for c in _SWEEP_COLUMNS}
    row["config_hash"] = config.config_hash()
    try:
        rep = run_experiment(config)
        row.update(
            status="ok" if rep.asserts_passed else "bound_violated",
            p_hat=rep.p_hat, sigma_T=rep.sigma_T, sigma_E=rep.sigma_E_primary,
            product=rep.product, bound=rep.bound, margin=rep.margin,
            delta_num=rep.delta_num if rep.delta_num is not None else "",
            residual_norm_sq=rep.residual_norm_sq,
        )
    except Exception as exc:  # a failed point must not kill the sweep
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(
    base: ExperimentConfig,
    axes: dict[str, list],
    workers: int = 1,
    csv_path=None,
) -> list[dict]:
    """One run per point of the cartesian product of the axes.

    Axis keys are dotted paths into the config ("kappa", "state.p0", ...).
    Rows are keyed and ordered by config hash, so the result does not depend
    on evaluation order; failed points are flagged and the sweep continues.
    """
    if not axes:
        raise ValueError("sweep needs at least one axis")
    for key, values in axes.items():
        if not values:
            raise ValueError(f"sweep axis {key!r} is empty")
    keys = sorted(axes)
    configs = []
    axis_cols = {k: [] for k in keys}
    for combo in itertools.product(*(axes[k] for k in keys)):
        d = base.to_dict()
        for k, v in zip(keys, combo):
            _set_dotted(d, k, v)
        configs.append(d)
        for k, v in zip(keys, combo):
            axis_cols[k].append(v)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, configs))
    else:
        rows = [_sweep_worker(c) for c in configs]
    for row, combo_idx in zip(rows, range(len(configs))):
        for k in keys:
            row[k] = axis_cols[k][combo_idx]
    rows.sort(key=lambda r: r["config_hash"])

    if csv_path is not None:
        cols = keys + _SWEEP_COLUMNS
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
    return rows


_DEFAULT_BOUNDS = {
    "x0": (0.25, 0.75),
    "p0": (-30.0, 30.0),
    "sigma_x": (0.02, 0.08),
    "kappa": (0.5, 8.0),
}


@dataclass(frozen=True)
class MinimizeResult:
    best_params: dict
    best_product: float
    delta_num: float
    floor: float
    n_evaluations: int
    converged: bool
    trajectory: tuple


def _search_base() -> ExperimentConfig:
    return ExperimentConfig(
        geometry={"kind": "interval", "length": 1.0, "left": "absorbing", "right": "absorbing"},
        state={"kind": "gaussian", "x0": 0.5, "p0": 0.0, "sigma_x": 0.05},
        kappa=1.0,
        n_interior=256,
        t_max=60.0,
        stop_residual=1e-9,
        compute_delta=False,
    )


def _search_product(params: dict, base: ExperimentConfig) -> float:
    config = base.replace(
        state={"kind": "gaussian", "x0": params["x0"], "p0": params["p0"],
               "sigma_x": params["sigma_x"]},
        kappa=params["kappa"],
    )
    rep = run_experiment(config)
    return rep.product


def minimize_product(
    bounds: Optional[dict] = None,
    budget: int = 200,
    seed: int = 0,
    base: Optional[ExperimentConfig] = None,
) -> MinimizeResult:
    """Derivative-free search for the smallest sigma_T * sigma_E over packet
    parameters and detector kappa (Nelder-Mead, deterministic multi-start).

    The best value found is checked against the hard floor
    hbar/2 * (1 - delta_num) and reported; no sharpness claim is attached to
    it.  Raises if the floor is violated, which would indicate a numerical
    defect rather than physics.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    bounds = dict(_DEFAULT_BOUNDS, **(bounds or {}))
    base = base if base is not None else _search_base()
    names = sorted(bounds)
    lo = np.array([bounds[n][0] for n in names])
    hi = np.array([bounds[n][1] for n in names])

    trajectory: list[tuple] = []
    count = 0

    def objective(x: np.ndarray) -> float:
        nonlocal count
        if count >= budget:
            return 1e6
        params = dict(zip(names, x))
        # penalty for leaving the box or violating the support precondition
        if np.any(x < lo) or np.any(x > hi):
            dist = float(np.sum(np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)))
            count += 1
            val = 1e3 * (1.0 + dist)
            trajectory.append((tuple(float(v) for v in x), val))
            return val
        count += 1
        try:
            val = _search_product(params, base)
        except ValueError:
            val = 1e3
        trajectory.append((tuple(float(v) for v in x), val))
        return val

    rng = np.random.default_rng(seed)
    n_starts = max(1, min(4, budget // 60))
    starts = [0.5 * (lo + hi)]
    for _ in range(n_starts - 1):
        starts.append(lo + rng.uniform(size=len(names)) * (hi - lo))

    converged = True
    if budget < len(names) + 2:
        for x0 in starts[:budget]:
            objective(np.asarray(x0))
        converged = False
    else:
        per_start = budget // len(starts)
        for x0 in starts:
            if count >= budget:
                break
            res = _nm_minimize(
                objective, np.asarray(x0), method="Nelder-Mead",
                options={"maxfev": min(per_start, budget - count),
                         "xatol": 1e-3, "fatol": 1e-6, "adaptive": True},
            )
            converged = converged and bool(res.success)

    finite = [(x, v) for x, v in trajectory if v < 1e3]
    if not finite:
        raise RuntimeError("no feasible point evaluated within the budget")
    best_x, best_val = min(finite, key=lambda xv: xv[1])
    best_params = dict(zip(names, best_x))

    best_config = base.replace(
        state={"kind": "gaussian", "x0": best_params["x0"], "p0": best_params["p0"],
               "sigma_x": best_params["sigma_x"]},
        kappa=best_params["kappa"],
        compute_delta=True,
    )
    best_rep = run_experiment(best_config)
    delta = best_rep.delta_num if best_rep.delta_num is not None else 0.01
    floor = 0.5 * base.hbar * (1.0 - delta)
    if best_val < floor:
        raise RuntimeError(
            f"search found product {best_val!r} below the floor {floor!r}; "
            "this indicates a numerical defect"
        )
    return MinimizeResult(
        best_params=best_params,
        best_product=best_val,
        delta_num=delta,
        floor=floor,
        n_evaluations=count,
        converged=converged,
        trajectory=tuple(trajectory),
    )
