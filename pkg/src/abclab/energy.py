"""Energy statistics of the initial state by three independent routes.

free_spectral     zero-extend to a padded box and use the momentum transform
                  (plain FFT on the line geometries, sine transform of the
                  reduced radial function on the ball);
operator_moments  apply the interior finite-difference stencil of
                  -(hbar^2/2m) Laplacian + V twice;
dirichlet_expansion  expand in the sine eigenbasis of the hard-walled
                  interval and use the closed-form eigenvalues
                  E_n = n^2 pi^2 hbar^2 / (2 m L^2).

On states that vanish near the boundary the three routes measure the same
mean and variance up to discretization error.  States that merely vanish AT
the boundary but have a nonzero derivative there (bare sine modes) are not
in the domain of the squared free Hamiltonian once zero-extended; the
spectral route rejects them instead of returning a cutoff-dependent number.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dst, fft, fftfreq, next_fast_len

from .geometry import Ball, Grid, Interval, WaveFunction
from .propagator import PotentialLike, _potential_on_nodes

__all__ = [
    "EnergyStats",
    "EnergyDensity",
    "sigmaE_spectral",
    "sigmaE_operator",
    "sigmaE_dirichlet",
    "energy_density",
    "momentum_moments",
]


@dataclass(frozen=True)
class EnergyStats:
    mean_E: float
    var_E: float
    sigma_E: float
    route: str                       # "free_spectral" | "operator_moments" | "dirichlet_expansion"
    imag_defect: Optional[float] = None
    truncation_defect: Optional[float] = None
    tail_fraction: Optional[float] = None


def _require_interior_support(psi: WaveFunction) -> None:
    """Zero-extension needs the state to vanish at the boundary nodes and at
    the adjacent interior nodes; otherwise the extension has a kink whose
    spectral tail makes the second moment cutoff-dependent."""
    v = psi.values
    scale = float(np.max(np.abs(v)))
    tol = 1e-12 * scale
    if max(abs(v[0]), abs(v[1]), abs(v[-2]), abs(v[-1])) > tol:
        raise ValueError(
            "state support touches the boundary; zero-extension to the line "
            "is invalid for the spectral energy route"
        )


def _line_spectrum(psi: WaveFunction, padding_factor: int):
    """(k, mass) samples of the momentum distribution from a zero-padded FFT
    with the unitary symmetric convention; sum(mass) == 1 up to rounding."""
    grid = psi.grid
    dx = grid.dx
    m_pts = next_fast_len(padding_factor * (grid.n_interior + 1) + 1)
    arr = np.zeros(m_pts, dtype=np.complex128)
    arr[: grid.n_nodes] = psi.values
    psi_hat = fft(arr) * (dx / math.sqrt(2.0 * math.pi))
    k = 2.0 * math.pi * fftfreq(m_pts, dx)
    dk = 2.0 * math.pi / (m_pts * dx)
    mass = (psi_hat.real**2 + psi_hat.imag**2) * dk
    return k, mass


def _ball_spectrum(psi: WaveFunction, padding_factor: int):
    """(k, mass) samples from the sine transform of the zero-extended reduced
    radial function; k > 0 only."""
    grid = psi.grid
    dx = grid.dx
    n_side = padding_factor * (grid.n_interior + 1) - 1
    arr = np.zeros(n_side, dtype=np.complex128)
    arr[: grid.n_nodes - 2] = psi.values[1:-1]
    l_box = (n_side + 1) * dx
    coeff = dst(arr, type=1) / 2.0   # sum_j u_j sin(pi (j+1)(n+1) / (n_side+1))
    u_hat = math.sqrt(2.0 / math.pi) * dx * coeff
    k = math.pi * np.arange(1, n_side + 1) / l_box
    dk = math.pi / l_box
    mass = (u_hat.real**2 + u_hat.imag**2) * dk
    return k, mass


def _spectrum(psi: WaveFunction, padding_factor: int):
    if padding_factor < 8:
        raise ValueError(f"padding_factor must be at least 8, got {padding_factor}")
    _require_interior_support(psi)
    if isinstance(psi.grid.geometry, Ball):
        return _ball_spectrum(psi, padding_factor)
    return _line_spectrum(psi, padding_factor)


def momentum_moments(psi: WaveFunction, padding_factor: int = 8) -> tuple[float, float]:
    """(<p>, <p^2>) of an interior-supported state on a line geometry."""
    if isinstance(psi.grid.geometry, Ball):
        raise ValueError("signed momentum moments are not defined for the ball")
    k, mass = _spectrum(psi, padding_factor)
    total = float(np.sum(mass))
    hbar = psi.constants.hbar
    mean_p = float(np.sum(hbar * k * mass)) / total
    mean_p2 = float(np.sum((hbar * k) ** 2 * mass)) / total
    return mean_p, mean_p2


def sigmaE_spectral(psi: WaveFunction, padding_factor: int = 8) -> EnergyStats:
    """Energy moments from the free-particle momentum distribution."""
    k, mass = _spectrum(psi, padding_factor)
    total = float(np.sum(mass))
    hbar, m = psi.constants.hbar, psi.constants.mass
    e = (hbar * k) ** 2 / (2.0 * m)
    m1 = float(np.sum(e * mass)) / total
    m2 = float(np.sum(e**2 * mass)) / total
    var = max(m2 - m1**2, 0.0)
    # fraction of the second moment carried by the top octave of |k|:
    # a converged spectrum has essentially none of it there
    k_hi = 0.5 * float(np.max(np.abs(k)))
    hi = np.abs(k) >= k_hi
    tail = float(np.sum(e[hi] ** 2 * mass[hi])) / max(float(np.sum(e**2 * mass)), 1e-300)
    return EnergyStats(
        mean_E=m1, var_E=var, sigma_E=math.sqrt(var),
        route="free_spectral", tail_fraction=tail,
    )


def sigmaE_operator(psi: WaveFunction, potential: PotentialLike = None) -> EnergyStats:
    """Moments of the interior stencil of -(hbar^2/2m) Laplacian + V applied
    once and twice; requires the state to vanish at the boundary nodes."""
    grid = psi.grid
    v = psi.values
    scale = float(np.max(np.abs(v)))
    if max(abs(v[0]), abs(v[-1])) > 1e-12 * scale:
        raise ValueError(
            "state does not vanish at the boundary nodes; the operator-moment "
            "route requires boundary-vanishing states"
        )
    pot = _potential_on_nodes(grid, potential)
    hbar, m = psi.constants.hbar, psi.constants.mass
    tau = hbar**2 / (2.0 * m * grid.dx**2)

    def stencil(u: np.ndarray) -> np.ndarray:
        out = 2.0 * tau * u
        out[:-1] -= tau * u[1:]
        out[1:] -= tau * u[:-1]
        if pot is not None:
            out += pot[1:-1] * u
        return out

    inner = np.array(v[1:-1], dtype=np.complex128)
    hv = stencil(inner)
    dx = grid.dx
    raw1 = complex(dx * np.sum(np.conj(inner) * hv))
    m1 = raw1.real
    imag_defect = abs(raw1.imag) / max(abs(raw1), 1e-300)
    m2 = float(dx * np.sum(hv.real**2 + hv.imag**2))
    var = max(m2 - m1**2, 0.0)
    return EnergyStats(
        mean_E=m1, var_E=var, sigma_E=math.sqrt(var),
        route="operator_moments", imag_defect=imag_defect,
    )


def sigmaE_dirichlet(psi: WaveFunction, n_modes: Optional[int] = None) -> EnergyStats:
    """Expansion in sin(n pi x / L) with the closed-form eigenvalues."""
    grid = psi.grid
    if not isinstance(grid.geometry, Interval):
        raise ValueError("the Dirichlet-expansion route is defined on Interval geometry only")
    if n_modes is None:
        n_modes = grid.n_interior
    if not (1 <= n_modes <= grid.n_interior):
        raise ValueError(
            f"n_modes must lie in [1, {grid.n_interior}] on this grid, got {n_modes}"
        )
    length = grid.geometry.length
    inner = np.array(psi.values[1:-1], dtype=np.complex128)
    # c_n = dx * sqrt(2/L) * sum_j sin(n pi x_j / L) psi_j, exact discrete
    # orthonormality of the sine vectors on the uniform grid
    coeff = dst(inner, type=1) / 2.0
    c = grid.dx * math.sqrt(2.0 / length) * coeff[:n_modes]
    weight = np.abs(c) ** 2
    total = float(np.sum(weight))
    defect = 1.0 - total
    if defect > 1e-6:
        raise ValueError(
            f"mode-truncation defect {defect:.3e} exceeds 1e-6; "
            "increase n_modes or the grid resolution"
        )
    n = np.arange(1, n_modes + 1)
    hbar, m = psi.constants.hbar, psi.constants.mass
    e_n = (n * math.pi * hbar / length) ** 2 / (2.0 * m)
    m1 = float(np.sum(weight * e_n)) / total
    m2 = float(np.sum(weight * e_n**2)) / total
    var = max(m2 - m1**2, 0.0)
    return EnergyStats(
        mean_E=m1, var_E=var, sigma_E=math.sqrt(var),
        route="dirichlet_expansion", truncation_defect=defect,
    )


@dataclass(frozen=True, eq=False)
class EnergyDensity:
    """Density rho(E) of the free-energy distribution on E > 0.

    ``energies``/``rho`` sample the density on a presentation grid
    (logarithmic below the mean, linear above, half-cell offset away from
    the integrable 1/sqrt(E) endpoint).  The moments are evaluated exactly
    in momentum space and agree with the spectral route by construction.
    """

    energies: np.ndarray
    rho: np.ndarray
    normalization_defect: float
    mean_E: float
    var_E: float

    def moments(self) -> tuple[float, float]:
        return self.mean_E, self.var_E

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["E", "rho"])
            for e, r in zip(self.energies, self.rho):
                writer.writerow([f"{e:.17g}", f"{r:.17g}"])


def energy_density(
    psi: WaveFunction, padding_factor: int = 8, n_points: int = 1024
) -> EnergyDensity:
    """rho(E) from the momentum distribution.

    Line geometries: rho(E) = (1/hbar) sqrt(m/2E) (|psi_hat(k)|^2 +
    |psi_hat(-k)|^2) at k = sqrt(2mE)/hbar.  Ball: the spherically symmetric
    rho(E) = (sqrt(2 m^3 E)/hbar^3) * 4 pi * |psi_hat_3d(k)|^2 with
    psi_hat_3d recovered from the sine transform of the reduced radial
    function (|psi_hat_3d|^2 = |u_hat|^2 / (4 pi k^2)).
    """
    k, mass = _spectrum(psi, padding_factor)
    total = float(np.sum(mass))
    hbar, m = psi.constants.hbar, psi.constants.mass
    e_samples = (hbar * k) ** 2 / (2.0 * m)
    m1 = float(np.sum(e_samples * mass)) / total
    m2 = float(np.sum(e_samples**2 * mass)) / total
    var = max(m2 - m1**2, 0.0)

    is_ball = isinstance(psi.grid.geometry, Ball)
    if is_ball:
        dk = float(k[1] - k[0])
        k_pos = k
        fold_pos = mass / dk          # |u_hat(k)|^2
    else:
        dk = 2.0 * math.pi / ((len(k)) * psi.grid.dx)
        pos = k > 0.0
        order = np.argsort(k[pos])
        k_pos = k[pos][order]
        dens_pos = (mass[pos] / dk)[order]
        neg = k < 0.0
        order_n = np.argsort(-k[neg])
        dens_neg = (mass[neg] / dk)[order_n]   # at |k| ascending
        n_common = min(len(k_pos), len(dens_neg))
        k_pos = k_pos[:n_common]
        fold_pos = dens_pos[:n_common] + dens_neg[:n_common]

    # presentation grid: log below the mean, linear above, ending at the
    # (1 - 1e-8) mass quantile
    cum = np.cumsum(mass[np.argsort(e_samples)])
    e_sorted = np.sort(e_samples)
    idx_q = int(np.searchsorted(cum, (1.0 - 1e-8) * total))
    e_hi = float(e_sorted[min(idx_q, len(e_sorted) - 1)])
    e_lo = (hbar * 0.5 * dk) ** 2 / (2.0 * m)
    e_hi = max(e_hi, 10.0 * m1, 100.0 * e_lo)
    n_log = n_points // 2
    n_lin = n_points - n_log
    if m1 > 4.0 * e_lo:
        grid_lo = np.geomspace(e_lo, m1, n_log, endpoint=False)
        grid_hi = np.linspace(m1, e_hi, n_lin)
        e_grid = np.concatenate([grid_lo, grid_hi])
    else:
        e_grid = np.linspace(e_lo, e_hi, n_points)

    k_of_e = np.sqrt(2.0 * m * e_grid) / hbar
    fold = np.interp(k_of_e, k_pos, fold_pos, left=float(fold_pos[0]), right=0.0)
    if is_ball:
        psi_hat3d_sq = fold / (4.0 * math.pi * k_of_e**2)
        rho = (np.sqrt(2.0 * m**3 * e_grid) / hbar**3) * 4.0 * math.pi * psi_hat3d_sq
    else:
        rho = np.sqrt(m / (2.0 * e_grid)) / hbar * fold
    rho = np.maximum(rho, 0.0)

    # first cell [0, E_lo] handled analytically: on the line rho ~ c/sqrt(E)
    # (integral 2 E_lo rho(E_lo)); on the ball u_hat(k) ~ k so rho ~ c sqrt(E)
    # (integral (2/3) E_lo rho(E_lo))
    head = (2.0 / 3.0 if is_ball else 2.0) * e_grid[0] * rho[0]
    defect = abs(1.0 - (head + float(np.trapezoid(rho, e_grid))))
    return EnergyDensity(
        energies=e_grid, rho=rho, normalization_defect=defect,
        mean_E=m1, var_E=var,
    )
