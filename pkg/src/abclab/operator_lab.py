"""Dense small-N realization of the operator objects behind the detection
statistics: the dissipative Hamiltonian, the one-step contraction W, the
detection POVM, and the time-shift dilation J psi(t, x) =
sqrt(hbar kappa / m) (W_t psi)(x).

Everything is expressed in the symmetrized frame M -> S M S^{-1} with
S = diag(sqrt(w dx)), where the trapezoid-weighted adjoint becomes the plain
conjugate transpose and the weighted operator norm the plain spectral norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import fft, fftfreq, next_fast_len

from .detection import DetectionRecord
from .geometry import (
    DEFAULT_CONSTANTS,
    DetectorSpec,
    Grid,
    HalfLine,
    PhysicalConstants,
    WaveFunction,
)
from .propagator import (
    PotentialLike,
    Propagator,
    _boundary_setup,
    assemble_hamiltonian,
    evolve,
)

__all__ = [
    "DenseOperators",
    "DilationField",
    "DilationStats",
    "build_dense",
    "skew_identity_residual",
    "semigroup_contraction_check",
    "SemigroupReport",
    "povm_completeness",
    "spectrum_check",
    "SpectrumReport",
    "build_dilation_field",
    "intertwine_check",
    "dilation_stats",
]

MAX_DENSE_N = 512


@dataclass(frozen=True, eq=False)
class DenseOperators:
    """Dense H and one-step W in the symmetrized frame, plus the diagonal
    boundary concentration operator B."""

    h: np.ndarray          # symmetrized Hamiltonian
    w_step: np.ndarray     # symmetrized one-step Crank-Nicolson matrix
    b_diag: np.ndarray     # boundary concentration diagonal (frame-invariant)
    scale: np.ndarray      # S diagonal, sqrt(weights * dx)
    dt: float
    grid: Grid
    detector: Optional[DetectorSpec]
    constants: PhysicalConstants

    @property
    def n(self) -> int:
        return len(self.b_diag)

    @property
    def kappa(self) -> float:
        return self.detector.kappa if self.detector is not None else 0.0


def build_dense(
    grid: Grid,
    dt: Optional[float] = None,
    detector: Optional[DetectorSpec] = None,
    potential: PotentialLike = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> DenseOperators:
    if grid.n_active > MAX_DENSE_N:
        raise ValueError(
            f"dense operator lab is capped at {MAX_DENSE_N} active nodes, "
            f"got {grid.n_active}"
        )
    ham = assemble_hamiltonian(grid, detector, potential=potential, constants=constants)
    dt = float(dt) if dt is not None else grid.dx
    h_raw = ham.dense()
    s = np.sqrt(ham.weights_active * grid.dx)
    h_sym = (s[:, None] * h_raw) / s[None, :]
    gamma = 1j * dt / (2.0 * constants.hbar)
    eye = np.eye(grid.n_active, dtype=np.complex128)
    w_sym = np.linalg.solve(eye + gamma * h_sym, eye - gamma * h_sym)
    return DenseOperators(
        h=h_sym, w_step=w_sym, b_diag=ham.boundary_concentration_diag(),
        scale=s, dt=dt, grid=grid, detector=detector, constants=constants,
    )


def skew_identity_residual(ops: DenseOperators) -> float:
    """|| -(i/hbar)(H* - H) - (hbar kappa / m) B || relative to ||target||;
    zero up to rounding by construction of the assembly."""
    hbar, m = ops.constants.hbar, ops.constants.mass
    skew = (-1j / hbar) * (ops.h.conj().T - ops.h)
    target = np.diag((hbar * ops.kappa / m) * ops.b_diag)
    norm_t = np.linalg.norm(target, 2)
    resid = np.linalg.norm(skew - target, 2)
    return resid / norm_t if norm_t > 0.0 else resid


@dataclass(frozen=True)
class SemigroupReport:
    times: tuple[float, ...]
    norms: tuple[float, ...]
    max_norm: float
    semigroup_defect: float


def semigroup_contraction_check(ops: DenseOperators, t_list) -> SemigroupReport:
    """Spectral norms of W_t = W_dt^k over the requested times (multiples of
    dt) plus the worst composition defect ||W_(a+b) - W_a W_b||."""
    steps = []
    for t in t_list:
        k = int(round(t / ops.dt))
        if abs(k * ops.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t!r} is not a multiple of dt={ops.dt!r}")
        steps.append(k)
    uniq = sorted(set(steps))
    pairs = [(a, b) for i, a in enumerate(uniq) for b in uniq[i:]]
    need = sorted(set(uniq) | {a + b for a, b in pairs})
    powers = {}
    acc = np.eye(ops.n, dtype=np.complex128)
    powers[0] = acc
    cur = 0
    for k in need:
        if k == 0:
            continue
        for _ in range(k - cur):
            acc = ops.w_step @ acc
        cur = k
        powers[k] = acc
    norms = tuple(float(np.linalg.norm(powers[k], 2)) for k in steps)
    defect = 0.0
    for a, b in pairs:
        d = np.linalg.norm(powers[a + b] - powers[a] @ powers[b], 2)
        defect = max(defect, float(d))
    return SemigroupReport(
        times=tuple(float(k * ops.dt) for k in steps),
        norms=norms,
        max_norm=max(norms) if norms else 1.0,
        semigroup_defect=defect,
    )


def povm_completeness(ops: DenseOperators, t_final: float, quadrature: str = "cn-midpoint") -> float:
    """|| sum_k (hbar kappa/m) X_k* B X_k dt  +  W_T* W_T  -  I ||.

    ``cn-midpoint`` uses the Crank-Nicolson midpoint operators
    (W_k + W_(k+1))/2, for which the sum telescopes exactly and the residual
    is pure rounding, for every T.  ``trapezoid`` samples W at the step edges
    with half-weighted ends and converges at second order in dt.
    """
    k_steps = int(round(t_final / ops.dt))
    if abs(k_steps * ops.dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ValueError(f"t_final={t_final!r} is not a multiple of dt={ops.dt!r}")
    if quadrature not in ("cn-midpoint", "trapezoid"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    hbar, m = ops.constants.hbar, ops.constants.mass
    c = hbar * ops.kappa / m * ops.dt
    n = ops.n
    b_idx = np.nonzero(ops.b_diag)[0]
    acc = np.zeros((n, n), dtype=np.complex128)
    w_cur = np.eye(n, dtype=np.complex128)

    def add_sample(mat: np.ndarray, weight: float) -> None:
        for i in b_idx:
            row = mat[i, :]
            acc[...] += (weight * c * ops.b_diag[i]) * np.outer(np.conj(row), row)

    for _ in range(k_steps):
        w_next = ops.w_step @ w_cur
        if quadrature == "cn-midpoint":
            add_sample(0.5 * (w_cur + w_next), 1.0)
        else:
            add_sample(w_cur, 0.5)
            add_sample(w_next, 0.5)
        w_cur = w_next

    defect = acc + w_cur.conj().T @ w_cur - np.eye(n)
    return float(np.linalg.norm(defect, 2))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray
    max_imag: float
    gamma_min: float          # slowest norm-squared decay rate, -2 max(Im E)/hbar
    nonnormality: float       # ||[H + H*, H - H*]||
    hermitian_defect: float   # ||H - H*||


def spectrum_check(ops: DenseOperators) -> SpectrumReport:
    """Eigenvalues of H; no eigenvalue may lie in the upper half plane."""
    eigs = np.linalg.eigvals(ops.h)
    eigs = eigs[np.argsort(eigs.real)]
    max_imag = float(np.max(eigs.imag))
    if max_imag > 1e-10:
        raise RuntimeError(
            f"spectrum reaches into the upper half plane (max Im = {max_imag:.3e}); "
            "the evolution would not be dissipative"
        )
    herm = ops.h + ops.h.conj().T
    skew = ops.h - ops.h.conj().T
    comm = herm @ skew - skew @ herm
    return SpectrumReport(
        eigenvalues=eigs,
        max_imag=max_imag,
        gamma_min=max(0.0, -2.0 * max_imag / ops.constants.hbar),
        nonnormality=float(np.linalg.norm(comm, 2)),
        hermitian_defect=float(np.linalg.norm(skew, 2)),
    )


@dataclass(frozen=True, eq=False)
class DilationField:
    """Samples of the dilation image phi(t, b) = sqrt(hbar kappa/m) psi_t(b)
    on the midpoint time grid, zero-extended to t < 0."""

    phi: np.ndarray            # complex, shape (K, n_boundaries)
    mid_times: np.ndarray
    dt: float
    boundary_labels: tuple[str, ...]
    record: Optional[DetectionRecord] = None

    @property
    def norm_sq(self) -> float:
        return float(np.sum(self.phi.real**2 + self.phi.imag**2) * self.dt)

    def boundary_mass(self) -> np.ndarray:
        """sum_b |phi(t_k, b)|^2, which equals the detection density w."""
        return np.sum(self.phi.real**2 + self.phi.imag**2, axis=1)


def build_dilation_field(
    psi0: WaveFunction,
    prop: Propagator,
    t_max: float,
    max_residual: Optional[float] = 1e-4,
    stop_residual: Optional[float] = None,
) -> DilationField:
    """Evolve and collect the boundary amplitudes scaled by
    sqrt(hbar kappa / m); the squared norm of the field equals the detected
    probability exactly."""
    record = evolve(prop, psi0, t_max, stop_residual=stop_residual)
    bounded = not isinstance(psi0.grid.geometry, HalfLine)
    if max_residual is not None and bounded and record.residual_norm_sq > max_residual:
        raise ValueError(
            f"residual norm^2 {record.residual_norm_sq:.3e} at t_max={t_max:g} is too "
            "large for a full-detection geometry; extend the run"
        )
    hbar, m = psi0.constants.hbar, psi0.constants.mass
    kappa = prop.hamiltonian.kappa
    phi = math.sqrt(hbar * kappa / m) * record.boundary_amps
    return DilationField(
        phi=phi, mid_times=record.mid_times, dt=record.dt,
        boundary_labels=record.boundary_labels, record=record,
    )


def intertwine_check(
    psi0: WaveFunction, prop: Propagator, s: float, t_max: float
) -> float:
    """Relative L2 defect between the dilation image of the evolved state and
    the time shift of the original image over the common window."""
    dt = prop.dt
    j = int(round(s / dt))
    if abs(j * dt - s) > 1e-9 * max(1.0, abs(s)):
        raise ValueError(f"shift s={s!r} is not a multiple of dt={dt!r}")
    k_total = int(round(t_max / dt))
    if k_total - j < 8:
        raise ValueError("common window too short for a meaningful defect")

    grid = psi0.grid
    setup = _boundary_setup(grid)

    def midpoint_series(vec0: np.ndarray, n_steps: int) -> np.ndarray:
        out = np.empty((n_steps, len(setup)), dtype=np.complex128)
        vec = vec0
        for k in range(n_steps):
            nxt = prop.step_active(vec)
            mid = 0.5 * (vec + nxt)
            for jj, (i, _) in enumerate(setup):
                out[k, jj] = mid[i]
            vec = nxt
        return out

    vec0 = np.array(
        psi0.values[grid.active_start : grid.active_stop], dtype=np.complex128
    )
    series_full = midpoint_series(vec0, k_total)
    vec_s = vec0
    for _ in range(j):
        vec_s = prop.step_active(vec_s)
    series_shift = midpoint_series(vec_s, k_total - j)

    diff = series_full[j:] - series_shift
    num = math.sqrt(float(np.sum(diff.real**2 + diff.imag**2)) * dt)
    den = math.sqrt(float(np.sum(series_full.real**2 + series_full.imag**2)) * dt)
    return num / max(den, 1e-300)


@dataclass(frozen=True)
class DilationStats:
    """Moments of time and of i hbar d/dt on the (normalized) dilation field.

    ``sigma_H_tilde`` is the standard deviation of the frequency-space energy
    distribution of phi / ||phi||; equivalently
    (1/p) min_over_E0 || (i hbar d/dt + E0) phi ||^2 equals its square.
    """

    sigma_T_tilde: float
    sigma_H_tilde: float
    kennard_product: float
    mean_T_tilde: float
    mean_E_tilde: float
    p_hat: float
    mean_E_fd: float           # finite-difference cross-check of mean_E_tilde


def dilation_stats(
    field: DilationField, pad_factor: int = 8, tail_tol: float = 1e-6
) -> DilationStats:
    """Time moments against sum_b |phi|^2 and energy moments from the FFT of
    phi along t (i hbar d/dt is diagonal in frequency)."""
    w = field.boundary_mass()
    p = float(np.sum(w) * field.dt)
    if p <= 0.0:
        raise ValueError("dilation field carries no mass")
    k = len(w)
    n_tail = max(1, k // 50)
    tail_mass = float(np.sum(w[-n_tail:]) * field.dt)
    if tail_mass > tail_tol * p:
        raise ValueError(
            f"trailing mass fraction {tail_mass / p:.3e} exceeds {tail_tol:.1e}; "
            "the field is not resolved in time (extend the run)"
        )

    t = field.mid_times
    mean_t = float(np.sum(t * w) * field.dt) / p
    var_t = max(float(np.sum(t**2 * w) * field.dt) / p - mean_t**2, 0.0)
    sigma_t = math.sqrt(var_t)

    hbar = _field_hbar(field)
    m_pts = next_fast_len(pad_factor * k)
    phi_hat = fft(field.phi, n=m_pts, axis=0)
    # basis exp(-i E t / hbar): a bin at FFT frequency nu carries E = -2 pi hbar nu
    freqs = fftfreq(m_pts, field.dt)
    mass_e = np.sum(phi_hat.real**2 + phi_hat.imag**2, axis=1) * (field.dt / m_pts)
    total_e = float(np.sum(mass_e))
    e_vals = -2.0 * math.pi * hbar * freqs
    mean_e = float(np.sum(e_vals * mass_e)) / total_e
    var_e = max(float(np.sum(e_vals**2 * mass_e)) / total_e - mean_e**2, 0.0)
    sigma_e = math.sqrt(var_e)

    # centered finite-difference i hbar d/dt as an independent cross-check:
    # <E> = Re <phi, i hbar phi'> / p = -hbar Im <phi, phi'> / p
    dphi = (field.phi[2:] - field.phi[:-2]) / (2.0 * field.dt)
    overlap = complex(np.sum(np.conj(field.phi[1:-1]) * dphi) * field.dt)
    mean_e_fd = -hbar * overlap.imag / p

    return DilationStats(
        sigma_T_tilde=sigma_t,
        sigma_H_tilde=sigma_e,
        kennard_product=sigma_t * sigma_e,
        mean_T_tilde=mean_t,
        mean_E_tilde=mean_e,
        p_hat=p,
        mean_E_fd=mean_e_fd,
    )


def _field_hbar(field: DilationField) -> float:
    if field.record is not None:
        return field.record.constants.hbar
    return DEFAULT_CONSTANTS.hbar
