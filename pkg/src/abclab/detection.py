"""Detection-time statistics: turning an evolution record into the detection
probability, conditional moments of the detection time, and the uncertainty
product against an energy spread."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    DEFAULT_CONSTANTS,
    DetectorSpec,
    Geometry,
    HalfLine,
    PhysicalConstants,
    WaveFunction,
)

__all__ = [
    "DetectionRecord",
    "DetectionStats",
    "ProductReport",
    "detection_probability",
    "conditional_time_moments",
    "uncertainty_product_report",
]

#: residual below which a bounded run counts as fully absorbed
EPS_TAIL = 1e-6
#: largest residual for which the exponential tail correction is trusted
MAX_TAIL_RESIDUAL = 1e-2


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """Per-step detection densities from one evolution run.

    ``w`` is the exact norm-decrement density (probability per unit time,
    assigned to the midpoint times); ``prob1``/``prob2`` are the
    current-based and amplitude-based per-boundary densities evaluated on the
    Crank-Nicolson midpoint states.  By construction
    ``sum(w) * dt + residual_norm_sq == 1`` to machine precision.
    """

    dt: float
    times: np.ndarray            # step edges, shape (K+1,)
    mid_times: np.ndarray        # shape (K,)
    w: np.ndarray                # shape (K,)
    prob1: np.ndarray            # shape (K, n_boundaries)
    prob2: np.ndarray            # shape (K, n_boundaries)
    boundary_amps: np.ndarray    # complex midpoint boundary amplitudes, (K, n_b)
    norm_sq: np.ndarray          # shape (K+1,)
    residual_norm_sq: float
    t_max: float
    validity_window: float
    boundary_labels: tuple[str, ...]
    geometry: Optional[Geometry] = None
    detector: Optional[DetectorSpec] = None
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    final_state: Optional[WaveFunction] = None

    @property
    def n_steps(self) -> int:
        return len(self.w)

    @property
    def is_bounded_run(self) -> bool:
        return not isinstance(self.geometry, HalfLine)

    def detected_mass(self, horizon: Optional[float] = None) -> float:
        """Integral of w over [0, horizon] (all steps by default)."""
        if horizon is None:
            return float(np.sum(self.w) * self.dt)
        sel = self.mid_times <= horizon
        return float(np.sum(self.w[sel]) * self.dt)

    def norm_balance_defect(self) -> float:
        """|1 - ||psi_t||^2 - sum w dt|; zero up to rounding by construction."""
        return abs(1.0 - self.residual_norm_sq - float(np.sum(self.w) * self.dt))

    @classmethod
    def from_density(
        cls,
        mid_times: np.ndarray,
        w: np.ndarray,
        dt: float,
        residual_norm_sq: Optional[float] = None,
        geometry: Optional[Geometry] = None,
    ) -> "DetectionRecord":
        """Synthetic record from an injected density; used by tests and
        oracle comparisons."""
        mid_times = np.asarray(mid_times, dtype=float)
        w = np.asarray(w, dtype=float)
        k = len(w)
        detected = float(np.sum(w) * dt)
        if residual_norm_sq is None:
            residual_norm_sq = max(0.0, 1.0 - detected)
        edges = np.concatenate(([mid_times[0] - dt / 2], mid_times + dt / 2)) if k else np.zeros(1)
        norm_sq = np.concatenate(([1.0], 1.0 - np.cumsum(w) * dt)) if k else np.ones(1)
        zeros = np.zeros((k, 1))
        return cls(
            dt=dt,
            times=edges,
            mid_times=mid_times,
            w=w,
            prob1=zeros,
            prob2=zeros,
            boundary_amps=zeros.astype(np.complex128),
            norm_sq=norm_sq,
            residual_norm_sq=float(residual_norm_sq),
            t_max=float(edges[-1]),
            validity_window=math.inf,
            boundary_labels=("synthetic",),
            geometry=geometry,
        )

    def to_csv(self, path) -> None:
        """Columns: t, w_norm_decrement, w_prob1_<b>, w_prob2_<b>, norm_sq."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["t", "w_norm_decrement"]
            header += [f"w_prob1_{b}" for b in self.boundary_labels]
            header += [f"w_prob2_{b}" for b in self.boundary_labels]
            header += ["norm_sq"]
            writer.writerow(header)
            for k in range(self.n_steps):
                row = [f"{self.mid_times[k]:.17g}", f"{self.w[k]:.17g}"]
                row += [f"{v:.17g}" for v in self.prob1[k]]
                row += [f"{v:.17g}" for v in self.prob2[k]]
                row.append(f"{self.norm_sq[k + 1]:.17g}")
                writer.writerow(row)


@dataclass(frozen=True)
class DetectionStats:
    """Conditional detection-time moments.

    ``p_hat`` is the probability of detection (within the validity window for
    half-line runs; including the extrapolated tail for bounded runs when the
    exponential correction applies).  ``tail_method`` records how the
    unobserved tail was treated.
    """

    p_hat: float
    mean_T: float
    var_T: float
    sigma_T: float
    tail_correction: float
    tail_method: str                 # "none" | "exponential_tail" | "window" | "unreliable"
    reliable: bool
    undetected_estimate: float = 0.0


@dataclass(frozen=True)
class ProductReport:
    """Uncertainty product sigma_T * sigma_E against its lower bound."""

    sigma_T: float
    sigma_E: float
    p_hat: float
    product: float
    bound: float
    margin: float
    mean_product: float              # exploratory E[T | detected] * sigma_E
    trivially_satisfied: bool
    note: str = ""


def _weighted_time_moments(
    mid_times: np.ndarray, w: np.ndarray, dt: float
) -> tuple[float, float, float]:
    """Raw sums (mass, sum t*w*dt, sum t^2*w*dt) with midpoint times."""
    mass = float(np.sum(w) * dt)
    m1 = float(np.sum(mid_times * w) * dt)
    m2 = float(np.sum(mid_times**2 * w) * dt)
    return mass, m1, m2


def detection_probability(
    record: DetectionRecord,
    horizon: Optional[float] = None,
    eps_tail: float = EPS_TAIL,
) -> float:
    """Probability that the particle has been detected.

    Bounded runs report 1 - residual once the residual is below ``eps_tail``;
    half-line runs integrate w only up to the validity window, beyond which
    reflections off the artificial far wall contaminate the record.
    """
    if record.is_bounded_run:
        if horizon is not None:
            return record.detected_mass(horizon)
        if record.residual_norm_sq < eps_tail:
            return 1.0 - record.residual_norm_sq
        return record.detected_mass()
    window = record.validity_window
    if horizon is not None and horizon > window:
        raise ValueError(
            f"requested horizon {horizon:g} exceeds the validity window "
            f"{window:g}; later times are contaminated by the far wall"
        )
    return record.detected_mass(horizon if horizon is not None else min(record.t_max, window))


def _fit_exponential_tail(
    mid_times: np.ndarray, w: np.ndarray, residual: float
) -> Optional[tuple[float, float]]:
    """Least-squares decay rate of the trailing samples; the amplitude is
    bound to the exact residual mass.  Returns (gamma, t_end) or None."""
    k = len(w)
    n_fit = max(30, k // 10)
    if k < n_fit:
        return None
    t_seg = mid_times[-n_fit:]
    w_seg = w[-n_fit:]
    good = w_seg > 0.0
    if np.count_nonzero(good) < 10:
        return None
    coeffs = np.polyfit(t_seg[good], np.log(w_seg[good]), 1)
    gamma = -float(coeffs[0])
    if not (gamma > 0.0 and math.isfinite(gamma)):
        return None
    return gamma, float(mid_times[-1])


def conditional_time_moments(
    record: DetectionRecord,
    eps_tail: float = EPS_TAIL,
    max_tail_residual: float = MAX_TAIL_RESIDUAL,
    tail_fit: bool = True,
) -> DetectionStats:
    """Mean and variance of the detection time, conditional on detection.

    For bounded runs with a residual in (eps_tail, max_tail_residual] the
    moments are extended by an exponential tail A exp(-gamma t): gamma from a
    log-linear fit of the trailing density, amplitude bound to the exact
    residual mass.  Larger residuals are flagged unreliable.
    """
    if record.is_bounded_run:
        mass, m1, m2 = _weighted_time_moments(record.mid_times, record.w, record.dt)
        if mass <= 0.0:
            raise ValueError("no detected probability mass; conditional moments undefined")
        residual = record.residual_norm_sq
        if residual < eps_tail or not tail_fit:
            if residual >= max_tail_residual:
                return DetectionStats(
                    p_hat=mass, mean_T=math.nan, var_T=math.nan, sigma_T=math.nan,
                    tail_correction=math.nan, tail_method="unreliable", reliable=False,
                )
            mean = m1 / mass
            var = max(m2 / mass - mean**2, 0.0)
            return DetectionStats(
                p_hat=1.0 - residual, mean_T=mean, var_T=var,
                sigma_T=math.sqrt(var), tail_correction=0.0,
                tail_method="none", reliable=True,
            )
        if residual <= max_tail_residual:
            fit = _fit_exponential_tail(record.mid_times, record.w, residual)
            if fit is None:
                return DetectionStats(
                    p_hat=mass, mean_T=math.nan, var_T=math.nan, sigma_T=math.nan,
                    tail_correction=math.nan, tail_method="unreliable", reliable=False,
                )
            gamma, t_end = fit
            # tail moments of residual * Exp(gamma) shifted to t_end
            tail0 = residual
            tail1 = residual * (t_end + 1.0 / gamma)
            tail2 = residual * (t_end**2 + 2.0 * t_end / gamma + 2.0 / gamma**2)
            mean_nc = m1 / mass
            var_nc = max(m2 / mass - mean_nc**2, 0.0)
            total = mass + tail0
            mean = (m1 + tail1) / total
            var = max((m2 + tail2) / total - mean**2, 0.0)
            return DetectionStats(
                p_hat=total, mean_T=mean, var_T=var, sigma_T=math.sqrt(var),
                tail_correction=var - var_nc, tail_method="exponential_tail",
                reliable=True,
            )
        return DetectionStats(
            p_hat=mass, mean_T=math.nan, var_T=math.nan, sigma_T=math.nan,
            tail_correction=math.nan, tail_method="unreliable", reliable=False,
        )

    # half line: moments over the validity window only
    horizon = min(record.t_max, record.validity_window)
    sel = record.mid_times <= horizon
    mass, m1, m2 = _weighted_time_moments(
        record.mid_times[sel], record.w[sel], record.dt
    )
    if mass <= 0.0:
        raise ValueError("no detected probability mass; conditional moments undefined")
    mean = m1 / mass
    var = max(m2 / mass - mean**2, 0.0)
    return DetectionStats(
        p_hat=mass, mean_T=mean, var_T=var, sigma_T=math.sqrt(var),
        tail_correction=0.0, tail_method="window", reliable=True,
        undetected_estimate=record.residual_norm_sq,
    )


def uncertainty_product_report(
    stats: DetectionStats,
    sigma_E: float,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> ProductReport:
    """Product sigma_T * sigma_E versus the bound hbar/2 (or sqrt(p) hbar/2
    when the detection probability is below one)."""
    hbar = constants.hbar
    full = stats.p_hat >= 1.0 - 1e-6
    bound = 0.5 * hbar if full else math.sqrt(max(stats.p_hat, 0.0)) * 0.5 * hbar
    if not stats.reliable or not math.isfinite(stats.sigma_T):
        return ProductReport(
            sigma_T=math.inf, sigma_E=sigma_E, p_hat=stats.p_hat,
            product=math.inf, bound=bound, margin=math.inf,
            mean_product=math.nan, trivially_satisfied=True,
            note="sigma_T unbounded or unreliable; relation trivially satisfied",
        )
    product = stats.sigma_T * sigma_E
    return ProductReport(
        sigma_T=stats.sigma_T, sigma_E=sigma_E, p_hat=stats.p_hat,
        product=product, bound=bound, margin=product - bound,
        mean_product=stats.mean_T * sigma_E, trivially_satisfied=False,
    )
