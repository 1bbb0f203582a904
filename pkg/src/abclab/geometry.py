"""Simulation geometries, uniform grids, physical constants, and initial states.

The 1D geometries (interval, truncated half line) store the wave function
directly.  The spherically symmetric ball stores the reduced radial function
u(r) = sqrt(4*pi) * r * psi(r), scaled so that the plain 1D norm of u equals
the 3D norm of psi; this turns the radial problem into a tridiagonal 1D one
with a regularity node u(0) = 0.

All initial-state factories return unit-norm states that vanish exactly at
every boundary node, so the boundary-vanishing hypothesis of the detection
theorems holds at the discrete level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "BoundaryKind",
    "PhysicalConstants",
    "DEFAULT_CONSTANTS",
    "Interval",
    "HalfLine",
    "Ball",
    "Geometry",
    "DetectorSpec",
    "PacketInfo",
    "Grid",
    "WaveFunction",
    "build_grid",
    "make_gaussian",
    "make_bump",
    "make_mode_superposition",
    "inner_product",
    "geometry_to_dict",
    "geometry_from_dict",
]

# Gaussian packets are exactly 1 out to FLAT_SIGMAS and roll off smoothly
# (C-infinity) to exactly 0 at SUPPORT_SIGMAS.  A hard cut would leave an
# amplitude jump ~exp(-FLAT_SIGMAS^2/2) whose 1/k^2 spectral tail corrupts
# the second energy moment on fine grids.
FLAT_SIGMAS = 6.0
SUPPORT_SIGMAS = 8.0

_MIN_INTERIOR = 16


class BoundaryKind(Enum):
    ABSORBING = "absorbing"
    DIRICHLET_WALL = "dirichlet_wall"


@dataclass(frozen=True)
class PhysicalConstants:
    """hbar and particle mass; natural units by default."""

    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self) -> None:
        if not (self.hbar > 0.0):
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if not (self.mass > 0.0):
            raise ValueError(f"mass must be positive, got {self.mass}")


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class DetectorSpec:
    """Wave number of detector sensitivity.  kappa > 0 is a detection model;
    passing ``detector=None`` to the assembly routines gives the reflecting
    (Neumann) diagnostic mode instead."""

    kappa: float

    def __post_init__(self) -> None:
        if not (self.kappa > 0.0):
            raise ValueError(f"detector kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class Interval:
    """Interval [0, L] with a detector or hard wall on each end."""

    length: float
    left: BoundaryKind = BoundaryKind.ABSORBING
    right: BoundaryKind = BoundaryKind.ABSORBING

    def __post_init__(self) -> None:
        if not (self.length > 0.0):
            raise ValueError(f"interval length must be positive, got {self.length}")
        if BoundaryKind.ABSORBING not in (self.left, self.right):
            raise ValueError("interval needs at least one absorbing boundary")

    @property
    def extent(self) -> float:
        return self.length

    def endpoint_kinds(self) -> tuple[BoundaryKind, BoundaryKind]:
        return (self.left, self.right)

    def boundary_labels(self) -> tuple[str, str]:
        return ("left", "right")

    @property
    def right_curvature(self) -> float:
        return 0.0


@dataclass(frozen=True)
class HalfLine:
    """Half line with the detector at x = 0, truncated by an artificial hard
    wall at x_truncate.  Detection statistics are only trusted inside a
    validity window that excludes reflections off the far wall."""

    x_truncate: float

    def __post_init__(self) -> None:
        if not (self.x_truncate > 0.0):
            raise ValueError(f"x_truncate must be positive, got {self.x_truncate}")

    @property
    def extent(self) -> float:
        return self.x_truncate

    def endpoint_kinds(self) -> tuple[BoundaryKind, BoundaryKind]:
        return (BoundaryKind.ABSORBING, BoundaryKind.DIRICHLET_WALL)

    def boundary_labels(self) -> tuple[str, str]:
        return ("origin", "far_wall")

    @property
    def right_curvature(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Ball:
    """Ball of radius R, reduced to the radial function u(r) with u(0) = 0
    and the detector over the full sphere r = R."""

    radius: float

    def __post_init__(self) -> None:
        if not (self.radius > 0.0):
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @property
    def extent(self) -> float:
        return self.radius

    def endpoint_kinds(self) -> tuple[BoundaryKind, BoundaryKind]:
        return (BoundaryKind.DIRICHLET_WALL, BoundaryKind.ABSORBING)

    def boundary_labels(self) -> tuple[str, str]:
        return ("origin", "surface")

    @property
    def right_curvature(self) -> float:
        # Robin row at r = R encodes u'(R) = (1/R + i*kappa) u(R).
        return 1.0 / self.radius


Geometry = Union[Interval, HalfLine, Ball]


def geometry_to_dict(geom: Geometry) -> dict:
    if isinstance(geom, Interval):
        return {
            "kind": "interval",
            "length": geom.length,
            "left": geom.left.value,
            "right": geom.right.value,
        }
    if isinstance(geom, HalfLine):
        return {"kind": "half_line", "x_truncate": geom.x_truncate}
    if isinstance(geom, Ball):
        return {"kind": "ball", "radius": geom.radius}
    raise TypeError(f"unknown geometry {geom!r}")


def geometry_from_dict(spec: dict) -> Geometry:
    kind = spec["kind"]
    if kind == "interval":
        return Interval(
            length=float(spec["length"]),
            left=BoundaryKind(spec.get("left", "absorbing")),
            right=BoundaryKind(spec.get("right", "absorbing")),
        )
    if kind == "half_line":
        return HalfLine(x_truncate=float(spec["x_truncate"]))
    if kind == "ball":
        return Ball(radius=float(spec["radius"]))
    raise ValueError(f"unknown geometry kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid over a geometry, boundary nodes included at both ends."""

    geometry: Geometry
    n_interior: int
    dx: float
    nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_interior + 2

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def kinds(self) -> tuple[BoundaryKind, BoundaryKind]:
        return self.geometry.endpoint_kinds()

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights over all nodes (ends carry 1/2)."""
        w = np.ones(self.n_nodes)
        w[0] = 0.5
        w[-1] = 0.5
        w.setflags(write=False)
        return w

    @property
    def active_start(self) -> int:
        return 0 if self.kinds[0] is BoundaryKind.ABSORBING else 1

    @property
    def active_stop(self) -> int:
        return self.n_nodes if self.kinds[1] is BoundaryKind.ABSORBING else self.n_nodes - 1

    @property
    def n_active(self) -> int:
        return self.active_stop - self.active_start

    def absorbing_labels(self) -> tuple[str, ...]:
        labels = self.geometry.boundary_labels()
        out = []
        if self.kinds[0] is BoundaryKind.ABSORBING:
            out.append(labels[0])
        if self.kinds[1] is BoundaryKind.ABSORBING:
            out.append(labels[1])
        return tuple(out)

    def compatible(self, other: "Grid") -> bool:
        return (
            self.geometry == other.geometry
            and self.n_interior == other.n_interior
        )


def build_grid(geometry: Geometry, n_interior: int) -> Grid:
    """Uniform grid with n_interior interior nodes; dx = extent/(n_interior+1)."""
    if n_interior < _MIN_INTERIOR:
        raise ValueError(
            f"n_interior={n_interior} is below the minimum of {_MIN_INTERIOR}; "
            "the resolution would be too coarse to trust"
        )
    extent = geometry.extent
    dx = extent / (n_interior + 1)
    nodes = np.linspace(0.0, extent, n_interior + 2)
    nodes.setflags(write=False)
    return Grid(geometry=geometry, n_interior=n_interior, dx=dx, nodes=nodes)


@dataclass(frozen=True)
class PacketInfo:
    """Support window and momentum scales of a factory packet; used to size
    the half-line validity window."""

    support_left: float
    support_right: float
    p0: float
    sigma_p: float


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex state on a grid.  For Ball grids the values are the reduced
    radial function u(r); norms and inner products are always the plain 1D
    trapezoid ones."""

    values: np.ndarray
    grid: Grid
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    packet: Optional[PacketInfo] = None

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.n_nodes} nodes)"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("wave function contains non-finite entries")
        self.values.setflags(write=False)

    def norm_sq(self) -> float:
        v = self.values
        return float(self.grid.dx * np.sum(self.grid.weights * (v.real**2 + v.imag**2)))

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def with_values(self, values: np.ndarray) -> "WaveFunction":
        return WaveFunction(
            values=np.asarray(values, dtype=np.complex128),
            grid=self.grid,
            constants=self.constants,
            packet=self.packet,
        )


def inner_product(f: WaveFunction, g: WaveFunction) -> complex:
    """Trapezoid discrete L2 inner product, conjugate-linear in ``f``."""
    if not f.grid.compatible(g.grid):
        raise ValueError("wave functions live on different grids")
    w = f.grid.weights
    return complex(f.grid.dx * np.sum(w * np.conj(f.values) * g.values))


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0.0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
        b = np.where(s < 1.0, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
    return a / (a + b)


def _check_support_window(grid: Grid, left: float, right: float) -> None:
    if not (left > grid.x_min and right < grid.x_max):
        raise ValueError(
            f"initial-state support window [{left:g}, {right:g}] touches the "
            f"boundary of [{grid.x_min:g}, {grid.x_max:g}]; the theorems require "
            "the state and its image under H to vanish on the boundary"
        )


def _finalize_state(
    grid: Grid,
    values: np.ndarray,
    constants: PhysicalConstants,
    packet: Optional[PacketInfo],
) -> WaveFunction:
    w = grid.weights
    nrm = math.sqrt(float(grid.dx * np.sum(w * (values.real**2 + values.imag**2))))
    if nrm == 0.0:
        raise ValueError("state is identically zero on the grid")
    values = values / nrm
    return WaveFunction(values=values, grid=grid, constants=constants, packet=packet)


def make_gaussian(
    grid: Grid,
    x0: float,
    p0: float,
    sigma_x: float,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> WaveFunction:
    """Gaussian packet exp(-(x-x0)^2/4 sigma_x^2) * exp(i p0 x / hbar),
    flattened to exact compact support on [x0 - 8 sigma_x, x0 + 8 sigma_x].

    The envelope equals the pure Gaussian out to 6 sigma_x and rolls off
    smoothly to exactly zero at 8 sigma_x, so the state is a discrete proxy
    for a compactly supported smooth function.
    """
    if sigma_x <= 0.0:
        raise ValueError(f"sigma_x must be positive, got {sigma_x}")
    half = SUPPORT_SIGMAS * sigma_x
    _check_support_window(grid, x0 - half, x0 + half)

    x = grid.nodes
    r = np.abs(x - x0)
    env = np.exp(-((x - x0) ** 2) / (4.0 * sigma_x**2))
    roll = _smooth_step((half - r) / ((SUPPORT_SIGMAS - FLAT_SIGMAS) * sigma_x))
    env = np.where(r < half, env * roll, 0.0)
    values = env * np.exp(1j * p0 * x / constants.hbar)
    packet = PacketInfo(
        support_left=x0 - half,
        support_right=x0 + half,
        p0=p0,
        sigma_p=constants.hbar / (2.0 * sigma_x),
    )
    return _finalize_state(grid, values, constants, packet)


def make_bump(
    grid: Grid,
    center: float,
    half_width: float,
    p0: float,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> WaveFunction:
    """Compactly supported C-infinity bump exp(-1/(1-s^2)) * exp(i p0 x/hbar),
    s = (x - center)/half_width."""
    if half_width <= 0.0:
        raise ValueError(f"half_width must be positive, got {half_width}")
    _check_support_window(grid, center - half_width, center + half_width)

    x = grid.nodes
    s = (x - center) / half_width
    env = np.zeros_like(x)
    inside = np.abs(s) < 1.0
    env[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    values = env * np.exp(1j * p0 * x / constants.hbar)

    # momentum spread of the normalized packet, from hbar^2 |psi'|^2
    nrm2 = float(grid.dx * np.sum(grid.weights * env**2))
    denv = np.gradient(env, grid.dx)
    p2 = constants.hbar**2 * float(grid.dx * np.sum(grid.weights * denv**2)) / nrm2
    packet = PacketInfo(
        support_left=center - half_width,
        support_right=center + half_width,
        p0=p0,
        sigma_p=math.sqrt(max(p2, 0.0)),
    )
    return _finalize_state(grid, values, constants, packet)


def make_mode_superposition(
    grid: Grid,
    coefficients: Sequence[complex],
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> WaveFunction:
    """Superposition sum_n c_n sqrt(2/L) sin(n pi x / L) on an interval grid.

    The coefficients must already satisfy sum |c_n|^2 = 1; the sampled state
    is renormalized on the grid.
    """
    if not isinstance(grid.geometry, Interval):
        raise ValueError("mode superpositions are defined on Interval geometry only")
    c = np.asarray(coefficients, dtype=np.complex128)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("coefficients must be a non-empty 1D sequence")
    total = float(np.sum(np.abs(c) ** 2))
    if abs(total - 1.0) > 1e-10:
        raise ValueError(
            f"mode coefficients are not normalized: sum |c_n|^2 = {total!r}"
        )
    length = grid.geometry.length
    x = grid.nodes
    values = np.zeros(grid.n_nodes, dtype=np.complex128)
    for n, cn in enumerate(c, start=1):
        values += cn * math.sqrt(2.0 / length) * np.sin(n * math.pi * x / length)
    # endpoints are sin(0) and sin(n pi); force the exact zeros
    values[0] = 0.0
    values[-1] = 0.0
    return _finalize_state(grid, values, constants, None)
