"""Numerical laboratory for quantum detection times with absorbing-boundary
detectors and the time-energy uncertainty relations they satisfy."""

from .geometry import (
    Ball,
    BoundaryKind,
    DEFAULT_CONSTANTS,
    DetectorSpec,
    Geometry,
    Grid,
    HalfLine,
    Interval,
    PhysicalConstants,
    WaveFunction,
    build_grid,
    inner_product,
    make_bump,
    make_gaussian,
    make_mode_superposition,
)
from .propagator import (
    DiscreteHamiltonian,
    FluxSample,
    Propagator,
    assemble_hamiltonian,
    boundary_flux_densities,
    cn_step,
    evolve,
)
from .detection import (
    DetectionRecord,
    DetectionStats,
    ProductReport,
    conditional_time_moments,
    detection_probability,
    uncertainty_product_report,
)
from .energy import (
    EnergyDensity,
    EnergyStats,
    energy_density,
    momentum_moments,
    sigmaE_dirichlet,
    sigmaE_operator,
    sigmaE_spectral,
)
from .operator_lab import (
    DenseOperators,
    DilationField,
    DilationStats,
    build_dense,
    build_dilation_field,
    dilation_stats,
    intertwine_check,
    povm_completeness,
    semigroup_contraction_check,
    skew_identity_residual,
    spectrum_check,
)
from .harness import (
    ExperimentConfig,
    MinimizeResult,
    UncertaintyReport,
    minimize_product,
    run_experiment,
    sweep,
)

__version__ = "0.1.0"
