"""Grid laboratory for Bergman kernel asymptotics against equilibrium
potentials of toric and chart weights."""

from .asymptotics import (
    ConvergenceRow,
    DecayBounds,
    DecayProfile,
    ExpansionWindowError,
    OffdiagResult,
    TchebishevReport,
    TzcPair,
    TzcReport,
    VolumeDistance,
    bergman_metric_field,
    bergman_volume_distance,
    convergence_table,
    decay_bounds,
    decay_profile,
    expansion_window,
    metric_distance,
    offdiag_concentration,
    scaled_bergman_field,
    tchebishev_estimate,
    tzc_fit,
)
from .config import ConfigError, RunConfig, load_config, normalize_config
from .envelope import (
    ConjugateResult,
    EnvelopeBoxError,
    EnvelopeResult,
    RegularityReport,
    SorConvergenceError,
    chart_equilibrium,
    contact_set,
    convex_envelope_1d,
    legendre_conjugate,
    radial_boundary_envelope,
    regularity_probe,
    sor_envelope,
    toric_equilibrium,
)
from .geometry import (
    BoxDomain,
    Bump,
    ChartDomain,
    DegeneratePolytopeError,
    DomainMismatchError,
    FSChart,
    GridField,
    HessianField,
    LatticePolytope,
    PerturbedChart,
    PerturbedToric,
    ToricPotential,
    WeightSpec,
    eval_weight,
    hessian_field,
    interior_window,
    lattice_points,
    lattice_volume,
)
from .hilbert import (
    BergmanModel,
    Factorization,
    GramNotPDError,
    HilbertSpaceSpec,
    bergman_function,
    bergman_kernel_norm,
    bergman_mass,
    bergman_values,
    build_model,
    dimension,
    gram_matrix,
    kernel_moment_trace,
    log_bergman_function,
    log_bergman_values,
    orthonormalize,
    reproducing_residual,
)
from .mongeampere import (
    DegenerateReferenceError,
    EquilibriumMeasure,
    VolumeReport,
    VolumeRow,
    equilibrium_measure,
    interior_contact_mask,
    ma_ratio,
    volume_report,
)
from .quadrature import (
    QuadratureError,
    fs_measure_density,
    grid_integral,
    leggauss_panels,
    leggauss_segmented,
    toric_measure_density,
    trapezoid_weights,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
