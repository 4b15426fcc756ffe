"""Regularized shell-model integration and RG-limit experiments."""
from ._version import __version__
from .analysis import (
    BlowupEstimate,
    FitError,
    FitResult,
    NoBlowupDetected,
    detect_blowup,
    fit_double_exponential,
    fit_geometric,
    shape_distance,
    stationary_dyadic_exact,
    stationary_eigvec,
    stationary_limit,
)
from .boundary import BoundarySpec, builtin_bc
from .config import ExperimentConfig, parse_config, preset, serialize
from .core import (
    DYADIC,
    GLEDZER,
    SABRA,
    Auxiliary,
    CanonicalCutoff,
    ConfigurationError,
    ContractViolation,
    ModelSpec,
    ShellState,
    ShellSystem,
    Viscous,
    apply_symmetry,
    builtin_ic,
    coupling,
    energy,
    energy_balance_residual,
    rhs,
)
from .integrator import SolverConfig, Trajectory, integrate, integrate_coupled, sample, sample_derivative
from .rglab import (
    attractor_probe,
    cauchy_distances,
    chaos_growth,
    deviations,
    estimate_eigenvalue,
    fit_prefactors,
    limit_reference,
    verify_rg_relation,
    viscous_bridge,
    viscous_rescaled_deviation,
)
from .runner import run_experiment, sweep
