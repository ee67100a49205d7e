"""Finite-difference valuation of continuous-time swing contracts.

Solves the HJB equations of penalized and strictly constrained swing
contracts, extracts bang-bang exercise policies and cross-checks values
against Monte Carlo and lattice dynamic programming.
"""

from .contract import (
    DomainGeometry,
    PenaltyForm,
    PenaltySpec,
    SwingContract,
    cumulative_volume,
    is_admissible_endpoint,
    penalty_phi,
    penalty_phi_c,
)
from .errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    SimulationError,
    SwingError,
)
from .market import MarketModel, ModelKind, PathBatch, simulate_paths, xi_boundary
from .policy import ExercisePolicy, clip_to_admissible, extract_policy
from .solver import (
    FarBoundary,
    Grid,
    Provenance,
    SolverConfig,
    TimeScheme,
    ValueSurface,
    hamiltonian_min,
    pde_residual,
    solve_penalized,
    solve_penalty_ladder,
    solve_strict,
    solve_strict_normalized,
)
from .verify import (
    LatticeOracle,
    McEstimate,
    PropertyReport,
    lattice_dp_value,
    mc_policy_value,
    run_property_suite,
)

__version__ = "0.1.0"
