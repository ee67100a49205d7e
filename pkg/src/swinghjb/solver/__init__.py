from .grid import Grid, Provenance, ValueSurface, rect_grid, strict_grid
from .hjb import (
    DEFAULT_LADDER,
    backward_stepper,
    SolverConfig,
    solve_penalized,
    solve_penalty_ladder,
    solve_strict,
    solve_strict_normalized,
    solve_unconstrained,
    xi_table,
)
from .operators import FarBoundary, PriceStep, TimeScheme, hamiltonian_min
from .residual import pde_residual
