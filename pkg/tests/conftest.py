import numpy as np
import pytest

from swinghjb import MarketModel, SolverConfig, SwingContract
from swinghjb.solver import FarBoundary
from swinghjb.solver.grid import rect_grid, strict_grid

DEMO = dict(maturity=1.0, strike=10.0, u_bar=4.0, m=2.0, M=6.0)


@pytest.fixture(scope="session")
def gbm():
    return MarketModel.gbm(mu=0.05, sigma=0.3, rate=0.03, strike=10.0)


@pytest.fixture(scope="session")
def strict_contract():
    return SwingContract(**DEMO)


@pytest.fixture(scope="session")
def solver_config():
    return SolverConfig(p_far_boundary=FarBoundary("asymptotic"))


@pytest.fixture(scope="session")
def strict_grid_64(gbm, strict_contract):
    return strict_grid(gbm, strict_contract, 64, 64, 64, p_ref=10.0)


@pytest.fixture(scope="session")
def rect_grid_64(gbm, strict_contract):
    return rect_grid(gbm, strict_contract, 64, 64, 64, p_ref=10.0)


def constant_price_model(strike: float = 10.0) -> MarketModel:
    """Zero drift, zero volatility, zero rate: the price never moves."""
    return MarketModel.gbm(mu=0.0, sigma=0.0, rate=0.0, strike=strike)


def node(axis: np.ndarray, x: float) -> int:
    i = int(np.argmin(np.abs(axis - x)))
    assert abs(axis[i] - x) < 1e-9, f"{x} is not a grid node"
    return i


@pytest.fixture(scope="session")
def penalized_contract():
    from swinghjb import PenaltySpec

    return SwingContract(**DEMO, penalty=PenaltySpec(1.0, 0.5))


@pytest.fixture(scope="session")
def strict_surface(gbm, strict_contract, strict_grid_64, solver_config):
    from swinghjb import solve_strict

    return solve_strict(gbm, strict_contract, strict_grid_64, solver_config)


@pytest.fixture(scope="session")
def normalized_surface(gbm, strict_contract, strict_grid_64, solver_config):
    from swinghjb import solve_strict_normalized

    return solve_strict_normalized(gbm, strict_contract, strict_grid_64, solver_config)


@pytest.fixture(scope="session")
def ladder_surfaces(gbm, strict_contract, rect_grid_64, solver_config):
    from swinghjb import solve_penalty_ladder

    return solve_penalty_ladder(gbm, strict_contract, rect_grid_64, solver_config)


@pytest.fixture(scope="session")
def unconstrained_surface(gbm, strict_contract, rect_grid_64, solver_config):
    from swinghjb.solver import solve_unconstrained

    return solve_unconstrained(gbm, strict_contract, rect_grid_64, solver_config)


@pytest.fixture(scope="session")
def penalized_surface(gbm, penalized_contract, rect_grid_64, solver_config):
    from swinghjb import solve_penalized

    return solve_penalized(gbm, penalized_contract, rect_grid_64, solver_config)
