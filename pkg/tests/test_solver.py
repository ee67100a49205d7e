import numpy as np
import pytest
from conftest import constant_price_model, node

from swinghjb import (
    ConfigurationError,
    Grid,
    PenaltySpec,
    Provenance,
    SolverConfig,
    SwingContract,
    ValueSurface,
    hamiltonian_min,
    pde_residual,
    penalty_phi,
    solve_penalized,
    solve_penalty_ladder,
    solve_strict,
    solve_strict_normalized,
    xi_boundary,
)
from swinghjb.solver import FarBoundary, TimeScheme, backward_stepper
from swinghjb.solver.grid import rect_grid, strict_grid
from swinghjb.solver.hjb import volume_refinement


@pytest.mark.parametrize("q, u_bar, expected", [(0.0, 1.0, (0.0, 1.0)), (2.0, 3.0, (-6.0, 3.0)), (-5.0, 3.0, (0.0, 0.0))])
def test_hamiltonian_min_examples(q, u_bar, expected):
    value, v = hamiltonian_min(q, u_bar)
    assert (float(value), float(v)) == expected


def test_hamiltonian_min_vectorized():
    value, v = hamiltonian_min(np.array([-1.0, 0.0, 0.5]), 2.0)
    assert np.array_equal(value, [0.0, 0.0, -1.0])
    assert np.array_equal(v, [0.0, 2.0, 2.0])


# Deterministic problems: constant price 12 (above strike) or 8 (below).
DET = dict(maturity=1.0, strike=10.0, u_bar=4.0, m=2.0, M=6.0)


def _det_value(solve, contract, p, refinement, rect=False):
    model = constant_price_model()
    builder = rect_grid if rect else strict_grid
    grid = builder(model, contract, 8 * refinement, 10, 16 * refinement, p_ref=10.0, p_range=(5.0, 15.0))
    surface = solve(model, contract, grid, SolverConfig())
    return surface.values[0, node(grid.p_nodes, p), node(grid.z_nodes, 0.0)]


@pytest.mark.parametrize("p, exact", [(12.0, (12.0 - 10.0) * min(6.0, 4.0)), (8.0, (8.0 - 10.0) * 2.0)])
def test_strict_deterministic_closed_form(p, exact):
    contract = SwingContract(**DET)
    for refinement in (1, 2):
        assert _det_value(solve_strict, contract, p, refinement) == pytest.approx(exact, rel=0.02)


def test_penalized_deterministic_closed_form():
    contract = SwingContract(**DET, penalty=PenaltySpec(1e3, 1e3))
    exact = (12.0 - 10.0) * min(6.0, 4.0)
    for refinement in (1, 2):
        assert _det_value(solve_penalized, contract, 12.0, refinement, rect=True) == pytest.approx(exact, rel=0.02)


def test_strict_beta_node_with_constant_price():
    model = constant_price_model()
    contract = SwingContract(**DET)
    grid = strict_grid(model, contract, 8, 10, 16, p_ref=10.0, p_range=(5.0, 15.0))
    surface = solve_strict(model, contract, grid)
    j = node(grid.p_nodes, 12.0)
    for n, t in enumerate(grid.t_nodes):
        k = node(grid.z_nodes, contract.m - contract.u_bar * (contract.maturity - t))
        assert surface.values[n, j, k] == pytest.approx(4.0 * (1.0 - t) * 2.0, abs=1e-12)


def test_strict_boundary_data(strict_surface, strict_contract, gbm):
    g = strict_surface.grid
    V = strict_surface.values
    assert np.all(V[:, :, node(g.z_nodes, strict_contract.M)] == 0.0)
    band = (g.z_nodes >= strict_contract.m) & (g.z_nodes <= strict_contract.M)
    assert np.all(V[-1][:, band] == 0.0)
    assert np.all(np.isnan(V[-1][:, g.z_nodes < strict_contract.m - 1e-12]))
    T, u = strict_contract.maturity, strict_contract.u_bar
    xi = xi_boundary(gbm, T, u, g.t_nodes[:, None], g.p_nodes[None, :])
    np.testing.assert_allclose(strict_surface.beta_values, xi, rtol=1e-12, atol=1e-12 * np.abs(xi).max())
    assert np.all(np.isfinite(V[strict_surface.mask]))
    assert strict_surface.provenance is Provenance.STRICT_DIRECT


def test_penalized_terminal_slice_is_penalty(penalized_surface, penalized_contract):
    g = penalized_surface.grid
    c = penalized_contract
    P, Z = np.meshgrid(g.p_nodes, g.z_nodes, indexing="ij")
    assert np.array_equal(penalized_surface.values[-1], penalty_phi(c.penalty, P, Z, c.m, c.M))


def test_penalized_constancy_region(penalized_surface, penalized_contract):
    g = penalized_surface.grid
    c = penalized_contract
    tol_base = 10 * (g.dz + g.dt)
    scale = penalized_surface.value_scale()
    for n, t in enumerate(g.t_nodes):
        sel = (g.z_nodes >= c.m - 1e-12) & (g.z_nodes <= c.M - (c.maturity - t) * c.u_bar + 1e-12)
        if sel.sum() < 2:
            continue
        block = penalized_surface.values[n][:, sel]
        assert np.max(block.max(axis=1) - block.min(axis=1)) <= tol_base * scale


def test_ladder_terminal_slices():
    model = constant_price_model()
    contract = SwingContract(1.0, 10.0, 10.0, 0.0, 10.0)
    grid = rect_grid(model, contract, 8, 6, 16, p_ref=10.0, p_range=(7.0, 13.0))
    surfaces = solve_penalty_ladder(model, contract, grid, SolverConfig(ladder=(4.0, 100.0)))
    assert [s.penalty_weight for s in surfaces] == [4.0, 100.0]
    assert all(s.provenance is Provenance.PENALTY_LADDER for s in surfaces)
    assert np.all(surfaces[0].values[-1][:, node(grid.z_nodes, 10.0)] == pytest.approx(-2.0))
    for s in surfaces:
        assert np.all(s.values[-1][:, node(grid.z_nodes, 5.0)] == 0.0)


def test_ladder_successive_gaps_settle(ladder_surfaces, strict_contract):
    from swinghjb.verify.properties import ladder_gaps, sample_rho_domain

    samples = sample_rho_domain(strict_contract, 0.4, (6.0, 16.0), 100, seed=0)
    table = ladder_gaps(ladder_surfaces, ladder_surfaces[-1], samples)
    steps = table["successive_rel_gap"]
    assert steps[-1] < 1e-2
    assert steps[-1] <= steps[0]


def test_normalized_edges(normalized_surface, strict_surface):
    native = normalized_surface.native["values"]
    assert np.all(native[:, :, -1] == 0.0)
    np.testing.assert_allclose(native[:, :, 0], strict_surface.beta_values, rtol=1e-12, atol=1e-12)
    assert np.all(native[-1] == 0.0)
    assert normalized_surface.provenance is Provenance.STRICT_NORMALIZED


def test_strict_below_unconstrained_upper_bound(strict_surface, unconstrained_surface):
    g, u = strict_surface.grid, unconstrained_surface.grid
    k0 = node(u.z_nodes, g.z_nodes[0])
    upper = unconstrained_surface.values[:, :, k0:k0 + g.z_nodes.size]
    mask = strict_surface.mask
    assert np.all(strict_surface.values[mask] <= upper[mask] + 1e-9)


def test_cfl_violation_names_dt_bound(gbm, strict_contract):
    grid = strict_grid(gbm, strict_contract, 8, 16, 64, p_ref=10.0)
    with pytest.raises(ConfigurationError, match="dt <="):
        solve_strict(gbm, strict_contract, grid)


def test_volume_refinement_is_exact_shift(gbm, strict_contract, strict_grid_64, strict_surface):
    assert volume_refinement(strict_grid_64, strict_contract.u_bar) == 2
    assert strict_surface.native["volume_refinement"] == 2
    fine = strict_surface.native["solver_values"]
    assert np.array_equal(fine[:, :, ::2], strict_surface.values, equal_nan=True)
    unaligned = solve_strict(gbm, strict_contract, strict_grid_64, SolverConfig(volume_alignment=False))
    assert "volume_refinement" not in unaligned.native


def test_crank_nicolson_close_to_implicit(gbm, strict_contract, strict_grid_64, strict_surface):
    cn = solve_strict(gbm, strict_contract, strict_grid_64,
                      SolverConfig(time_scheme=TimeScheme.CRANK_NICOLSON, p_far_boundary=FarBoundary("asymptotic")))
    a = strict_surface.interpolate(0.0, 10.0, 0.0)
    b = cn.interpolate(0.0, 10.0, 0.0)
    assert abs(a - b) < 0.02 * abs(a)


def test_stepper_reproduces_surface(gbm, strict_surface, solver_config):
    stepper = backward_stepper(strict_surface, gbm, solver_config)
    fine = strict_surface.native["solver_values"]
    out, _ = stepper.step(10, fine[11])
    np.testing.assert_array_equal(out, fine[10])


def test_residual_vanishes_on_linear_function():
    model = constant_price_model()
    contract = SwingContract(**DET)
    grid = Grid.uniform(1.0, 4, (5.0, 15.0), 10, (0.0, 6.0), 6)
    values = np.broadcast_to((3.0 + 2.0 * grid.p_nodes)[None, :, None], grid.shape).copy()
    fake = ValueSurface(grid, values, Provenance.PENALIZED_CONTRACT, contract)
    stats = pde_residual(fake, model, contract, include_hamiltonian=False)
    assert stats["max_abs"] < 1e-12
    assert stats["n_nodes"] == 4 * 9 * 5


def test_residual_decreases_under_refinement(gbm, strict_contract):
    means = []
    for k in (1, 2):
        grid = strict_grid(gbm, strict_contract, 32 * k, 32 * k, 32 * k, p_ref=10.0)
        surface = solve_strict(gbm, strict_contract, grid, SolverConfig(p_far_boundary=FarBoundary("asymptotic")))
        stats = pde_residual(surface, gbm, strict_contract, p_window=(7.0, 14.0), z_window=(2.5, 5.5))
        means.append(stats["mean_abs"])
    assert means[1] < means[0]
