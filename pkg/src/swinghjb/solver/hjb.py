"""Backward time-marching solvers for the swing HJB problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..contract import ContractKind, SwingContract, penalty_phi, penalty_phi_c
from ..errors import ConfigurationError
from ..market import MarketModel, ModelKind, xi_boundary
from .grid import Grid, Provenance, ValueSurface
from .operators import (
    FarBoundary,
    PriceStep,
    TimeScheme,
    step_gain,
    z_step_normalized,
    z_step_rect,
    z_step_trapezoid,
)

DEFAULT_LADDER = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)


@dataclass(frozen=True)
class SolverConfig:
    time_scheme: TimeScheme = TimeScheme.IMPLICIT
    p_far_boundary: FarBoundary = field(default_factory=FarBoundary)
    cfl_safety: float = 1.0
    ladder: tuple[float, ...] = DEFAULT_LADDER
    affine_fitting: bool = True
    volume_alignment: bool = True

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError("solver.cfl_safety must lie in (0, 1]")
        ladder = tuple(float(c) for c in self.ladder)
        if not ladder:
            raise ConfigurationError("solver.ladder must not be empty")
        if any(c <= 0 for c in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigurationError("solver.ladder must be strictly increasing and > 0")
        object.__setattr__(self, "ladder", ladder)


def strict_far_field(model: MarketModel, contract: SwingContract):
    """Limits of the strict value far from the strike, as ``value_fn(t, p, z)``.

    Well above the strike the optimal policy buys at full rate until the
    volume reaches M (or maturity); well below it buys only the minimum m,
    as late as possible. Both payoffs are affine in p with closed forms for
    the preset models. On the sloped boundary both reduce to the forced
    payoff, so the edge data stay consistent.
    """
    if model.kind is ModelKind.CUSTOM:
        raise ConfigurationError("the asymptotic far boundary needs a preset model")
    c = contract

    def earned(tau: float, start, stop, p):
        # Discounted margin of full-rate purchase between start and stop (from now).
        tau = max(tau, 1e-300)
        upto = lambda x: np.asarray(xi_boundary(model, tau, c.u_bar, tau - x, p), dtype=float)
        return upto(stop) - upto(start)

    def value_fn(t: float, p: float, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        tau = c.maturity - t
        if p >= c.strike:
            span = np.clip((c.M - z) / c.u_bar, 0.0, tau)
            return earned(tau, np.zeros_like(span), span, p)
        span = np.clip((c.m - z) / c.u_bar, 0.0, tau)
        return earned(tau, tau - span, np.full_like(span, tau), p)

    return value_fn


def unconstrained_far_field(model: MarketModel, contract: SwingContract):
    """Limits of the unconstrained value: full-rate purchase to maturity well
    above the strike, no purchase well below it. Independent of z."""
    if model.kind is ModelKind.CUSTOM:
        raise ConfigurationError("the asymptotic far boundary needs a preset model")
    c = contract

    def value_fn(t: float, p: float, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if p < c.strike:
            return np.zeros_like(z)
        return np.full_like(z, float(xi_boundary(model, c.maturity, c.u_bar, t, p)))

    return value_fn


def _price_step(
    model: MarketModel,
    p_nodes: np.ndarray,
    dt: float,
    config: SolverConfig,
    strict_contract: SwingContract | None = None,
    far_field=None,
) -> PriceStep:
    """``far_field`` (a value_fn) resolves the asymptotic option for problems
    other than the strict one; without either, it falls back to
    ``second_derivative_zero``."""
    far = config.p_far_boundary
    if far.kind == "asymptotic":
        if strict_contract is not None:
            far = FarBoundary("dirichlet", strict_far_field(model, strict_contract))
        elif far_field is not None:
            far = FarBoundary("dirichlet", far_field)
        else:
            far = FarBoundary()
    return PriceStep(model, p_nodes, dt, config.time_scheme, far, fitted=config.affine_fitting)


def _check_inputs(model: MarketModel, contract: SwingContract, grid: Grid) -> None:
    if abs(model.strike - contract.strike) > 1e-12 * contract.strike:
        raise ConfigurationError(
            f"model strike {model.strike} differs from contract strike {contract.strike}"
        )
    if abs(grid.maturity - contract.maturity) > 1e-12 * contract.maturity or grid.t_nodes[0] != 0:
        raise ConfigurationError("grid time axis must span [0, contract.maturity]")


class RectStepper:
    """Backward step on a rectangular z-grid (penalized, ladder, unconstrained)."""

    def __init__(self, model, contract, grid, config, far_field=None):
        self.model, self.contract, self.grid, self.config = model, contract, grid, config
        self.price_step = _price_step(model, grid.p_nodes, grid.dt, config, far_field=far_field)
        self.gain = step_gain(model, grid.p_nodes, grid.dt, self.price_step.fitted)
        ratio = contract.u_bar * grid.dt / grid.dz
        if ratio > config.cfl_safety + 1e-12:
            raise ConfigurationError(
                f"CFL condition violated: u_bar dt / dz = {ratio:.4g} > cfl_safety "
                f"{config.cfl_safety}; need dt <= {config.cfl_safety * grid.dz / contract.u_bar:.6g}"
            )

    def step(self, n: int, W_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, c = self.grid, self.contract
        star, decision = z_step_rect(W_next, self.gain, g.dz, g.dt, c.u_bar)
        out = self.price_step(g.t_nodes[n], g.t_nodes[n + 1], star, g.z_nodes)
        return out, decision


class TrapezoidStepper:
    """Backward step restricted to the trapezoid ``m - u_bar (T - t) <= z <= M``."""

    def __init__(self, model, contract, grid, config, xi_table):
        self.model, self.contract, self.grid, self.config = model, contract, grid, config
        self.xi = xi_table
        self.price_step = _price_step(model, grid.p_nodes, grid.dt, config, contract)
        self.gain = step_gain(model, grid.p_nodes, grid.dt, self.price_step.fitted)
        c = contract
        if grid.z_nodes[0] > c.m - c.u_bar * c.maturity + 1e-9 * max(1.0, abs(c.m)):
            raise ConfigurationError("grid z_min must be <= m - u_bar T for the strict problem")
        k_top = grid.z_index(c.M)
        if k_top is None:
            raise ConfigurationError("strict grids need M as a z-node")
        self.k_top = k_top
        self.eps = 1e-9 * grid.dz
        ratio = c.u_bar * grid.dt / grid.dz
        if ratio > config.cfl_safety + 1e-12:
            raise ConfigurationError(
                f"CFL condition violated: u_bar dt / dz = {ratio:.4g} > cfl_safety "
                f"{config.cfl_safety}; need dt <= {config.cfl_safety * grid.dz / c.u_bar:.6g}"
            )

    def beta(self, n: int) -> float:
        c = self.contract
        return c.m - c.u_bar * (c.maturity - self.grid.t_nodes[n])

    def domain_columns(self, n: int) -> np.ndarray:
        z = self.grid.z_nodes
        return (z >= self.beta(n) - self.eps) & (np.arange(z.size) <= self.k_top)

    def terminal(self) -> np.ndarray:
        g = self.grid
        W = np.full((g.p_nodes.size, g.z_nodes.size), np.nan)
        W[:, self.domain_columns(g.t_nodes.size - 1)] = 0.0
        return W

    def step(self, n: int, W_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, c = self.grid, self.contract
        star, decision, active = z_step_trapezoid(
            W_next, self.gain, g.z_nodes, g.dt, c.u_bar,
            self.beta(n), self.beta(n + 1), self.xi[n + 1], self.k_top, self.eps,
        )
        out = np.full_like(W_next, np.nan)
        cols = np.flatnonzero(active)
        out[:, cols] = self.price_step(g.t_nodes[n], g.t_nodes[n + 1], star[:, cols], g.z_nodes[cols])
        out[:, self.k_top] = 0.0
        on_beta = np.abs(g.z_nodes - self.beta(n)) <= self.eps
        out[:, on_beta] = self.xi[n][:, None]
        return out, decision


class NormalizedStepper:
    """Backward step in ``z' = (z - M) / (M - m + u_bar (T - t)) + 1`` on [0, 1]."""

    def __init__(self, model, contract, grid_n, config, xi_table):
        self.model, self.contract, self.grid, self.config = model, contract, grid_n, config
        self.xi = xi_table
        self.price_step = _price_step(model, grid_n.p_nodes, grid_n.dt, config, contract)
        self.gain = step_gain(model, grid_n.p_nodes, grid_n.dt, self.price_step.fitted)
        c = contract
        ratio = c.u_bar * grid_n.dt / ((c.M - c.m) * grid_n.dz)
        if ratio > config.cfl_safety + 1e-12:
            raise ConfigurationError(
                f"CFL condition violated in normalized coordinates: u_bar dt / ((M - m) dz') = "
                f"{ratio:.4g} > cfl_safety {config.cfl_safety}; need dt <= "
                f"{config.cfl_safety * (c.M - c.m) * grid_n.dz / c.u_bar:.6g}"
            )

    def width(self, n: int) -> float:
        c = self.contract
        return c.M - c.m + c.u_bar * (c.maturity - self.grid.t_nodes[n])

    def terminal(self) -> np.ndarray:
        g = self.grid
        return np.zeros((g.p_nodes.size, g.z_nodes.size))

    def step(self, n: int, W_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, c = self.grid, self.contract
        star, decision = z_step_normalized(
            W_next, self.gain, g.z_nodes, g.dt, c.u_bar, self.width(n + 1)
        )
        out = np.empty_like(W_next)
        z_phys = c.M + (g.z_nodes[1:-1] - 1.0) * self.width(n)
        out[:, 1:-1] = self.price_step(g.t_nodes[n], g.t_nodes[n + 1], star[:, 1:-1], z_phys)
        out[:, 0] = self.xi[n]
        out[:, -1] = 0.0
        return out, decision


def xi_table(
    model: MarketModel, contract: SwingContract, grid: Grid, config: SolverConfig
) -> np.ndarray:
    """Forced-purchase payoff on the (t, p) nodes.

    Closed forms for the presets. Custom models solve the linear pricing
    equation for the forced strategy with the same price operator instead
    of running a Monte Carlo per node.
    """
    c = contract
    if model.kind is not ModelKind.CUSTOM:
        T, P = np.meshgrid(grid.t_nodes, grid.p_nodes, indexing="ij")
        return np.asarray(xi_boundary(model, c.maturity, c.u_bar, T, P), dtype=float)
    step = _price_step(model, grid.p_nodes, grid.dt, config)
    table = np.zeros((grid.t_nodes.size, grid.p_nodes.size))
    gain = c.u_bar * grid.dt * step_gain(model, grid.p_nodes, grid.dt, step.fitted)
    for n in range(grid.t_nodes.size - 2, -1, -1):
        rhs = (table[n + 1] + gain)[:, None]
        table[n] = step(grid.t_nodes[n], grid.t_nodes[n + 1], rhs, np.zeros(1))[:, 0]
    return table


def volume_refinement(grid: Grid, u_bar: float) -> int:
    """Factor ``r`` such that one full-rate step ``u_bar dt`` spans exactly ``r``
    cells of a grid with ``r`` times finer volume spacing (1 if there is none).

    On such a grid the upwind volume step is an exact shift, free of the
    numerical diffusion an explicit upwind step adds when the shift is a
    fraction of a cell.
    """
    lam = u_bar * grid.dt / grid.dz
    if lam >= 1.0 - 1e-9:
        return 1
    r = int(round(1.0 / lam))
    return r if abs(r * lam - 1.0) < 1e-9 else 1


def _aligned(grid: Grid, contract: SwingContract, config: SolverConfig) -> tuple[Grid, int]:
    r = volume_refinement(grid, contract.u_bar) if config.volume_alignment else 1
    if r == 1:
        return grid, 1
    z = np.linspace(grid.z_nodes[0], grid.z_nodes[-1], r * (grid.z_nodes.size - 1) + 1)
    return Grid(grid.t_nodes, grid.p_nodes, z), r


def _coarsen(surface: ValueSurface, grid: Grid, r: int) -> ValueSurface:
    """Keep every r-th volume node; the fine solution stays in ``native``."""
    if r == 1:
        return surface
    native = dict(surface.native, volume_refinement=r, solver_grid=surface.grid,
                  solver_values=surface.values)
    decisions = None if surface.decisions is None else surface.decisions[:, :, ::r]
    return ValueSurface(
        grid, surface.values[:, :, ::r], surface.provenance, surface.contract,
        penalty_weight=surface.penalty_weight, beta_values=surface.beta_values,
        decisions=decisions, native=native,
    )


def _march(stepper, W_T: np.ndarray, n_t: int) -> tuple[np.ndarray, np.ndarray]:
    values = np.empty((n_t + 1,) + W_T.shape)
    decisions = np.zeros((n_t + 1,) + W_T.shape)
    values[n_t] = W_T
    for n in range(n_t - 1, -1, -1):
        values[n], decisions[n] = stepper.step(n, values[n + 1])
    return values, decisions


def _rect_far_field(model, contract, config, provenance):
    if provenance is Provenance.UNCONSTRAINED and config.p_far_boundary.kind == "asymptotic":
        return unconstrained_far_field(model, contract)
    return None


def _solve_rect(model, contract, grid, config, terminal_fn, provenance, weight=None) -> ValueSurface:
    """``terminal_fn(P, Z)`` gives the t = T slice on a (p, z) mesh."""
    _check_inputs(model, contract, grid)
    fine, r = _aligned(grid, contract, config)
    stepper = RectStepper(model, contract, fine, config, _rect_far_field(model, contract, config, provenance))
    P, Z = np.meshgrid(fine.p_nodes, fine.z_nodes, indexing="ij")
    terminal = np.array(np.broadcast_to(terminal_fn(P, Z), P.shape), dtype=float)
    values, decisions = _march(stepper, terminal, fine.t_nodes.size - 1)
    surface = ValueSurface(
        fine, values, provenance, contract, penalty_weight=weight, decisions=decisions,
        native={"gain": stepper.gain},
    )
    return _coarsen(surface, grid, r)


def solve_penalized(
    model: MarketModel, contract: SwingContract, grid: Grid, config: SolverConfig | None = None
) -> ValueSurface:
    """Value of a swing contract with terminal penalty on the volume."""
    if contract.kind is not ContractKind.PENALIZED:
        raise ConfigurationError("solve_penalized needs a penalized contract")
    config = config or SolverConfig()
    return _solve_rect(
        model, contract, grid, config,
        lambda P, Z: penalty_phi(contract.penalty, P, Z, contract.m, contract.M),
        Provenance.PENALIZED_CONTRACT,
    )


def solve_unconstrained(
    model: MarketModel, contract: SwingContract, grid: Grid, config: SolverConfig | None = None
) -> ValueSurface:
    """Value with every control admissible and no terminal penalty (an upper bound)."""
    config = config or SolverConfig()
    return _solve_rect(model, contract, grid, config, lambda P, Z: np.zeros(P.shape), Provenance.UNCONSTRAINED)


def solve_penalty_ladder(
    model: MarketModel, contract: SwingContract, grid: Grid, config: SolverConfig | None = None
) -> list[ValueSurface]:
    """Unconstrained approximations with penalty weights ``config.ladder``."""
    config = config or SolverConfig()
    surfaces = []
    for c in config.ladder:
        surfaces.append(_solve_rect(
            model, contract, grid, config, lambda P, Z, c=c: penalty_phi_c(c, contract.m, contract.M, Z),
            Provenance.PENALTY_LADDER, weight=c,
        ))
    return surfaces


def solve_strict(
    model: MarketModel, contract: SwingContract, grid: Grid, config: SolverConfig | None = None
) -> ValueSurface:
    """Strictly constrained value on the trapezoid with Dirichlet data on its edges."""
    config = config or SolverConfig()
    _check_inputs(model, contract, grid)
    strict = contract.as_strict()
    xi = xi_table(model, strict, grid, config)
    fine, r = _aligned(grid, strict, config)
    stepper = TrapezoidStepper(model, strict, fine, config, xi)
    values, decisions = _march(stepper, stepper.terminal(), grid.t_nodes.size - 1)
    surface = ValueSurface(
        fine, values, Provenance.STRICT_DIRECT, strict, beta_values=xi, decisions=decisions,
        native={"gain": stepper.gain},
    )
    return _coarsen(surface, grid, r)


def solve_strict_normalized(
    model: MarketModel,
    contract: SwingContract,
    grid: Grid,
    config: SolverConfig | None = None,
    n_zn: int | None = None,
) -> ValueSurface:
    """Strict value computed on the normalized rectangle and mapped back to ``grid``.

    ``n_zn`` sets the number of cells in the normalized volume coordinate
    (default: as many as ``grid`` has z-cells). Time steps are subdivided as
    needed to meet the advection limit in the normalized coordinate, whose
    speeds scale like ``u_bar / (M - m)``; results are kept on ``grid``'s time
    nodes. The native solution is kept in ``surface.native`` under
    ``"values"``, ``"zn_nodes"``, ``"decisions"`` and ``"time_substeps"``.
    """
    config = config or SolverConfig()
    _check_inputs(model, contract, grid)
    strict = contract.as_strict()
    n_zn = n_zn or grid.z_nodes.size - 1
    n_t = grid.t_nodes.size - 1
    ratio = strict.u_bar * grid.dt * n_zn / (strict.M - strict.m)
    n_sub = max(1, int(np.ceil(ratio / config.cfl_safety - 1e-12)))
    t_fine = np.linspace(0.0, grid.maturity, n_t * n_sub + 1)
    grid_n = Grid(t_fine, grid.p_nodes, np.linspace(0.0, 1.0, n_zn + 1))
    xi_fine = xi_table(model, strict, Grid(t_fine, grid.p_nodes, grid.z_nodes), config)
    stepper = NormalizedStepper(model, strict, grid_n, config, xi_fine)
    native, native_dec = _march(stepper, stepper.terminal(), n_t * n_sub)
    native, native_dec, xi = native[::n_sub], native_dec[::n_sub], xi_fine[::n_sub]

    c = strict
    values = np.full(grid.shape, np.nan)
    eps = 1e-9 * grid.dz
    for n, t in enumerate(grid.t_nodes):
        width = c.M - c.m + c.u_bar * (c.maturity - t)
        zn = (grid.z_nodes - c.M) / width + 1.0
        inside = (zn >= -eps / width) & (zn <= 1.0 + eps / width)
        zn_in = np.clip(zn[inside], 0.0, 1.0)
        cols = np.flatnonzero(inside)
        for j in range(grid.p_nodes.size):
            values[n, j, cols] = np.interp(zn_in, grid_n.z_nodes, native[n, j])
        k_top = grid.z_index(c.M)
        if k_top is not None:
            values[n, :, k_top] = 0.0
    return ValueSurface(
        grid,
        values,
        Provenance.STRICT_NORMALIZED,
        strict,
        beta_values=xi,
        native={
            "values": native,
            "zn_nodes": grid_n.z_nodes,
            "decisions": native_dec,
            "time_substeps": n_sub,
            "gain": step_gain(model, grid.p_nodes, grid.dt, stepper.price_step.fitted),
        },
    )


def backward_stepper(surface: ValueSurface, model: MarketModel, config: SolverConfig | None = None):
    """The one-step backward map that produced ``surface``.

    ``stepper.step(n, W_next)`` maps a slice at t_{n+1} to (slice at t_n,
    decisions). Used to probe the scheme, e.g. for monotonicity. For
    surfaces solved on a volume-refined grid the stepper acts on that grid,
    i.e. on ``surface.native["solver_values"]``.
    """
    config = config or SolverConfig()
    grid = surface.native.get("solver_grid", surface.grid)
    if surface.provenance is Provenance.STRICT_DIRECT:
        return TrapezoidStepper(model, surface.contract, grid, config, surface.beta_values)
    if surface.provenance is Provenance.STRICT_NORMALIZED:
        raise ConfigurationError("normalized surfaces are stepped in their native coordinates")
    far_field = _rect_far_field(model, surface.contract, config, surface.provenance)
    return RectStepper(model, surface.contract, grid, config, far_field)
