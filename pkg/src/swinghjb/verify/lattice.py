"""Discrete-time dynamic programming on a price/volume lattice.

An independent oracle for the PDE solvers: purchases happen at rate 0 or
``u_bar`` over each of ``n_t`` periods, so volume levels are exact
multiples of ``u_bar * dt`` above the starting volume and the admissibility
bookkeeping is integer arithmetic. The price moves on a uniform lattice
with three-point transitions matching the conditional mean and variance
of one Euler step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..contract import ContractKind, SwingContract
from ..errors import ConfigurationError, DomainError
from ..market import MarketModel, ModelKind

MAX_DIM = 40
_TOL = 1e-9


def _price_axis(model: MarketModel, horizon: float, p0: float, n_p: int, width: float) -> np.ndarray:
    """Uniform price nodes containing ``p0`` as a node, covering the likely range."""
    if model.kind is ModelKind.CUSTOM:
        raise ConfigurationError("custom models need an explicit lattice price range")
    lo, hi = model.price_range(horizon, p0, width)
    if hi - lo <= 1e-9 * max(1.0, abs(p0)):
        lo, hi = p0 - 1.0, p0 + 1.0
    dp = (hi - lo) / n_p
    i0 = int(round((p0 - lo) / dp))
    i0 = min(max(i0, 1), n_p - 1)
    start = p0 - i0 * dp
    return start + dp * np.arange(n_p + 1)


def transition_matrix(
    model: MarketModel, t: float, p_nodes: np.ndarray, dt: float
) -> tuple[np.ndarray, int]:
    """Row-stochastic matrix of one period; returns it with the clamp count.

    From node i the price moves to ``i - s``, ``i`` or ``i + s``, where the
    stride ``s`` is the smallest that keeps the middle weight nonnegative.
    Rows whose moment-matched weights leave [0, 1], or whose stencil runs
    off the lattice, are clamped and renormalized and counted.
    """
    n = p_nodes.size
    dp = p_nodes[1] - p_nodes[0]
    f, s = model.coefficients(t, p_nodes)
    mean = f * dt
    second = (s**2) * dt + mean**2
    Q = np.zeros((n, n))
    clamped = 0
    for i in range(n):
        stride = max(1, int(math.ceil(math.sqrt(second[i]) / dp - 1e-12)))
        h = stride * dp
        up = 0.5 * (second[i] / h**2 + mean[i] / h)
        dn = 0.5 * (second[i] / h**2 - mean[i] / h)
        w = np.array([dn, 1.0 - up - dn, up])
        idx = np.array([i - stride, i, i + stride])
        bad = np.any(w < -1e-14) or idx[0] < 0 or idx[2] >= n
        if bad:
            clamped += 1
            w = np.clip(w, 0.0, None)
            idx = np.clip(idx, 0, n - 1)
            w = w / w.sum()
        np.add.at(Q[i], idx, w)
    return Q, clamped


@dataclass
class LatticeOracle:
    model: MarketModel
    contract: SwingContract
    n_t: int
    n_p: int
    n_z: int
    width: float = 3.5
    clamped_rows: int = field(default=0, init=False)

    def __post_init__(self):
        for name in ("n_t", "n_p", "n_z"):
            n = getattr(self, name)
            if not 2 <= n <= MAX_DIM:
                raise ConfigurationError(f"lattice {name} must lie in [2, {MAX_DIM}], got {n}")
        if self.contract.kind is not ContractKind.STRICT:
            raise ConfigurationError("the lattice oracle values strict contracts only")

    def value(self, t: float, p: float, z: float) -> float:
        c = self.contract
        remaining = c.maturity - t
        if remaining < -_TOL:
            raise DomainError(f"t={t} beyond maturity {c.maturity}")
        if remaining <= _TOL:
            if c.m - _TOL <= z <= c.M + _TOL:
                return 0.0
            raise DomainError(f"no feasible volume at maturity from z={z}")
        dt = remaining / self.n_t
        h = c.u_bar * dt
        levels = min(self.n_z, self.n_t)
        z_levels = z + h * np.arange(levels + 1)
        scale = _TOL * max(1.0, abs(c.M))
        terminal_ok = (z_levels >= c.m - scale) & (z_levels <= c.M + scale)
        if not terminal_ok.any() or z > c.M + scale:
            raise DomainError(f"no feasible volume path from z={z} at t={t}")

        p_nodes = _price_axis(self.model, remaining, p, self.n_p, self.width)
        V = np.where(terminal_ok[None, :], 0.0, -np.inf) * np.ones((p_nodes.size, 1))
        disc = math.exp(-self.model.rate * dt)
        self.clamped_rows = 0
        for n in range(self.n_t - 1, -1, -1):
            Q, clamped = transition_matrix(self.model, t + n * dt, p_nodes, dt)
            self.clamped_rows += clamped
            with np.errstate(invalid="ignore"):
                cont = disc * (Q @ np.where(np.isfinite(V), V, 0.0))
            feasible = np.isfinite(V[0])
            cont[:, ~feasible] = -np.inf
            wait = cont
            buy = np.full_like(cont, -np.inf)
            buy[:, :-1] = cont[:, 1:] + (p_nodes - c.strike)[:, None] * h
            V = np.maximum(wait, buy)
        i0 = int(np.argmin(np.abs(p_nodes - p)))
        out = float(V[i0, 0])
        if not np.isfinite(out):
            raise DomainError(f"no feasible volume path from z={z} at t={t}")
        return out


def lattice_dp_value(
    model: MarketModel,
    contract: SwingContract,
    n_t: int,
    n_p: int,
    n_z: int,
    t: float,
    p: float,
    z: float,
) -> float:
    """Backward-induction value of the strict contract at ``(t, p, z)``."""
    return LatticeOracle(model, contract, n_t, n_p, n_z).value(t, p, z)
