"""Discretization of the (t, p, z) state space and value surfaces on it."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..contract import SwingContract
from ..errors import ConfigurationError, DomainError
from ..market import MarketModel


@dataclass(frozen=True, eq=False)
class Grid:
    t_nodes: np.ndarray
    p_nodes: np.ndarray
    z_nodes: np.ndarray

    def __post_init__(self):
        for name in ("t_nodes", "p_nodes", "z_nodes"):
            nodes = np.asarray(getattr(self, name), dtype=float)
            if nodes.ndim != 1 or nodes.size < 3:
                raise ConfigurationError(f"grid {name} needs at least 3 nodes")
            steps = np.diff(nodes)
            if np.any(steps <= 0):
                raise ConfigurationError(f"grid {name} must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
                raise ConfigurationError(f"grid {name} must be uniform")
            object.__setattr__(self, name, nodes)

    @classmethod
    def uniform(
        cls,
        maturity: float,
        n_t: int,
        p_range: tuple[float, float],
        n_p: int,
        z_range: tuple[float, float],
        n_z: int,
    ) -> "Grid":
        return cls(
            np.linspace(0.0, maturity, n_t + 1),
            np.linspace(p_range[0], p_range[1], n_p + 1),
            np.linspace(z_range[0], z_range[1], n_z + 1),
        )

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def dp(self) -> float:
        return float(self.p_nodes[1] - self.p_nodes[0])

    @property
    def dz(self) -> float:
        return float(self.z_nodes[1] - self.z_nodes[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.t_nodes.size, self.p_nodes.size, self.z_nodes.size

    @property
    def maturity(self) -> float:
        return float(self.t_nodes[-1])

    def relative_spacing(self) -> float:
        """dt/T + dp/(p extent) + dz/(z extent)."""
        return (
            self.dt / (self.t_nodes[-1] - self.t_nodes[0])
            + self.dp / (self.p_nodes[-1] - self.p_nodes[0])
            + self.dz / (self.z_nodes[-1] - self.z_nodes[0])
        )

    def z_index(self, z: float, tol: float = 1e-9) -> int | None:
        k = int(round((z - self.z_nodes[0]) / self.dz))
        if 0 <= k < self.z_nodes.size and abs(self.z_nodes[k] - z) <= tol * max(1.0, abs(z)):
            return k
        return None

    def describe(self) -> dict:
        return {
            "t": [float(self.t_nodes[0]), float(self.t_nodes[-1]), self.t_nodes.size - 1],
            "p": [float(self.p_nodes[0]), float(self.p_nodes[-1]), self.p_nodes.size - 1],
            "z": [float(self.z_nodes[0]), float(self.z_nodes[-1]), self.z_nodes.size - 1],
        }


def default_price_range(
    model: MarketModel, maturity: float, p_ref: float, p_range: tuple[float, float] | None
) -> tuple[float, float]:
    if p_range is not None:
        lo, hi = p_range
        if not lo < hi:
            raise ConfigurationError("grid.p_min must be < grid.p_max")
        return float(lo), float(hi)
    return model.price_range(maturity, p_ref)


def strict_grid(
    model: MarketModel,
    contract: SwingContract,
    n_t: int,
    n_p: int,
    n_z: int,
    p_ref: float,
    p_range: tuple[float, float] | None = None,
) -> Grid:
    """Grid whose z-axis spans the trapezoid exactly, ``[m - u_bar T, M]``."""
    c = contract
    return Grid.uniform(
        c.maturity,
        n_t,
        default_price_range(model, c.maturity, p_ref, p_range),
        n_p,
        (c.m - c.u_bar * c.maturity, c.M),
        n_z,
    )


def rect_grid(
    model: MarketModel,
    contract: SwingContract,
    n_t: int,
    n_p: int,
    n_z: int,
    p_ref: float,
    p_range: tuple[float, float] | None = None,
    lower_margin: int = 2,
    upper_margin: int | None = None,
) -> Grid:
    """Rectangular grid for unconstrained problems.

    The core ``[m - u_bar T, M]`` is split into ``n_z`` cells exactly as in
    :func:`strict_grid`, so both grids share nodes there; ``lower_margin`` and
    ``upper_margin`` extra cells pad either side. The default upper padding is
    one full-rate purchase over the whole horizon.
    """
    c = contract
    z_lo, z_hi = c.m - c.u_bar * c.maturity, c.M
    dz = (z_hi - z_lo) / n_z
    if upper_margin is None:
        upper_margin = int(math.ceil(c.u_bar * c.maturity / dz - 1e-9))
    return Grid.uniform(
        c.maturity,
        n_t,
        default_price_range(model, c.maturity, p_ref, p_range),
        n_p,
        (z_lo - lower_margin * dz, z_hi + upper_margin * dz),
        n_z + lower_margin + upper_margin,
    )


class Provenance(enum.Enum):
    PENALIZED_CONTRACT = "penalized_contract"
    PENALTY_LADDER = "penalty_ladder"
    STRICT_DIRECT = "strict_direct"
    STRICT_NORMALIZED = "strict_normalized"
    UNCONSTRAINED = "unconstrained"


@dataclass(eq=False)
class ValueSurface:
    """Value array ``V[t_i, p_j, z_k]``; NaN marks nodes outside the domain.

    Strict surfaces carry ``beta_values[t_i, p_j]``, the Dirichlet data on the
    sloped lower boundary, which generally runs between z-nodes.
    """

    grid: Grid
    values: np.ndarray
    provenance: Provenance
    contract: SwingContract
    penalty_weight: float | None = None
    beta_values: np.ndarray | None = None
    decisions: np.ndarray | None = None
    native: dict = field(default_factory=dict)

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def label(self) -> str:
        if self.provenance is Provenance.PENALTY_LADDER:
            return f"penalty_ladder(c={self.penalty_weight:g})"
        return self.provenance.value

    @property
    def is_strict(self) -> bool:
        return self.provenance in (Provenance.STRICT_DIRECT, Provenance.STRICT_NORMALIZED)

    def value_scale(self, p_window: tuple[float, float] | None = None) -> float:
        v = self.values
        if p_window is not None:
            sel = (self.grid.p_nodes >= p_window[0]) & (self.grid.p_nodes <= p_window[1])
            v = v[:, sel, :]
        finite = np.abs(v[np.isfinite(v)])
        return max(float(finite.max()) if finite.size else 0.0, 1e-12)

    def growth_constant(self) -> float:
        """Smallest C with ``|V| <= C (1 + p^2 + z^2)`` on the grid."""
        g = self.grid
        P, Z = np.meshgrid(g.p_nodes, g.z_nodes, indexing="ij")
        ratio = np.abs(self.values) / (1.0 + P**2 + Z**2)[None]
        return float(np.nanmax(ratio))

    def beta_z(self, t):
        c = self.contract
        return c.m - c.u_bar * (c.maturity - np.asarray(t, dtype=float))

    def _profile(self, n: int, p: float) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        j = int(np.clip(np.searchsorted(g.p_nodes, p) - 1, 0, g.p_nodes.size - 2))
        w = (p - g.p_nodes[j]) / g.dp
        col = (1 - w) * self.values[n, j] + w * self.values[n, j + 1]
        ok = np.isfinite(col)
        zs, vs = g.z_nodes[ok], col[ok]
        if self.beta_values is not None:
            b = float(self.beta_z(g.t_nodes[n]))
            bv = (1 - w) * self.beta_values[n, j] + w * self.beta_values[n, j + 1]
            keep = zs > b + 1e-12
            zs = np.concatenate([[b], zs[keep]])
            vs = np.concatenate([[bv], vs[keep]])
        return zs, vs

    def interpolate(self, t, p, z) -> np.ndarray:
        """Multilinear interpolation; raises DomainError outside the surface."""
        g = self.grid
        t, p, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, p, z)))
        out = np.empty(t.shape)
        for idx in np.ndindex(t.shape):
            ti, pi, zi = t[idx], p[idx], z[idx]
            if not (g.t_nodes[0] - 1e-12 <= ti <= g.t_nodes[-1] + 1e-12):
                raise DomainError(f"t={ti} outside the grid")
            if not (g.p_nodes[0] - 1e-12 <= pi <= g.p_nodes[-1] + 1e-12):
                raise DomainError(f"p={pi} outside the grid")
            n = int(np.clip(np.floor((ti - g.t_nodes[0]) / g.dt + 1e-9), 0, g.t_nodes.size - 2))
            wt = min(max((ti - g.t_nodes[n]) / g.dt, 0.0), 1.0)
            vals = []
            for nn in (n, n + 1):
                zs, vs = self._profile(nn, pi)
                if zs.size == 0 or zi > zs[-1] + 1e-9 or (zi < zs[0] - 1e-9 and nn == n):
                    raise DomainError(f"z={zi} outside the domain at t={g.t_nodes[nn]}")
                vals.append(float(np.interp(zi, zs, vs)))
            out[idx] = (1 - wt) * vals[0] + wt * vals[1]
        return out[()] if out.ndim == 0 else out
