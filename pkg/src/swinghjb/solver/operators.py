"""Discrete building blocks of the backward HJB step.

One backward step from t_{n+1} to t_n is split in two:

1. an explicit upwind update in the volume direction, carrying the
   control Hamiltonian ``max_v v (V_z + p - K)`` node by node;
2. an implicit (or Crank-Nicolson) solve in the price direction for
   ``-V_t + r V - f V_p - sigma^2/2 V_pp``, one tridiagonal system shared by
   every z-column.

With ``u_bar dt <= dz`` and a price operator that is an M-matrix both
stages are monotone, hence so is the composed step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ConfigurationError, NumericalError
from ..market import MarketModel, xi_boundary


def hamiltonian_min(q, u_bar: float):
    """Minimize ``-v q`` over ``v in [0, u_bar]``; ties go to ``u_bar``."""
    if not u_bar > 0:
        raise ConfigurationError("u_bar must be > 0")
    q = np.asarray(q, dtype=float)
    value = -u_bar * np.maximum(q, 0.0)
    argmin = np.where(q >= 0, u_bar, 0.0)
    if q.ndim == 0:
        return float(value), float(argmin)
    return value, argmin


class TimeScheme(enum.Enum):
    IMPLICIT = "fully_implicit"
    CRANK_NICOLSON = "crank_nicolson"


@dataclass(frozen=True)
class FarBoundary:
    """Treatment of the truncated price boundaries.

    ``second_derivative_zero`` drops diffusion at the end nodes and keeps
    only the inward-pointing part of the drift, which keeps the system an
    M-matrix. ``dirichlet`` imposes ``value_fn(t, p, z)`` at both ends.
    ``asymptotic`` is a Dirichlet condition with the large- and small-price
    limits of the strictly constrained value (see
    :func:`swinghjb.solver.hjb.strict_far_field`); other problems fall back
    to ``second_derivative_zero``.
    """

    kind: str = "second_derivative_zero"
    value_fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("second_derivative_zero", "dirichlet", "asymptotic"):
            raise ConfigurationError(f"unknown far boundary {self.kind!r}")
        if self.kind == "dirichlet" and self.value_fn is None:
            raise ConfigurationError("dirichlet far boundary needs value_fn")


def p_coefficients(
    model: MarketModel, t: float, p_nodes: np.ndarray, drift: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour weights ``(lo, up)`` of ``-f V_p - sigma^2/2 V_pp``.

    The operator at node i reads ``(lo_i + up_i) V_i - lo_i V_{i-1} - up_i V_{i+1}``.
    Central differencing is used wherever it leaves both weights
    nonnegative, upwinding elsewhere. ``drift`` overrides the model drift.
    """
    dp = p_nodes[1] - p_nodes[0]
    f, s = model.coefficients(t, p_nodes)
    if drift is not None:
        f = drift
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(s))):
        bad = int(np.flatnonzero(~(np.isfinite(f) & np.isfinite(s)))[0])
        raise NumericalError(f"non-finite coefficient at t={t:.6g}, p={p_nodes[bad]:.6g}")
    diff = 0.5 * s**2 / dp**2
    lo_c = diff - f / (2 * dp)
    up_c = diff + f / (2 * dp)
    central = (lo_c >= 0) & (up_c >= 0)
    lo = np.where(central, lo_c, diff + np.maximum(-f, 0.0) / dp)
    up = np.where(central, up_c, diff + np.maximum(f, 0.0) / dp)
    lo[0] = 0.0
    up[0] = max(f[0], 0.0) / dp
    up[-1] = 0.0
    lo[-1] = max(-f[-1], 0.0) / dp
    return lo, up


def fitted_coefficients(model: MarketModel, dt: float, p_nodes: np.ndarray):
    """Rate and drift that make one implicit step exact on affine functions of p.

    For models whose conditional mean is affine, ``E[P_{t+dt}] = a p + b``,
    an implicit Euler step with rate ``(e^{r dt} - 1) / dt`` and drift
    ``e^{r dt} (a p + b - p) / (a dt)`` maps ``c p + d`` to exactly
    ``e^{-r dt} (c (a p + b) + d)``. Returns None for other models.
    """
    affine = model.affine_mean(dt)
    if affine is None:
        return None
    a, b = affine
    grow = math.exp(model.rate * dt)
    rate = math.expm1(model.rate * dt) / dt
    drift = grow * ((a - 1.0) * p_nodes + b) / (a * dt)
    return rate, drift


def step_gain(model: MarketModel, p_nodes: np.ndarray, dt: float, fitted: bool) -> np.ndarray:
    """Per-unit purchase margin used in the volume step.

    Without fitting this is ``p - K``. With fitting it is the affine function
    ``g`` for which one fitted price step of ``g dt`` returns exactly the
    discounted margin earned over the step, ``int_0^dt e^{-rs} (E[P_s] - K) ds``,
    so the full-rate purchase payoff is reproduced without time-stepping error.
    """
    affine = model.affine_mean(dt) if fitted else None
    if affine is None:
        return p_nodes - model.strike
    a, b = affine
    start = (p_nodes - b) / a
    earned = xi_boundary(model, dt, 1.0, 0.0, start)
    return math.exp(model.rate * dt) * np.asarray(earned, dtype=float) / dt


class PriceStep:
    """Solves ``(I + theta dt L) V_n = (I - (1 - theta) dt L) V*`` column-wise.

    With ``fitted`` (the default) and an implicit scheme, models with an
    affine conditional mean use the rate and drift of
    :func:`fitted_coefficients`; both differ from ``r`` and ``f`` by O(dt).
    """

    def __init__(
        self,
        model: MarketModel,
        p_nodes: np.ndarray,
        dt: float,
        scheme: TimeScheme = TimeScheme.IMPLICIT,
        far_boundary: FarBoundary | None = None,
        fitted: bool = True,
    ):
        self.model = model
        self.p_nodes = p_nodes
        self.dt = dt
        self.scheme = scheme
        self.far = far_boundary or FarBoundary()
        self.theta = 1.0 if scheme is TimeScheme.IMPLICIT else 0.5
        self.fit = fitted_coefficients(model, dt, p_nodes) if fitted and self.theta == 1.0 else None

    @property
    def fitted(self) -> bool:
        return self.fit is not None

    def _bands(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.fit is not None:
            r, drift = self.fit
            lo, up = p_coefficients(self.model, t, self.p_nodes, drift)
        else:
            r = self.model.rate
            lo, up = p_coefficients(self.model, t, self.p_nodes)
        return lo, up, r + lo + up

    def matrix(self, t: float) -> np.ndarray:
        """Banded implicit matrix in ``solve_banded`` layout."""
        lo, up, diag = self._bands(t)
        th = self.theta * self.dt
        ab = np.zeros((3, self.p_nodes.size))
        ab[0, 1:] = -th * up[:-1]
        ab[1] = 1.0 + th * diag
        ab[2, :-1] = -th * lo[1:]
        if self.far.kind == "dirichlet":
            ab[0, 1] = ab[2, -2] = 0.0
            ab[1, 0] = ab[1, -1] = 1.0
        self._check(ab, t)
        return ab

    def _check(self, ab: np.ndarray, t: float) -> None:
        off = np.zeros(ab.shape[1])
        off[:-1] += np.abs(ab[0, 1:])
        off[1:] += np.abs(ab[2, :-1])
        positive_off = np.zeros(ab.shape[1], dtype=bool)
        positive_off[:-1] |= ab[0, 1:] > 0
        positive_off[1:] |= ab[2, :-1] > 0
        bad = (ab[1] < off) | positive_off | ~np.isfinite(ab[1])
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise NumericalError(
                f"price system is not a diagonally dominant M-matrix at t={t:.6g}, "
                f"p={self.p_nodes[i]:.6g}"
            )

    def apply_explicit(self, t: float, V: np.ndarray) -> np.ndarray:
        lo, up, diag = self._bands(t)
        h = (1.0 - self.theta) * self.dt
        out = V * (1.0 - h * diag)[:, None]
        out[1:] += h * lo[1:, None] * V[:-1]
        out[:-1] += h * up[:-1, None] * V[1:]
        return out

    def __call__(self, t_n: float, t_next: float, rhs: np.ndarray, z_cols: np.ndarray) -> np.ndarray:
        """Advance the z-updated slice ``rhs`` (shape n_p x n_cols) to time ``t_n``."""
        if rhs.shape[1] == 0:
            return rhs.copy()
        b = rhs if self.theta == 1.0 else self.apply_explicit(t_next, rhs)
        b = np.array(b, dtype=float, copy=True)
        if self.far.kind == "dirichlet":
            for i in (0, -1):
                b[i] = self.far.value_fn(t_n, self.p_nodes[i], z_cols)
        return solve_banded((1, 1), self.matrix(t_n), b)


def z_step_rect(
    W: np.ndarray, gain: np.ndarray, dz: float, dt: float, u_bar: float
) -> tuple[np.ndarray, np.ndarray]:
    """Upwind volume update on a rectangular z-grid.

    ``gain[j]`` is the per-unit purchase margin at price node j (``p - K``
    or its time-fitted variant, see :func:`step_gain`). The top node cannot
    buy (no node to move into); everywhere else the forward difference
    supplies ``V_z``.
    """
    q = (W[:, 1:] - W[:, :-1]) / dz + gain[:, None]
    h, v = hamiltonian_min(q, u_bar)
    out = W.copy()
    out[:, :-1] = W[:, :-1] - dt * h
    decision = np.zeros_like(W)
    decision[:, :-1] = v
    return out, decision


def z_step_trapezoid(
    W: np.ndarray,
    gain: np.ndarray,
    z_nodes: np.ndarray,
    dt: float,
    u_bar: float,
    beta_now: float,
    beta_next: float,
    xi_next: np.ndarray,
    k_top: int,
    eps: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Volume update restricted to ``beta_now <= z <= M``.

    ``W`` is the slice at t_{n+1}, NaN below ``beta_next``. Nodes between
    ``beta_now`` and ``beta_next`` cannot wait a full step without leaving the
    domain; their stencil is clipped to the boundary point
    ``(beta_next, xi_next)``. Returns the updated slice, the decisions and the
    boolean mask of columns in the domain at t_n.
    """
    dz = z_nodes[1] - z_nodes[0]
    active = (z_nodes >= beta_now - eps) & (np.arange(z_nodes.size) <= k_top)
    out = np.full_like(W, np.nan)
    decision = np.zeros_like(W)

    regular = active & (z_nodes >= beta_next - eps)
    regular[k_top] = False
    idx = np.flatnonzero(regular)
    if idx.size:
        q = (W[:, idx + 1] - W[:, idx]) / dz + gain[:, None]
        h, v = hamiltonian_min(q, u_bar)
        out[:, idx] = W[:, idx] - dt * h
        decision[:, idx] = v

    clipped = np.flatnonzero(active & (z_nodes < beta_next - eps))
    for k in clipped:
        y = z_nodes[k] + u_bar * dt
        span = z_nodes[k + 1] - beta_next
        w = 1.0 if span <= eps else min(max((y - beta_next) / span, 0.0), 1.0)
        buy = (1 - w) * xi_next + w * W[:, k + 1] + u_bar * dt * gain
        wait = xi_next + (beta_next - z_nodes[k]) * gain
        take = buy >= wait
        out[:, k] = np.where(take, buy, wait)
        decision[:, k] = np.where(take, u_bar, 0.0)

    out[:, k_top] = W[:, k_top]
    return out, decision, active


def z_step_normalized(
    W: np.ndarray,
    gain: np.ndarray,
    zn_nodes: np.ndarray,
    dt: float,
    u_bar: float,
    width_next: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Update in the normalized volume coordinate ``z' in [0, 1]``.

    In that coordinate waiting drifts ``z'`` down at speed
    ``u_bar (1 - z') / width`` and buying drifts it up at ``u_bar z' / width``,
    where ``width = M - m + u_bar (T - t)``. Each option is upwinded in its
    own direction. Boundary columns are left for the caller.
    """
    dzn = zn_nodes[1] - zn_nodes[0]
    inner = zn_nodes[1:-1]
    down = u_bar * (1.0 - inner) / width_next * dt / dzn
    up = u_bar * inner / width_next * dt / dzn
    Wk = W[:, 1:-1]
    wait = (1 - down) * Wk + down * W[:, :-2]
    buy = (1 - up) * Wk + up * W[:, 2:] + u_bar * dt * gain[:, None]
    out = W.copy()
    out[:, 1:-1] = np.maximum(wait, buy)
    decision = np.zeros_like(W)
    decision[:, 1:-1] = np.where(buy >= wait, u_bar, 0.0)
    return out, decision
