"""Bang-bang exercise policies read off a value surface."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contract import ContractKind, SwingContract
from .solver.grid import Grid, Provenance, ValueSurface
from .solver.operators import z_step_rect, z_step_trapezoid

log = logging.getLogger(__name__)


@dataclass(eq=False)
class ExercisePolicy:
    """Decision field ``u(t_i, p_j, z_k)`` in {0, u_bar} and its exercise curve.

    ``exercise_curve[i, j]`` is the largest volume node at which the policy
    buys (``+inf`` if every node buys, ``-inf`` if none does). The top node
    of each column can never buy and is left out of that classification.
    """

    grid: Grid
    decision: np.ndarray
    exercise_curve: np.ndarray
    u_bar: float
    domain: np.ndarray
    multiple_crossings: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def _curve_for_lookup(self, n: int) -> np.ndarray:
        g = self.grid
        curve = self.exercise_curve[n].copy()
        curve[curve == np.inf] = g.z_nodes[-1] + g.dz
        curve[curve == -np.inf] = g.z_nodes[0] - g.dz
        return curve

    def threshold(self, t, p) -> np.ndarray:
        """Exercise curve at arbitrary (t, p): piecewise constant in t, linear in p."""
        g = self.grid
        t, p = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(p, dtype=float))
        n = np.clip(np.floor(t / g.dt + 1e-9).astype(int), 0, g.t_nodes.size - 2)
        out = np.empty(t.shape)
        for nn in np.unique(n):
            sel = n == nn
            out[sel] = np.interp(p[sel], g.p_nodes, self._curve_for_lookup(nn))
        return out

    def decide(self, t, p, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.where(z <= self.threshold(t, p) + 1e-12, self.u_bar, 0.0)

    def to_csv(self, path: str | Path) -> None:
        """Write ``t, p, z_bar`` rows; infinite thresholds are written as inf/-inf."""
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "p", "z_bar"])
            for n, t in enumerate(g.t_nodes[:-1]):
                for j, p in enumerate(g.p_nodes):
                    w.writerow([repr(float(t)), repr(float(p)), repr(float(self.exercise_curve[n, j]))])


def _decisions_from_surface(surface: ValueSurface, contract: SwingContract) -> tuple[np.ndarray, np.ndarray]:
    g = surface.grid
    n_t = g.t_nodes.size - 1
    domain = np.zeros((g.t_nodes.size, g.z_nodes.size), dtype=bool)
    c = contract
    if not surface.is_strict:
        domain[:] = True
        if surface.decisions is not None:
            return surface.decisions, domain
        gain = surface.native.get("gain", g.p_nodes - c.strike)
        decision = np.zeros(g.shape)
        for n in range(n_t):
            _, decision[n] = z_step_rect(surface.values[n + 1], gain, g.dz, g.dt, c.u_bar)
        return decision, domain

    k_top = g.z_index(c.M)
    eps = 1e-9 * g.dz
    for n in range(n_t + 1):
        beta = c.m - c.u_bar * (c.maturity - g.t_nodes[n])
        domain[n] = (g.z_nodes >= beta - eps) & (np.arange(g.z_nodes.size) <= k_top)
    if surface.provenance is Provenance.STRICT_DIRECT and surface.decisions is not None:
        return surface.decisions, domain
    # Surfaces solved in other coordinates: apply the direct volume step to
    # the mapped-back values.
    gain = surface.native.get("gain", g.p_nodes - c.strike)
    decision = np.zeros(g.shape)
    for n in range(n_t):
        beta_now = c.m - c.u_bar * (c.maturity - g.t_nodes[n])
        beta_next = c.m - c.u_bar * (c.maturity - g.t_nodes[n + 1])
        _, decision[n], _ = z_step_trapezoid(
            surface.values[n + 1], gain, g.z_nodes, g.dt, c.u_bar,
            beta_now, beta_next, surface.beta_values[n + 1], k_top, eps,
        )
    return decision, domain


def extract_policy(surface: ValueSurface, contract: SwingContract) -> ExercisePolicy:
    """Buy at full rate wherever the forward-difference ``V_z + p - K >= 0``.

    The decision at t_i is the one the backward step from t_{i+1} to t_i
    took (same forward difference, same per-unit margin), so the policy is
    exactly the argmin the scheme applied.
    """
    g = surface.grid
    decision, domain = _decisions_from_surface(surface, contract)
    curve = np.full((g.t_nodes.size, g.p_nodes.size), -np.inf)
    crossings = 0
    notes: list[str] = []
    for n in range(g.t_nodes.size - 1):
        cols = np.flatnonzero(domain[n])[:-1]
        if cols.size == 0:
            continue
        d = decision[n][:, cols] > 0
        for j in range(g.p_nodes.size):
            col = d[j]
            if col.all():
                curve[n, j] = np.inf
            elif col.any():
                buys = np.flatnonzero(col)
                curve[n, j] = g.z_nodes[cols[buys[-1]]]
                if np.any(~col[: buys[-1]]):
                    crossings += 1
                    if len(notes) < 20:
                        notes.append(
                            f"multiple crossings at t={g.t_nodes[n]:.6g}, p={g.p_nodes[j]:.6g}"
                        )
    if crossings:
        log.warning("exercise policy has %d columns with multiple crossings", crossings)
    return ExercisePolicy(g, decision, curve, contract.u_bar, domain, crossings, notes)


def clip_to_admissible(
    policy: ExercisePolicy, contract: SwingContract, t, p, z, dt: float | None = None
) -> np.ndarray:
    """Policy decision overridden where the volume constraint forces the control.

    Forced full-rate purchase once ``z + u_bar (T - t) <= m + eps`` and no
    purchase once ``z >= M - eps``, with ``eps = u_bar dt / 2``. Penalized
    contracts are returned unclipped.
    """
    v = policy.decide(t, p, z)
    if contract.kind is ContractKind.PENALIZED:
        return v
    contract.geometry.require(t, p, z)
    return forced_override(contract, t, z, v, policy.grid.dt if dt is None else dt)


def forced_override(contract: SwingContract, t, z, v, dt: float) -> np.ndarray:
    """Apply the forced-control bands of :func:`clip_to_admissible` to rates ``v``."""
    eps = 0.5 * contract.u_bar * dt
    z = np.asarray(z, dtype=float)
    remaining = contract.maturity - np.asarray(t, dtype=float)
    v = np.where(z + contract.u_bar * remaining <= contract.m + eps, contract.u_bar, v)
    return np.where(z >= contract.M - eps, 0.0, v)
