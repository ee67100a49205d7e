"""Consistency diagnostic: the discrete HJB operator evaluated on a surface."""

from __future__ import annotations

import numpy as np

from ..contract import SwingContract
from ..market import MarketModel
from .grid import ValueSurface


def pde_residual(
    surface: ValueSurface,
    model: MarketModel,
    contract: SwingContract,
    *,
    include_hamiltonian: bool = True,
    p_window: tuple[float, float] | None = None,
    z_window: tuple[float, float] | None = None,
) -> dict:
    """Residual of ``-V_t + r V - f V_p - sigma^2/2 V_pp + min_v[-v (V_z + p - K)]``.

    Evaluated at every interior node with t < T whose six neighbours are in
    the domain, using centred differences in p and z and a forward
    difference in t. Viscosity solutions need not be smooth, so this is a
    refinement diagnostic rather than a pass/fail test.
    """
    g = surface.grid
    V = surface.values
    n_t = g.t_nodes.size - 1
    if min(g.shape) < 3:
        raise ValueError("residual needs at least 3 nodes per axis")
    core = V[:-1, 1:-1, 1:-1]
    Vt = (V[1:, 1:-1, 1:-1] - core) / g.dt
    Vp = (V[:-1, 2:, 1:-1] - V[:-1, :-2, 1:-1]) / (2 * g.dp)
    Vpp = (V[:-1, 2:, 1:-1] - 2 * core + V[:-1, :-2, 1:-1]) / g.dp**2
    Vz = (V[:-1, 1:-1, 2:] - V[:-1, 1:-1, :-2]) / (2 * g.dz)
    p = g.p_nodes[1:-1]
    res = np.empty_like(core)
    for n in range(n_t):
        f, s = model.coefficients(g.t_nodes[n], p)
        r = -Vt[n] + model.rate * core[n] - f[:, None] * Vp[n] - 0.5 * (s**2)[:, None] * Vpp[n]
        if include_hamiltonian:
            r = r - contract.u_bar * np.maximum(Vz[n] + (p - contract.strike)[:, None], 0.0)
        res[n] = r
    ok = np.isfinite(res)
    ok &= np.isfinite(V[:-1, :-2, 1:-1]) & np.isfinite(V[:-1, 2:, 1:-1])
    ok &= np.isfinite(V[:-1, 1:-1, :-2]) & np.isfinite(V[:-1, 1:-1, 2:]) & np.isfinite(V[1:, 1:-1, 1:-1])
    if p_window is not None:
        ok &= ((p >= p_window[0]) & (p <= p_window[1]))[None, :, None]
    if z_window is not None:
        zc = g.z_nodes[1:-1]
        ok &= ((zc >= z_window[0]) & (zc <= z_window[1]))[None, None, :]
    vals = np.abs(res[ok])
    if vals.size == 0:
        return {"max_abs": 0.0, "mean_abs": 0.0, "n_nodes": 0}
    return {"max_abs": float(vals.max()), "mean_abs": float(vals.mean()), "n_nodes": int(vals.size)}
