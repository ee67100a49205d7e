"""Monte Carlo value of a given exercise policy."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ..contract import ContractKind, SwingContract, penalty_phi
from ..errors import ConfigurationError
from ..market import MarketModel, chunk_generator, chunk_sizes, euler_steps, n_steps_for
from ..policy import ExercisePolicy, forced_override

PolicyLike = Union[ExercisePolicy, Callable[[float, np.ndarray, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return self.mean - k * self.std_error, self.mean + k * self.std_error


def _rates(policy: PolicyLike, t: float, p: np.ndarray, z: np.ndarray) -> np.ndarray:
    if isinstance(policy, ExercisePolicy):
        return policy.decide(t, p, z)
    return np.broadcast_to(np.asarray(policy(t, p, z), dtype=float), p.shape)


def _add(total: np.ndarray, carry: np.ndarray, x: np.ndarray) -> None:
    """Compensated (Neumaier) in-place accumulation ``total += x``."""
    s = total + x
    big = np.abs(total) >= np.abs(x)
    carry += np.where(big, (total - s) + x, (x - s) + total)
    total[...] = s


def _chunk_payoffs(args) -> np.ndarray:
    model, contract, policy, t0, p0, z0, dt, n_steps, seed, index, size = args
    c = contract
    strict = c.kind is ContractKind.STRICT
    rng = chunk_generator(seed, index)
    # Running sums are compensated so that cash flows and volumes that are
    # exact in decimal (a constant price, say) accumulate without drift.
    z, z_carry = np.full(size, float(z0)), np.zeros(size)
    payoff, pay_carry = np.zeros(size), np.zeros(size)
    steps = euler_steps(model, t0, p0, dt, n_steps, rng, size)
    for k, t, p in steps:
        if k == n_steps:
            break
        z = z + z_carry
        z_carry[:] = 0.0
        v = np.clip(_rates(policy, t, p, z), 0.0, c.u_bar)
        if strict:
            v = forced_override(c, t, z, v, dt)
            # Exact bookkeeping so every path ends in [m, M].
            remaining_after = c.maturity - (t + dt)
            need = (c.m - z - c.u_bar * remaining_after) / dt
            room = (c.M - z) / dt
            v = np.clip(np.maximum(v, need), 0.0, np.minimum(c.u_bar, np.maximum(room, 0.0)))
        _add(payoff, pay_carry, math.exp(-model.rate * (t - t0)) * (p - c.strike) * v * dt)
        _add(z, z_carry, v * dt)
    z = z + z_carry
    if c.kind is ContractKind.PENALIZED:
        _add(payoff, pay_carry, math.exp(-model.rate * (c.maturity - t0)) * penalty_phi(c.penalty, p, z, c.m, c.M))
    return payoff + pay_carry


def mc_policy_value(
    model: MarketModel,
    contract: SwingContract,
    policy: PolicyLike,
    t: float,
    p: float,
    z: float,
    n_paths: int,
    dt: float,
    seed: int,
    workers: int = 1,
) -> McEstimate:
    """Expected discounted payoff of ``policy`` started from ``(t, p, z)``.

    Cash flows use left rectangles on the simulation steps. For strict
    contracts the policy is overridden near the volume bounds and truncated
    so that the terminal volume lands in ``[m, M]`` on every path; penalized
    contracts pay the terminal penalty instead. ``policy`` is either an
    :class:`ExercisePolicy` or a callable ``(t, p, z) -> rate``.
    """
    if n_paths < 2:
        raise ConfigurationError("n_paths must be >= 2")
    if contract.kind is ContractKind.STRICT:
        contract.geometry.require(t, p, z)
    n_steps = n_steps_for(contract.maturity, t, dt)
    jobs = [
        (model, contract, policy, t, p, z, dt, n_steps, seed, i, size)
        for i, size in enumerate(chunk_sizes(n_paths))
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_payoffs, jobs))
    else:
        parts = [_chunk_payoffs(j) for j in jobs]
    payoff = np.concatenate(parts)
    if np.all(payoff == payoff[0]):
        return McEstimate(float(payoff[0]), 0.0, n_paths, int(seed))
    se = float(payoff.std(ddof=1) / math.sqrt(n_paths))
    return McEstimate(float(payoff.mean()), se, n_paths, int(seed))
