"""Spot price dynamics dP = f(t, P) dt + sigma(t, P) dW.

Two presets carry closed forms for the forced-purchase payoff ``xi``:

* ``GBM``: f = mu * p, sigma = sigma0 * |p|
* ``MEAN_REVERTING``: f = kappa * (theta - p), sigma = sigma0 (arithmetic OU)

``CUSTOM`` takes arbitrary vectorized callables. None of these presets is
dictated by the valuation theory, which only needs Lipschitz coefficients.

Normal variates are produced by inverse-CDF transform of 53-bit uniforms
drawn from PCG64 streams. Paths are generated in fixed-size chunks, each
with its own stream derived from ``(seed, chunk index)``, so results do not
depend on how chunks are scheduled across workers.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, SimulationError

Coefficient = Callable[[float, np.ndarray], np.ndarray]

CHUNK_SIZE = 16384
_SINGULAR_TOL = 1e-12


class ModelKind(enum.Enum):
    GBM = "gbm"
    MEAN_REVERTING = "mean_reverting"
    CUSTOM = "custom"


@dataclass(frozen=True)
class MarketModel:
    drift: Coefficient
    vol: Coefficient
    rate: float
    strike: float
    kind: ModelKind = ModelKind.CUSTOM
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ConfigurationError(f"rate must be a finite number >= 0, got {self.rate}")
        if not (self.strike > 0 and math.isfinite(self.strike)):
            raise ConfigurationError(f"strike must be a finite number > 0, got {self.strike}")

    @classmethod
    def gbm(cls, mu: float, sigma: float, rate: float, strike: float) -> "MarketModel":
        if sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
        mu, sigma = float(mu), float(sigma)
        return cls(
            drift=lambda t, p: mu * np.asarray(p, dtype=float),
            vol=lambda t, p: sigma * np.abs(np.asarray(p, dtype=float)),
            rate=float(rate),
            strike=float(strike),
            kind=ModelKind.GBM,
            params={"mu": mu, "sigma": sigma},
        )

    @classmethod
    def mean_reverting(
        cls, kappa: float, theta: float, sigma: float, rate: float, strike: float
    ) -> "MarketModel":
        if kappa < 0 or sigma < 0:
            raise ConfigurationError("kappa and sigma must be >= 0")
        kappa, theta, sigma = float(kappa), float(theta), float(sigma)
        return cls(
            drift=lambda t, p: kappa * (theta - np.asarray(p, dtype=float)),
            vol=lambda t, p: np.full(np.shape(p), sigma),
            rate=float(rate),
            strike=float(strike),
            kind=ModelKind.MEAN_REVERTING,
            params={"kappa": kappa, "theta": theta, "sigma": sigma},
        )

    @classmethod
    def custom(
        cls, drift: Coefficient, vol: Coefficient, rate: float, strike: float
    ) -> "MarketModel":
        return cls(drift=drift, vol=vol, rate=float(rate), strike=float(strike))

    def coefficients(self, t: float, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        f = np.broadcast_to(np.asarray(self.drift(t, p), dtype=float), p.shape)
        s = np.broadcast_to(np.asarray(self.vol(t, p), dtype=float), p.shape)
        return f, s

    def affine_mean(self, dt: float) -> tuple[float, float] | None:
        """``(a, b)`` with ``E[P_{t+dt} | P_t = p] = a p + b`` for the presets, else None."""
        if self.kind is ModelKind.GBM:
            return math.exp(self.params["mu"] * dt), 0.0
        if self.kind is ModelKind.MEAN_REVERTING:
            decay = math.exp(-self.params["kappa"] * dt)
            return decay, self.params["theta"] * (1.0 - decay)
        return None

    def describe(self) -> dict:
        return {"kind": self.kind.value, "rate": self.rate, "strike": self.strike, **self.params}

    def price_range(self, maturity: float, p_ref: float, width: float = 5.0) -> tuple[float, float]:
        """Truncated price interval for grids, ``width`` standard deviations wide."""
        if self.kind is ModelKind.GBM:
            mu, sigma = self.params["mu"], self.params["sigma"]
            lo = p_ref * math.exp(-width * sigma * math.sqrt(maturity))
            hi = p_ref * math.exp((mu + width * sigma) * maturity)
            return lo, hi
        if self.kind is ModelKind.MEAN_REVERTING:
            kappa, theta, sigma = self.params["kappa"], self.params["theta"], self.params["sigma"]
            horizon = maturity if kappa == 0 else min(maturity, 1.0 / (2.0 * kappa))
            spread = width * sigma * math.sqrt(horizon)
            return min(p_ref, theta) - spread, max(p_ref, theta) + spread
        raise ConfigurationError("custom models need an explicit price range (p_min, p_max)")


def check_lipschitz(
    model: MarketModel,
    maturity: float,
    p_range: tuple[float, float],
    n_samples: int = 2000,
    seed: int = 0,
) -> dict:
    """Empirical Lipschitz and linear-growth constants on random samples.

    Returns the largest observed difference quotients for drift and vol and
    the smallest growth constant ``C`` with ``|f|, |sigma| <= C (1 + |p|)``,
    plus the minimum sampled volatility.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, maturity, n_samples)
    p = rng.uniform(*p_range, n_samples)
    q = rng.uniform(*p_range, n_samples)
    fp, sp = zip(*(model.coefficients(ti, np.array([pi])) for ti, pi in zip(t, p)))
    fq, sq = zip(*(model.coefficients(ti, np.array([qi])) for ti, qi in zip(t, q)))
    fp, sp, fq, sq = (np.concatenate(a) for a in (fp, sp, fq, sq))
    gap = np.maximum(np.abs(p - q), 1e-300)
    return {
        "drift_lipschitz": float(np.max(np.abs(fp - fq) / gap)),
        "vol_lipschitz": float(np.max(np.abs(sp - sq) / gap)),
        "growth": float(np.max(np.maximum(np.abs(fp), np.abs(sp)) / (1.0 + np.abs(p)))),
        "min_vol": float(np.min(sp)),
    }


@dataclass(frozen=True)
class PathBatch:
    start_time: float
    start_price: float
    dt: float
    n_paths: int
    prices: np.ndarray
    rng_seed: int

    @property
    def n_steps(self) -> int:
        return self.prices.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.dt * np.arange(self.n_steps + 1)


def standard_normals(rng: np.random.Generator, size: int) -> np.ndarray:
    u = (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) * 2.0**-53
    return ndtri(u)


def chunk_generator(seed: int, chunk_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(chunk_index,))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_sizes(n_paths: int, chunk: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(n_paths, chunk)
    return [chunk] * full + ([rest] if rest else [])


def n_steps_for(maturity: float, start_time: float, dt: float) -> int:
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    span = maturity - start_time
    n = int(round(span / dt))
    if n < 1 or abs(n * dt - span) > 1e-9 * max(1.0, span):
        raise ConfigurationError(f"dt={dt} does not divide the horizon {span}")
    return n


def euler_steps(
    model: MarketModel,
    start_time: float,
    start_price: float,
    dt: float,
    n_steps: int,
    rng: np.random.Generator,
    size: int,
) -> Iterator[tuple[int, float, np.ndarray]]:
    """Yield ``(k, t_k, P_k)`` for k = 0..n_steps along one chunk of paths."""
    sqdt = math.sqrt(dt)
    p = np.full(size, float(start_price))
    yield 0, start_time, p
    for k in range(n_steps):
        t = start_time + k * dt
        f, s = model.coefficients(t, p)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(s))):
            raise SimulationError(f"non-finite drift/vol at step {k} (t={t:.6g})")
        p = p + f * dt + s * sqdt * standard_normals(rng, size)
        yield k + 1, t + dt, p


def _simulate_chunk(args) -> np.ndarray:
    model, start_time, start_price, dt, n_steps, seed, index, size = args
    rng = chunk_generator(seed, index)
    out = np.empty((size, n_steps + 1))
    for k, _, p in euler_steps(model, start_time, start_price, dt, n_steps, rng, size):
        out[:, k] = p
    return out


def simulate_paths(
    model: MarketModel,
    maturity: float,
    start_time: float,
    start_price: float,
    dt: float,
    n_paths: int,
    seed: int,
    workers: int = 1,
) -> PathBatch:
    """Euler-Maruyama paths of the spot price from ``start_time`` to ``maturity``."""
    if not 0 <= start_time < maturity:
        raise ConfigurationError(f"start_time must lie in [0, {maturity}), got {start_time}")
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    n_steps = n_steps_for(maturity, start_time, dt)
    jobs = [
        (model, start_time, start_price, dt, n_steps, seed, i, size)
        for i, size in enumerate(chunk_sizes(n_paths))
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    prices = np.concatenate(parts, axis=0)
    return PathBatch(start_time, float(start_price), dt, n_paths, prices, int(seed))


def growth_integral(a, tau):
    """``int_0^tau exp(a s) ds`` with the a -> 0 limit handled by a series."""
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    small = np.abs(a) < _SINGULAR_TOL
    safe_a = np.where(small, 1.0, a)
    regular = np.expm1(safe_a * tau) / safe_a
    series = tau + 0.5 * a * tau**2
    return np.where(small, series, regular)


def xi_boundary(
    model: MarketModel,
    contract_T: float,
    u_bar: float,
    t,
    p,
    *,
    return_error: bool = False,
    n_paths: int = 200_000,
    dt: float | None = None,
    seed: int = 12345,
):
    """Expected discounted payoff of buying at full rate from ``t`` to maturity.

    Closed forms for the GBM and mean-reverting presets (vectorized over
    ``t`` and ``p``); Monte Carlo with trapezoidal time quadrature for custom
    models. With ``return_error`` the standard error is returned alongside
    (zero for closed forms).
    """
    t_arr = np.asarray(t, dtype=float)
    p_arr = np.asarray(p, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > contract_T + 1e-12):
        raise ConfigurationError("t must lie in [0, T]")
    tau = np.maximum(contract_T - t_arr, 0.0)
    r, K = model.rate, model.strike

    if model.kind is ModelKind.GBM:
        mu = model.params["mu"]
        value = u_bar * (p_arr * growth_integral(mu - r, tau) - K * growth_integral(-r, tau))
    elif model.kind is ModelKind.MEAN_REVERTING:
        kappa, theta = model.params["kappa"], model.params["theta"]
        value = u_bar * (
            (theta - K) * growth_integral(-r, tau)
            + (p_arr - theta) * growth_integral(-(r + kappa), tau)
        )
    else:
        if t_arr.ndim or p_arr.ndim:
            pairs = np.broadcast_arrays(t_arr, p_arr)
            results = [
                _xi_monte_carlo(model, contract_T, u_bar, ti, pi, n_paths, dt, seed)
                for ti, pi in zip(pairs[0].ravel(), pairs[1].ravel())
            ]
            value = np.array([v for v, _ in results]).reshape(pairs[0].shape)
            err = np.array([e for _, e in results]).reshape(pairs[0].shape)
            return (value, err) if return_error else value
        value, err = _xi_monte_carlo(model, contract_T, u_bar, float(t_arr), float(p_arr), n_paths, dt, seed)
        return (value, err) if return_error else value

    value = value[()] if np.ndim(value) == 0 else value
    if return_error:
        return value, np.zeros_like(value) if np.ndim(value) else 0.0
    return value


def xi_monte_carlo(
    model: MarketModel,
    contract_T: float,
    u_bar: float,
    t: float,
    p: float,
    n_paths: int,
    dt: float | None = None,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo estimate of the forced-purchase payoff and its standard error."""
    return _xi_monte_carlo(model, contract_T, u_bar, t, p, n_paths, dt, seed)


def _xi_monte_carlo(model, contract_T, u_bar, t, p, n_paths, dt, seed):
    tau = contract_T - t
    if tau <= 0:
        return 0.0, 0.0
    if dt is None:
        n_steps = max(1, int(math.ceil(tau / 0.01)))
        dt = tau / n_steps
    else:
        n_steps = n_steps_for(contract_T, t, dt)
    r, K = model.rate, model.strike
    payoffs = []
    for i, size in enumerate(chunk_sizes(n_paths)):
        rng = chunk_generator(seed, i)
        acc = np.zeros(size)
        for k, s, prices in euler_steps(model, t, p, dt, n_steps, rng, size):
            w = 0.5 if k in (0, n_steps) else 1.0
            acc += w * math.exp(-r * (s - t)) * (prices - K)
        payoffs.append(u_bar * dt * acc)
    x = np.concatenate(payoffs)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
