"""Swing contract terms, terminal penalties and the reachable-state domain."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

ADMISSIBILITY_TOL = 1e-12


class PenaltyForm(enum.Enum):
    PROPORTIONAL_SPOT = "proportional_spot"
    FIXED_RATE = "fixed_rate"


class ContractKind(enum.Enum):
    PENALIZED = "penalized"
    STRICT = "strict"


@dataclass(frozen=True)
class PenaltySpec:
    """Two-sided terminal penalty, ``-A w (z - M)^+ - B w (m - z)^+``.

    ``w`` is the positive part of the terminal spot price for
    ``PROPORTIONAL_SPOT`` and the constant ``fixed_rate`` for ``FIXED_RATE``.
    """

    A: float
    B: float
    form: PenaltyForm = PenaltyForm.PROPORTIONAL_SPOT
    fixed_rate: float | None = None

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise ConfigurationError("penalty coefficients A and B must be > 0")
        if self.form is PenaltyForm.FIXED_RATE and not (self.fixed_rate and self.fixed_rate > 0):
            raise ConfigurationError("fixed_rate penalty needs fixed_rate > 0")


@dataclass(frozen=True)
class SwingContract:
    maturity: float
    strike: float
    u_bar: float
    m: float
    M: float
    penalty: PenaltySpec | None = None

    def __post_init__(self):
        if not self.maturity > 0:
            raise ConfigurationError("contract.maturity must be > 0")
        if not self.strike > 0:
            raise ConfigurationError("contract.strike must be > 0")
        if not self.u_bar > 0:
            raise ConfigurationError("contract.u_bar must be > 0")
        if self.m < 0 or self.M < 0:
            raise ConfigurationError("contract.m and contract.M must be >= 0")
        if not self.m < self.M:
            raise ConfigurationError("contract.m must be < contract.M")
        if self.u_bar * self.maturity < self.m:
            raise ConfigurationError(
                "contract.u_bar * contract.maturity must be >= contract.m: "
                "the domain is empty at t=0, z=0 (minimum volume unreachable)"
            )

    @property
    def kind(self) -> ContractKind:
        return ContractKind.STRICT if self.penalty is None else ContractKind.PENALIZED

    @property
    def geometry(self) -> "DomainGeometry":
        return DomainGeometry(self)

    def describe(self) -> dict:
        out = {
            "maturity": self.maturity,
            "strike": self.strike,
            "u_bar": self.u_bar,
            "m": self.m,
            "M": self.M,
            "kind": self.kind.value,
        }
        if self.penalty is not None:
            out["penalty"] = {
                "A": self.penalty.A,
                "B": self.penalty.B,
                "form": self.penalty.form.value,
                "fixed_rate": self.penalty.fixed_rate,
            }
        return out

    def as_strict(self) -> "SwingContract":
        return SwingContract(self.maturity, self.strike, self.u_bar, self.m, self.M)


def penalty_phi(spec: PenaltySpec, p, z, m: float, M: float):
    """Terminal penalty of a penalized contract; zero on ``[m, M]``, never positive."""
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    if spec.form is PenaltyForm.PROPORTIONAL_SPOT:
        w = np.maximum(p, 0.0)
    else:
        w = np.full(p.shape, spec.fixed_rate)
    out = -spec.A * w * np.maximum(z - M, 0.0) - spec.B * w * np.maximum(m - z, 0.0)
    return out[()] if out.ndim == 0 else out


def penalty_phi_c(c: float, m: float, M: float, z):
    """Penalty of weight ``c`` on leaving ``[m + c^-1/2, M - c^-1/2]``."""
    if not c > 0:
        raise ConfigurationError(f"penalty weight c must be > 0, got {c}")
    z = np.asarray(z, dtype=float)
    gap = 1.0 / math.sqrt(c)
    out = -c * (np.maximum(z - (M - gap), 0.0) + np.maximum((m + gap) - z, 0.0))
    return out[()] if out.ndim == 0 else out


def cumulative_volume(z0: float, control, dt: float, u_bar: float) -> np.ndarray:
    """Volume path ``Z(s_k) = z0 + sum_{j<k} u_j dt`` (left rectangles).

    ``control`` holds the purchase rate on each of the n subintervals; the
    result has n + 1 entries.
    """
    u = np.asarray(control, dtype=float)
    if np.any(u < 0) or np.any(u > u_bar):
        bad = int(np.flatnonzero((u < 0) | (u > u_bar))[0])
        raise DomainError(f"control value {u[bad]} at index {bad} outside [0, {u_bar}]")
    out = np.empty(u.size + 1)
    out[0] = z0
    out[1:] = z0 + np.cumsum(u * dt)
    return out


def is_admissible_endpoint(contract: SwingContract, z_T) -> bool | np.ndarray:
    z_T = np.asarray(z_T, dtype=float)
    ok = (z_T >= contract.m - ADMISSIBILITY_TOL) & (z_T <= contract.M + ADMISSIBILITY_TOL)
    return bool(ok) if ok.ndim == 0 else ok


@dataclass(frozen=True)
class DomainGeometry:
    """Predicates on (t, p, z) for the reachable sets and their boundary pieces.

    The price does not enter any of them; ``p`` is accepted for signature
    symmetry only. All predicates broadcast over arrays.
    """

    contract: SwingContract
    tol: float = 1e-12

    def beta_z(self, t):
        c = self.contract
        return c.m - c.u_bar * (c.maturity - np.asarray(t, dtype=float))

    def _scale(self) -> float:
        c = self.contract
        return self.tol * max(1.0, abs(c.M), abs(c.m) + c.u_bar * c.maturity)

    def in_D(self, t, p, z):
        eps = self._scale()
        z = np.asarray(z, dtype=float)
        return (z >= self.beta_z(t) - eps) & (z <= self.contract.M + eps)

    def in_D_tilde(self, t, p, z):
        z = np.asarray(z, dtype=float)
        return (z > self.beta_z(t)) & (z < self.contract.M)

    def in_D_rho(self, rho: float, t, p, z):
        c = self.contract
        if not 0 < rho < (c.M - c.m) / 2:
            raise ConfigurationError(f"rho must lie in (0, {(c.M - c.m) / 2}), got {rho}")
        z = np.asarray(z, dtype=float)
        return (z >= self.beta_z(t) + rho) & (z <= c.M - rho)

    def on_alpha(self, t, p, z):
        eps = self._scale()
        return self.in_D(t, p, z) & (np.abs(np.asarray(z, dtype=float) - self.contract.M) <= eps)

    def on_beta(self, t, p, z):
        eps = self._scale()
        z = np.asarray(z, dtype=float)
        return self.in_D(t, p, z) & (np.abs(z - self.beta_z(t)) <= eps)

    def on_gamma(self, t, p, z):
        c = self.contract
        z = np.asarray(z, dtype=float)
        return (np.asarray(t, dtype=float) == c.maturity) & (z >= c.m) & (z <= c.M)

    def require(self, t, p, z) -> None:
        if not np.all(self.in_D(t, p, z)):
            raise DomainError(
                f"state (t={t}, z={z}) outside the domain "
                f"{self.contract.m} - u_bar (T - t) <= z <= {self.contract.M}"
            )

    def forced_control(self, t, z):
        """Constant rate that takes ``z`` at time ``t`` to ``m`` exactly (clipped)."""
        c = self.contract
        remaining = c.maturity - np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(remaining > 0, (c.m - np.asarray(z, dtype=float)) / remaining, 0.0)
        return np.clip(rate, 0.0, c.u_bar)
