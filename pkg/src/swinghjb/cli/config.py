"""Run configuration: a TOML file with a fixed schema and documented defaults.

Every section and key is listed in :data:`SCHEMA`; unknown keys are
rejected. Each entry is ``(type, default, constraint)`` where ``default``
``REQUIRED`` marks a key that must be given and ``None`` an optional one
that may stay unset. Errors name the offending key path.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..contract import PenaltyForm, PenaltySpec, SwingContract
from ..errors import ConfigurationError, DomainError
from ..market import MarketModel
from ..solver.grid import Grid, rect_grid, strict_grid
from ..solver.hjb import DEFAULT_LADDER, SolverConfig
from ..solver.operators import FarBoundary, TimeScheme

OUTPUT_ROOT_ENV = "SWINGHJB_OUTPUT_ROOT"
REQUIRED = object()


def _positive(x):
    return x > 0 or "must be > 0"


def _nonneg(x):
    return x >= 0 or "must be >= 0"


def _at_least(n):
    return lambda x: x >= n or f"must be >= {n}"


def _one_of(*options):
    return lambda x: x in options or f"must be one of {', '.join(options)}"


def _unit_interval(x):
    return 0 < x <= 1 or "must lie in (0, 1]"


SCHEMA: dict[str, dict[str, tuple[type, Any, Callable | None]]] = {
    "model": {
        "kind": (str, REQUIRED, _one_of("gbm", "mean_reverting")),
        "rate": (float, REQUIRED, _nonneg),
        "mu": (float, None, None),
        "sigma": (float, REQUIRED, _nonneg),
        "kappa": (float, None, _nonneg),
        "theta": (float, None, None),
    },
    "contract": {
        "maturity": (float, REQUIRED, _positive),
        "strike": (float, REQUIRED, _positive),
        "u_bar": (float, REQUIRED, _positive),
        "m": (float, REQUIRED, _nonneg),
        "M": (float, REQUIRED, _nonneg),
        "kind": (str, "strict", _one_of("strict", "penalized")),
    },
    "contract.penalty": {
        "A": (float, REQUIRED, _positive),
        "B": (float, REQUIRED, _positive),
        "form": (str, "proportional_spot", _one_of("proportional_spot", "fixed_rate")),
        "fixed_rate": (float, None, _positive),
    },
    "grid": {
        "n_t": (int, 64, _at_least(2)),
        "n_p": (int, 64, _at_least(2)),
        "n_z": (int, 64, _at_least(2)),
        "p_ref": (float, None, _positive),
        "p_min": (float, None, None),
        "p_max": (float, None, None),
        "p_width": (float, 5.0, _positive),
    },
    "solver": {
        "time_scheme": (str, "fully_implicit", _one_of("fully_implicit", "crank_nicolson")),
        "p_far_boundary": (str, "asymptotic", _one_of("second_derivative_zero", "asymptotic")),
        "cfl_safety": (float, 1.0, _unit_interval),
        "ladder": (list, list(DEFAULT_LADDER), None),
        "affine_fitting": (bool, True, None),
        "normalized_n_z": (int, None, _at_least(2)),
    },
    "verify": {
        "seed": (int, 20240601, _nonneg),
        "start_t": (float, 0.0, _nonneg),
        "start_p": (float, None, _positive),
        "start_z": (float, 0.0, None),
        "n_paths": (int, 100_000, _at_least(2)),
        "mc_dt": (float, None, _positive),
        "lattice_n": (int, 32, _at_least(2)),
        "rho": (float, None, _positive),
        "n_samples": (int, 100, _at_least(1)),
        "perturbation_trials": (int, 1000, _nonneg),
        "lattice_rtol": (float, 0.03, _positive),
        "mc_allowance_factor": (float, 1.0, _nonneg),
        "normalized_rtol": (float, 0.01, _positive),
        "workers": (int, 1, _at_least(1)),
    },
    "output": {
        "directory": (str, None, None),
        "write_surfaces": (bool, True, None),
    },
}

DEFAULTS_DOC = {
    f"{section}.{key}": ("required" if default is REQUIRED else default)
    for section, keys in SCHEMA.items()
    for key, (_, default, _) in keys.items()
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration plus the domain objects it describes."""

    values: dict
    source: str
    model: MarketModel
    contract: SwingContract
    solver: SolverConfig

    def section(self, name: str) -> dict:
        return self.values[name]

    @property
    def grid(self) -> dict:
        return self.values["grid"]

    @property
    def verify(self) -> dict:
        return self.values["verify"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output"]["directory"])

    @property
    def p_ref(self) -> float:
        return self.values["grid"]["p_ref"]

    def config_hash(self) -> str:
        """Hash of everything that determines the numbers (the output location excluded)."""
        return config_hash({k: v for k, v in self.values.items() if k != "output"})

    def strict_grid(self) -> Grid:
        g = self.grid
        return strict_grid(self.model, self.contract, g["n_t"], g["n_p"], g["n_z"], self.p_ref, self._p_range())

    def rect_grid(self) -> Grid:
        g = self.grid
        return rect_grid(self.model, self.contract, g["n_t"], g["n_p"], g["n_z"], self.p_ref, self._p_range())

    def _p_range(self) -> tuple[float, float]:
        g = self.grid
        if g["p_min"] is not None:
            return g["p_min"], g["p_max"]
        return self.model.price_range(self.contract.maturity, self.p_ref, g["p_width"])


def canonical_json(values: dict) -> str:
    return json.dumps(values, sort_keys=True, separators=(",", ":"))


def config_hash(values: dict) -> str:
    return hashlib.sha256(canonical_json(values).encode()).hexdigest()


def _coerce(path: str, kind: type, value):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigurationError(f"{path}: must be finite")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list, got {value!r}")
        return [_coerce(f"{path}[{i}]", float, v) for i, v in enumerate(value)]
    raise AssertionError(kind)


def _resolve_section(name: str, raw: dict) -> dict:
    spec = SCHEMA[name]
    unknown = sorted(k for k in raw if k not in spec and f"{name}.{k}" not in SCHEMA)
    if unknown:
        raise ConfigurationError(f"{name}.{unknown[0]}: unknown key")
    out = {}
    for key, (kind, default, check) in spec.items():
        path = f"{name}.{key}"
        if key in raw:
            value = _coerce(path, kind, raw[key])
            if check is not None:
                verdict = check(value)
                if verdict is not True:
                    raise ConfigurationError(f"{path} {verdict}, got {value!r}")
        elif default is REQUIRED:
            raise ConfigurationError(f"{path}: required key is missing")
        else:
            value = list(default) if isinstance(default, list) else default
        out[key] = value
    return out


def resolve(raw: dict, source: str = "<dict>", output_root: str | None = None) -> RunConfig:
    """Validate a parsed TOML mapping and fill in defaults."""
    unknown = sorted(k for k in raw if k not in ("model", "contract", "grid", "solver", "verify", "output"))
    if unknown:
        raise ConfigurationError(f"{unknown[0]}: unknown section")
    for section in ("model", "contract"):
        if section not in raw:
            raise ConfigurationError(f"{section}: required section is missing")
    for section in ("model", "contract", "grid", "solver", "verify", "output"):
        if section in raw and not isinstance(raw[section], dict):
            raise ConfigurationError(f"{section}: expected a table")
    values = {name: _resolve_section(name, raw.get(name, {})) for name in
              ("model", "contract", "grid", "solver", "verify", "output")}
    penalty_raw = raw["contract"].get("penalty")
    if values["contract"]["kind"] == "penalized":
        if not isinstance(penalty_raw, dict):
            raise ConfigurationError("contract.penalty: required for penalized contracts")
        values["contract"]["penalty"] = _resolve_section("contract.penalty", penalty_raw)
    elif penalty_raw is not None:
        raise ConfigurationError("contract.penalty: only allowed when contract.kind = \"penalized\"")

    model_spec, contract_spec = values["model"], values["contract"]
    if model_spec["kind"] == "gbm":
        if model_spec["mu"] is None:
            raise ConfigurationError("model.mu: required for gbm models")
        for key in ("kappa", "theta"):
            if model_spec[key] is not None:
                raise ConfigurationError(f"model.{key}: not a gbm parameter")
        model = MarketModel.gbm(model_spec["mu"], model_spec["sigma"], model_spec["rate"], contract_spec["strike"])
    else:
        for key in ("kappa", "theta"):
            if model_spec[key] is None:
                raise ConfigurationError(f"model.{key}: required for mean_reverting models")
        if model_spec["mu"] is not None:
            raise ConfigurationError("model.mu: not a mean_reverting parameter")
        model = MarketModel.mean_reverting(
            model_spec["kappa"], model_spec["theta"], model_spec["sigma"], model_spec["rate"], contract_spec["strike"]
        )

    penalty = None
    if contract_spec["kind"] == "penalized":
        pen = contract_spec["penalty"]
        form = PenaltyForm(pen["form"])
        if form is PenaltyForm.FIXED_RATE and pen["fixed_rate"] is None:
            raise ConfigurationError("contract.penalty.fixed_rate: required for the fixed_rate form")
        penalty = PenaltySpec(pen["A"], pen["B"], form, pen["fixed_rate"])
    contract = SwingContract(
        contract_spec["maturity"], contract_spec["strike"], contract_spec["u_bar"],
        contract_spec["m"], contract_spec["M"], penalty,
    )

    g = values["grid"]
    if g["p_ref"] is None:
        g["p_ref"] = contract.strike
    if (g["p_min"] is None) != (g["p_max"] is None):
        raise ConfigurationError("grid.p_min and grid.p_max must be given together")
    if g["p_min"] is not None and not g["p_min"] < g["p_max"]:
        raise ConfigurationError("grid.p_min must be < grid.p_max")

    s = values["solver"]
    ladder = s["ladder"]
    if not ladder or any(c <= 0 for c in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigurationError("solver.ladder must be a nonempty, strictly increasing list of weights > 0")
    solver = SolverConfig(
        time_scheme=TimeScheme(s["time_scheme"]),
        p_far_boundary=FarBoundary(s["p_far_boundary"]),
        cfl_safety=s["cfl_safety"],
        ladder=tuple(ladder),
        affine_fitting=s["affine_fitting"],
    )
    ratio = contract.u_bar * contract.maturity / g["n_t"] / ((contract.M - contract.m + contract.u_bar * contract.maturity) / g["n_z"])
    if ratio > solver.cfl_safety + 1e-12:
        needed = math.ceil(g["n_t"] * ratio / solver.cfl_safety - 1e-9)
        raise ConfigurationError(
            f"grid.n_t: CFL condition u_bar dt / dz = {ratio:.4g} exceeds solver.cfl_safety "
            f"{solver.cfl_safety}; use grid.n_t >= {needed}"
        )

    v = values["verify"]
    if v["start_p"] is None:
        v["start_p"] = g["p_ref"]
    if not v["start_t"] < contract.maturity:
        raise ConfigurationError("verify.start_t must be < contract.maturity")
    if contract.kind.value == "strict" and not contract.geometry.in_D(v["start_t"], v["start_p"], v["start_z"]):
        raise DomainError(
            f"verify.start_z = {v['start_z']} lies outside the domain at t = {v['start_t']}: "
            f"need {contract.m} - u_bar (T - t) <= z <= {contract.M} (the domain is empty there)"
        )
    if v["lattice_n"] > 40:
        raise ConfigurationError("verify.lattice_n must be <= 40")
    if v["rho"] is None:
        v["rho"] = (contract.M - contract.m) / 10
    if not v["rho"] < (contract.M - contract.m) / 2:
        raise ConfigurationError("verify.rho must be < (contract.M - contract.m) / 2")

    out = values["output"]
    if out["directory"] is None:
        root = output_root if output_root is not None else os.environ.get(OUTPUT_ROOT_ENV, "runs")
        stem = Path(source).stem if source and not source.startswith("<") else "run"
        out["directory"] = str(Path(root) / stem)
    return RunConfig(values, source, model, contract, solver)


def parse_config(path: str | os.PathLike, output_root: str | None = None) -> RunConfig:
    """Read, validate and resolve a TOML run configuration."""
    return resolve(load_raw(path), str(path), output_root)


def apply_overrides(raw: dict, *, seed: int | None = None, ladder: list[float] | None = None,
                    output: str | None = None) -> dict:
    """Command-line overrides applied to the raw mapping before validation."""
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw.setdefault("verify", {})["seed"] = seed
    if ladder is not None:
        raw.setdefault("solver", {})["ladder"] = ladder
    if output is not None:
        raw.setdefault("output", {})["directory"] = output
    return raw


def load_raw(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid UTF-8 ({exc})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: malformed TOML: {exc}") from exc
