"""Structural checks on value surfaces, collected into a JSON-ready report.

Each check records a status (``pass``, ``fail``, ``warn`` or ``skip``), the
worst violation found, where it occurred and the tolerance used. Only
``hard`` checks that fail make :attr:`PropertyReport.hard_failed` true;
soft checks carry diagnostics that should not stop a run.

Structural properties are evaluated on a price window away from the
truncated far-field boundaries, where the truncation error of the price
grid dominates. The window defaults to three standard deviations around
the reference price (grids are built five wide).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..contract import ContractKind, SwingContract, penalty_phi, penalty_phi_c
from ..market import MarketModel, ModelKind, xi_boundary
from ..policy import ExercisePolicy
from ..solver.grid import Provenance, ValueSurface
from ..solver.hjb import SolverConfig, backward_stepper

CONCAVITY_RTOL = 1e-8
MONOTONE_RTOL = 1e-8
XI_RTOL = 1e-12
CONSTANCY_FACTOR = 10.0
LADDER_FINAL_RTOL = 1e-2
LADDER_TAIL = 3


@dataclass
class CheckResult:
    name: str
    status: str
    worst: float = 0.0
    tolerance: float | None = None
    location: dict | None = None
    hard: bool = True
    note: str = ""
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status in ("pass", "skip", "warn")


@dataclass
class PropertyReport:
    surface: str
    value_scale: float
    p_window: tuple[float, float]
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def hard_failed(self) -> bool:
        return any(c.hard and c.status == "fail" for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list[str]:
        return [c.name for c in self.checks]

    def to_dict(self) -> dict:
        return {
            "surface": self.surface,
            "value_scale": self.value_scale,
            "p_window": list(self.p_window),
            "hard_failed": self.hard_failed,
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _loc(surface: ValueSurface, n: int, j: int, k: int | None = None) -> dict:
    g = surface.grid
    out = {"t": float(g.t_nodes[n]), "p": float(g.p_nodes[j])}
    if k is not None:
        out["z"] = float(g.z_nodes[k])
    return out


def default_p_window(model: MarketModel, surface: ValueSurface, p_ref: float | None) -> tuple[float, float]:
    g = surface.grid
    lo, hi = float(g.p_nodes[0]), float(g.p_nodes[-1])
    if p_ref is None or model.kind is ModelKind.CUSTOM:
        span = hi - lo
        return lo + 0.2 * span, hi - 0.2 * span
    w_lo, w_hi = model.price_range(surface.grid.maturity, p_ref, width=3.0)
    return max(lo, w_lo), min(hi, w_hi)


class _Context:
    def __init__(self, surface, contract, model, p_window):
        self.surface = surface
        self.contract = contract
        self.model = model
        self.g = surface.grid
        self.p_window = p_window
        self.p_sel = (self.g.p_nodes >= p_window[0] - 1e-12) & (self.g.p_nodes <= p_window[1] + 1e-12)
        self.scale = surface.value_scale()
        self.rel = self.g.relative_spacing()

    def remaining(self, n: int) -> float:
        return self.contract.maturity - self.g.t_nodes[n]


# -- individual checks -------------------------------------------------------


def check_finite(ctx: _Context) -> CheckResult:
    V = ctx.surface.values
    if ctx.surface.is_strict:
        g, c = ctx.g, ctx.contract
        eps = 1e-9 * g.dz
        T = g.t_nodes[:, None]
        inside = (g.z_nodes[None, :] >= c.m - c.u_bar * (c.maturity - T) - eps) & (
            g.z_nodes[None, :] <= c.M + eps
        )
        bad = inside[:, None, :] & ~np.isfinite(V)
    else:
        bad = ~np.isfinite(V)
    count = int(bad.sum())
    loc = None
    if count:
        n, j, k = (int(a[0]) for a in np.nonzero(bad))
        loc = _loc(ctx.surface, n, j, k)
    return CheckResult("finite_in_domain", _status(count == 0), float(count), 0.0, loc)


def check_alpha(ctx: _Context) -> CheckResult:
    if not ctx.surface.is_strict:
        return CheckResult("boundary_alpha", "skip", note="strict surfaces only")
    k = ctx.g.z_index(ctx.contract.M)
    if k is None:
        return CheckResult("boundary_alpha", "skip", note="z = M is not a grid node")
    col = np.abs(ctx.surface.values[:, :, k])
    worst = float(np.nanmax(col))
    n, j = np.unravel_index(int(np.nanargmax(col)), col.shape)
    return CheckResult("boundary_alpha", _status(worst == 0.0), worst, 0.0, _loc(ctx.surface, n, j, k))


def check_beta(ctx: _Context) -> CheckResult:
    """Nodes lying on the sloped edge hold xi, and the edge data matches xi_boundary."""
    s, c, g = ctx.surface, ctx.contract, ctx.g
    if not s.is_strict or s.beta_values is None:
        return CheckResult("boundary_beta", "skip", note="strict surfaces only")
    worst, loc = 0.0, None
    ref_scale = max(float(np.max(np.abs(s.beta_values))), 1e-300)
    if ctx.model.kind is not ModelKind.CUSTOM:
        T, P = np.meshgrid(g.t_nodes, g.p_nodes, indexing="ij")
        xi = np.asarray(xi_boundary(ctx.model, c.maturity, c.u_bar, T, P), dtype=float)
        err = np.abs(xi - s.beta_values) / ref_scale
        worst = float(err.max())
        n, j = np.unravel_index(int(err.argmax()), err.shape)
        loc = _loc(s, n, j)
    eps = 1e-9 * g.dz
    for n in range(g.t_nodes.size):
        beta = c.m - c.u_bar * ctx.remaining(n)
        on = np.flatnonzero(np.abs(g.z_nodes - beta) <= eps)
        for k in on:
            err = np.abs(s.values[n, :, k] - s.beta_values[n]) / ref_scale
            if err.max() > worst:
                worst = float(err.max())
                loc = _loc(s, n, int(err.argmax()), int(k))
    tol = XI_RTOL if ctx.model.kind is not ModelKind.CUSTOM else None
    status = _status(worst <= XI_RTOL) if tol is not None else "pass"
    note = "relative to max |xi|" + ("" if tol is not None else "; custom model xi is a numerical solve")
    return CheckResult("boundary_beta", status, worst, tol, loc, note=note)


def check_terminal(ctx: _Context) -> CheckResult:
    s, c, g = ctx.surface, ctx.contract, ctx.g
    last = s.values[-1]
    P, Z = np.meshgrid(g.p_nodes, g.z_nodes, indexing="ij")
    if s.is_strict:
        sel = (g.z_nodes >= c.m - 1e-12) & (g.z_nodes <= c.M + 1e-12)
        err = np.abs(last[:, sel])
        zs = np.flatnonzero(sel)
    else:
        if s.provenance is Provenance.PENALTY_LADDER:
            target = np.broadcast_to(penalty_phi_c(s.penalty_weight, c.m, c.M, g.z_nodes), last.shape)
        elif s.provenance is Provenance.PENALIZED_CONTRACT:
            target = penalty_phi(c.penalty, P, Z, c.m, c.M)
        else:
            target = np.zeros_like(last)
        err = np.abs(last - target)
        zs = np.arange(g.z_nodes.size)
    worst = float(np.max(err))
    j, kk = np.unravel_index(int(err.argmax()), err.shape)
    return CheckResult(
        "boundary_gamma", _status(worst == 0.0), worst, 0.0, _loc(s, g.t_nodes.size - 1, j, int(zs[kk]))
    )


def _slices(ctx: _Context):
    V = ctx.surface.values
    for n in range(ctx.g.t_nodes.size):
        for j in np.flatnonzero(ctx.p_sel):
            yield n, j, V[n, j]


def check_concavity(ctx: _Context) -> CheckResult:
    tol = CONCAVITY_RTOL * ctx.scale
    worst, loc, failing = -np.inf, None, set()
    for n, j, col in _slices(ctx):
        d2 = col[2:] - 2 * col[1:-1] + col[:-2]
        ok = np.isfinite(d2)
        if not ok.any():
            continue
        d2 = np.where(ok, d2, -np.inf)
        k = int(np.argmax(d2))
        if d2[k] > tol:
            failing.add((n, j))
        if d2[k] > worst:
            worst, loc = float(d2[k]), _loc(ctx.surface, n, j, k + 1)
    worst = max(worst, 0.0)
    return CheckResult(
        "concavity_z", _status(worst <= tol), worst, tol, loc,
        note="largest positive second difference in z",
        data={"failing_columns": len(failing)},
    )


def check_monotone(ctx: _Context) -> list[CheckResult]:
    """Increasing for z <= M - u_bar (T - t); decreasing for z >= m."""
    c, g = ctx.contract, ctx.g
    tol = MONOTONE_RTOL * ctx.scale
    inc = [0.0, None]
    dec = [0.0, None]
    z = g.z_nodes
    for n, j, col in _slices(ctx):
        d = np.diff(col)
        upper = c.M - c.u_bar * ctx.remaining(n)
        # A step counts when both of its end nodes lie in the region.
        sel_inc = np.isfinite(d) & (z[1:] <= upper + 1e-12)
        sel_dec = np.isfinite(d) & (z[:-1] >= c.m - 1e-12)
        if sel_inc.any():
            viol = np.where(sel_inc, -d, -np.inf)
            k = int(np.argmax(viol))
            if viol[k] > inc[0]:
                inc = [float(viol[k]), _loc(ctx.surface, n, j, k)]
        if sel_dec.any():
            viol = np.where(sel_dec, d, -np.inf)
            k = int(np.argmax(viol))
            if viol[k] > dec[0]:
                dec = [float(viol[k]), _loc(ctx.surface, n, j, k)]
    return [
        CheckResult("monotone_increasing_z", _status(inc[0] <= tol), inc[0], tol, inc[1],
                    note="region z <= M - u_bar (T - t)"),
        CheckResult("monotone_decreasing_z", _status(dec[0] <= tol), dec[0], tol, dec[1],
                    note="region z >= m"),
    ]


def check_constancy(ctx: _Context) -> CheckResult:
    c, g = ctx.contract, ctx.g
    dz_rel = g.dz / (g.z_nodes[-1] - g.z_nodes[0])
    dt_rel = g.dt / g.maturity
    tol = CONSTANCY_FACTOR * (dz_rel + dt_rel) * ctx.scale
    worst, loc, used = 0.0, None, 0
    for n, j, col in _slices(ctx):
        upper = c.M - c.u_bar * ctx.remaining(n)
        sel = (g.z_nodes >= c.m - 1e-12) & (g.z_nodes <= upper + 1e-12) & np.isfinite(col)
        if sel.sum() < 2:
            continue
        used += 1
        spread = float(col[sel].max() - col[sel].min())
        if spread > worst:
            worst, loc = spread, _loc(ctx.surface, n, j)
    if used == 0:
        return CheckResult("constancy_region", "skip", note="[m, M - u_bar (T - t)] holds < 2 nodes")
    return CheckResult("constancy_region", _status(worst <= tol), worst, tol, loc,
                       note="spread of V over [m, M - u_bar (T - t)]", data={"columns": used})


def check_lipschitz(ctx: _Context) -> CheckResult:
    """Largest |dV/dp| on the window; for strict contracts compared with a volume bound.

    Buying at most ``M - z`` units, each worth at most ``sup_s d E[P_s]/dp``
    discounted, bounds the slope by ``(M - z) max(1, e^{(mu - r) T})`` for GBM
    and ``M - z`` for the mean-reverting preset.
    """
    s, c, g = ctx.surface, ctx.contract, ctx.g
    V = s.values[:, ctx.p_sel]
    slope = np.abs(np.diff(V, axis=1)) / g.dp
    if not s.is_strict:
        slope = slope / (1.0 + np.abs(g.z_nodes))[None, None, :]
    finite = np.isfinite(slope)
    worst = float(np.max(np.where(finite, slope, 0.0))) if finite.any() else 0.0
    n, j, k = np.unravel_index(int(np.argmax(np.where(finite, slope, -np.inf))), slope.shape)
    j_full = int(np.flatnonzero(ctx.p_sel)[j])
    bound = None
    if s.is_strict and ctx.model.kind in (ModelKind.GBM, ModelKind.MEAN_REVERTING):
        growth = 1.0
        if ctx.model.kind is ModelKind.GBM:
            growth = max(1.0, math.exp((ctx.model.params["mu"] - ctx.model.rate) * c.maturity))
        room = (c.M - g.z_nodes)[None, None, :]
        excess = np.where(finite, slope - growth * room * (1.0 + 10 * ctx.rel), -np.inf)
        ok = not np.any(excess > 0)
        bound = float(growth * (c.M - g.z_nodes[0]))
        return CheckResult("lipschitz_p", _status(ok), worst, bound, _loc(s, n, j_full, k),
                           note="|dV/dp| <= (M - z) growth, with 10x relative-spacing slack")
    return CheckResult("lipschitz_p", "pass" if np.isfinite(worst) else "fail", worst, bound,
                       _loc(s, n, j_full, k), hard=False,
                       note="max |dV/dp| / (1 + |z|); reported for refinement studies")


def check_growth(ctx: _Context) -> CheckResult:
    C = ctx.surface.growth_constant()
    return CheckResult("growth_envelope", _status(np.isfinite(C)), C, None, hard=False,
                       note="fitted C in |V| <= C (1 + p^2 + z^2)")


def check_policy(ctx: _Context, policy: ExercisePolicy | None, concave_ok: np.ndarray | None) -> CheckResult:
    """Decisions nonincreasing in z on columns that passed the concavity check."""
    if policy is None:
        return CheckResult("policy_threshold", "skip", hard=False, note="no policy supplied")
    g = ctx.g
    bad, loc, checked = 0, None, 0
    for n in range(g.t_nodes.size - 1):
        cols = np.flatnonzero(policy.domain[n])[:-1]
        if cols.size < 2:
            continue
        for j in np.flatnonzero(ctx.p_sel):
            if concave_ok is not None and not concave_ok[n + 1, j]:
                continue
            checked += 1
            d = policy.decision[n, j, cols]
            if np.any(np.diff(d) > 0):
                bad += 1
                if loc is None:
                    loc = _loc(ctx.surface, n, j)
    status = "pass" if bad == 0 else "warn"
    return CheckResult("policy_threshold", status, float(bad), 0.0, loc, hard=False,
                       note="columns with more than one exercise crossing",
                       data={"columns_checked": checked, "multiple_crossings_total": policy.multiple_crossings})


def _concave_columns(ctx: _Context) -> np.ndarray:
    V = ctx.surface.values
    d2 = V[:, :, 2:] - 2 * V[:, :, 1:-1] + V[:, :, :-2]
    tol = CONCAVITY_RTOL * ctx.scale
    return ~np.any(np.where(np.isfinite(d2), d2, -np.inf) > tol, axis=2)


def sample_rho_domain(contract: SwingContract, rho: float, p_window, n: int, seed: int) -> np.ndarray:
    """Uniform samples of (t, p, z) with ``m + rho`` to ``M - rho`` reachable."""
    c = contract
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, c.maturity, n)
    p = rng.uniform(p_window[0], p_window[1], n)
    lo = np.maximum(c.m + rho - c.u_bar * (c.maturity - t), -np.inf)
    hi = np.full(n, c.M - rho)
    z = lo + (hi - lo) * rng.uniform(0.0, 1.0, n)
    return np.column_stack([t, p, z])


def ladder_gaps(
    ladder: Sequence[ValueSurface], reference: ValueSurface, samples: np.ndarray
) -> dict:
    ref = reference.interpolate(samples[:, 0], samples[:, 1], samples[:, 2])
    gaps, steps = [], []
    prev = None
    for s in ladder:
        v = s.interpolate(samples[:, 0], samples[:, 1], samples[:, 2])
        gaps.append(float(np.max(np.abs(v - ref))))
        if prev is not None:
            steps.append(float(np.max(np.abs(v - prev) / (1.0 + np.abs(v)))))
        prev = v
    return {"c": [s.penalty_weight for s in ladder], "sup_gap": gaps, "successive_rel_gap": steps}


def check_ladder(
    ctx: _Context, ladder: Sequence[ValueSurface] | None, reference: ValueSurface | None,
    rho: float | None, n_samples: int, seed: int,
) -> CheckResult:
    if not ladder or reference is None:
        return CheckResult("ladder_convergence", "skip", note="no ladder supplied")
    c = ctx.contract
    rho = (c.M - c.m) / 10 if rho is None else rho
    samples = sample_rho_domain(c, rho, ctx.p_window, n_samples, seed)
    table = ladder_gaps(ladder, reference, samples)
    scale = reference.value_scale()
    gaps = table["sup_gap"]
    tail = gaps[-LADDER_TAIL:]
    slack = 1e-9 * scale
    nonincreasing = all(b <= a + slack for a, b in zip(tail, tail[1:]))
    final_ok = gaps[-1] <= LADDER_FINAL_RTOL * scale
    return CheckResult(
        "ladder_convergence", _status(nonincreasing and final_ok), gaps[-1],
        LADDER_FINAL_RTOL * scale, None,
        note="engineering threshold: sup gap to the strict value on rho-interior samples "
             f"non-increasing over the last {LADDER_TAIL} weights, final gap <= 1% of value scale",
        data={**table, "rho": rho, "n_samples": n_samples, "tail_nonincreasing": nonincreasing},
    )


def check_upper_bound(ctx: _Context, unconstrained: ValueSurface | None) -> CheckResult:
    """Strict value never exceeds the value with every control admissible."""
    if unconstrained is None or not ctx.surface.is_strict:
        return CheckResult("unconstrained_upper_bound", "skip", note="no upper-bound surface supplied")
    g, gu = ctx.g, unconstrained.grid
    worst, loc = 0.0, None
    # Both surfaces come from the same monotone scheme on shared nodes, so
    # the bound holds up to roundoff once their far-field data agree.
    tol = 1e-12 * ctx.scale
    for k, z in enumerate(g.z_nodes):
        ku = gu.z_index(z)
        if ku is None:
            continue
        diff = ctx.surface.values[:, :, k] - unconstrained.values[:, :, ku]
        if np.all(np.isnan(diff)):
            continue
        i = int(np.nanargmax(diff))
        n, j = np.unravel_index(i, diff.shape)
        if diff[n, j] > worst:
            worst, loc = float(diff[n, j]), _loc(ctx.surface, n, int(j), k)
    return CheckResult("unconstrained_upper_bound", _status(worst <= tol), worst, tol, loc,
                       note="max (V_strict - V_unconstrained) over every common node")


def scheme_monotonicity(
    surface: ValueSurface,
    model: MarketModel,
    config: SolverConfig | None = None,
    n_trials: int = 1000,
    seed: int = 0,
) -> CheckResult:
    """Raise one random node of a time slice and confirm no output of the next
    backward step decreases (beyond roundoff of ``1e-12`` times the value scale)."""
    if surface.provenance is Provenance.STRICT_NORMALIZED:
        return CheckResult("scheme_monotone", "skip", note="normalized surfaces not probed")
    stepper = backward_stepper(surface, model, config)
    rng = np.random.default_rng(seed)
    g = surface.native.get("solver_grid", surface.grid)
    slices = surface.native.get("solver_values", surface.values)
    scale = surface.value_scale()
    tol = 1e-12 * scale
    worst, loc = 0.0, None
    n_t = g.t_nodes.size - 1
    base_cache: dict[int, np.ndarray] = {}
    for _ in range(n_trials):
        n = int(rng.integers(0, n_t))
        W = slices[n + 1]
        if n not in base_cache:
            base_cache[n] = stepper.step(n, W)[0]
        base = base_cache[n]
        candidates = np.argwhere(np.isfinite(W))
        j, k = candidates[int(rng.integers(0, len(candidates)))]
        bumped = W.copy()
        bumped[j, k] += scale * 10 ** rng.uniform(-6, 0)
        out = stepper.step(n, bumped)[0]
        drop = np.where(np.isfinite(base), base - out, -np.inf)
        i = int(np.argmax(drop))
        if drop.flat[i] > worst:
            jj, kk = np.unravel_index(i, drop.shape)
            worst = float(drop.flat[i])
            loc = {"t": float(g.t_nodes[n]), "p": float(g.p_nodes[jj]), "z": float(g.z_nodes[kk])}
    return CheckResult("scheme_monotone", _status(worst <= tol), worst, tol, loc,
                       note=f"{n_trials} single-node upward perturbations")


def run_property_suite(
    surface: ValueSurface,
    contract: SwingContract,
    model: MarketModel,
    *,
    policy: ExercisePolicy | None = None,
    ladder: Sequence[ValueSurface] | None = None,
    strict_reference: ValueSurface | None = None,
    unconstrained: ValueSurface | None = None,
    p_ref: float | None = None,
    p_window: tuple[float, float] | None = None,
    rho: float | None = None,
    n_samples: int = 100,
    seed: int = 0,
    perturbation_trials: int = 0,
    config: SolverConfig | None = None,
    workers: int = 1,
) -> PropertyReport:
    """Run every structural check that applies to ``surface``.

    Optional inputs switch on further checks: ``policy`` the threshold
    structure, ``ladder`` (with ``strict_reference``, defaulting to
    ``surface`` when strict) the penalty-ladder convergence, and
    ``unconstrained`` the upper-bound comparison. Failing checks are
    report entries, never exceptions.
    """
    if p_window is None:
        p_window = default_p_window(model, surface, p_ref)
    ctx = _Context(surface, contract, model, p_window)
    if strict_reference is None and surface.is_strict:
        strict_reference = surface

    jobs: list[Callable[[], CheckResult | list[CheckResult]]] = [
        lambda: check_finite(ctx),
        lambda: check_alpha(ctx),
        lambda: check_beta(ctx),
        lambda: check_terminal(ctx),
        lambda: check_concavity(ctx),
        lambda: check_monotone(ctx),
        lambda: check_lipschitz(ctx),
        lambda: check_growth(ctx),
        lambda: check_policy(ctx, policy, _concave_columns(ctx)),
        lambda: check_ladder(ctx, ladder, strict_reference, rho, n_samples, seed),
        lambda: check_upper_bound(ctx, unconstrained),
    ]
    if surface.is_strict or contract.kind is ContractKind.PENALIZED:
        jobs.insert(6, lambda: check_constancy(ctx))
    if perturbation_trials:
        jobs.append(lambda: scheme_monotonicity(surface, model, config, perturbation_trials, seed))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda f: f(), jobs))
    else:
        results = [f() for f in jobs]
    report = PropertyReport(surface.label, ctx.scale, tuple(float(x) for x in p_window))
    for r in results:
        report.checks.extend(r if isinstance(r, list) else [r])
    return report
