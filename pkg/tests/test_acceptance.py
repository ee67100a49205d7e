"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the measured
quantity, its tolerance and the wall time, then asserts. Work is timed inside
each test (no shared fixtures) so the runtime limits are honest.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from conftest import DEMO, constant_price_model, node

from swinghjb import (
    LatticeOracle,
    MarketModel,
    PenaltySpec,
    SolverConfig,
    SwingContract,
    extract_policy,
    lattice_dp_value,
    mc_policy_value,
    run_property_suite,
    solve_penalized,
    solve_penalty_ladder,
    solve_strict,
    solve_strict_normalized,
    xi_boundary,
)
from swinghjb.cli.main import main
from swinghjb.solver import FarBoundary
from swinghjb.solver.grid import rect_grid, strict_grid
from swinghjb.verify.properties import ladder_gaps, sample_rho_domain, scheme_monotonicity

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
P_REF = 10.0
N = 64


def _model():
    return MarketModel.gbm(mu=0.05, sigma=0.3, rate=0.03, strike=10.0)


def _config():
    return SolverConfig(p_far_boundary=FarBoundary("asymptotic"))


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(n: int, ok: bool, detail: str, limit: float | None = None) -> bool:
        elapsed = time.perf_counter() - start
        within = limit is None or elapsed < limit
        verdict = "PASS" if ok and within else "FAIL"
        budget = f" (limit {limit:g}s)" if limit is not None else ""
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {verdict}: {detail}; runtime {elapsed:.2f}s{budget}")
        return ok and within

    return emit


def test_1_boundary_exactness(report):
    model, contract = _model(), SwingContract(**DEMO)
    grid = strict_grid(model, contract, N, N, N, p_ref=P_REF)
    s = solve_strict(model, contract, grid, _config())
    V, g = s.values, s.grid
    alpha = float(np.max(np.abs(V[:, :, node(g.z_nodes, contract.M)])))
    band = (g.z_nodes >= contract.m) & (g.z_nodes <= contract.M)
    gamma = float(np.max(np.abs(V[-1][:, band])))
    xi = xi_boundary(model, contract.maturity, contract.u_bar, g.t_nodes[:, None], g.p_nodes[None, :])
    beta = float(np.max(np.abs(s.beta_values - xi) / np.maximum(np.abs(xi), 1e-300)))
    ok = alpha == 0.0 and gamma == 0.0 and beta <= 1e-12
    assert report(1, ok, f"alpha max |V| = {alpha:g}, gamma max |V| = {gamma:g}, "
                         f"beta max rel err vs xi = {beta:.3g} (tol 1e-12)", limit=60)


def test_2_structural_suite(report):
    model, config = _model(), _config()
    strict = SwingContract(**DEMO)
    penalized = SwingContract(**DEMO, penalty=PenaltySpec(1.0, 0.5))
    names = ("concavity_z", "monotone_increasing_z", "monotone_decreasing_z", "constancy_region")
    parts, ok = [], True
    for contract, solve, builder in ((strict, solve_strict, strict_grid), (penalized, solve_penalized, rect_grid)):
        grid = builder(model, contract, N, N, N, p_ref=P_REF)
        s = solve(model, contract, grid, config)
        rep = run_property_suite(s, contract, model, p_ref=P_REF, perturbation_trials=0, config=config)
        scale = rep.value_scale
        for name in names:
            check = rep[name]
            ok &= check.status in ("pass", "skip")
            parts.append(f"{s.label}.{name}={check.status}({check.worst:.2g}<={check.tolerance:.2g})")
        ok &= rep["concavity_z"].tolerance <= 1e-8 * scale
        constancy = rep["constancy_region"]
        if constancy.status == "pass":
            ok &= constancy.worst <= 10 * (grid.dz + grid.dt) * scale
    assert report(2, ok, "; ".join(parts), limit=60)


def test_3_penalty_ladder_convergence(report):
    model, config, contract = _model(), _config(), SwingContract(**DEMO)
    reference = solve_strict(model, contract, strict_grid(model, contract, N, N, N, p_ref=P_REF), config)
    ladder = solve_penalty_ladder(model, contract, rect_grid(model, contract, N, N, N, p_ref=P_REF), config)
    rho = (contract.M - contract.m) / 10
    rep = run_property_suite(reference, contract, model, ladder=ladder, rho=rho, n_samples=100,
                             p_ref=P_REF, perturbation_trials=0, config=config)
    samples = sample_rho_domain(contract, rho, rep.p_window, 100, 0)
    gaps = ladder_gaps(ladder, reference, samples)["sup_gap"]
    scale = reference.value_scale()
    tail = gaps[-3:]
    ok = (rep["ladder_convergence"].status == "pass"
          and all(b <= a + 1e-9 * scale for a, b in zip(tail, tail[1:]))
          and gaps[-1] < 0.01 * scale)
    weights = ", ".join(f"{s.penalty_weight:g}:{gap:.3g}" for s, gap in zip(ladder, gaps))
    assert report(3, ok, f"sup gaps by weight [{weights}], final {gaps[-1]:.3g} < {0.01 * scale:.3g}",
                  limit=600)


def test_4_deterministic_closed_forms(report):
    model = constant_price_model()
    contract = SwingContract(**DEMO)
    cases = {12.0: (12.0 - 10.0) * min(contract.M, contract.u_bar * contract.maturity),
             8.0: (8.0 - 10.0) * contract.m}
    parts, ok = [], True
    for p, exact in cases.items():
        for k in (1, 2):
            grid = strict_grid(model, contract, 8 * k, 10, 16 * k, p_ref=10.0, p_range=(5.0, 15.0))
            s = solve_strict(model, contract, grid, SolverConfig())
            v = s.values[0, node(grid.p_nodes, p), node(grid.z_nodes, 0.0)]
            rel = abs(v - exact) / abs(exact)
            ok &= rel <= 0.02
            parts.append(f"pde(p={p:g},x{k})={v:.6g} rel {rel:.2g}")
        dp = lattice_dp_value(model, contract, 16, 8, 16, 0.0, p, 0.0)
        ok &= abs(dp - exact) <= 1e-12
        parts.append(f"lattice(p={p:g})={dp!r} exact {exact:g}")
    assert report(4, ok, "; ".join(parts), limit=60)


def test_5_oracle_triangle(report):
    model, config, contract = _model(), _config(), SwingContract(**DEMO)
    grid = strict_grid(model, contract, N, N, N, p_ref=P_REF)
    s = solve_strict(model, contract, grid, config)
    pde = float(s.interpolate(0.0, P_REF, 0.0))
    dp = LatticeOracle(model, contract, 32, 32, 32).value(0.0, P_REF, 0.0)
    policy = extract_policy(s, contract)
    mc = mc_policy_value(model, contract, policy, 0.0, P_REF, 0.0, 100_000, grid.dt, seed=20240601)
    rel = abs(pde - dp) / abs(pde)
    allowance = grid.relative_spacing() * max(abs(pde), 1.0)
    tol = 3 * mc.std_error + allowance
    ok = rel <= 0.03 and abs(mc.mean - pde) <= tol
    assert report(5, ok, f"pde {pde:.5g}, lattice {dp:.5g} (rel {rel:.3g} <= 0.03), "
                         f"mc {mc.mean:.5g} +- {mc.std_error:.2g} (|mc-pde| {abs(mc.mean - pde):.3g} "
                         f"<= {tol:.3g})", limit=900)


def test_6_normalized_vs_direct(report):
    model, config, contract = _model(), _config(), SwingContract(**DEMO)
    grid = strict_grid(model, contract, N, N, N, p_ref=P_REF)
    direct = solve_strict(model, contract, grid, config)
    normalized = solve_strict_normalized(model, contract, grid, config)
    p_window = model.price_range(contract.maturity, P_REF, 3.0)
    samples = sample_rho_domain(contract, (contract.M - contract.m) / 10, p_window, 100, 20240601)
    a = direct.interpolate(samples[:, 0], samples[:, 1], samples[:, 2])
    b = normalized.interpolate(samples[:, 0], samples[:, 1], samples[:, 2])
    gap, tol = float(np.max(np.abs(a - b))), 0.01 * direct.value_scale()
    assert report(6, gap <= tol, f"sup gap on 100 rho-interior samples {gap:.3g} <= {tol:.3g}", limit=300)


def test_7_scheme_monotonicity(report):
    model, config = _model(), _config()
    parts, ok = [], True
    for contract, solve, builder in (
        (SwingContract(**DEMO), solve_strict, strict_grid),
        (SwingContract(**DEMO, penalty=PenaltySpec(1.0, 0.5)), solve_penalized, rect_grid),
    ):
        s = solve(model, contract, builder(model, contract, N, N, N, p_ref=P_REF), config)
        check = scheme_monotonicity(s, model, config, n_trials=1000, seed=20240601)
        ok &= check.status == "pass"
        parts.append(f"{s.label}: worst decrease {check.worst:.3g} <= {check.tolerance:.3g} over 1000 trials")
    assert report(7, ok, "; ".join(parts), limit=60)


def test_8_reproducibility(report, tmp_path):
    parts, ok = [], True
    for name in ("demo_strict", "demo_penalized"):
        dirs = [tmp_path / f"{name}_{i}" for i in range(2)]
        codes = [main(["run", str(CONFIGS / f"{name}.toml"), "--output", str(d)]) for d in dirs]
        files = sorted(p.name for p in dirs[0].iterdir())
        same = files == sorted(p.name for p in dirs[1].iterdir()) and all(
            (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files
        )
        ok &= same and codes == [0, 0]
        parts.append(f"{name}: exit {codes}, {len(files)} artifacts {'identical' if same else 'DIFFER'}")
    assert report(8, ok, "; ".join(parts))
