"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are repeated in
an "acceptance criteria" section of the terminal summary.  Wall-clock budgets
are measured after a small warm-up so that numba compilation is excluded.
"""

import logging
import time
from dataclasses import replace

import numpy as np
import pytest

from crossdiff import particle_sim as ps
from crossdiff.cli import PRESETS, ConfigError, build_problem, emit_config, parse_config, parse_field_spec
from crossdiff.diagnostics import delta_scaling_probe, mass, overlap, solve_aggregate
from crossdiff.errors import NoSteadyState
from crossdiff.flux_models import Coefficients, FluxKind
from crossdiff.mesh_fe import Mesh1D, NodalField
from crossdiff.regularization import (
    RegParam,
    f_eps,
    f_eps_prime,
    f_eps_second,
    lambda_eps,
    lambda_matrix_cell,
)
from crossdiff.time_stepper import SolverParams, check_time_constraint, solve_to_steady, solve_to_time
from mms_oracle import THETA_LINEAR, THETA_PERIODIC, mms_error, observed_orders

pytestmark = pytest.mark.acceptance


@pytest.fixture(autouse=True)
def _quiet():
    logging.getLogger("crossdiff").setLevel(logging.ERROR)


def _problem(name, **changes):
    """Preset problem with mesh, solver and run fields overridden."""
    cfg = PRESETS[name]
    if "cells" in changes:
        cfg = replace(cfg, mesh=replace(cfg.mesh, cells=changes.pop("cells")))
    solver = {k: changes.pop(k) for k in ("tau", "tol", "tol_S") if k in changes}
    cfg = replace(cfg, solver=replace(cfg.solver, **solver), run=replace(cfg.run, **changes))
    return build_problem(cfg)


def _random_fields(rng, count, nodes, eps):
    """Nodal vectors mixing log-uniform values over [eps/100, 100/eps], exact
    zeros and values sitting on the clamp kinks."""
    out = []
    for _ in range(count):
        z = np.exp(rng.uniform(np.log(eps / 100), np.log(100 / eps), nodes))
        z[rng.random(nodes) < 0.1] = 0.0
        z[rng.random(nodes) < 0.05] = eps
        z[rng.random(nodes) < 0.05] = 1 / eps
        out.append(z)
    return out


def _warm_up():
    reg = RegParam(1e-4)
    lambda_matrix_cell(np.ones(2), np.ones(2), reg)
    mesh = Mesh1D(0.0, 1.0, 4)
    u = NodalField.constant(mesh, 1.0)
    solve_to_time((u, u), FluxKind.BT(), Coefficients(a=np.ones((2, 2))), SolverParams(reg, tau=1e-3, t_end=1e-3))


def test_criterion_01_regularization(criterion):
    _warm_up()
    t0 = time.perf_counter()
    worst_cont = 0.0
    for eps in (1e-8, 1e-4, 1e-2, 0.1):
        reg = RegParam(eps)
        for kink in (eps, 1 / eps):
            below, above = np.nextafter(kink, 0.0), np.nextafter(kink, np.inf)
            for f in (f_eps, f_eps_prime, f_eps_second):
                gap = abs(f(above, reg) - f(below, reg)) / max(1.0, abs(f(kink, reg)))
                worst_cont = max(worst_cont, gap)

    rng = np.random.default_rng(20240601)
    clamp_exact = True
    worst_identity = 0.0
    in_range = True
    for eps in (1e-8, 1e-4, 1e-2):
        reg = RegParam(eps)
        for z in _random_fields(rng, 1000 // 3 + 1, 64, eps):
            clamp_exact &= np.array_equal(lambda_eps(z, reg), np.minimum(np.maximum(z, eps), 1 / eps))
            L = lambda_matrix_cell(z[:-1], z[1:], reg)
            dz = z[1:] - z[:-1]
            resid = np.abs(L * (f_eps_prime(z[1:], reg) - f_eps_prime(z[:-1], reg)) - dz)
            worst_identity = max(worst_identity, float(np.max(resid / np.maximum(1.0, np.abs(dz)))))
            in_range &= bool(np.all((L >= eps) & (L <= 1 / eps)))
    seconds = time.perf_counter() - t0
    ok = worst_cont <= 1e-12 and clamp_exact and worst_identity <= 1e-10 and in_range and seconds < 1
    criterion(
        1,
        "regularization",
        ok,
        f"kink jump {worst_cont:.1e} (<=1e-12), clamp exact={clamp_exact}, "
        f"identity residual {worst_identity:.1e} (<=1e-10), Lambda in range={in_range}",
        seconds,
    )


def test_criterion_02_clamp_gradient_bound(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = -np.inf
    for eps in (1e-8, 1e-4, 1e-2):
        reg = RegParam(eps)
        for chi in _random_fields(rng, 1000 // 3 + 1, 64, eps):
            chi = chi * rng.choice([-1.0, 1.0], chi.size)  # the bound holds for signed data too
            h = 1.0 / (chi.size - 1)
            g_chi = np.diff(chi) / h
            g_lam = np.diff(lambda_eps(chi, reg)) / h
            lhs = h * np.sum(g_lam * g_lam)
            rhs = h * np.sum(g_chi * g_lam)
            worst = max(worst, (lhs - rhs) / max(1.0, rhs))
    seconds = time.perf_counter() - t0
    criterion(
        2,
        "|grad I lambda(chi)|^2 <= (grad chi, grad I lambda(chi))",
        worst <= 1e-12 and seconds < 1,
        f"max relative excess {worst:.1e} (<=1e-12)",
        seconds,
    )


def test_criterion_03_mass_conservation(criterion):
    t0 = time.perf_counter()
    drifts = {}
    for delta in (0.0, 1e-3, 1e-2):
        prob = _problem(f"exp2_delta{delta:g}", cells=201, tau=1e-4, tol=1e-12, t_end=100 * 1e-4)
        final = solve_to_time(prob.initial, prob.kind, prob.coeffs, prob.params, record_every=100).final
        assert final.n == 100
        drifts[delta] = max(
            abs(mass(u) - mass(u0)) / mass(u0) for u, u0 in zip((final.u1, final.u2), prob.initial)
        )
    seconds = time.perf_counter() - t0
    worst = max(drifts.values())
    criterion(
        3,
        "mass conservation",
        worst <= 1e-9 and seconds < 10,
        ", ".join(f"delta={d:g}: {v:.1e}" for d, v in drifts.items()) + " (<=1e-9)",
        seconds,
    )


def test_criterion_04_entropy_decay(criterion):
    prob = _problem("exp1_pd", t_end=500 * 1e-4)
    assert prob.coeffs.b.any() == False and prob.coeffs.c.any() == False  # noqa: E712
    t0 = time.perf_counter()
    hist = solve_to_time(prob.initial, prob.kind, prob.coeffs, prob.params, record_every=1).final.history
    seconds = time.perf_counter() - t0
    E = np.array([r.entropy for r in hist])
    assert len(E) == 501
    rel_increase = float(np.max(np.diff(E) / np.abs(E[:-1])))
    criterion(
        4,
        "entropy decay, a=(4,0;3.9,1)",
        rel_increase <= 1e-9 and seconds < 30,
        f"largest relative step increase {rel_increase:.1e} (<=1e-9) over 500 steps, "
        f"E {E[0]:.4f} -> {E[-1]:.4f}",
        seconds,
    )


def test_criterion_05_mms_orders(criterion):
    mms_error(THETA_LINEAR, 10, 1e-2, 2e-2)  # warm-up
    t0 = time.perf_counter()
    # theta linear in t: backward Euler is exact, the error is purely spatial
    space = [mms_error(THETA_LINEAR, M, 1e-3, 0.05) for M in (50, 100, 200)]
    times = [mms_error(THETA_PERIODIC, 400, tau, 0.25) for tau in (1e-3, 5e-4, 2.5e-4)]
    seconds = time.perf_counter() - t0
    p_space = observed_orders(space)
    p_time = observed_orders(times)
    ok = p_space.min() >= 1.8 and p_time.min() >= 0.9 and seconds < 120
    criterion(
        5,
        "manufactured-solution orders",
        ok,
        f"space {np.round(p_space, 3).tolist()} (>=1.8), time {np.round(p_time, 3).tolist()} (>=0.9)",
        seconds,
    )


def test_criterion_06_segregation_trend(criterion):
    t0 = time.perf_counter()
    over, failures = {}, []
    for name in ("exp1_b4", "exp1_b8", "exp1_b20", "exp1_b40", "exp1_skt_b20"):
        prob = _problem(name)
        try:
            st = solve_to_steady(
                prob.initial, prob.kind, prob.coeffs, prob.params,
                max_steps=PRESETS[name].run.max_steps, record_every=10**9,
            )
            over[name] = (overlap(st.u1, st.u2), st.n)
        except NoSteadyState as exc:
            failures.append(f"{name}: {exc}")
    seconds = time.perf_counter() - t0
    bt = [over.get(f"exp1_b{b}", (np.nan, 0))[0] for b in (4, 8, 20, 40)]
    skt = over.get("exp1_skt_b20", (np.nan, 0))[0]
    decreasing = bool(np.all(np.diff(bt) < 0))
    ok = not failures and decreasing and bt[2] < skt and seconds < 600
    detail = (
        "BT overlap b=4,8,20,40: "
        + ", ".join(f"{v:.4g}" for v in bt)
        + f" (strictly decreasing={decreasing}); SKT b=20: {skt:.4g}"
        + f"; steps {[v[1] for v in over.values()]}"
    )
    if failures:
        detail += "; not stationary: " + "; ".join(failures)
    criterion(6, "segregation trend", ok, detail, seconds)


def test_criterion_07_delta_scaling(criterion):
    # full-scale variant (M=1001, tau=1e-5); the CI-scaled presets give the same ratio
    t0 = time.perf_counter()
    results = {}
    for delta in (1e-2, 1e-3):
        prob = _problem(f"exp2_delta{delta:g}")
        assert prob.mesh.num_cells == 1001 and prob.params.tau == 1e-5
        results[delta] = solve_to_time(prob.initial, prob.kind, prob.coeffs, prob.params, record_every=1).final
        assert results[delta].n == 17000
    rows = delta_scaling_probe(results)
    seconds = time.perf_counter() - t0
    products = [p for _, p in rows]
    ratio = max(products) / min(products)
    criterion(
        7,
        "delta * space-time gradient (M=1001, tau=1e-5, t=0.17)",
        ratio <= 3 and seconds < 3600,
        ", ".join(f"delta={d:g}: {p:.4g}" for d, p in rows) + f"; ratio {ratio:.3f} (<=3)",
        seconds,
    )


def _aggregate_gap(cells, tau):
    prob = _problem("exp2_delta0.001", cells=cells, tau=tau, t_end=0.05)
    coupled = solve_to_time(prob.initial, prob.kind, prob.coeffs, prob.params, record_every=10**9).final
    total0 = prob.initial[0] + prob.initial[1]
    agg = solve_aggregate(total0, prob.coeffs, prob.kind.delta, prob.params).final
    return float(np.max(np.abs(coupled.u1.values + coupled.u2.values - agg.values)))


def test_criterion_08_aggregate_consistency(criterion):
    t0 = time.perf_counter()
    coarse = _aggregate_gap(201, 2e-4)
    fine = _aggregate_gap(402, 1e-4)
    seconds = time.perf_counter() - t0
    ratio = coarse / fine
    criterion(
        8,
        "coupled sum vs scalar aggregate at t=0.05, delta=1e-3",
        ratio >= 1.5 and seconds < 300,
        f"gap {coarse:.3e} (M=201, tau=2e-4) -> {fine:.3e} (M=402, tau=1e-4), ratio {ratio:.2f} (>=1.5)",
        seconds,
    )


def test_criterion_09_particle_trend(criterion):
    cfg = PRESETS["particles_bt"]
    prob = build_problem(cfg)
    p = cfg.particles
    assert prob.coeffs.c.tolist() == [0.05, 0.05] and np.allclose(np.square(p.sigma) / 2, 0.05)
    t0 = time.perf_counter()
    pde = solve_to_time(prob.initial, prob.kind, prob.coeffs, prob.params, record_every=10**9).final
    dens = tuple(parse_field_spec(s) for s in (cfg.init.u1, cfg.init.u2))
    kernel = ps.KernelSpec(p.kernel_eps)
    domain = (cfg.mesh.left, cfg.mesh.right)
    l1 = {}
    for n in (500, 5000):
        dists = []
        for seed in range(5):
            ens = ps.initial_ensemble(dens, n, tuple(p.sigma), seed, domain)
            ens = ps.simulate(ens, kernel, prob.coeffs.a, prob.coeffs.b, None, prob.params.tau, cfg.run.t_end)
            d1, d2 = ps.empirical_density(ens, prob.mesh, p.bandwidth)
            dists.append(0.5 * (ps.compare_to_pde(d1, pde.u1) + ps.compare_to_pde(d2, pde.u2)))
        l1[n] = float(np.mean(dists))
    seconds = time.perf_counter() - t0
    criterion(
        9,
        "particle mean-field trend (5 seeds, t=0.05)",
        l1[5000] < l1[500] and seconds < 300,
        f"mean L1 n=500: {l1[500]:.4f}, n=5000: {l1[5000]:.4f}",
        seconds,
    )


def test_criterion_10_stationarity_and_constraint(criterion):
    _warm_up()
    t0 = time.perf_counter()
    mesh = Mesh1D(0.0, 1.0, 50)
    u = NodalField.constant(mesh, 0.8)
    params = SolverParams(RegParam(1e-4), tau=1e-3, tol_S=1e-12)
    co = Coefficients(a=np.ones((2, 2)), c=[1.0, 1.0])
    st = solve_to_steady((u, u), FluxKind.BT(), co, params, max_steps=10)
    one_step = st.stationary and st.n == 1

    exp3 = PRESETS["exp3"]
    omega = check_time_constraint(build_problem(exp3).params, build_problem(exp3).coeffs).omega
    bad = replace(exp3, solver=replace(exp3.solver, tau=0.1))
    try:
        parse_config(emit_config(bad))
        rejected, message = False, "accepted"
    except ConfigError as exc:
        rejected, message = exc.key == "solver.tau" and "omega=6" in str(exc), str(exc)
    seconds = time.perf_counter() - t0
    criterion(
        10,
        "stationarity in one step; omega*tau rejection",
        one_step and rejected and omega == 6.0 and seconds < 1,
        f"stationary after {st.n} step(s); omega={omega:g}; load error: {message}",
        seconds,
    )
