"""Acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line; the lines are repeated in the
pytest terminal summary under "acceptance criteria".
"""
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from neumann_uc import commutator, config, frequency, mesh, odelemma, solver, weights
from neumann_uc import initial_data as idat
from neumann_uc import observability as ob
from neumann_uc.experiment import _Context, calibrate, identity_test_field

ROOT = Path(__file__).resolve().parent.parent


def _family_and_s(grid, coef, region=(0.4, 0.6)):
    fam = weights.build_weight_family(grid, region)
    return fam, 0.5 * weights.max_admissible_s(fam, coef.lam)


def test_c01_solver_convergence(criterion):
    t0 = time.perf_counter()
    errs = []
    for n, dt in ((129, 4e-4), (257, 1e-4)):
        g = mesh.build_grid((0, 1), n)
        u0 = np.cos(np.pi * g.x)
        tr = solver.solve(u0, mesh.coefficients(g), 0.1, dt)
        errs.append(mesh.norm(g, tr.u[-1] - np.exp(-np.pi**2 * 0.1) * u0))
    order = math.log2(errs[0] / errs[1])
    rt = time.perf_counter() - t0
    ok = 1.8 <= order <= 2.2 and rt <= 5
    criterion(1, "solver convergence", ok, f"order={order:.4f} errors={errs[0]:.3e},{errs[1]:.3e}", rt, 5)
    assert ok


def test_c02_energy_lemmas(criterion):
    t0 = time.perf_counter()
    g = mesh.build_grid((0, 1), 129)
    worst, n_cfg, ok = np.inf, 0, True
    for i, (a, B, A) in enumerate((a, B, A) for a in (0.0, -1.0, 1.0) for B in (0.0, 0.5)
                                  for A in (1.0, lambda x: 1 + 0.5 * x)):
        c = mesh.coefficients(g, A=A, B=B, a=a)
        tr = solver.solve(idat.random_field(g, 40 + i), c, 1.0, 1e-3)
        for rep in (solver.check_energy_L2(tr, 0.01), solver.check_energy_H1(tr, 0.01)):
            ok &= rep.passed
            worst = min(worst, float(np.min(rep.margin)))
        n_cfg += 1
    rt = time.perf_counter() - t0
    ok = ok and n_cfg == 12 and rt <= 10
    criterion(2, "energy lemmas", ok, f"configs={n_cfg} min_relative_margin={worst:.3e}", rt, 10)
    assert ok


def test_c03_identities(criterion):
    t0 = time.perf_counter()

    def case(n):
        g = mesh.build_grid((0, 1), n)
        coef = mesh.coefficients(g, A=lambda x: 1 + 0.5 * x)
        fam, s = _family_and_s(g, coef)
        return identity_test_field(g), weights.CarlemanWeight(fam, 0, s, 0.1, 1.0), coef, 0.5

    rows = commutator.refinement_study(case, ns=(129, 257, 513))
    rt = time.perf_counter() - t0
    orders = [r["order_estimate"] for r in rows if r["order_estimate"] is not None]
    final = [r["residual"] for r in rows if r["n"] == 513]
    ok = len(orders) == 6 and all(1.5 <= o <= 2.5 for o in orders) and max(final) <= 1e-4 and rt <= 20
    criterion(3, "commutator identities", ok,
              f"orders=[{', '.join(f'{o:.2f}' for o in orders)}] max_residual_513={max(final):.2e}", rt, 20)
    assert ok


def test_c04_stage1_cancellation(criterion):
    t0 = time.perf_counter()
    g = mesh.build_grid((0, 1), 513)
    c = mesh.coefficients(g)
    tr = solver.solve(np.cos(np.pi * g.x), c, 1.0, 1e-2)
    fam, s = _family_and_s(g, c)
    ft = frequency.compute_trace(tr, fam, s, 0.1)
    r = frequency.stage1_residual(ft)
    rt = time.perf_counter() - t0
    ok = len(r) == len(tr.t) and float(np.max(r)) <= 1e-5 and rt <= 10
    criterion(4, "stage-1 cancellation", ok, f"stamps={len(r)} max_residual={np.max(r):.2e}", rt, 10)
    assert ok


def _shipped_configs():
    yield "default", config.default_config()
    for p in sorted((ROOT / "configs").glob("*.ini")):
        yield p.stem, config.load_config(p)


def test_c05_stage3_signs(criterion):
    t0 = time.perf_counter()
    eta, smin, n_traces, ok = -np.inf, np.inf, 0, True
    for name, cfg in _shipped_configs():
        ctx = _Context(cfg, None)
        fam = ctx.family()
        s = 0.5 * weights.max_admissible_s(fam, ctx.coef.lam)
        for datum in cfg.observe_runs:
            ft = frequency.compute_trace(ctx.traj(datum), fam, s, cfg.h)
            eta = max(eta, float(np.max(ft.eta_max)))
            smin = min(smin, float(np.min(ft.S_ff / ft.y)))
            n_traces += 1
    rt = time.perf_counter() - t0
    ok = eta <= 1e-12 and smin >= -1e-10 and rt <= 10
    criterion(5, "stage-3 signs", ok, f"traces={n_traces} max_eta={eta:.2e} min_S/y={smin:.3e}", rt, 10)
    assert ok


def test_c06_stage2(criterion):
    t0 = time.perf_counter()
    g = mesh.build_grid((0, 1), 129)
    out, ok = [], True
    for label, kw in (("heat", {}), ("drift", {"a": 1.0, "B": 0.5}),
                      ("variable", {"A": lambda x: 1 + 0.5 * x, "a": -1.0, "B": 0.5})):
        c = mesh.coefficients(g, **kw)
        fam, s = _family_and_s(g, c)
        for datum in ("mode:1", "random:1"):
            ft = frequency.compute_trace(solver.solve(idat.named_datum(g, datum), c, 1.0, 1e-3), fam, s, 0.1)
            rep = frequency.check_stage2(ft)
            if label == "heat":
                # a = B = 0: the first inequality is |y'/2 + N y| <= slack
                ok &= rep.details["first_inequality"]
            else:
                ok &= rep.details["first_inequality"] and rep.details["second_inequality"]
            out.append(rep.details["max_ratio_first"])
    rt = time.perf_counter() - t0
    ok = ok and rt <= 10
    criterion(6, "stage-2 inequalities", ok, f"traces={len(out)} max_ratio_to_slack={max(out):.3f}", rt, 10)
    assert ok


def test_c07_ode_lemma(criterion):
    t0 = time.perf_counter()
    inst = odelemma.OdeLemmaInput(T=2.0, h=1.0, y=lambda t: np.exp(-t), N=lambda t: 0.5 + 0 * t,
                                  F1=lambda t: 0 * t, F2=lambda t: 0 * t, S0=0.0, S1=0.0,
                                  t1=0.0, t2=1.0, t3=2.0)
    M0 = odelemma.compute_M0(inst)
    exp_ok = odelemma.check_conclusion(inst, 6.0).passed
    fails = 0
    for seed in range(100):
        inp = odelemma.constructive_sample(seed)
        m = odelemma.compute_M0(inp)
        fails += sum(not odelemma.check_conclusion(inp, M).passed for M in (m, 2 * m))
    rt = time.perf_counter() - t0
    ok = abs(M0 - 5.1286) <= 1e-3 and exp_ok and fails == 0 and rt <= 5
    criterion(7, "ODE lemma", ok, f"M0={M0:.5f} exp_instance={exp_ok} sampler_failures={fails}/200", rt, 5)
    assert ok


def test_c08_interpolation_fit(criterion):
    t0 = time.perf_counter()
    g = mesh.build_grid((0, 1), 129)
    c = mesh.coefficients(g)
    specs = [f"mode:{k}" for k in range(8)] + [f"random:{s}" for s in range(1, 5)]
    runs = [solver.solve(idat.named_datum(g, s), c, 1.0, 1e-3) for s in specs]
    hold = [solver.solve(idat.named_datum(g, f"random:{s}"), c, 1.0, 1e-3) for s in range(101, 105)]
    fit = ob.fit_interpolation_constants(runs, (0.4, 0.6), 0.5, holdout=hold, slack=2.0)
    rt = time.perf_counter() - t0
    ok = fit.valid and fit.passed and len(fit.holdout_residuals) == 4 and rt <= 30
    criterion(8, "interpolation fit", ok,
              f"beta={fit.beta:.3f} K={fit.K:.4f} holdout_margin={fit.holdout_margin:.3f}", rt, 30)
    assert ok


def test_c09_ledger_arithmetic(criterion):
    t0 = time.perf_counter()
    L = ob.ConstantLedger(beta=0.5, K=1.0, K3=1.0, K4=1.0, lam=1.0, a_inf=0.0, B_inf=0.0, T=1.0, N=1)
    ells = ob.telescoping_sequence(0.0, 1.0, L.kappa, 41)
    cond = ob.measure_condition(ob.TimeSet(((0.0, 1.0),), 1.0), ells, 40)
    rt = time.perf_counter() - t0
    ok = (abs(L.alpha - 1) <= 1e-12 and abs(L.gamma - 2) <= 1e-12 and abs(L.theta - 2 / 3) <= 1e-12
          and abs(L.kappa - 1.154700) <= 1e-6 and abs(ells[2] - 0.866025) <= 1e-6
          and abs(ells[3] - 0.75) <= 1e-6 and len(cond) == 40 and bool(np.all(cond >= 0)) and rt <= 1)
    criterion(9, "ledger arithmetic", ok,
              f"kappa={L.kappa:.6f} l2={ells[2]:.6f} l3={ells[3]:.6f} min_condition={cond.min():.3e}", rt, 1)
    assert ok


def test_c10_observability(criterion):
    t0 = time.perf_counter()
    cfg = config.default_config()
    assert cfg.E == ((0.0, 0.5),) and cfg.box("omega") == (0.3, 0.7) and cfg.T == 1.0
    ctx = _Context(cfg, None)
    fit, nash, cut, ledger, seq = calibrate(ctx)
    finals, steps, ok = [], [], math.isfinite(ledger.log_C_obs) and seq.verified
    for s in range(201, 211):
        rep = ob.verify_observability(ctx.traj(f"random:{s}"), seq, cfg.box("omega"), ledger)
        ok &= rep.passed and [r["m"] for r in rep.telescoped] == list(range(2, 11))
        finals.append(rep.log_residual)
        steps.extend(r["log_residual"] for r in rep.telescoped)
    rt = time.perf_counter() - t0
    ok = ok and rt <= 60
    criterion(10, "observability", ok,
              f"log_C_obs={ledger.log_C_obs:.2f} max_final={max(finals):.2f} max_step={max(steps):.2f}", rt, 60)
    assert ok


def _log_residuals(u0, grid, coef, ledger, seq, fit):
    """Every log residual of the checked inequalities for one datum."""
    tr = solver.solve(u0, coef, 1.0, 1e-3)
    out = []
    for rep in (solver.check_energy_L2(tr), solver.check_energy_H1(tr)):
        out.extend(np.log(rep.lhs[1:] / rep.rhs[1:]))
    out.append(ob.interpolation_data(tr, (0.4, 0.6), 0.5).residual(fit.beta, fit.K))
    for row in ob.check_epsilon_forms(tr, ob.epsilon_form(ledger), (0.3, 0.7), (0.4, 0.6),
                                      [(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]):
        out.extend([row["log_residual_l2"], row["log_residual_l1"]])
    out.append(math.log(ob.nash_ratio(grid, tr.at(0.5), (0.3, 0.7), (0.4, 0.6))))
    rep = ob.verify_observability(tr, seq, (0.3, 0.7), ledger)
    out.append(rep.log_residual)
    out.extend(r["log_residual"] for r in rep.telescoped)
    fam, s = _family_and_s(grid, coef)
    ft = frequency.compute_trace(tr, fam, s, 0.1, stride=10)
    st2 = frequency.check_stage2(ft).details
    out.extend([st2["max_ratio_first"], st2["max_ratio_second"], frequency.stage4_log_gap(ft, 2.0, 10.0)])
    return np.array(out, dtype=float)


def test_c11_homogeneity(criterion):
    t0 = time.perf_counter()
    cfg = config.default_config()
    ctx = _Context(cfg, None)
    fit, nash, cut, ledger, seq = calibrate(ctx)
    g = ctx.grid
    coef = mesh.coefficients(g, a=1.0, B=0.5)
    u0 = idat.named_datum(g, "random:9")
    r1 = _log_residuals(u0, g, coef, ledger, seq, fit)
    r3 = _log_residuals(3 * u0, g, coef, ledger, seq, fit)
    same_inf = np.isinf(r1) == np.isinf(r3)
    fin = np.isfinite(r1)
    drift = float(np.max(np.abs(r1[fin] - r3[fin])))
    rt = time.perf_counter() - t0
    ok = bool(np.all(same_inf)) and drift <= 1e-9 and rt <= 5
    criterion(11, "homogeneity", ok, f"residuals={len(r1)} max_drift={drift:.2e}", rt, 5)
    assert ok


def test_c12_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        proc = subprocess.run([sys.executable, "-m", "neumann_uc", "all", "--out", str(out)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        blobs.append((out / "report.json").read_bytes())
    rt = time.perf_counter() - t0
    ok = blobs[0] == blobs[1] and rt <= 120
    criterion(12, "determinism", ok, f"report_bytes={len(blobs[0])} identical={blobs[0] == blobs[1]}", rt, 120)
    assert ok
