import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from neumann_uc import initial_data as idat
from neumann_uc import mesh, solver
from neumann_uc import observability as ob

OMEGA, OMEGA_T = (0.3, 0.7), (0.4, 0.6)


def _ledger(**kw):
    base = dict(beta=0.5, K=1.0, K3=1.0, K4=1.0, lam=1.0, a_inf=0.0, B_inf=0.0, T=1.0, N=1)
    base.update(kw)
    return ob.ConstantLedger(**base)


@pytest.fixture(scope="module")
def grid():
    return mesh.build_grid((0, 1), 129)


@pytest.fixture(scope="module")
def heat_runs(grid):
    c = mesh.coefficients(grid)
    specs = [f"mode:{k}" for k in range(8)] + [f"random:{s}" for s in range(1, 5)]
    return [solver.solve(idat.named_datum(grid, sp), c, 1.0, 1e-3) for sp in specs]


# --------------------------------------------------------------------------
# ledger arithmetic


def test_ledger_half_beta_one_dimension():
    L = _ledger()
    assert L.alpha == pytest.approx(1.0)
    assert L.gamma == pytest.approx(2.0)
    assert L.theta == pytest.approx(2 / 3)
    assert abs(L.kappa - 1.154700) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99), st.sampled_from([1, 2, 3]))
def test_kappa_identity(beta, N):
    L = _ledger(beta=beta, N=N)
    assert L.kappa**2 * (L.gamma + 1) == pytest.approx(L.gamma + 2)
    assert L.kappa > 1


def test_ledger_log_consistency():
    L = _ledger(K=2.0, K3=0.5, K4=3.0, lam=2.0, a_inf=1.0, B_inf=0.5)
    lg = L.log
    assert list(lg) == [f"K{i}" for i in range(1, 11)]
    assert lg["K2"] == pytest.approx(math.log(2.0 / (2 * 0.5)))
    assert lg["K9"] == pytest.approx(math.log(1.75 * L.K2))
    assert lg["K6"] == pytest.approx(lg["K3"] + 0.5 * (lg["K3"] + lg["K4"] + lg["K5"]))
    d = L.to_dict()
    assert d["K3"] == pytest.approx(0.5) and d["K2_mode"] == "derived"


def test_ledger_literal_mode():
    d, lit = _ledger(K=2.0), _ledger(K=2.0, K2_mode="literal")
    assert lit.K2 == pytest.approx(math.exp(d.K2))
    assert lit.log["K2"] == pytest.approx(d.K2)
    with pytest.raises(ValueError):
        _ledger(K2_mode="other")


def test_ledger_rejects_bad_inputs():
    with pytest.raises(ob.ObservabilityError):
        _ledger(beta=1.0)
    with pytest.raises(ob.ObservabilityError):
        _ledger(K3=0.0)
    with pytest.raises(ob.ObservabilityError):
        _ledger().with_sequence(0.5, 0.4)


def test_overflowing_constants_are_null():
    L = _ledger(K=2000.0).with_sequence(0.25, 0.9)
    d = L.to_dict()
    assert d["K1"] is None and math.isfinite(d["log"]["K1"])


# --------------------------------------------------------------------------
# time sets and the sequence


def test_sequence_values():
    k = _ledger().kappa
    L = ob.telescoping_sequence(0.0, 1.0, k, 3)
    assert L[0] == 0.0 and L[1] == 1.0
    assert abs(L[2] - 0.866025) < 1e-6
    assert abs(L[3] - 0.75) < 1e-6


def test_full_measure_condition_holds():
    E = ob.TimeSet(((0.0, 1.0),), 1.0)
    L = ob.telescoping_sequence(0.0, 1.0, _ledger().kappa, 41)
    sl = ob.measure_condition(E, L, 40)
    assert len(sl) == 40 and np.all(sl >= 0)


def test_sequence_selection_half_interval():
    E = ob.TimeSet(((0.0, 0.5),), 1.0)
    seq = ob.select_telescoping_sequence(E, 1.288)
    assert seq.verified and seq.ell0 == 0.25
    assert 0.25 < seq.ell1 < 1.0
    assert seq.ell(1) == pytest.approx(seq.ell1)
    assert np.all(np.diff(seq.ells[1:]) < 0)


def test_sequence_selection_fails_for_thin_set_with_floor():
    E = ob.TimeSet(((0.0, 0.01),), 1.0)
    with pytest.raises(ob.ObservabilityError):
        ob.select_telescoping_sequence(E, 1.288, search_floor=0.5)


def test_timeset_validation():
    with pytest.raises(ob.ObservabilityError):
        ob.TimeSet(((0.2, 0.6), (0.5, 0.8)), 1.0)
    with pytest.raises(ob.ObservabilityError):
        ob.TimeSet(((0.5, 1.5),), 1.0)
    E = ob.TimeSet(((0.6, 0.8), (0.1, 0.2)), 1.0)
    assert E.intervals[0] == (0.1, 0.2)
    assert E.measure == pytest.approx(0.3)
    assert E.measure_in(0.15, 0.7) == pytest.approx(0.15)
    assert E.density_point() == pytest.approx(0.7)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.45), st.floats(0.55, 1.0), st.floats(-2, 2), st.floats(-2, 2))
def test_integrate_on_set_is_exact_for_linear(a, b, p, q):
    t = np.linspace(0, 1, 11)
    E = ob.TimeSet(((a, b),), 1.0)
    got = ob.integrate_on_set(t, p + q * t, E, 0.0, 1.0)
    want = p * (b - a) + 0.5 * q * (b * b - a * a)
    assert got == pytest.approx(want, abs=1e-12)


# --------------------------------------------------------------------------
# cutoff and Nash/Poincare


def test_cutoff_properties(grid):
    cut = ob.build_cutoff(grid, OMEGA, OMEGA_T)
    x = grid.x
    assert np.all((cut.field >= 0) & (cut.field <= 1))
    assert np.allclose(cut.field[(x >= 0.4) & (x <= 0.6)], 1.0)
    assert np.allclose(cut.field[(x <= 0.3) | (x >= 0.7)], 0.0)
    assert cut.width == pytest.approx(0.1)
    # quintic ramp has peak slope 15/8 per unit width
    assert cut.K4 == pytest.approx(1.875 / 0.1, rel=1e-2)
    assert np.allclose(np.gradient(cut.field, x)[2:-2], cut.grad[0][2:-2], atol=0.5)


def test_cutoff_requires_gap(grid):
    with pytest.raises(ob.ObservabilityError):
        ob.build_cutoff(grid, (0.4, 0.6), (0.4, 0.6))


def test_nash_zero_is_vacuous(grid):
    fit = ob.nash_poincare_check(grid, [np.zeros(grid.shape)], OMEGA, OMEGA_T)
    assert fit.n_vacuous == 1 and fit.K3 == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_nash_ratio_homogeneous(c):
    g = mesh.build_grid((0, 1), 65)
    f = np.sin(np.pi * g.x) + 0.3 * np.cos(3 * g.x)
    r1 = ob.nash_ratio(g, f, OMEGA, OMEGA_T)
    assert ob.nash_ratio(g, c * f, OMEGA, OMEGA_T) == pytest.approx(r1, rel=1e-10)


def test_nash_sine_narrow_region():
    g = mesh.build_grid((0, 1), 257)
    fit = ob.nash_poincare_check(g, [np.sin(np.pi * g.x)], OMEGA, (0.45, 0.55))
    assert 0 < fit.K3 < np.inf and fit.theta == pytest.approx(2 / 3)


# --------------------------------------------------------------------------
# interpolation fit


def test_interpolation_fit_and_holdout(grid, heat_runs):
    c = mesh.coefficients(grid)
    hold = [solver.solve(idat.named_datum(grid, f"random:{s}"), c, 1.0, 1e-3) for s in (101, 102)]
    fit = ob.fit_interpolation_constants(heat_runs, (0.4, 0.6), 0.5, holdout=hold)
    assert fit.valid and fit.passed
    assert fit.n_fit == len(heat_runs)
    assert np.max(fit.residuals) == pytest.approx(0.0, abs=1e-12)


def test_fit_invariant_under_scaling(grid, heat_runs):
    c = mesh.coefficients(grid)
    scaled = [solver.solve(2 * r.u[0], c, 1.0, 1e-3) for r in heat_runs]
    a = ob.fit_interpolation_constants(heat_runs, (0.4, 0.6), 0.5)
    b = ob.fit_interpolation_constants(scaled, (0.4, 0.6), 0.5)
    assert b.K == pytest.approx(a.K, rel=1e-9)


def test_zero_runs_rejected(grid):
    c = mesh.coefficients(grid)
    z = solver.solve(np.zeros(grid.shape), c, 1.0, 0.1)
    assert ob.interpolation_data(z, (0.4, 0.6), 0.5) is None
    with pytest.raises(ob.ObservabilityError):
        ob.fit_interpolation_constants([z], (0.4, 0.6), 0.5)


def test_support_in_observation_region(grid):
    c = mesh.coefficients(grid)
    u0 = np.where((grid.x > 0.45) & (grid.x < 0.55), 1.0, 0.0)
    tr = solver.solve(u0, c, 1.0, 1e-3)
    d = ob.interpolation_data(tr, (0.4, 0.6), 0.01)
    # mass stays mostly in the region at early times, so the fit needs a small K only
    assert d.Y - d.Z < 1.0


# --------------------------------------------------------------------------
# the observability inequality


@pytest.fixture(scope="module")
def chain(grid, heat_runs):
    c = mesh.coefficients(grid)
    times = np.linspace(0.1, 1.0, 10)
    fit = ob.fit_interpolation_constants(heat_runs, OMEGA_T, times)
    cut = ob.build_cutoff(grid, OMEGA, OMEGA_T)
    snaps = [r.at(t) for r in heat_runs for t in (0.0, *times)]
    nash = ob.nash_poincare_check(grid, snaps, OMEGA, OMEGA_T, cut)
    led = ob.build_ledger(fit, nash, cut, c, 1.0)
    E = ob.TimeSet(((0.0, 0.5),), 1.0)
    seq = ob.select_telescoping_sequence(E, led.kappa)
    return led.with_sequence(seq.ell0, seq.ell1), seq


def test_observability_random_data(grid, chain):
    led, seq = chain
    c = mesh.coefficients(grid)
    assert led.log_C_obs is not None and math.isfinite(led.log_C_obs)
    for s in range(3):
        tr = solver.solve(idat.named_datum(grid, f"random:{500 + s}"), c, 1.0, 1e-3)
        rep = ob.verify_observability(tr, seq, OMEGA, led)
        assert rep.passed, rep.to_dict()
        assert [r["m"] for r in rep.telescoped] == list(range(2, 11))


def test_observability_constant_datum_closed_form(grid, chain):
    led, seq = chain
    tr = solver.solve(np.ones(grid.shape), mesh.coefficients(grid), 1.0, 1e-2)
    rep = ob.verify_observability(tr, seq, OMEGA, led)
    assert rep.norm_T == pytest.approx(1.0, rel=1e-10)
    assert rep.integral == pytest.approx(0.4 * 0.5, rel=1e-10)
    assert rep.log_residual == pytest.approx(-(led.log_C_obs + math.log(0.2)), rel=1e-10)


def test_observability_needs_stamps(grid, chain):
    led, _ = chain
    tr = solver.solve(np.ones(grid.shape), mesh.coefficients(grid), 1.0, 0.1)
    E = ob.TimeSet(((0.0, 0.2),), 1.0)
    seq = ob.select_telescoping_sequence(E, led.kappa)
    with pytest.raises(ob.ObservabilityError, match="stamps"):
        ob.verify_observability(tr, seq, OMEGA, led.with_sequence(seq.ell0, seq.ell1))


def test_observability_rejects_mismatched_kappa(grid, chain):
    led, _ = chain
    seq = ob.select_telescoping_sequence(ob.TimeSet(((0.0, 0.5),), 1.0), led.kappa * 1.1)
    tr = solver.solve(np.ones(grid.shape), mesh.coefficients(grid), 1.0, 1e-2)
    with pytest.raises(ob.ObservabilityError):
        ob.verify_observability(tr, seq, OMEGA, led.with_sequence(seq.ell0, seq.ell1))


def test_thin_time_set_gives_log_constant(grid, chain):
    led, _ = chain
    E = ob.TimeSet(((0.49, 0.51),), 1.0)
    seq = ob.select_telescoping_sequence(E, led.kappa)
    thin = led.with_sequence(seq.ell0, seq.ell1)
    assert math.isfinite(thin.log_C_obs) and thin.log_C_obs > led.log_C_obs


def test_epsilon_forms(grid, chain):
    led, _ = chain
    tr = solver.solve(idat.named_datum(grid, "random:7"), mesh.coefficients(grid), 1.0, 1e-3)
    rows = ob.check_epsilon_forms(tr, ob.epsilon_form(led), OMEGA, OMEGA_T,
                                  [(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)])
    assert len(rows) == 9 and all(r["passed"] for r in rows)
