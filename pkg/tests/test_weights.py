import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from neumann_uc import mesh, weights


@pytest.fixture(scope="module")
def fam1():
    g = mesh.build_grid((0, 1), 257)
    return weights.build_weight_family(g, (0.4, 0.6))


def test_family_1d_morse(fam1):
    rep = weights.verify_morse_properties(fam1)
    assert rep["passed"], rep
    assert np.isclose(fam1.p[0][0], 0.5)
    assert np.isclose(fam1.r, 0.1)


def test_family_2d_morse():
    g = mesh.build_grid(((0, 1), (0, 1)), 65)
    w = weights.build_weight_family(g, ((0.4, 0.6), (0.4, 0.6)))
    assert weights.verify_morse_properties(w)["passed"]
    c = weights.estimate_geometry_constants(w)
    for k in ("c1", "c2", "c4", "c5", "c6"):
        assert c[k] > 0


def test_weights_nonpositive_with_zero_max(fam1):
    for k in range(fam1.n_weights):
        phi = fam1.phi(k)
        assert phi.max() <= 1e-14
    assert np.isclose(fam1.phi(0).max(), 0.0)


def test_geometry_constants_positive(fam1):
    c = weights.estimate_geometry_constants(fam1)
    assert c["c3"] == "vacuous"
    assert all(c[k] > 0 for k in ("c1", "c2", "c4", "c5", "c6", "mu"))


def test_rejects_region_on_boundary():
    g = mesh.build_grid((0, 1), 65)
    with pytest.raises(weights.WeightError):
        weights.build_weight_family(g, (0.0, 0.3))


def test_rejects_multiplicity():
    g = mesh.build_grid((0, 1), 65)
    with pytest.raises(weights.WeightError, match="multiplicity"):
        weights.build_weight_family(g, (0.4, 0.6), d=2)


def test_profile_derivatives_match_differences():
    x = np.linspace(0.01, 0.99, 2001)
    psi, d1, d2 = weights.rational_sine(x, 0.5)
    assert np.allclose(np.gradient(psi, x)[5:-5], d1[5:-5], atol=1e-5)
    assert np.allclose(np.gradient(d1, x)[5:-5], d2[5:-5], atol=1e-4)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.05, 1.0))
def test_eta_nonpositive_below_s_star(t, h):
    g = mesh.build_grid((0, 1), 129)
    w = weights.build_weight_family(g, (0.4, 0.6))
    c = mesh.coefficients(g, A=lambda x: 1 + 0.5 * x)
    s = weights.max_admissible_s(w, c.lam)
    for k in range(w.n_weights):
        wf = weights.eval_Phi_eta(weights.CarlemanWeight(w, k, s, h, 1.0), t, c)
        assert wf.eta.max() <= 1e-12


def test_time_derivatives_of_weight(fam1):
    g = fam1.grid
    c = mesh.coefficients(g)
    cw = weights.CarlemanWeight(fam1, 0, 0.1, 0.1, 1.0)
    t, d = 0.4, 1e-5
    a, b, m = (weights.eval_Phi_eta(cw, tt, c) for tt in (t - d, t + d, t))
    assert np.allclose((b.Phi - a.Phi) / (2 * d), m.dPhi_dt, rtol=1e-6, atol=1e-9)
    assert np.allclose(m.dPhi_dt, m.Phi / m.Gamma)
    assert np.allclose((b.eta - a.eta) / (2 * d), m.deta_dt, rtol=1e-6, atol=1e-8)
    assert np.allclose(m.deta_dt, 2 * m.eta / m.Gamma)


def test_carleman_weight_validation(fam1):
    with pytest.raises(ValueError):
        weights.CarlemanWeight(fam1, 0, 1.5, 0.1, 1.0)
    with pytest.raises(ValueError):
        weights.CarlemanWeight(fam1, 0, 0.5, 0.0, 1.0)


def test_family_from_psi_matches_builder():
    g = mesh.build_grid((0, 1), 257)
    psi, _, _ = weights.rational_sine(g.x, 0.5)
    psi[g.boundary_mask] = 0.0  # sin(pi) rounding
    w = weights.family_from_psi(g, psi, (0.4, 0.6), r=0.1)
    assert weights.verify_morse_properties(w)["passed"]


def test_two_bumps_fail_unique_max():
    g = mesh.build_grid((0, 1), 257)
    psi = np.sin(2 * np.pi * g.x) ** 2
    w = weights.family_from_psi(g, psi, (0.15, 0.35))
    rep = weights.verify_morse_properties(w)
    assert not rep["passed"]
    assert not rep["unique_global_max_at_p"]


def test_export_csv(tmp_path, fam1):
    weights.export_csv(fam1, tmp_path / "w.csv")
    head = (tmp_path / "w.csv").read_text().splitlines()[0]
    assert head.startswith("node,x,psi,phi1,phi2")
