"""Symmetric / antisymmetric parts of the weighted parabolic operator.

For a weight ``Phi = s phi / Gamma`` the conjugated operator splits into

    A f  = -A grad Phi . grad f - div(A grad Phi) f / 2
    S f  = -div(A grad f) - eta f,      eta = dPhi/dt / 2 + A grad Phi . grad Phi / 4
    S' f = -(d eta/dt) f

and the functions here evaluate those parts on a grid together with the
integral identities they satisfy (integration by parts with boundary terms).
Residuals are normalised by ``|f|^2 + |grad f|^2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import mesh
from .weights import CarlemanWeight, WeightFields, eval_Phi_eta


@dataclass(frozen=True)
class CommutatorParts:
    Af: np.ndarray
    Sf: np.ndarray
    Spf: np.ndarray
    weight: WeightFields
    div_A_grad_Phi: np.ndarray  # flux form with exact boundary flux
    flux_f: np.ndarray  # A grad f . n at boundary entries
    flux_Phi: np.ndarray  # A grad Phi . n at boundary entries
    grad_f: np.ndarray


def _weight_fields(cw, coef, t, phi_override):
    if phi_override is None:
        return eval_Phi_eta(cw, t, coef), cw.family.grad_phi(cw.index)
    g = coef.grid
    phi = np.asarray(phi_override, dtype=float)
    if phi.shape != g.shape:
        raise ValueError("phi override must be a scalar field")
    gphi = mesh.grad(g, phi)
    return eval_Phi_eta(cw, t, coef, phi=phi, grad_phi=gphi, hess_phi=mesh.hessian(g, phi)), gphi


def apply_commutator_parts(f, cw: CarlemanWeight, coef: mesh.CoefficientSet, t: float,
                           phi=None) -> CommutatorParts:
    """Evaluate ``A f``, ``S f`` and ``S' f`` at time ``t``.

    ``div(A grad Phi)`` uses the flux-form stencil closed by the exact conormal
    flux of ``Phi``; ``div(A grad f)`` is closed by the one-sided flux of ``f``.
    Neither field is assumed to satisfy a zero-flux condition.
    """
    g = coef.grid
    f = np.asarray(f, dtype=float)
    wf, _ = _weight_fields(cw, coef, t, phi)
    AgPhi = mesh.matvec_field(coef.A, wf.grad_Phi)
    flux_Phi = mesh.normal_component(g, AgPhi)
    divPhi = mesh.div_A_grad(g, wf.Phi, coef, boundary_flux=flux_Phi)
    gf = mesh.grad(g, f)
    flux_f = mesh.normal_component(g, mesh.matvec_field(coef.A, gf))
    divf = mesh.div_A_grad(g, f, coef, boundary_flux=flux_f)
    Af = -mesh.dot(AgPhi, gf) - 0.5 * divPhi * f
    Sf = -divf - wf.eta * f
    Spf = -wf.deta_dt * f
    return CommutatorParts(Af, Sf, Spf, wf, divPhi, flux_f, flux_Phi, gf)


def h1_norm2(grid, f, gf=None) -> float:
    gf = mesh.grad(grid, f) if gf is None else gf
    return mesh.inner(grid, f, f) + mesh.inner(grid, gf, gf)


def _normalise(res, scale):
    return abs(res) / scale if scale > 0 else abs(res)


def check_identity_i_ii(f, parts: CommutatorParts, coef: mesh.CoefficientSet) -> dict:
    """Residuals of the two first-order identities.

    (i)  int A f . f = -1/2 int_bdry (A grad Phi . n) f^2
    (ii) int S f . f = int A grad f . grad f - int eta f^2 - int_bdry (A grad f . n) f
    """
    g = coef.grid
    f = np.asarray(f, dtype=float)
    ftr = mesh.boundary_trace(g, f)
    lhs1 = mesh.inner(g, parts.Af, f)
    rhs1 = -0.5 * mesh.boundary_integral(g, parts.flux_Phi * ftr**2)
    Agf = mesh.matvec_field(coef.A, parts.grad_f)
    lhs2 = mesh.inner(g, parts.Sf, f)
    rhs2 = (mesh.inner(g, Agf, parts.grad_f) - mesh.inner(g, parts.weight.eta * f, f)
            - mesh.boundary_integral(g, parts.flux_f * ftr))
    scale = h1_norm2(g, f, parts.grad_f)
    return {
        "i": {"lhs": lhs1, "rhs": rhs1, "residual": _normalise(lhs1 - rhs1, scale)},
        "ii": {"lhs": lhs2, "rhs": rhs2, "residual": _normalise(lhs2 - rhs2, scale)},
    }


def identity_iii_terms(f, cw: CarlemanWeight, coef: mesh.CoefficientSet, t: float, phi=None) -> dict:
    """Every term of the expansion of ``int S'f f + 2 int S f A f``.

    Boundary terms ``b1..b4``, volume terms ``v1..v4`` and the ``-2/Gamma`` block.
    Index contractions are written out over ``i, j, k, l``.
    """
    g = coef.grid
    dim = g.dim
    f = np.asarray(f, dtype=float)
    wf, gphi = _weight_fields(cw, coef, t, phi)
    A, dA = coef.A, coef.dA  # dA[m, i, j] = d_m A_ij
    G = wf.Gamma
    s = cw.s
    gf = mesh.grad(g, f)
    gP = wf.grad_Phi
    HP = wf.hess_Phi
    Hphi = HP * G / s
    Agf = mesh.matvec_field(A, gf)
    AgP = mesh.matvec_field(A, gP)

    # pointwise div(A grad Phi) = d_i A_ij d_j Phi + A_ij d_ij Phi
    divP = np.zeros(g.shape)
    for i in range(dim):
        for j in range(dim):
            divP += dA[i, i, j] * gP[j] + A[i, j] * HP[i, j]
    grad_divP = mesh.grad(g, divP)

    v1 = np.zeros(g.shape)
    v2 = np.zeros(g.shape)
    v3 = np.zeros(g.shape)
    c1 = np.zeros(g.shape)
    c2 = np.zeros(g.shape)
    for i in range(dim):
        for j in range(dim):
            for k in range(dim):
                for l in range(dim):
                    v1 += A[i, j] * gf[j] * dA[i, k, l] * gf[l] * gP[k]
                    v2 += dA[l, i, j] * gf[j] * A[k, l] * gf[i] * gP[k]
                    v3 += A[i, j] * HP[j, k] * A[k, l] * gf[l] * gf[i]
                    c1 += A[i, j] * gphi[j] * dA[i, k, l] * gP[l] * gP[k]
                    c2 += A[i, j] * Hphi[j, k] * A[k, l] * gP[l] * gP[i]
    v4 = mesh.dot(Agf, grad_divP) * f
    block = wf.eta + 0.25 * mesh.dot(AgP, gP) + (s / 8) * c1 + (s / 4) * c2

    tr = lambda v: mesh.boundary_trace(g, v)  # noqa: E731
    fn = mesh.normal_component(g, Agf)
    Pn = mesh.normal_component(g, AgP)
    bi = lambda v: mesh.boundary_integral(g, v)  # noqa: E731
    terms = {
        "b1": 2 * bi(fn * tr(mesh.dot(AgP, gf))),
        "b2": -bi(Pn * tr(mesh.dot(Agf, gf))),
        "b3": bi(fn * tr(divP) * tr(f)),
        "b4": bi(Pn * tr(wf.eta) * tr(f) ** 2),
        "v1": -2 * mesh.inner(g, v1, 1.0 + 0 * f),
        "v2": mesh.inner(g, v2, 1.0 + 0 * f),
        "v3": -2 * mesh.inner(g, v3, 1.0 + 0 * f),
        "v4": -mesh.inner(g, v4, 1.0 + 0 * f),
        "block": -(2 / G) * mesh.inner(g, block * f, f),
    }
    return terms


def check_identity_iii(f, cw: CarlemanWeight, coef: mesh.CoefficientSet, t: float, phi=None) -> dict:
    g = coef.grid
    f = np.asarray(f, dtype=float)
    parts = apply_commutator_parts(f, cw, coef, t, phi=phi)
    lhs = mesh.inner(g, parts.Spf, f) + 2 * mesh.inner(g, parts.Sf, parts.Af)
    terms = identity_iii_terms(f, cw, coef, t, phi=phi)
    rhs = float(sum(terms.values()))
    return {"lhs": lhs, "rhs": rhs, "terms": terms,
            "residual": _normalise(lhs - rhs, h1_norm2(g, f, parts.grad_f))}


def symmetry_defect(f, gfun, cw, coef, t) -> float:
    """``<S f, g> - <f, S g>`` minus its boundary correction, normalised."""
    grid = coef.grid
    pf = apply_commutator_parts(f, cw, coef, t)
    pg = apply_commutator_parts(gfun, cw, coef, t)
    corr = (-mesh.boundary_integral(grid, pf.flux_f * mesh.boundary_trace(grid, gfun))
            + mesh.boundary_integral(grid, pg.flux_f * mesh.boundary_trace(grid, f)))
    d = mesh.inner(grid, pf.Sf, gfun) - mesh.inner(grid, f, pg.Sf) - corr
    return abs(d) / np.sqrt(h1_norm2(grid, f) * h1_norm2(grid, gfun))


def check_pairing_cancellation(fvec, w, coef: mesh.CoefficientSet, s, h, T, t, indices=None) -> float:
    """Sum over weights of ``int_bdry (A grad Phi_k . n) f_k^2``.

    ``indices`` maps each entry of ``fvec`` to a weight index (default: in order),
    which allows deliberately unpaired configurations.
    """
    g = coef.grid
    if indices is None:
        if len(fvec) != w.n_weights:
            raise ValueError(f"expected {w.n_weights} fields, got {len(fvec)}")
        indices = range(w.n_weights)
    total = 0.0
    for fk, k in zip(fvec, indices):
        G = T - t + h
        gP = s * w.grad_phi(k) / G
        Pn = mesh.normal_component(g, mesh.matvec_field(coef.A, gP))
        total += mesh.boundary_integral(g, Pn * mesh.boundary_trace(g, fk) ** 2)
    return float(total)


def refinement_study(make_case, ns=(129, 257, 513)) -> list[dict]:
    """Residual records ``{identity, n, residual, order_estimate}`` over grid sizes.

    ``make_case(n)`` returns ``(f, cw, coef, t)`` on an ``n``-point grid.
    """
    res = {"i": [], "ii": [], "iii": []}
    for n in ns:
        f, cw, coef, t = make_case(n)
        parts = apply_commutator_parts(f, cw, coef, t)
        r12 = check_identity_i_ii(f, parts, coef)
        res["i"].append(r12["i"]["residual"])
        res["ii"].append(r12["ii"]["residual"])
        res["iii"].append(check_identity_iii(f, cw, coef, t)["residual"])
    out = []
    for name, vals in res.items():
        for k, (n, r) in enumerate(zip(ns, vals)):
            order = None
            if k > 0 and vals[k] > 0 and vals[k - 1] > 0:
                order = float(np.log(vals[k - 1] / vals[k]) / np.log((ns[k] - 1) / (ns[k - 1] - 1)))
            out.append({"identity": name, "n": int(n), "residual": float(r), "order_estimate": order})
    return out


def residual_records_json(records) -> str:
    return json.dumps(records, indent=2)
