"""Explicit Morse weight families and the time-dependent Carleman weights.

The 1D bump is ``psi(x) = sin(pi * T_p(xi))`` where ``xi`` maps the interval
onto ``[0, 1]`` and ``T_p(xi) = xi / (xi + c (1 - xi))`` with ``c = p/(1-p)``
moves the maximum of the sine from ``1/2`` to ``p``.  On a rectangle the
bump is the tensor product of two such profiles.  Every derivative is
available in closed form, so the geometric ratios that drive the weighted
estimates can be tabulated exactly at the nodes.

Weights are indexed ``k = 0 .. 2d-1``: ``k < d`` gives ``phi_{k,1} = psi_k - max psi``
and ``k >= d`` gives ``phi_{k-d,2} = -psi_{k-d} - max psi``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import mesh

COLLAR_RATIO_CAP = 100.0


class WeightError(ValueError):
    pass


# --------------------------------------------------------------------------
# 1D profile


def _profile(xi, phat, L):
    """psi, psi', psi'' (physical derivatives) of the reparametrised sine."""
    c = phat / (1.0 - phat)
    den = xi + c * (1.0 - xi)
    T = xi / den
    T1 = c / den**2
    T2 = -2.0 * c * (1.0 - c) / den**3
    s, co = np.sin(np.pi * T), np.cos(np.pi * T)
    psi = s
    d1 = np.pi * co * T1 / L
    d2 = (-np.pi**2 * s * T1**2 + np.pi * co * T2) / L**2
    return psi, d1, d2


def rational_sine(x, p, extent=(0.0, 1.0)):
    """Closed-form 1D bump with maximum 1 at ``p``; returns ``(psi, psi', psi'')``."""
    a, b = extent
    L = b - a
    xi = (np.asarray(x, dtype=float) - a) / L
    return _profile(xi, (p - a) / L, L)


# --------------------------------------------------------------------------
# family


@dataclass
class WeightFamily:
    grid: mesh.Grid
    d: int
    p: np.ndarray  # (d, dim) critical points
    psi: np.ndarray  # (d, *shape)
    grad_psi: np.ndarray  # (d, dim, *shape)
    hess_psi: np.ndarray  # (d, dim, dim, *shape)
    psi_max: np.ndarray  # (d,)
    morse_hessian: np.ndarray  # (d, dim, dim) Hessian of psi at p
    obs: np.ndarray  # observation node mask
    r: float
    analytic: bool = True
    collar_width: float | None = None
    B: np.ndarray = field(init=False)
    C: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)
    collar: np.ndarray = field(init=False)
    constants: dict = field(init=False)

    def __post_init__(self):
        g = self.grid
        dist = np.sqrt(sum((g.coords[k] - self.p[0][k]) ** 2 for k in range(g.dim)))
        self._dist_p = dist
        self.B = (dist < self.r) & ~g.boundary_mask
        self.C = np.zeros(g.shape, dtype=bool)
        self.D = ~g.boundary_mask & ~self.B & ~self.C
        self.collar = _collar(self, self.collar_width)
        self.constants = _geometry_constants(self)

    @property
    def n_weights(self) -> int:
        return 2 * self.d

    def _split(self, k):
        if not 0 <= k < 2 * self.d:
            raise IndexError(f"weight index {k} outside 0..{2 * self.d - 1}")
        return (k, 1.0) if k < self.d else (k - self.d, -1.0)

    def phi(self, k):
        i, sg = self._split(k)
        return sg * self.psi[i] - self.psi_max[i]

    def grad_phi(self, k):
        i, sg = self._split(k)
        return sg * self.grad_psi[i]

    def hess_phi(self, k):
        i, sg = self._split(k)
        return sg * self.hess_psi[i]

    @property
    def mu(self) -> float:
        """Gap ``-max phi_{1,1}`` outside the radius ``r`` ball around ``p``."""
        outside = self._dist_p >= self.r
        return float(-np.max(self.phi(0)[outside]))


def build_weight_family(grid: mesh.Grid, obs_region, d: int = 1, collar_width=None) -> WeightFamily:
    """Weight family with one bump peaked at the centroid of ``obs_region``.

    ``obs_region`` is a node mask (or a box accepted by :meth:`Grid.box_mask`).
    """
    if d != 1:
        raise WeightError(f"unsupported multiplicity d={d}: only d=1 is constructed")
    obs = np.asarray(obs_region)
    box = None
    if obs.dtype != bool:
        box = np.asarray(obs_region, dtype=float).reshape(grid.dim, 2)
        obs = grid.box_mask(obs_region)
    if obs.shape != grid.shape or not obs.any():
        raise WeightError("observation region is empty or not a node mask of this grid")
    if np.any(obs & grid.boundary_mask):
        raise WeightError("observation region touches the boundary")
    pts = grid.coords[:, obs]
    p = pts.mean(axis=1)
    hmax = max(grid.spacing)
    for k, (lo, hi) in enumerate(grid.extents):
        if min(p[k] - lo, hi - p[k]) <= 2 * grid.spacing[k]:
            raise WeightError(f"critical point {p} within 2h of the boundary")
    if box is not None:
        r = float(min(0.5 * (hi - lo) for lo, hi in box))
    else:
        r = float(min(min(p[k] - pts[k].min(), pts[k].max() - p[k]) for k in range(grid.dim)))
    if r <= 0:
        r = hmax

    profs = [rational_sine(grid.axes[k], p[k], grid.extents[k]) for k in range(grid.dim)]
    for pr in profs:
        pr[0][[0, -1]] = 0.0
    if grid.dim == 1:
        psi, d1, d2 = profs[0]
        psi_f = psi[None]
        grad_f = d1[None, None]
        hess_f = d2[None, None, None]
        H = np.array([[[rational_sine(np.array(p[0]), p[0], grid.extents[0])[2]]]])
    else:
        (px, dx1, dx2), (py, dy1, dy2) = profs
        P, Q = np.meshgrid(px, py, indexing="ij")
        P1, Q1 = np.meshgrid(dx1, dy1, indexing="ij")
        P2, Q2 = np.meshgrid(dx2, dy2, indexing="ij")
        psi_f = (P * Q)[None]
        grad_f = np.stack([P1 * Q, P * Q1])[None]
        hess_f = np.stack([np.stack([P2 * Q, P1 * Q1]), np.stack([P1 * Q1, P * Q2])])[None]
        hx = rational_sine(np.array(p[0]), p[0], grid.extents[0])[2]
        hy = rational_sine(np.array(p[1]), p[1], grid.extents[1])[2]
        H = np.array([[[hx, 0.0], [0.0, hy]]])
    return WeightFamily(grid, 1, p[None], psi_f, grad_f, hess_f, np.array([1.0]), H, obs, r,
                        analytic=True, collar_width=collar_width)


def family_from_psi(grid: mesh.Grid, psi, obs_region, r=None, collar_width=None) -> WeightFamily:
    """Family from arbitrary nodal ``psi`` with finite-difference derivatives.

    Meant for diagnostics and constructed counterexamples, since nothing
    about ``psi`` is assumed.  The critical point is the nodal argmax.
    """
    psi = np.asarray(psi, dtype=float)
    obs = np.asarray(obs_region)
    if obs.dtype != bool:
        obs = grid.box_mask(obs_region)
    gpsi = mesh.grad(grid, psi)
    hpsi = mesh.hessian(grid, psi)
    kmax = np.unravel_index(np.argmax(psi), grid.shape)
    p = grid.coords[(slice(None),) + kmax]
    H = hpsi[(slice(None), slice(None)) + kmax]
    if r is None:
        pts = grid.coords[:, obs]
        r = float(min(min(p[k] - pts[k].min(), pts[k].max() - p[k]) for k in range(grid.dim)))
        r = max(r, max(grid.spacing))
    return WeightFamily(grid, 1, p[None], psi[None], gpsi[None], hpsi[None], np.array([psi.max()]),
                        H[None], obs, r, analytic=False, collar_width=collar_width)


# --------------------------------------------------------------------------
# geometric constants


def _grad2(w, k):
    return np.sum(w.grad_phi(k) ** 2, axis=0)


def _near_p(w, tol_frac=1e-9):
    return w._dist_p <= tol_frac * max(hi - lo for lo, hi in w.grid.extents)


def _corner_zone(grid):
    if grid.dim == 1:
        return np.zeros(grid.shape, dtype=bool)
    side = 0.1 * min(hi - lo for lo, hi in grid.extents)
    near = [np.minimum(c - lo, hi - c) <= side for c, (lo, hi) in zip(grid.coords, grid.extents)]
    return near[0] & near[1]


def _collar(w, width=None):
    """Largest boundary collar on which ``|phi_2| <= cap |grad phi_2|^2`` holds."""
    g = w.grid
    dist = g.distance_to_boundary()
    if width is not None:
        return (dist < width) & ~_corner_zone(g)
    g2 = _grad2(w, w.d)
    with np.errstate(divide="ignore"):
        ratio = np.where(g2 > 0, np.abs(w.phi(w.d)) / g2, np.inf)
    bad = (ratio > COLLAR_RATIO_CAP) & ~_corner_zone(g)
    first_bad = float(dist[bad].min()) if bad.any() else np.inf
    return (dist < first_bad) & ~_corner_zone(g)


def _morse_eigs(w):
    ev = np.linalg.eigvalsh(-w.morse_hessian[0])
    return ev.min(), ev.max()


def _geometry_constants(w) -> dict:
    g = w.grid
    interior = ~g.boundary_mask
    mu_min, mu_max = _morse_eigs(w)
    skip = _near_p(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.abs(w.phi(0)) / _grad2(w, 0)
        r2 = np.abs(w.phi(w.d)) / _grad2(w, w.d)
    sel = interior & ~skip
    vals = r1[sel]
    morse_lo = 1.0 / (2 * mu_max) if mu_max > 0 else np.inf
    morse_hi = 1.0 / (2 * mu_min) if mu_min > 0 else np.inf
    c1 = float(min(np.min(vals), morse_lo))
    c2 = float(max(np.max(vals), morse_hi))
    c4 = float(np.min(r2[sel]))
    c5 = float(np.max(r2[w.collar])) if w.collar.any() else None
    rest = ~w.collar & interior & ~_corner_zone(g)
    c6 = float(np.min((w.phi(0) - w.phi(w.d))[rest])) if rest.any() else None
    return {"c1": c1, "c2": c2, "c3": None, "c4": c4, "c5": c5, "c6": c6,
            "mu": w.mu, "r": w.r, "morse_eigs": (float(mu_min), float(mu_max))}


def estimate_geometry_constants(w: WeightFamily) -> dict:
    """Constants ``c1..c6`` with the sets they were computed on.

    ``c3`` is ``None`` because the set where item (iv) applies is empty for a
    single bump.  Raises :class:`WeightError` when a required constant is not
    strictly positive and finite.
    """
    c = dict(w.constants)
    for key in ("c1", "c2", "c4", "c5", "c6", "mu"):
        v = c[key]
        if v is None or not np.isfinite(v) or v <= 0:
            raise WeightError(f"family rejected: {key}={v}")
    c["masks"] = {"B": w.B, "C": w.C, "D": w.D, "collar": w.collar}
    c["c3"] = "vacuous"
    return c


def verify_morse_properties(w: WeightFamily) -> dict:
    """Discrete checks of the Morse bump properties; failures are report entries."""
    g = w.grid
    hmin = min(g.spacing)
    out = {}
    psi = w.psi[0]
    interior = ~g.boundary_mask
    out["positive_inside_zero_on_boundary"] = bool(np.all(psi[interior] > 0) and np.all(psi[g.boundary_mask] == 0))
    gnorm = np.sqrt(np.sum(w.grad_psi[0] ** 2, axis=0))
    mu_min, mu_max = _morse_eigs(w)
    thresh = 0.25 * hmin * max(mu_min, 0.0)
    far = interior & (w._dist_p > 2 * max(g.spacing)) & ~_corner_zone(g)
    out["gradient_vanishes_only_at_p"] = bool(thresh > 0 and np.all(gnorm[far] >= thresh))
    out["min_gradient_away_from_p"] = float(gnorm[far].min()) if far.any() else None
    # unique global max: one discrete local max, located at the node nearest p
    kmax = np.unravel_index(np.argmax(psi), g.shape)
    knear = np.unravel_index(np.argmin(w._dist_p), g.shape)
    n_locmax = _count_local_maxima(psi)
    out["unique_global_max_at_p"] = bool(kmax == knear and n_locmax == 1)
    # second differences at the node nearest p
    Hd = _second_differences(g, psi, knear)
    out["nondegenerate_max"] = bool(np.all(np.linalg.eigvalsh(Hd) < 0))
    out["equal_maxima"] = True  # single bump
    out["passed"] = all(v for k, v in out.items() if isinstance(v, bool))
    return out


def _count_local_maxima(f):
    core = np.ones(f.shape, dtype=bool)
    for ax in range(f.ndim):
        fwd = np.diff(f, axis=ax)
        n = f.shape[ax]
        lower = [slice(None)] * f.ndim
        up = np.zeros(f.shape, dtype=bool)
        dn = np.zeros(f.shape, dtype=bool)
        lower[ax] = slice(1, n)
        up[tuple(lower)] = fwd > 0  # rising into this node
        lower[ax] = slice(0, n - 1)
        dn[tuple(lower)] = fwd < 0  # falling after this node
        idx0 = [slice(None)] * f.ndim
        idx0[ax] = 0
        up[tuple(idx0)] = True
        idx0[ax] = n - 1
        dn[tuple(idx0)] = True
        core &= up & dn
    return int(core.sum())


def _second_differences(g, f, k):
    dim = g.dim
    H = np.zeros((dim, dim))
    k = np.array(k)
    for i in range(dim):
        e = np.zeros(dim, dtype=int)
        e[i] = 1
        H[i, i] = (f[tuple(k + e)] - 2 * f[tuple(k)] + f[tuple(k - e)]) / g.spacing[i] ** 2
    if dim == 2:
        e0, e1 = np.array([1, 0]), np.array([0, 1])
        H[0, 1] = H[1, 0] = (f[tuple(k + e0 + e1)] - f[tuple(k + e0 - e1)] - f[tuple(k - e0 + e1)]
                             + f[tuple(k - e0 - e1)]) / (4 * g.spacing[0] * g.spacing[1])
    return H


def max_admissible_s(w: WeightFamily, lam: float) -> float:
    """Largest ``s <= 1`` with ``s lam |grad phi|^2 <= 2|phi|`` for every weight.

    This forces ``eta <= 0`` for all ``t`` and ``h``.  The critical point is
    replaced by its Morse limit ``1 / (lam mu_max)``.
    """
    skip = _near_p(w)
    best = 1.0
    for k in range(w.n_weights):
        g2 = _grad2(w, k)
        ok = (g2 > 0) & ~skip
        if ok.any():
            best = min(best, float(np.min(2 * np.abs(w.phi(k)[ok]) / (lam * g2[ok]))))
    _, mu_max = _morse_eigs(w)
    if mu_max > 0:
        best = min(best, 1.0 / (lam * mu_max))
    if best < 1e-4:
        warnings.warn(f"admissible s*={best:.3e} is tiny: weights too steep", RuntimeWarning)
    return best


# --------------------------------------------------------------------------
# time-dependent weights


@dataclass(frozen=True)
class CarlemanWeight:
    family: WeightFamily
    index: int
    s: float
    h: float
    T: float

    def __post_init__(self):
        if not 0 < self.h <= 1:
            raise WeightError(f"h={self.h} outside (0, 1]")
        if not 0 < self.s <= 1:
            raise WeightError(f"s={self.s} outside (0, 1]")
        if not self.T > 0:
            raise WeightError("T must be positive")

    def Gamma(self, t):
        return self.T - t + self.h


@dataclass(frozen=True)
class WeightFields:
    Gamma: float
    Phi: np.ndarray
    dPhi_dt: np.ndarray
    grad_Phi: np.ndarray
    hess_Phi: np.ndarray
    eta: np.ndarray
    deta_dt: np.ndarray


def eval_Phi_eta(cw: CarlemanWeight, t: float, coef: mesh.CoefficientSet, phi=None, grad_phi=None,
                 hess_phi=None) -> WeightFields:
    """Closed-form ``Phi = s phi / Gamma`` and ``eta = dPhi/dt / 2 + A grad Phi . grad Phi / 4``.

    With ``Gamma = T - t + h``: ``dPhi/dt = Phi / Gamma`` and ``d eta/dt = 2 eta / Gamma``
    (both terms of ``eta`` carry ``Gamma^-2``).  ``phi`` and its derivatives
    may be overridden for diagnostic inputs.
    """
    if not -1e-12 <= t <= cw.T + 1e-12:
        raise WeightError(f"t={t} outside [0, T={cw.T}]")
    w = cw.family
    phi = w.phi(cw.index) if phi is None else np.asarray(phi, dtype=float)
    gphi = w.grad_phi(cw.index) if grad_phi is None else np.asarray(grad_phi, dtype=float)
    hphi = w.hess_phi(cw.index) if hess_phi is None else np.asarray(hess_phi, dtype=float)
    G = cw.Gamma(t)
    s = cw.s
    Phi = s * phi / G
    dPhi = Phi / G
    gPhi = s * gphi / G
    hPhi = s * hphi / G
    AgG = mesh.dot(mesh.matvec_field(coef.A, gPhi), gPhi)
    eta = 0.5 * dPhi + 0.25 * AgG
    return WeightFields(G, Phi, dPhi, gPhi, hPhi, eta, 2.0 * eta / G)


def export_csv(w: WeightFamily, path) -> None:
    g = w.grid
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        coord_names = ["x", "y"][: g.dim]
        wr.writerow(["node", *coord_names, "psi", "phi1", "phi2", "obs", "B", "C", "D", "collar"])
        flat = [a.ravel() for a in (w.psi[0], w.phi(0), w.phi(w.d))]
        masks = [m.ravel() for m in (w.obs, w.B, w.C, w.D, w.collar)]
        coords = g.coords.reshape(g.dim, -1)
        for i in range(g.size):
            wr.writerow([i, *(repr(float(c)) for c in coords[:, i]), *(repr(float(a[i])) for a in flat),
                         *(int(m[i]) for m in masks)])
