"""Uniform node grids, coefficient fields and discrete operators.

Fields are plain numpy arrays living on the nodes of a :class:`Grid`:
a scalar field has shape ``grid.shape`` and a vector field has shape
``(grid.dim, *grid.shape)``.  Quadrature is the tensor trapezoid rule.

The elliptic operator ``div(A grad f)`` is assembled in flux form so that
it is exactly symmetric with respect to the trapezoid inner product and
exactly conservative under the homogeneous conormal (Neumann) condition.
The same stencil accepts prescribed boundary fluxes, which is what the
weighted Carleman quantities need (they carry no flux condition).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class BoundaryPoints:
    """Boundary quadrature: one entry per (node, face) pair.

    Rectangle corners appear once per adjacent edge, each time with that
    edge's outward normal.  In 1D there are exactly two entries of weight 1.
    """

    nodes: np.ndarray  # flat node indices, shape (m,)
    normals: np.ndarray  # shape (m, dim), unit vectors
    weights: np.ndarray  # shape (m,)


@dataclass(frozen=True)
class Grid:
    extents: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if len(self.extents) != len(self.shape) or len(self.shape) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with one extent per axis")
        for (lo, hi), n in zip(self.extents, self.shape):
            if not hi > lo:
                raise ValueError(f"degenerate extent ({lo}, {hi})")
            if n < 8:
                raise ValueError(f"need at least 8 points per axis, got {n}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extents, self.shape))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extents, self.shape))

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def x(self) -> np.ndarray:
        return self.coords[0]

    @cached_property
    def weights(self) -> np.ndarray:
        w1 = []
        for h, n in zip(self.spacing, self.shape):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2
            w1.append(w)
        if self.dim == 1:
            return w1[0]
        return np.outer(w1[0], w1[1])

    @property
    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    @cached_property
    def boundary(self) -> BoundaryPoints:
        if self.dim == 1:
            n = self.shape[0]
            return BoundaryPoints(np.array([0, n - 1]), np.array([[-1.0], [1.0]]), np.ones(2))
        nodes, normals, weights = [], [], []
        nx, ny = self.shape
        hx, hy = self.spacing
        flat = np.arange(self.size).reshape(self.shape)
        for ax, (n_other, h_other) in enumerate([(ny, hy), (nx, hx)]):
            w = np.full(n_other, h_other)
            w[0] = w[-1] = h_other / 2
            for side, sign in ((0, -1.0), (-1, 1.0)):
                line = flat[side, :] if ax == 0 else flat[:, side]
                nvec = np.zeros(2)
                nvec[ax] = sign
                nodes.append(line)
                normals.append(np.tile(nvec, (n_other, 1)))
                weights.append(w)
        return BoundaryPoints(np.concatenate(nodes), np.concatenate(normals), np.concatenate(weights))

    def distance_to_boundary(self) -> np.ndarray:
        d = [np.minimum(c - lo, hi - c) for c, (lo, hi) in zip(self.coords, self.extents)]
        return np.min(d, axis=0)

    def box_mask(self, box) -> np.ndarray:
        """Nodes inside a closed interval (1D) or closed rectangle (2D).

        ``box`` is ``(a, b)`` in 1D or ``((a0, b0), (a1, b1))`` in 2D.
        """
        box = _normalize_box(box, self.dim)
        tol = 1e-12 * max(hi - lo for lo, hi in self.extents)
        mask = np.ones(self.shape, dtype=bool)
        for c, (lo, hi) in zip(self.coords, box):
            mask &= (c >= lo - tol) & (c <= hi + tol)
        return mask

    def box_weights(self, box) -> np.ndarray:
        """Quadrature weights for integrals over ``box``.

        Each node carries the measure of its dual cell intersected with the
        box, so the weights sum to the exact box measure.
        """
        box = _normalize_box(box, self.dim)
        w = np.ones(self.shape)
        for ax, (axis, (lo, hi)) in enumerate(zip(self.axes, box)):
            h = self.spacing[ax]
            left = np.maximum(axis - h / 2, axis[0])
            right = np.minimum(axis + h / 2, axis[-1])
            wl = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)
            shape = [1] * self.dim
            shape[ax] = -1
            w = w * wl.reshape(shape)
        return w

    def contains_box(self, box) -> bool:
        box = _normalize_box(box, self.dim)
        return all(lo >= a and hi <= b and hi > lo for (lo, hi), (a, b) in zip(box, self.extents))


def _normalize_box(box, dim):
    box = np.asarray(box, dtype=float)
    if dim == 1 and box.shape == (2,):
        box = box[None, :]
    if box.shape != (dim, 2):
        raise ValueError(f"box must have shape ({dim}, 2), got {box.shape}")
    return [tuple(b) for b in box]


def build_grid(domain, n) -> Grid:
    """Uniform grid on an interval ``(a, b)`` or rectangle ``((a0, b0), (a1, b1))``."""
    dom = np.asarray(domain, dtype=float)
    if dom.shape == (2,):
        dom = dom[None, :]
    shape = (int(n),) * len(dom) if np.isscalar(n) else tuple(int(k) for k in n)
    return Grid(tuple(tuple(e) for e in dom), shape)


# --------------------------------------------------------------------------
# quadrature


def inner(grid: Grid, f, g) -> float:
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape[-grid.dim:] != grid.shape or g.shape[-grid.dim:] != grid.shape:
        raise ValueError("field does not live on this grid")
    prod = f * g
    if prod.ndim > grid.dim:  # vector fields: sum components
        prod = prod.reshape(-1, *grid.shape).sum(axis=0)
    return float(np.sum(grid.weights * prod))


def norm(grid: Grid, f) -> float:
    return np.sqrt(max(inner(grid, f, f), 0.0))


def dirichlet_energy(grid: Grid, f) -> float:
    """Discrete ``int |grad f|^2`` from face differences (the A = I stiffness form).

    Unlike the quadrature of :func:`grad`, this sees every mode, including
    the grid-scale oscillation that centered differences annihilate.
    """
    K = _identity_stiffness(grid)
    v = np.asarray(f, dtype=float).ravel()
    return float(v @ (K @ v))


def boundary_integral(grid: Grid, values) -> float:
    """Quadrature of per-boundary-entry values (see :class:`BoundaryPoints`)."""
    values = np.asarray(values, dtype=float)
    b = grid.boundary
    if values.shape != b.weights.shape:
        raise ValueError(f"expected {b.weights.shape[0]} boundary values, got {values.shape}")
    return float(np.sum(b.weights * values))


def boundary_trace(grid: Grid, f) -> np.ndarray:
    """Values of a scalar field at the boundary entries."""
    return np.asarray(f).reshape(-1)[grid.boundary.nodes]


def normal_component(grid: Grid, v) -> np.ndarray:
    """``v . n`` at the boundary entries for a vector field ``v``."""
    b = grid.boundary
    flat = np.asarray(v).reshape(grid.dim, -1)[:, b.nodes]
    return np.einsum("km,mk->m", flat, b.normals)


# --------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CoefficientSet:
    """Nodal coefficients of ``u_t - div(A grad u) + B.grad u + a u = 0``.

    ``A`` has shape ``(dim, dim, *shape)``, ``B`` ``(dim, *shape)``, ``a``
    ``shape``.  ``lam`` is the ellipticity constant (>= 1).
    """

    grid: Grid
    A: np.ndarray
    B: np.ndarray
    a: np.ndarray
    lam: float
    dA: np.ndarray = field(repr=False)  # dA[k, i, j] = d_k A_ij

    @property
    def a_inf(self) -> float:
        return float(np.max(np.abs(self.a)))

    @property
    def B_inf(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.B**2, axis=0))))

    @property
    def is_heat(self) -> bool:
        return self.a_inf == 0.0 and self.B_inf == 0.0


def _as_field(grid, value, shape_prefix=()):
    if callable(value):
        value = value(*grid.coords)
    value = np.asarray(value, dtype=float)
    return np.broadcast_to(value, shape_prefix + grid.shape).copy()


def ellipticity_constant(A: np.ndarray) -> float:
    """Smallest lam >= 1 with lam^-1 |xi|^2 <= A xi.xi <= lam |xi|^2 at every node."""
    dim = A.shape[0]
    mats = np.moveaxis(A.reshape(dim, dim, -1), -1, 0)
    ev = np.linalg.eigvalsh(mats)
    if ev.min() <= 0:
        raise ValueError("A is not positive definite at every node")
    return float(max(1.0, ev.max(), 1.0 / ev.min()))


def coefficients(grid: Grid, A=1.0, B=0.0, a=0.0, lam=None) -> CoefficientSet:
    """Build a :class:`CoefficientSet` from constants, callables or arrays.

    A scalar (or scalar field) ``A`` means ``A * I``.  Callables are evaluated
    at the node coordinates, e.g. ``A=lambda x: 1 + 0.5 * x``.
    """
    dim = grid.dim
    if callable(A):
        Av = np.asarray(A(*grid.coords), dtype=float)
    else:
        Av = np.asarray(A, dtype=float)
    if Av.shape in ((), grid.shape):
        Amat = np.zeros((dim, dim) + grid.shape)
        for i in range(dim):
            Amat[i, i] = Av
    else:
        Amat = np.broadcast_to(Av.reshape(Av.shape + (1,) * (dim + 2 - Av.ndim)), (dim, dim) + grid.shape).copy()
    if not np.allclose(Amat, np.swapaxes(Amat, 0, 1), rtol=0, atol=1e-14):
        raise ValueError("A must be symmetric at every node")
    Bv = _as_field(grid, B, (dim,)) if not callable(B) else np.asarray(B(*grid.coords), dtype=float).reshape((dim,) + grid.shape)
    av = _as_field(grid, a)
    lam_min = ellipticity_constant(Amat)
    if lam is None:
        lam = lam_min
    elif lam < lam_min * (1 - 1e-12):
        raise ValueError(f"lam={lam} violates ellipticity (need >= {lam_min})")
    dA = np.stack([np.stack([grad(grid, Amat[i, j]) for j in range(dim)]) for i in range(dim)])
    dA = np.moveaxis(dA, 2, 0)  # (k, i, j, ...)
    return CoefficientSet(grid, Amat, Bv, av, float(lam), dA)


# --------------------------------------------------------------------------
# differential operators


def grad(grid: Grid, f) -> np.ndarray:
    """Second-order gradient: centered inside, one-sided second order at the boundary."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"scalar field of shape {grid.shape} expected, got {f.shape}")
    g = np.gradient(f, *grid.spacing, edge_order=2)
    return np.stack(g if grid.dim > 1 else [g])


def hessian(grid: Grid, f) -> np.ndarray:
    g = grad(grid, f)
    return np.stack([grad(grid, g[i]) for i in range(grid.dim)])


def divergence(grid: Grid, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return sum(np.gradient(v[k], *grid.spacing, edge_order=2)[k] if grid.dim > 1
               else np.gradient(v[k], grid.spacing[0], edge_order=2) for k in range(grid.dim))


def matvec_field(M, v):
    """Apply a nodal matrix field ``M[i, j, ...]`` to a vector field ``v[j, ...]``."""
    return np.einsum("ij...,j...->i...", M, v)


def dot(u, v):
    return np.sum(np.asarray(u) * np.asarray(v), axis=0)


def _sbp_d1(n, h):
    """First-derivative matrix with trapezoid-norm summation by parts."""
    main = np.zeros(n)
    D = sp.diags([-0.5 * np.ones(n - 1), main, 0.5 * np.ones(n - 1)], [-1, 0, 1], format="lil")
    D[0, 0], D[0, 1] = -1.0, 1.0
    D[n - 1, n - 2], D[n - 1, n - 1] = -1.0, 1.0
    return (D.tocsr() / h)


def _face_difference(n, h):
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def stiffness_matrix(grid: Grid, coef: CoefficientSet) -> sp.csr_matrix:
    """Symmetric positive semidefinite form K with f.K.g ~ int A grad f . grad g.

    Diagonal entries of A use face differences with arithmetic half-node
    averages; 2D off-diagonal entries use the trapezoid-SBP first derivative.
    Constants lie in the kernel.
    """
    dim = grid.dim
    K = sp.csr_matrix((grid.size, grid.size))
    eyes = [sp.identity(n, format="csr") for n in grid.shape]
    w1 = []
    for h, n in zip(grid.spacing, grid.shape):
        w = np.full(n, h)
        w[0] = w[-1] = h / 2
        w1.append(w)
    for ax in range(dim):
        n, h = grid.shape[ax], grid.spacing[ax]
        G1 = _face_difference(n, h)
        if dim == 1:
            G = G1
            wf = np.full(n - 1, h)
            Aface = 0.5 * (coef.A[0, 0][1:] + coef.A[0, 0][:-1])
        else:
            G = sp.kron(G1, eyes[1]) if ax == 0 else sp.kron(eyes[0], G1)
            Aii = coef.A[ax, ax]
            if ax == 0:
                Aface = 0.5 * (Aii[1:, :] + Aii[:-1, :])
                wf = np.outer(np.full(n - 1, h), w1[1])
            else:
                Aface = 0.5 * (Aii[:, 1:] + Aii[:, :-1])
                wf = np.outer(w1[0], np.full(n - 1, h))
            Aface, wf = Aface.ravel(), wf.ravel()
        K = K + (G.T @ sp.diags(wf * Aface) @ G)
    if dim == 2 and np.any(coef.A[0, 1] != 0):
        Dx = sp.kron(_sbp_d1(grid.shape[0], grid.spacing[0]), eyes[1])
        Dy = sp.kron(eyes[0], _sbp_d1(grid.shape[1], grid.spacing[1]))
        WA = sp.diags(grid.weights.ravel() * coef.A[0, 1].ravel())
        K = K + Dx.T @ WA @ Dy + Dy.T @ WA @ Dx
    return K.tocsr()


def neumann_operator(grid: Grid, coef: CoefficientSet) -> sp.csr_matrix:
    """Sparse matrix of ``div(A grad .)`` with zero conormal flux built in."""
    return (sp.diags(-1.0 / grid.weights.ravel()) @ stiffness_matrix(grid, coef)).tocsr()


def div_A_grad(grid: Grid, f, coef: CoefficientSet, boundary_flux=None) -> np.ndarray:
    """Flux-form ``div(A grad f)``.

    With ``boundary_flux=None`` the discrete conormal flux vanishes on the
    boundary (Neumann).  Otherwise ``boundary_flux`` holds ``A grad f . n``
    at the boundary entries (or ``"one-sided"`` to take it from :func:`grad`),
    and the boundary nodes close the flux balance with those values.  Either
    way the trapezoid integral of the result equals the boundary integral of
    the prescribed flux exactly.
    """
    f = np.asarray(f, dtype=float)
    L = _cached_operator(grid, coef)
    out = (L @ f.ravel())
    if boundary_flux is not None:
        if isinstance(boundary_flux, str):
            boundary_flux = normal_component(grid, matvec_field(coef.A, grad(grid, f)))
        b = grid.boundary
        np.add.at(out, b.nodes, b.weights * np.asarray(boundary_flux) / grid.weights.ravel()[b.nodes])
    return out.reshape(grid.shape)


_OP_CACHE: dict = {}
_KI_CACHE: dict = {}


def _identity_stiffness(grid):
    K = _KI_CACHE.get(grid)
    if K is None:
        if len(_KI_CACHE) > 32:
            _KI_CACHE.clear()
        K = _KI_CACHE[grid] = stiffness_matrix(grid, coefficients(grid))
    return K


def _cached_operator(grid, coef):
    key = (id(coef), grid)
    hit = _OP_CACHE.get(key)
    if hit is None or hit[0] is not coef:
        if len(_OP_CACHE) > 64:
            _OP_CACHE.clear()
        hit = (coef, neumann_operator(grid, coef))
        _OP_CACHE[key] = hit
    return hit[1]


def advection_matrix(grid: Grid, B: np.ndarray) -> sp.csr_matrix:
    """Sparse ``B . grad`` using the same stencil as :func:`grad`."""
    mats = []
    for h, n in zip(grid.spacing, grid.shape):
        D = sp.diags([-0.5 * np.ones(n - 1), np.zeros(n), 0.5 * np.ones(n - 1)], [-1, 0, 1], format="lil")
        D[0, :3] = [-1.5, 2.0, -0.5]
        D[n - 1, n - 3:] = [0.5, -2.0, 1.5]
        mats.append(D.tocsr() / h)
    if grid.dim == 1:
        return (sp.diags(B[0].ravel()) @ mats[0]).tocsr()
    Dx = sp.kron(mats[0], sp.identity(grid.shape[1]))
    Dy = sp.kron(sp.identity(grid.shape[0]), mats[1])
    return (sp.diags(B[0].ravel()) @ Dx + sp.diags(B[1].ravel()) @ Dy).tocsr()
