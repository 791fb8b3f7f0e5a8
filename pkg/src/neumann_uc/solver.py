"""Crank-Nicolson integration of ``u_t - div(A grad u) + B.grad u + a u = 0``
with zero conormal flux, plus checks of the two a-priori energy bounds.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import mesh

RESIDUAL_TOL = 1e-12


class SolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    grid: mesh.Grid
    coef: mesh.CoefficientSet
    t: np.ndarray  # shape (K+1,)
    u: np.ndarray  # shape (K+1, *grid.shape)
    dt: float
    startup_steps: int = 0

    def __len__(self):
        return len(self.t)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def at(self, t: float) -> np.ndarray:
        """Snapshot at time ``t`` (linear interpolation between stamps)."""
        k = np.searchsorted(self.t, t)
        if k < len(self.t) and np.isclose(self.t[k], t, rtol=0, atol=1e-12 * max(1.0, self.T)):
            return self.u[k]
        if k == 0 or k >= len(self.t):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        w = (t - self.t[k - 1]) / (self.t[k] - self.t[k - 1])
        return (1 - w) * self.u[k - 1] + w * self.u[k]

    def scaled(self, c: float) -> "Trajectory":
        return Trajectory(self.grid, self.coef, self.t, c * self.u, self.dt, self.startup_steps)


def operator_matrix(coef: mesh.CoefficientSet) -> sp.csr_matrix:
    """Sparse ``L = -div(A grad .) + B.grad + a`` with Neumann flux built in."""
    g = coef.grid
    L = -mesh.neumann_operator(g, coef)
    if np.any(coef.B != 0):
        L = L + mesh.advection_matrix(g, coef.B)
    return (L + sp.diags(coef.a.ravel())).tocsr()


class _Stepper:
    """Factorised Crank-Nicolson (and backward-Euler half step) systems."""

    def __init__(self, coef, dt):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.L = operator_matrix(coef)
        I = sp.identity(self.L.shape[0], format="csc")
        self.lhs = (I + 0.5 * dt * self.L).tocsc()
        self.rhs = (I - 0.5 * dt * self.L).tocsr()
        self.lu = splu(self.lhs)

    def _solve(self, b):
        x = self.lu.solve(b)
        r = np.linalg.norm(self.lhs @ x - b) / max(np.linalg.norm(b), 1e-300)
        if not r <= RESIDUAL_TOL:
            x = x + self.lu.solve(b - self.lhs @ x)  # one refinement sweep
            r = np.linalg.norm(self.lhs @ x - b) / max(np.linalg.norm(b), 1e-300)
            if not r <= RESIDUAL_TOL:
                raise SolveError(f"linear solve residual {r:.3e} exceeds {RESIDUAL_TOL}")
        return x

    def cn(self, u):
        return self._solve(self.rhs @ u)

    def two_half_implicit(self, u):
        # (I + dt/2 L) is exactly the backward-Euler matrix for a half step
        return self._solve(self._solve(u))


def step(u, coef: mesh.CoefficientSet, dt: float) -> np.ndarray:
    """One Crank-Nicolson step of size ``dt``."""
    st = _Stepper(coef, dt)
    return st.cn(np.asarray(u, dtype=float).ravel()).reshape(coef.grid.shape)


def solve(u0, coef: mesh.CoefficientSet, T: float, dt: float, startup_steps: int = 2) -> Trajectory:
    """Integrate from ``u0`` to ``T`` keeping every snapshot.

    The first ``startup_steps`` steps are each replaced by two backward-Euler
    half steps (Rannacher start-up) so that rough data do not excite the
    undamped high modes of Crank-Nicolson.  Use ``startup_steps=0`` for the
    plain scheme.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * T:
        raise ValueError(f"dt={dt} does not divide T={T}")
    g = coef.grid
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != g.shape:
        raise ValueError("initial datum does not live on the coefficient grid")
    st = _Stepper(coef, dt)
    out = np.empty((K + 1,) + g.shape)
    out[0] = u0
    u = u0.ravel().copy()
    for k in range(1, K + 1):
        u = st.two_half_implicit(u) if k <= startup_steps else st.cn(u)
        out[k] = u.reshape(g.shape)
    t = np.arange(K + 1) * (T / K)
    return Trajectory(g, coef, t, out, T / K, min(startup_steps, K))


# --------------------------------------------------------------------------
# energy bounds


@dataclass
class EnergyReport:
    name: str
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    tol: float

    @property
    def margin(self) -> np.ndarray:
        """Relative margin ``1 - lhs/rhs``; negative where the bound is violated."""
        with np.errstate(divide="ignore", invalid="ignore"):
            m = 1.0 - self.lhs / self.rhs
        return np.where(self.rhs > 0, m, np.where(self.lhs > 0, -np.inf, 1.0))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1 + self.tol)))

    def to_dict(self):
        return {
            "check": self.name,
            "passed": self.passed,
            "tol": self.tol,
            "min_margin": float(np.min(self.margin)) if len(self.t) else None,
            "n_stamps": int(len(self.t)),
        }


def _norms(traj: Trajectory):
    g = traj.grid
    u2 = np.array([mesh.inner(g, v, v) for v in traj.u])
    g2 = np.array([mesh.dirichlet_energy(g, v) for v in traj.u])
    return u2, g2


def dissipation_integral(traj: Trajectory) -> np.ndarray:
    """Cumulative ``int_0^t_k |grad u|^2`` with the quadrature matching each step.

    Crank-Nicolson steps use the step midpoint ``(u_k + u_{k+1})/2``, for which
    the discrete energy balance is exact; implicit start-up steps use their
    right endpoint.  A plain trapezoid rule over stamps would charge half a
    step of the (unresolved) initial gradient and break the bound for rough data.
    """
    g = traj.grid
    inc = np.empty(len(traj.t) - 1)
    for k in range(len(inc)):
        v = traj.u[k + 1] if k < traj.startup_steps else 0.5 * (traj.u[k] + traj.u[k + 1])
        inc[k] = mesh.dirichlet_energy(g, v)
    return np.concatenate([[0.0], np.cumsum(inc * np.diff(traj.t))])


def check_energy_L2(traj: Trajectory, tol: float = 0.01) -> EnergyReport:
    """``|u(t)|^2 + lam^-1 int_0^t |grad u|^2 <= exp(t(2|a| + lam|B|^2)) |u0|^2``."""
    c = traj.coef
    u2, _ = _norms(traj)
    lhs = u2 + dissipation_integral(traj) / c.lam
    rhs = np.exp(traj.t * (2 * c.a_inf + c.lam * c.B_inf**2)) * u2[0]
    return EnergyReport("energy_L2", traj.t.copy(), lhs, rhs, tol)


def check_energy_H1(traj: Trajectory, tol: float = 0.01) -> EnergyReport:
    """``|grad u(t)|^2 <= (2 lam^3 / t) exp(t(3|a| + 2 lam |B|^2)) |u0|^2`` for t > 0."""
    c = traj.coef
    u2, g2 = _norms(traj)
    t = traj.t[1:]
    rhs = 2 * c.lam**3 / t * np.exp(t * (3 * c.a_inf + 2 * c.lam * c.B_inf**2)) * u2[0]
    return EnergyReport("energy_H1", t.copy(), g2[1:], rhs, tol)


def export_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node", "value"])
        for tk, uk in zip(traj.t, traj.u):
            for i, v in enumerate(uk.ravel()):
                w.writerow([repr(float(tk)), i, repr(float(v))])
