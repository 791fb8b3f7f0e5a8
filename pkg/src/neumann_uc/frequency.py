"""Weighted frequency function along a solved trajectory.

For the ``2d`` weights of a :class:`~neumann_uc.weights.WeightFamily` the
stacked vector ``f_k = u exp(Phi_k / 2)`` obeys ``f_t + S f = A f + F`` with
``F_k = -a f_k + f_k B.grad Phi_k / 2 - B.grad f_k``.  The trace records
``y = |f|^2``, ``N = <S f, f> / y`` and the inner products entering the
differential inequalities for ``y`` and ``N``; the ``check_stage*`` helpers
test those inequalities with a discretisation-aware slack.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linprog

from . import mesh
from .commutator import apply_commutator_parts
from .solver import Trajectory, operator_matrix
from .weights import CarlemanWeight, WeightError, WeightFamily, eval_Phi_eta, max_admissible_s

SLACK_C = 10.0
Y_FLOOR = 1e-300


class Stage3SignError(AssertionError):
    """``eta <= 0`` or ``<S f, f> >= 0`` failed: the weight parameter exceeds its admissible range."""


@dataclass(frozen=True)
class FVec:
    f: np.ndarray  # (2d, *shape)
    t: float
    s: float
    h: float
    T: float


def _check_s(w, s, coef, check_s):
    if check_s:
        s_star = max_admissible_s(w, coef.lam)
        if s > s_star * (1 + 1e-12):
            raise WeightError(f"s={s} exceeds admissible s*={s_star}")


def assemble_fvec(u, w: WeightFamily, s, h, T, t, coef: mesh.CoefficientSet, check_s=True) -> FVec:
    _check_s(w, s, coef, check_s)
    u = np.asarray(u, dtype=float)
    fs = []
    for k in range(w.n_weights):
        wf = eval_Phi_eta(CarlemanWeight(w, k, s, h, T), t, coef)
        fs.append(u * np.exp(0.5 * wf.Phi))
    return FVec(np.stack(fs), t, s, h, T)


TRACE_COLUMNS = ("t", "y", "N", "S_ff", "A_ff", "Sp_ff", "SA", "Fnorm", "gradnorm")


@dataclass
class FrequencyTrace:
    t: np.ndarray
    y: np.ndarray
    N: np.ndarray
    S_ff: np.ndarray  # volume form
    A_ff: np.ndarray
    Sp_ff: np.ndarray
    SA: np.ndarray
    Fnorm: np.ndarray
    gradnorm: np.ndarray
    F_f: np.ndarray  # <F, f>
    S_ff_operator: np.ndarray  # <S f, f> with the discrete operator
    S_ft: np.ndarray  # <S f, f_t>
    S_norm: np.ndarray  # |S f|
    gradPhi_sup: np.ndarray
    eta_max: np.ndarray
    Gamma: np.ndarray
    s: float
    h: float
    T: float
    dt: float
    hx: float
    a_inf: float
    B_inf: float
    lam: float
    notice: str | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def degenerate(self) -> bool:
        return len(self.t) < 3

    @property
    def h1(self) -> np.ndarray:
        return self.y + self.gradnorm**2

    def to_rows(self):
        cols = [getattr(self, c) for c in TRACE_COLUMNS]
        return [[float(v[i]) for v in cols] for i in range(len(self.t))]

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(TRACE_COLUMNS)
            for row in self.to_rows():
                wr.writerow([repr(v) for v in row])


def compute_trace(traj: Trajectory, w: WeightFamily, s: float, h: float, stride: int = 1,
                  check_s: bool = True, T: float | None = None) -> FrequencyTrace:
    """Evaluate the frequency ledger at every ``stride``-th stamp.

    ``<S f, f>`` uses the boundary-free volume form
    ``sum_k int A grad f_k . grad f_k - eta_k f_k^2``; the operator form is kept
    alongside for comparison.
    """
    coef = traj.coef
    g = traj.grid
    T = traj.T if T is None else T
    _check_s(w, s, coef, check_s)
    Lmat = operator_matrix(coef)
    idx = np.arange(0, len(traj.t), stride)
    rows = {k: [] for k in ("t", "y", "S_ff", "A_ff", "Sp_ff", "SA", "Fnorm", "gradnorm", "F_f",
                            "S_ff_operator", "S_ft", "S_norm", "gradPhi_sup", "eta_max", "Gamma")}
    notice = None
    cws = [CarlemanWeight(w, k, s, h, T) for k in range(w.n_weights)]
    for kk in idx:
        t = float(traj.t[kk])
        u = traj.u[kk]
        ut = -(Lmat @ u.ravel()).reshape(g.shape)
        acc = dict.fromkeys(("y", "S_ff", "A_ff", "Sp_ff", "SA", "F2", "g2", "F_f", "S_op", "S_ft", "S2"), 0.0)
        gsup, emax = 0.0, -np.inf
        for cw in cws:
            wf = eval_Phi_eta(cw, t, coef)
            ef = np.exp(0.5 * wf.Phi)
            f = u * ef
            ft = ef * (ut + 0.5 * wf.dPhi_dt * u)
            parts = apply_commutator_parts(f, cw, coef, t)
            gf = parts.grad_f
            Agf = mesh.matvec_field(coef.A, gf)
            F = -coef.a * f + 0.5 * f * mesh.dot(coef.B, wf.grad_Phi) - mesh.dot(coef.B, gf)
            acc["y"] += mesh.inner(g, f, f)
            acc["S_ff"] += mesh.inner(g, Agf, gf) - mesh.inner(g, wf.eta * f, f)
            acc["A_ff"] += mesh.inner(g, parts.Af, f)
            acc["Sp_ff"] += mesh.inner(g, parts.Spf, f)
            acc["SA"] += mesh.inner(g, parts.Sf, parts.Af)
            acc["F2"] += mesh.inner(g, F, F)
            acc["g2"] += mesh.inner(g, gf, gf)
            acc["F_f"] += mesh.inner(g, F, f)
            acc["S_op"] += mesh.inner(g, parts.Sf, f)
            acc["S_ft"] += mesh.inner(g, parts.Sf, ft)
            acc["S2"] += mesh.inner(g, parts.Sf, parts.Sf)
            gsup = max(gsup, float(np.max(np.sqrt(np.sum(wf.grad_Phi**2, axis=0)))))
            emax = max(emax, float(np.max(wf.eta)))
        if acc["y"] < Y_FLOOR:
            notice = f"y fell below {Y_FLOOR:g} at t={t}; trace truncated"
            break
        rows["t"].append(t)
        rows["y"].append(acc["y"])
        rows["S_ff"].append(acc["S_ff"])
        rows["A_ff"].append(acc["A_ff"])
        rows["Sp_ff"].append(acc["Sp_ff"])
        rows["SA"].append(acc["SA"])
        rows["Fnorm"].append(np.sqrt(acc["F2"]))
        rows["gradnorm"].append(np.sqrt(acc["g2"]))
        rows["F_f"].append(acc["F_f"])
        rows["S_ff_operator"].append(acc["S_op"])
        rows["S_ft"].append(acc["S_ft"])
        rows["S_norm"].append(np.sqrt(acc["S2"]))
        rows["gradPhi_sup"].append(gsup)
        rows["eta_max"].append(emax)
        rows["Gamma"].append(T - t + h)
    arr = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    with np.errstate(divide="ignore", invalid="ignore"):
        N = arr["S_ff"] / arr["y"]
    return FrequencyTrace(t=arr["t"], y=arr["y"], N=N, S_ff=arr["S_ff"], A_ff=arr["A_ff"], Sp_ff=arr["Sp_ff"],
                          SA=arr["SA"], Fnorm=arr["Fnorm"], gradnorm=arr["gradnorm"], F_f=arr["F_f"],
                          S_ff_operator=arr["S_ff_operator"], S_ft=arr["S_ft"], S_norm=arr["S_norm"],
                          gradPhi_sup=arr["gradPhi_sup"], eta_max=arr["eta_max"], Gamma=arr["Gamma"],
                          s=s, h=h, T=T, dt=traj.dt * stride, hx=max(g.spacing), a_inf=coef.a_inf,
                          B_inf=coef.B_inf, lam=coef.lam, notice=notice,
                          meta={"startup_until": float(traj.t[traj.startup_steps])})


# --------------------------------------------------------------------------
# Stage checks


def slack(trace: FrequencyTrace, scale) -> np.ndarray:
    """Additive tolerance ``C (hx^2 + dt^2) scale``."""
    return SLACK_C * (trace.hx**2 + trace.dt**2) * np.asarray(scale)


def _centered(trace, v):
    d = (v[2:] - v[:-2]) / (trace.t[2:] - trace.t[:-2])
    return d


def stage1_residual(trace: FrequencyTrace) -> np.ndarray:
    """``|<A f, f>| / (|f|^2 + |grad f|^2)`` per stamp."""
    return np.abs(trace.A_ff) / trace.h1


@dataclass
class StageReport:
    name: str
    passed: bool
    details: dict

    def to_dict(self):
        return {"check": self.name, "passed": bool(self.passed), **self.details}


def check_stage2(trace: FrequencyTrace) -> StageReport:
    """The two differential inequalities for ``y`` and ``N`` at interior stamps.

    The slack is ``10 (hx^2 + dt^2)`` times a size.  With ``n = 1 + |N| +
    |grad Phi|_inf^2`` the size is ``y n^3`` for the ``y`` inequality and ``n^4``
    for the ``N`` inequality: the centered difference misses ``dt^2/6`` of the
    third time derivative, and ``y ~ exp(-2 int N)`` gives ``d3y ~ 8 N^3 y``
    while ``N ~ 1/t`` gives ``d3N ~ N^4``.  Stamps whose difference
    stencil reaches into the implicit start-up steps are skipped: there the
    scheme is only first order and the centered difference of ``y`` is not
    consistent with the semi-discrete ``u_t``.
    """
    if trace.degenerate:
        return StageReport("stage2", True, {"vacuous": True})
    c = trace
    t0 = c.meta.get("startup_until", c.t[0])
    first = max(1, int(np.searchsorted(c.t, t0 - 1e-12 * max(1.0, c.T))) + 1)
    if first >= len(c.t) - 1:
        return StageReport("stage2", True, {"vacuous": True})
    sl = slice(first, -1)
    yp = _centered(c, c.y)[first - 1:]
    Np = _centered(c, c.N)[first - 1:]
    y, N, G = c.y[sl], c.N[sl], c.gradPhi_sup[sl]
    size = 1 + np.abs(N) + G**2
    sy = slack(c, y * size**3)
    sN = slack(c, size**4)
    K = c.a_inf + G * c.B_inf
    r1 = np.abs(0.5 * yp + N * y) - (K * y + c.B_inf * c.gradnorm[sl] * np.sqrt(y))
    bound2 = (2 * c.SA[sl] + c.Sp_ff[sl]) / y + 2 * K**2 + 2 * c.B_inf**2 * c.gradnorm[sl] ** 2 / y
    r2 = Np - bound2
    raw = Np * y**2 - ((2 * c.SA[sl] + c.Sp_ff[sl]) * y + c.Fnorm[sl] ** 2 * y)
    ident = np.abs(0.5 * yp + c.S_ff[sl] - c.F_f[sl])  # exact balance, any coefficients
    ok1 = bool(np.all(r1 <= sy))
    ok2 = bool(np.all(r2 <= sN))
    ok_raw = bool(np.all(raw <= sN * y**2))
    ok_id = bool(np.all(ident <= sy))
    return StageReport("stage2", ok1 and ok2 and ok_raw and ok_id, {
        "first_inequality": ok1, "second_inequality": ok2, "raw_second_inequality": ok_raw,
        "energy_balance": ok_id,
        "max_ratio_first": float(np.max(r1 / sy)),
        "max_ratio_second": float(np.max(r2 / sN)),
        "max_ratio_balance": float(np.max(ident / sy)),
        "n_interior": int(len(yp)),
        "first_stamp": int(first),
    })


def check_stage3(trace: FrequencyTrace, C0_bounds=(1e-6, 1 - 1e-6)) -> StageReport:
    """Signs ``eta <= 0``, ``<S f, f> >= 0``, then the two-constant fit.

    Finds the ``(C0, C)`` minimising ``C0 + C`` subject to
    ``2<S f, A f> + <S' f, f> <= (1 + C0)/Gamma <S f, f> + C/h^2 |f|^2`` at every stamp.
    Raises :class:`Stage3SignError` when a sign condition fails.
    """
    if trace.degenerate:
        return StageReport("stage3", True, {"vacuous": True})
    c = trace
    eta_max = float(np.max(c.eta_max))
    S_min = float(np.min(c.S_ff / c.y))
    if eta_max > 1e-12:
        raise Stage3SignError(f"max eta = {eta_max:.3e} > 0")
    if S_min < -1e-10:
        raise Stage3SignError(f"min <S f, f>/y = {S_min:.3e} < 0")
    lhs = 2 * c.SA + c.Sp_ff
    A_ub = np.column_stack([-c.S_ff / c.Gamma, -c.y / c.h**2])
    b_ub = c.S_ff / c.Gamma - lhs
    # rescale rows for conditioning
    sc = np.maximum(np.abs(A_ub).max(axis=1), np.abs(b_ub))
    sc[sc == 0] = 1.0
    res = linprog([1.0, 1.0], A_ub=A_ub / sc[:, None], b_ub=b_ub / sc,
                  bounds=[C0_bounds, (0.0, None)], method="highs")
    if not res.success:
        return StageReport("stage3", False, {"eta_max": eta_max, "S_min_over_y": S_min, "fit": None,
                                             "message": res.message})
    C0, C = map(float, res.x)
    # tighten C for the chosen C0 (removes solver tolerance)
    C = float(max(0.0, np.max((lhs - (1 + C0) * c.S_ff / c.Gamma) * c.h**2 / c.y)))
    return StageReport("stage3", True, {"eta_max": eta_max, "S_min_over_y": S_min, "C0": C0, "C": C,
                                        "fit_exists": C0 < 1})


def _interp_log_y(trace, t):
    return float(np.interp(t, trace.t, np.log(trace.y)))


def compute_Ml(trace: FrequencyTrace, l: float, C0: float) -> float:
    """Threshold exponent by quadrature of the weighted integrals on the two windows."""
    T, h = trace.T, trace.h
    S1 = 2 * trace.lam * trace.B_inf**2
    f = lambda t: np.exp(S1 * (t - T)) / (T - t + h) ** (1 + C0)  # noqa: E731
    num, _ = quad(f, T - l * h, T, epsabs=0, epsrel=1e-12, limit=200)
    den, _ = quad(f, T - 2 * l * h, T - l * h, epsabs=0, epsrel=1e-12, limit=200)
    return 3.0 * num / den


def stage4_log_gap(trace: FrequencyTrace, l: float, M: float) -> float:
    """``(1+M) log y(T-lh) - log y(T) - M log y(T-2lh)`` (the log of the needed constant)."""
    T, h = trace.T, trace.h
    return ((1 + M) * _interp_log_y(trace, T - l * h) - _interp_log_y(trace, T)
            - M * _interp_log_y(trace, T - 2 * l * h))


def stage4_paper_constant(trace: FrequencyTrace, l: float, M: float, C0: float, C: float) -> float:
    """``log K_{l,M}`` assembled from the fitted constants."""
    T, h, lam, a, B = trace.T, trace.h, trace.lam, trace.a_inf, trace.B_inf
    win = (trace.t >= T - 2 * l * h - 1e-12)
    tt = trace.t[win]
    G = trace.gradPhi_sup[win]
    I_sq = float(np.trapezoid((a + G * B) ** 2, tt)) if len(tt) > 1 else 0.0
    I_G = float(np.trapezoid(G, tt)) if len(tt) > 1 else 0.0
    D = (12 * l**2 * (M + 1) * C + 12 * l * h * (M + 1) * I_sq + 6 * l * h * (M + 1) * a
         + 3 * B * (M + 1) * I_G + 15 * lam * l * h * (M + 1) * B**2)
    return D + 3 * C0 * (1 + M) * np.log(2 * l + 1)


def check_stage4(trace: FrequencyTrace, l: float, M: float, C0: float, C: float | None = None,
                 log_K_hat: float | None = None) -> StageReport:
    """Three-time inequality for ``y`` at ``T-2lh, T-lh, T``.

    ``log_K_hat`` is the fitted constant (see :func:`fit_stage4_constant`);
    when ``C`` is given the constant assembled from ``(C0, C)`` is checked too.
    """
    h, T = trace.h, trace.T
    if not l > 1 or not 0 < h <= min(T / (4 * l), 1.0) * (1 + 1e-12):
        raise ValueError(f"need l > 1 and 0 < h <= min(T/(4l), 1); got l={l}, h={h}")
    Ml = compute_Ml(trace, l, C0)
    if M < Ml * (1 - 1e-12):
        raise ValueError(f"M={M} below the threshold M_l={Ml}")
    gap = stage4_log_gap(trace, l, M)
    det = {"M_l": Ml, "M": M, "log_gap": gap}
    ok = True
    if log_K_hat is not None:
        det["log_K_hat"] = log_K_hat
        det["holds_fitted"] = bool(gap <= log_K_hat + 1e-12 * max(1.0, abs(log_K_hat)))
        ok &= det["holds_fitted"]
    if C is not None:
        lk = stage4_paper_constant(trace, l, M, C0, C)
        det["log_K_lM"] = float(lk)
        det["holds_assembled"] = bool(gap <= lk)
        ok &= det["holds_assembled"]
    return StageReport("stage4", ok, det)


def fit_stage4_constant(traces, l: float, M: float) -> float:
    """Smallest ``log K`` making the three-time inequality hold on every trace."""
    return float(max(stage4_log_gap(tr, l, M) for tr in traces))
