"""From the one-time interpolation inequality to an observability bound.

The chain is

1. fit ``(beta, K)`` in
   ``|u(t)|^2 <= exp(K P(t)) |u0|^2beta |u(t)|_{L2(w~)}^2(1-beta)``,
   ``P(t) = 1 + 1/t + |a|^(2/3) + |B|^2 + t(|a| + |B|^2)``;
2. fit the Nash/Poincare constant ``K3`` for cut-off snapshots;
3. assemble the constant ledger ``K1..K10, alpha, gamma, theta, kappa``;
4. pick a geometric time sequence ``l_m -> l_0`` adapted to the time set ``E``;
5. check ``|u(T)| <= C_obs int_E |u(t)|_{L1(w)} dt`` and the telescoped steps.

All large constants are carried as logarithms; ``C_obs`` easily exceeds
the double range for thin time sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mesh
from .solver import Trajectory

LOG2 = math.log(2.0)
LOG3 = math.log(3.0)


class ObservabilityError(ValueError):
    """Raised when an input makes a step of the chain impossible."""


def _exp_or_none(v: float):
    """``exp(v)`` when it is a finite double, else ``None``."""
    if not math.isfinite(v) or v > 709.0:
        return None
    return math.exp(v)


# --------------------------------------------------------------------------
# norms on sub-regions


def l2_on(grid: mesh.Grid, u, box) -> float:
    return float(np.sqrt(np.sum(grid.box_weights(box) * np.asarray(u) ** 2)))


def l1_on(grid: mesh.Grid, u, box) -> float:
    return float(np.sum(grid.box_weights(box) * np.abs(u)))


def interpolation_weight(coef: mesh.CoefficientSet, t: float) -> float:
    """``1 + 1/t + |a|^(2/3) + |B|^2 + t(|a| + |B|^2)``."""
    a, B = coef.a_inf, coef.B_inf
    return 1.0 + 1.0 / t + a ** (2.0 / 3.0) + B**2 + t * (a + B**2)


# --------------------------------------------------------------------------
# interpolation inequality at one time


@dataclass(frozen=True)
class InterpolationData:
    """Logs ``X = log|u0|^2``, ``Y = log|u(t)|^2``, ``Z = log|u(t)|^2_{w~}`` and weight ``P``."""

    X: float
    Y: float
    Z: float
    P: float

    def residual(self, beta: float, K: float) -> float:
        """Log of LHS over RHS; ``<= 0`` when the inequality holds."""
        return self.Y - (K * self.P + beta * self.X + (1 - beta) * self.Z)


def interpolation_data(traj: Trajectory, obs, t: float) -> InterpolationData | None:
    """``None`` for the zero solution (the inequality reads 0 <= 0)."""
    g = traj.grid
    if not 0 < t <= traj.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside (0, {traj.T}]")
    u0, ut = traj.u[0], traj.at(min(t, traj.T))
    n0 = mesh.inner(g, u0, u0)
    if n0 == 0:
        return None
    loc = l2_on(g, ut, obs) ** 2
    return InterpolationData(math.log(n0), math.log(mesh.inner(g, ut, ut)),
                             math.log(loc) if loc > 0 else -math.inf,
                             interpolation_weight(traj.coef, t))


@dataclass
class InterpolationFit:
    beta: float
    K: float
    times: tuple
    n_fit: int
    residuals: np.ndarray
    holdout_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    holdout_slack: float = 2.0

    @property
    def holdout_margin(self) -> float | None:
        """``log(slack) - max residual`` over held-out runs."""
        if len(self.holdout_residuals) == 0:
            return None
        return float(math.log(self.holdout_slack) - np.max(self.holdout_residuals))

    @property
    def valid(self) -> bool:
        return 0 < self.beta < 1 and self.K > 0 and bool(np.all(self.residuals <= 1e-12))

    @property
    def passed(self) -> bool:
        m = self.holdout_margin
        return self.valid and (m is None or m >= 0)

    def to_dict(self):
        return {"beta": self.beta, "K": self.K, "times": list(self.times), "n_fit": self.n_fit,
                "max_fit_residual": float(np.max(self.residuals)) if len(self.residuals) else None,
                "holdout_margin": self.holdout_margin, "holdout_slack": self.holdout_slack,
                "valid": self.valid, "passed": self.passed}


def fit_interpolation_constants(runs, obs, t, holdout=(), beta_bounds=(0.01, 0.99),
                                K_floor=1e-9, slack=2.0) -> InterpolationFit:
    """Smallest ``beta`` and then smallest ``K`` so every fitting run satisfies the inequality.

    ``t`` is one time or a sequence of times; each (run, time) pair is a
    constraint ``Y - Z <= K P + beta (X - Z)``.  For fixed ``beta`` the least
    admissible ``K`` is a maximum over constraints, so the lexicographic
    minimum sits at the lower ``beta`` bound.  Held-out runs are then checked
    with multiplicative slack ``slack``.
    """
    times = (float(t),) if np.isscalar(t) else tuple(float(v) for v in t)
    data = [d for r in runs for tt in times if (d := interpolation_data(r, obs, tt)) is not None]
    if len({id(r) for r in runs}) < 1 or not data:
        raise ObservabilityError("no non-trivial fitting runs")
    if any(not math.isfinite(d.Z) for d in data):
        raise ObservabilityError("a run vanishes on the observation region: no (beta, K) exists")
    lo, hi = beta_bounds
    if not 0 < lo <= hi < 1:
        raise ValueError("beta bounds must lie in (0, 1)")
    beta = lo
    K = max(K_floor, max((d.Y - d.Z - beta * (d.X - d.Z)) / d.P for d in data))
    res = np.array([d.residual(beta, K) for d in data])
    hold = [d for r in holdout for tt in times if (d := interpolation_data(r, obs, tt)) is not None]
    hres = np.array([d.residual(beta, K) for d in hold])
    return InterpolationFit(beta, K, times, len(data), res, hres, slack)


# --------------------------------------------------------------------------
# cut-off and Nash/Poincare constant


def _ramp(r):
    """Quintic smoothstep on [0, 1] and its derivative (C^2 at both ends)."""
    r = np.clip(r, 0.0, 1.0)
    return r**3 * (10 - 15 * r + 6 * r**2), 30 * r**2 * (1 - r) ** 2


@dataclass(frozen=True)
class CutoffFunction:
    field: np.ndarray
    grad: np.ndarray
    width: float
    K4: float


def build_cutoff(grid: mesh.Grid, omega, omega_tilde) -> CutoffFunction:
    """``eta = 1`` on ``w~``, quintic ramps to 0 at the edge of ``w`` over the smallest gap."""
    om = mesh._normalize_box(omega, grid.dim)
    ot = mesh._normalize_box(omega_tilde, grid.dim)
    gaps = [min(c - a, b - d) for (a, b), (c, d) in zip(om, ot)]
    width = min(gaps)
    if not width > 0:
        raise ObservabilityError("observation regions must be nested with a positive gap")
    vals, ders = [], []
    for x, (c, d) in zip(grid.coords, ot):
        up, dup = _ramp((x - (c - width)) / width)
        dn, ddn = _ramp(((d + width) - x) / width)
        vals.append(up * dn)
        ders.append((dup * dn - up * ddn) / width)
    eta = np.prod(vals, axis=0)
    grad = np.empty((grid.dim,) + grid.shape)
    for i in range(grid.dim):
        others = [vals[j] for j in range(grid.dim) if j != i]
        grad[i] = ders[i] * (np.prod(others, axis=0) if others else 1.0)
    K4 = float(np.max(np.sqrt(np.sum(grad**2, axis=0))))
    return CutoffFunction(eta, grad, width, K4)


def nash_ratio(grid: mesh.Grid, g, omega, omega_tilde) -> float | None:
    """``|g|_{L2(w~)} / (|g|_{L1(w)}^theta |grad g|^(1-theta))``; ``None`` for ``g = 0``."""
    theta = 2.0 / (2.0 + grid.dim)
    num = l2_on(grid, g, omega_tilde)
    l1 = l1_on(grid, g, omega)
    gr = math.sqrt(mesh.dirichlet_energy(grid, g))
    if l1 == 0 and num == 0:
        return None
    den = l1**theta * gr ** (1 - theta)
    return math.inf if den == 0 else num / den


@dataclass
class NashFit:
    K3: float
    ratios: np.ndarray
    n_vacuous: int
    theta: float

    def to_dict(self):
        return {"K3": self.K3, "n": int(len(self.ratios)), "n_vacuous": self.n_vacuous,
                "theta": self.theta}


def nash_poincare_check(grid: mesh.Grid, fields, omega, omega_tilde, cutoff: CutoffFunction | None = None
                        ) -> NashFit:
    """Smallest uniform ``K3`` over ``eta * g`` for ``g`` in ``fields``."""
    cut = build_cutoff(grid, omega, omega_tilde) if cutoff is None else cutoff
    ratios, vac = [], 0
    for g in fields:
        r = nash_ratio(grid, cut.field * np.asarray(g), omega, omega_tilde)
        if r is None:
            vac += 1
        else:
            ratios.append(r)
    ratios = np.asarray(ratios)
    K3 = float(np.max(ratios)) if len(ratios) else 0.0
    return NashFit(K3, ratios, vac, 2.0 / (2.0 + grid.dim))


# --------------------------------------------------------------------------
# constant ledger


@dataclass(frozen=True)
class ConstantLedger:
    """Every constant of the chain; ``log`` holds ``log K_i`` for ``i = 1..10``.

    ``K2`` and ``K9`` enter only through ``exp(K2 / tau)`` and ``exp(K9 / tau)``
    and are stored as plain numbers.  ``K2_mode="literal"`` uses
    ``K2 = exp(K / (2(1 - beta)))`` instead of ``K / (2(1 - beta))``.
    """

    beta: float
    K: float
    K3: float
    K4: float
    lam: float
    a_inf: float
    B_inf: float
    T: float
    N: int
    K2_mode: str = "derived"
    ell0: float | None = None
    ell1: float | None = None

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ObservabilityError(f"beta={self.beta} not in (0, 1)")
        if not (self.K > 0 and self.K3 > 0 and self.K4 > 0 and self.lam >= 1 and self.T > 0):
            raise ObservabilityError("ledger inputs must be positive (lam >= 1)")
        if self.K2_mode not in ("derived", "literal"):
            raise ValueError("K2_mode is 'derived' or 'literal'")

    @property
    def alpha(self) -> float:
        return self.beta / (1 - self.beta)

    @property
    def gamma(self) -> float:
        return self.alpha + (self.alpha + 1) * self.N / 2

    @property
    def theta(self) -> float:
        return 2.0 / (2.0 + self.N)

    @property
    def kappa(self) -> float:
        return math.sqrt((self.gamma + 2) / (self.gamma + 1))

    @property
    def K2(self) -> float:
        c = self.K / (2 * (1 - self.beta))
        return c if self.K2_mode == "derived" else math.exp(c)

    @property
    def K9(self) -> float:
        return (1 + 0.75 * self.N) * self.K2

    @property
    def growth(self) -> float:
        """``T(|a| + lam |B|^2 / 2)``, the log of the backward L2 growth factor."""
        return self.T * (self.a_inf + 0.5 * self.lam * self.B_inf**2)

    @property
    def log(self) -> dict:
        a, B, lam, T, N = self.a_inf, self.B_inf, self.lam, self.T, self.N
        c = self.K / (2 * (1 - self.beta))
        L = {
            "K1": c * (1 + a ** (2.0 / 3.0) + B**2 + T * (a + B**2)),
            "K2": math.log(self.K2),
            "K3": math.log(self.K3),
            "K4": math.log(self.K4),
            "K5": T * (2 * a + lam * B**2),
            "K7": LOG2 + 1.5 * math.log(lam) + T * (3 * a + lam * B**2),
            "K9": math.log(self.K9),
        }
        L["K6"] = L["K3"] + (N / 2) * (L["K3"] + L["K4"] + L["K5"])
        L["K8"] = ((self.alpha * (1 + N / 2) + N) * LOG2 + (1 + N / 2) * L["K1"] + L["K6"]
                   + (N / 2) * L["K7"])
        L["K10"] = (1 + self.gamma) * self.growth + L["K8"]
        return {k: L[k] for k in sorted(L, key=lambda s: int(s[1:]))}

    def with_sequence(self, ell0: float, ell1: float) -> "ConstantLedger":
        if not ell1 > ell0:
            raise ObservabilityError("need ell1 > ell0")
        return ConstantLedger(**{**self.__dict__, "ell0": float(ell0), "ell1": float(ell1)})

    @property
    def dtilde(self) -> float | None:
        if self.ell0 is None:
            return None
        k = self.kappa
        return 2 * self.K9 / (k * (self.ell1 - self.ell0) * (k - 1))

    @property
    def log_step_constant(self) -> float:
        """``log((3 / kappa) K10 / K9)``."""
        L = self.log
        return LOG3 - math.log(self.kappa) + L["K10"] - L["K9"]

    @property
    def log_C_obs(self) -> float | None:
        d = self.dtilde
        if d is None:
            return None
        return self.growth + (2 + self.gamma) * d * self.kappa**2 + self.log_step_constant

    def to_dict(self):
        L = self.log
        out = {f"K{i}": _exp_or_none(L[f"K{i}"]) for i in range(1, 11)}
        out.update({"log": L, "alpha": self.alpha, "gamma": self.gamma, "kappa": self.kappa,
                    "theta": self.theta, "dtilde": self.dtilde, "K2_mode": self.K2_mode,
                    "inputs": {"beta": self.beta, "K": self.K, "K3": self.K3, "K4": self.K4,
                               "lam": self.lam, "a_inf": self.a_inf, "B_inf": self.B_inf,
                               "T": self.T, "N": self.N}})
        return out


def build_ledger(fit: InterpolationFit, nash: NashFit, cutoff: CutoffFunction,
                 coef: mesh.CoefficientSet, T: float, K2_mode: str = "derived") -> ConstantLedger:
    return ConstantLedger(fit.beta, fit.K, nash.K3, cutoff.K4, coef.lam, coef.a_inf, coef.B_inf,
                          float(T), coef.grid.dim, K2_mode)


# --------------------------------------------------------------------------
# epsilon forms


@dataclass(frozen=True)
class EpsilonForm:
    """The two one-parameter forms of the two-time inequality, in log space.

    ``|u(t2)| <= eps |u(t1)| + K1 eps^-alpha e^{K2/tau} |u(t2)|_{L2(w~)}``
    ``|u(t2)| <= 2 eps |u(t1)| + K8 (2 eps)^-gamma e^{K9/tau} |u(t2)|_{L1(w)}``
    """

    ledger: ConstantLedger

    def log_coef_l2(self, eps: float, tau: float) -> float:
        L = self.ledger
        return L.log["K1"] - L.alpha * math.log(eps) + L.K2 / tau

    def log_coef_l1(self, eps: float, tau: float) -> float:
        L = self.ledger
        return L.log["K8"] - L.gamma * math.log(2 * eps) + L.K9 / tau


def epsilon_form(ledger: ConstantLedger) -> EpsilonForm:
    return EpsilonForm(ledger)


def _log_rhs(log_a, log_b):
    return float(np.logaddexp(log_a, log_b))


def _safe_log(v):
    return math.log(v) if v > 0 else -math.inf


def check_epsilon_forms(traj: Trajectory, form: EpsilonForm, omega, omega_tilde, pairs,
                        eps=(0.1, 1.0, 10.0)) -> list[dict]:
    """Log residuals (LHS over RHS) of both forms for each ``(t1, t2)`` and ``eps``."""
    g = traj.grid
    out = []
    for t1, t2 in pairs:
        if not t2 > t1:
            raise ValueError("need t2 > t1")
        u1, u2 = traj.at(t1), traj.at(t2)
        n1, n2 = mesh.norm(g, u1), mesh.norm(g, u2)
        loc2, loc1 = l2_on(g, u2, omega_tilde), l1_on(g, u2, omega)
        for e in eps:
            tau = t2 - t1
            r_l2 = _safe_log(n2) - _log_rhs(math.log(e) + _safe_log(n1),
                                            form.log_coef_l2(e, tau) + _safe_log(loc2))
            r_l1 = _safe_log(n2) - _log_rhs(LOG2 + math.log(e) + _safe_log(n1),
                                            form.log_coef_l1(e, tau) + _safe_log(loc1))
            out.append({"t1": float(t1), "t2": float(t2), "eps": float(e),
                        "log_residual_l2": r_l2, "log_residual_l1": r_l1,
                        "passed": bool(r_l2 <= 0 and r_l1 <= 0)})
    return out


# --------------------------------------------------------------------------
# time sets and the telescoping sequence


@dataclass(frozen=True)
class TimeSet:
    """Finite union of disjoint open intervals inside ``(0, T)``."""

    intervals: tuple
    T: float

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.intervals)
        if not iv:
            raise ObservabilityError("E is empty")
        for a, b in iv:
            if not 0 <= a < b <= self.T:
                raise ObservabilityError(f"interval ({a}, {b}) not inside (0, {self.T})")
        for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
            if a1 < b0:
                raise ObservabilityError("intervals of E overlap")
        object.__setattr__(self, "intervals", tuple(iv))

    @property
    def measure(self) -> float:
        return sum(b - a for a, b in self.intervals)

    def measure_in(self, lo: float, hi: float) -> float:
        """``|E intersect (lo, hi)|``."""
        return sum(max(0.0, min(b, hi) - max(a, lo)) for a, b in self.intervals)

    def density_point(self) -> float:
        """Midpoint of the longest interval (first one on ties)."""
        a, b = max(self.intervals, key=lambda ab: ab[1] - ab[0])
        return 0.5 * (a + b)

    def pieces(self, lo: float, hi: float):
        for a, b in self.intervals:
            c, d = max(a, lo), min(b, hi)
            if d > c:
                yield c, d


def telescoping_sequence(ell0: float, ell1: float, kappa: float, m_max: int) -> np.ndarray:
    """``L[0] = l0`` and ``L[m] = l0 + (l1 - l0) / kappa^(m-1)`` for ``m = 1..m_max``."""
    m = np.arange(1, m_max + 1)
    return np.concatenate([[ell0], ell0 + (ell1 - ell0) / kappa ** (m - 1.0)])


def measure_condition(E: TimeSet, ells: np.ndarray, m_check: int) -> np.ndarray:
    """Per-``m`` slack ``3|E intersect (l_{m+1}, l_m)| - (l_m - l_{m+1})`` for ``m = 1..m_check``."""
    return np.array([3 * E.measure_in(ells[m + 1], ells[m]) - (ells[m] - ells[m + 1])
                     for m in range(1, m_check + 1)])


@dataclass(frozen=True)
class TelescopingSequence:
    E: TimeSet
    ell0: float
    ell1: float
    kappa: float
    ells: np.ndarray
    m_check: int
    condition_slack: np.ndarray

    @property
    def verified(self) -> bool:
        return bool(np.all(self.condition_slack >= 0))

    def ell(self, m: int) -> float:
        if m == 0:
            return self.ell0
        return self.ell0 + (self.ell1 - self.ell0) / self.kappa ** (m - 1)


def select_telescoping_sequence(E: TimeSet, kappa: float, m_check: int = 40, n_search: int = 2000,
                                search_floor: float = 0.0) -> TelescopingSequence:
    """Density point ``l0`` and the largest grid value ``l1 < T`` passing the measure test.

    Candidates ``l1 = T - j (T - l0) / n_search`` are tried for decreasing
    ``l1`` down to ``l0 + search_floor (T - l0)``.
    """
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    if not E.measure > 0:
        raise ObservabilityError("E has zero measure")
    l0 = E.density_point()
    stop = l0 + search_floor * (E.T - l0)
    for j in range(1, n_search):
        l1 = E.T - j * (E.T - l0) / n_search
        if l1 <= stop:
            break
        ells = telescoping_sequence(l0, l1, kappa, m_check + 1)
        sl = measure_condition(E, ells, m_check)
        if np.all(sl >= 0):
            return TelescopingSequence(E, l0, l1, kappa, ells, m_check, sl)
    raise ObservabilityError("no admissible l1 found above the search floor")


def integrate_on_set(t, values, E: TimeSet, lo: float, hi: float) -> float:
    """Integral of the piecewise-linear interpolant of ``values`` over ``E intersect (lo, hi)``.

    Stamps that straddle an interval end contribute by the overlap only.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    total = 0.0
    for c, d in E.pieces(lo, hi):
        inner = t[(t > c) & (t < d)]
        pts = np.concatenate([[c], inner, [d]])
        total += float(np.trapezoid(np.interp(pts, t, v), pts))
    return total


# --------------------------------------------------------------------------
# the final inequality


@dataclass
class ObservabilityReport:
    ledger: ConstantLedger
    sequence: TelescopingSequence
    norm_T: float
    integral: float
    log_residual: float
    telescoped: list

    @property
    def log_C_obs(self) -> float:
        return self.ledger.log_C_obs

    @property
    def passed(self) -> bool:
        return self.log_residual <= 0 and all(r["passed"] for r in self.telescoped)

    def to_dict(self, fit: InterpolationFit | None = None):
        out = {}
        if fit is not None:
            out.update({"beta": fit.beta, "K": fit.K})
        out.update({
            "ledger": self.ledger.to_dict(),
            "E": [list(iv) for iv in self.sequence.E.intervals],
            "ell0": self.sequence.ell0, "ell1": self.sequence.ell1,
            "C_obs": _exp_or_none(self.log_C_obs), "log_C_obs": self.log_C_obs,
            "norm_T": self.norm_T, "integral": self.integral,
            "margins": [{"check": "final", "log_residual": self.log_residual}]
            + [{"check": f"telescoped_m{r['m']}", "log_residual": r["log_residual"]} for r in self.telescoped],
            "passed": self.passed,
        })
        return out


def _check_stamps(traj: Trajectory, E: TimeSet, min_stamps: int = 4):
    for a, b in E.intervals:
        k = int(np.sum((traj.t >= a) & (traj.t <= b)))
        if k < min_stamps:
            raise ObservabilityError(f"interval ({a}, {b}) of E holds {k} < {min_stamps} stamps")


def verify_observability(traj: Trajectory, seq: TelescopingSequence, omega, ledger: ConstantLedger,
                         ms=range(2, 11)) -> ObservabilityReport:
    """``|u(T)| <= C_obs int_0^T chi_E |u|_{L1(w)}`` and the telescoped step for each ``m``.

    The step reads
    ``e^{-(1+g) d k^(m+2)} |u(l_m)| - e^{-(2+g) d k^(m+2)} |u(l_{m+2})|
    <= (3/k)(K10/K9) int_{l_{m+1}}^{l_m} chi_E |u|_{L1(w)}``
    and is evaluated after factoring out ``e^{-(1+g) d k^(m+2)}``.
    """
    if ledger.ell0 is None:
        ledger = ledger.with_sequence(seq.ell0, seq.ell1)
    if not (math.isclose(ledger.ell0, seq.ell0) and math.isclose(ledger.ell1, seq.ell1)):
        raise ObservabilityError("ledger and sequence disagree on l0, l1")
    if not math.isclose(ledger.kappa, seq.kappa, rel_tol=1e-12):
        raise ObservabilityError("sequence was built with a different kappa")
    if not math.isclose(traj.T, seq.E.T, rel_tol=1e-12):
        raise ObservabilityError("trajectory and time set have different horizons")
    _check_stamps(traj, seq.E)
    g = traj.grid
    l1 = np.array([l1_on(g, u, omega) for u in traj.u])
    integral = integrate_on_set(traj.t, l1, seq.E, 0.0, traj.T)
    nT = mesh.norm(g, traj.u[-1])
    logC = ledger.log_C_obs
    if nT == 0:
        res = -math.inf
    else:
        res = math.log(nT) - (logC + _safe_log(integral))
    gam, d, k = ledger.gamma, ledger.dtilde, ledger.kappa
    rows = []
    for m in ms:
        lm, lm1, lm2 = seq.ell(m), seq.ell(m + 1), seq.ell(m + 2)
        w = d * k ** (m + 2)
        bracket = mesh.norm(g, traj.at(lm)) - math.exp(-w) * mesh.norm(g, traj.at(lm2))
        part = integrate_on_set(traj.t, l1, seq.E, lm1, lm)
        if bracket <= 0:
            r = -math.inf
        else:
            r = -(1 + gam) * w + math.log(bracket) - (ledger.log_step_constant + _safe_log(part))
        rows.append({"m": int(m), "ell_m": lm, "log_residual": r, "passed": bool(r <= 0)})
    return ObservabilityReport(ledger, seq, nT, integral, res, rows)
