"""Three-point interpolation for a pair of differential inequalities.

Given positive ``y, N`` on ``[0, T]`` with

    |y'/2 + N y| <= (N/2 + S0/G(t) + S1) y + F1 y,
    N'           <= ((1 + S0)/G(t) + S1) N + F2,        G(t) = T - t + h,

one gets, for ``t1 < t2 < t3`` and every ``M >= M0``,

    y(t2)^(1+M) <= y(t3) y(t1)^M e^D (G(t1)/G(t3))^(3 S0 (1+M)).

This module evaluates ``M0`` and ``D``, checks hypotheses and conclusion on
sampled data, exposes the intermediate bounds of the argument as diagnostics,
and provides a constructive sampler that produces inputs satisfying the
hypotheses exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp


class LemmaNotApplicable(ValueError):
    """Raised for ``M < M0``, where the interpolation statement says nothing."""


@dataclass
class OdeLemmaInput:
    T: float
    h: float
    y: Callable
    N: Callable
    F1: Callable
    F2: Callable
    S0: float
    S1: float
    t1: float
    t2: float
    t3: float
    ts: np.ndarray = field(default=None)  # sample grid for hypothesis checks
    _samples: dict | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (self.T > 0 and self.h > 0):
            raise ValueError("T and h must be positive")
        if self.S0 < 0 or self.S1 < 0:
            raise ValueError("S0, S1 must be nonnegative")
        if not 0 <= self.t1 <= self.t2 <= self.t3 <= self.T:
            raise ValueError("need 0 <= t1 <= t2 <= t3 <= T")
        if self.ts is None:
            self.ts = np.linspace(0.0, self.T, 2001)

    @classmethod
    def from_samples(cls, ts, y, N, F1, F2, *, T, h, S0, S1, t1, t2, t3):
        """Build from arrays on ``ts``; ``y`` and ``N`` must be strictly positive."""
        ts = np.asarray(ts, dtype=float)
        y, N, F1, F2 = (np.asarray(v, dtype=float) for v in (y, N, F1, F2))
        if np.any(np.diff(ts) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if np.any(y <= 0) or np.any(N <= 0):
            raise ValueError("y and N must be strictly positive at every sample")
        ly = np.log(y)
        return cls(T, h, lambda t: np.exp(np.interp(t, ts, ly)), lambda t: np.interp(t, ts, N),
                   lambda t: np.interp(t, ts, F1), lambda t: np.interp(t, ts, F2), S0, S1, t1, t2, t3,
                   ts=ts, _samples={"y": y, "N": N, "F1": F1, "F2": F2})

    def Gamma(self, t):
        return self.T - t + self.h


def _integral_abs(inp: OdeLemmaInput, name: str, a: float, b: float) -> float:
    if b <= a:
        return 0.0
    if inp._samples is not None:
        ts = inp.ts
        inside = (ts > a) & (ts < b)
        tt = np.concatenate([[a], ts[inside], [b]])
        vals = np.abs(np.interp(tt, ts, inp._samples[name]))
        return float(np.trapezoid(vals, tt))
    key = (name, a, b)
    if key in inp._cache:
        return inp._cache[key]
    fn = getattr(inp, name)
    val, _ = quad(lambda t: abs(float(fn(t))), a, b, limit=400, epsabs=1e-13, epsrel=1e-11)
    inp._cache[key] = float(val)
    return float(val)


def _weight_integral(inp, a, b, sign=+1.0, ref=None):
    """``int_a^b e^{sign S1 (t - ref)} / G(t)^(1+S0) dt`` by adaptive quadrature."""
    ref = inp.t2 if ref is None else ref
    f = lambda t: np.exp(sign * inp.S1 * (t - ref)) / inp.Gamma(t) ** (1 + inp.S0)  # noqa: E731
    val, _ = quad(f, a, b, limit=400, epsabs=0.0, epsrel=1e-12)
    return float(val)


def compute_M0(inp: OdeLemmaInput) -> float:
    if not inp.t2 > inp.t1:
        raise ValueError("t2 must exceed t1")
    return 3.0 * _weight_integral(inp, inp.t2, inp.t3) / _weight_integral(inp, inp.t1, inp.t2)


def compute_D(inp: OdeLemmaInput, M: float) -> float:
    if M < 0:
        raise ValueError("M must be nonnegative")
    I2 = _integral_abs(inp, "F2", inp.t1, inp.t3)
    I1 = _integral_abs(inp, "F1", inp.t1, inp.t3)
    return 3.0 * (M + 1.0) * ((I2 + inp.S1) * (inp.t3 - inp.t1) + I1)


@dataclass
class HypothesisReport:
    t: np.ndarray
    residual_y: np.ndarray  # lhs - rhs of the first inequality (<= slack passes)
    residual_N: np.ndarray
    slack: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residual_y <= self.slack) and np.all(self.residual_N <= self.slack))

    @property
    def passed_y(self) -> bool:
        return bool(np.all(self.residual_y <= self.slack))

    @property
    def passed_N(self) -> bool:
        return bool(np.all(self.residual_N <= self.slack))


def check_hypotheses(inp: OdeLemmaInput, slack: float = 0.0) -> HypothesisReport:
    """Centered-difference residuals of both hypotheses at interior samples."""
    ts = inp.ts
    if len(ts) < 3:
        raise ValueError("need at least 3 samples")
    y = np.asarray(inp.y(ts), dtype=float)
    N = np.asarray(inp.N(ts), dtype=float)
    F1 = np.asarray(inp.F1(ts), dtype=float)
    F2 = np.asarray(inp.F2(ts), dtype=float)
    yp = np.gradient(y, ts)[1:-1]
    Np = np.gradient(N, ts)[1:-1]
    t, y, N, F1, F2 = ts[1:-1], y[1:-1], N[1:-1], F1[1:-1], F2[1:-1]
    G = inp.Gamma(t)
    r1 = np.abs(0.5 * yp + N * y) - ((0.5 * N + inp.S0 / G + inp.S1) * y + F1 * y)
    r2 = Np - (((1 + inp.S0) / G + inp.S1) * N + F2)
    return HypothesisReport(t, r1, r2, slack)


@dataclass
class ConclusionReport:
    M: float
    M0: float
    D: float
    log_lhs: float
    log_rhs: float

    @property
    def passed(self) -> bool:
        return bool(self.log_lhs <= self.log_rhs + 1e-12 * abs(self.log_rhs))

    @property
    def margin(self) -> float:
        return self.log_rhs - self.log_lhs


def conclusion_logs(inp: OdeLemmaInput, M: float, D: float | None = None) -> tuple[float, float]:
    y1, y2, y3 = (float(inp.y(t)) for t in (inp.t1, inp.t2, inp.t3))
    D = compute_D(inp, M) if D is None else D
    lhs = (1 + M) * np.log(y2)
    rhs = np.log(y3) + M * np.log(y1) + D + 3 * inp.S0 * (1 + M) * np.log(inp.Gamma(inp.t1) / inp.Gamma(inp.t3))
    return float(lhs), float(rhs)


def check_conclusion(inp: OdeLemmaInput, M: float) -> ConclusionReport:
    M0 = compute_M0(inp)
    if M < M0 * (1 - 1e-12):
        raise LemmaNotApplicable(f"M={M} below threshold M0={M0}")
    D = compute_D(inp, M)
    lhs, rhs = conclusion_logs(inp, M, D)
    return ConclusionReport(M, M0, D, lhs, rhs)


# --------------------------------------------------------------------------
# intermediate bounds of the argument (returned as (lhs, rhs) with lhs <= rhs)


def intermediate_bounds(inp: OdeLemmaInput, M: float | None = None, n_probe: int = 9) -> dict:
    """Each intermediate inequality of the proof, evaluated on ``inp``.

    Keys: ``N_lower`` (lower bound for N on (t1,t2)), ``log_ratio`` (integrated
    form on [t1,t2]), ``N_upper`` (upper bound for N on (t2,t3)), ``y_forward``
    (bound for y(t2) through y(t3)), ``combined`` (the last step for a given M).
    Array entries are probed at ``n_probe`` interior points.
    """
    t1, t2, t3, S0, S1 = inp.t1, inp.t2, inp.t3, inp.S0, inp.S1
    G = inp.Gamma
    y1, y2, y3 = (float(inp.y(t)) for t in (t1, t2, t3))
    N2 = float(inp.N(t2))
    I_F2_12 = _integral_abs(inp, "F2", t1, t2)
    I_F2_23 = _integral_abs(inp, "F2", t2, t3)
    I_F1_12 = _integral_abs(inp, "F1", t1, t2)
    I_F1_23 = _integral_abs(inp, "F1", t2, t3)
    out = {}

    ta = np.linspace(t1, t2, n_probe + 2)[1:-1]
    lo = (G(t2) / G(ta)) ** (1 + S0) * np.exp(-S1 * (t2 - ta)) * N2 - I_F2_12
    out["N_lower"] = (lo, np.asarray(inp.N(ta), dtype=float))

    I1 = _weight_integral(inp, t1, t2, +1.0, ref=t2) * G(t2) ** (1 + S0)
    log_Y = (np.log(y1 / y2) + 2 * S0 * np.log(G(t1) / G(t2))
             + 2 * (t2 - t1) * (S1 + I_F2_12) + 2 * I_F1_12)
    out["log_ratio"] = (N2 * I1, log_Y)

    tb = np.linspace(t2, t3, n_probe + 2)[1:-1]
    up = np.exp(S1 * (tb - t2)) * (G(t2) / G(tb)) ** (1 + S0) * (N2 + I_F2_23)
    out["N_upper"] = (np.asarray(inp.N(tb), dtype=float), up)

    I2 = _weight_integral(inp, t2, t3, +1.0, ref=t2) * G(t2) ** (1 + S0)
    log_fwd = (3 * (N2 + I_F2_23) * I2 + np.log(y3) + 3 * S0 * np.log(G(t2) / G(t3))
               + 3 * S1 * (t3 - t2) + 3 * I_F1_23)
    out["y_forward"] = (np.log(y2), log_fwd)

    M = compute_M0(inp) if M is None else M
    log_comb = (np.log(y3) + M * log_Y + M * (t2 - t1) * I_F2_23 + 3 * S0 * np.log(G(t2) / G(t3))
                + 3 * S1 * (t3 - t2) + 3 * I_F1_23)
    out["combined"] = (np.log(y2), log_comb)
    out["log_ratio_at_least_zero"] = (0.0, log_Y)
    return out


def bounds_hold(bounds: dict, rtol: float = 1e-9) -> dict:
    res = {}
    for k, (lhs, rhs) in bounds.items():
        lhs, rhs = np.asarray(lhs), np.asarray(rhs)
        res[k] = bool(np.all(lhs <= rhs + rtol * (1 + np.abs(rhs))))
    return res


# --------------------------------------------------------------------------
# constructive sampler


def _smooth_random(rng, T, n_modes=4, amp=1.0):
    a = rng.uniform(-1, 1, n_modes) * amp / np.arange(1, n_modes + 1)
    ph = rng.uniform(0, 2 * np.pi, n_modes)
    k = np.arange(1, n_modes + 1)

    w = np.pi * k / T
    a, w, ph = a.tolist(), w.tolist(), ph.tolist()
    aa, ww, pp = np.array(a), np.array(w), np.array(ph)

    modes = list(zip(a, w, ph))

    def f(t):
        if isinstance(t, float) or np.ndim(t) == 0:
            v = 0.0
            for ai, wi, pi in modes:
                v += ai * math.sin(wi * t + pi)
            return v
        t = np.asarray(t, dtype=float)
        return np.sin(np.multiply.outer(t, ww) + pp) @ aa
    f.modes = (aa, ww, pp)
    return f


def _fused(fns):
    """Evaluate several :func:`_smooth_random` functions with one ``sin`` call."""
    W = np.concatenate([fn.modes[1] for fn in fns])
    P = np.concatenate([fn.modes[2] for fn in fns])
    A = np.zeros((len(fns), len(W)))
    j = 0
    for i, fn in enumerate(fns):
        k = len(fn.modes[0])
        A[i, j:j + k] = fn.modes[0]
        j += k
    return lambda t: A @ np.sin(W * t + P)


def _squash(f):
    def g(t):
        v = f(t)
        return math.tanh(2.0 * v) if np.ndim(v) == 0 else np.tanh(2.0 * v)
    return g


def constructive_sample(seed: int) -> OdeLemmaInput:
    """Random input satisfying both hypotheses exactly (continuum sense).

    ``N`` solves ``N' = rho c N + F2`` with ``|rho| <= 1`` and ``c = (1+S0)/G + S1``;
    ``y`` solves ``(log y)'/2 = -N + sigma (N/2 + S0/G + S1 + F1)`` with ``|sigma| <= 1``.
    Draws producing a non-positive ``N`` are rejected and redrawn.
    """
    rng = np.random.default_rng(seed)
    for _ in range(100):
        T = rng.uniform(0.5, 3.0)
        h = rng.uniform(0.05, 1.0)
        S0 = rng.choice([0.0, rng.uniform(0, 2)])
        S1 = rng.choice([0.0, rng.uniform(0, 2)])
        rho_raw = _smooth_random(rng, T)
        sigma_raw = _smooth_random(rng, T)
        F1 = _smooth_random(rng, T, amp=rng.uniform(0, 1))
        F2 = _smooth_random(rng, T, amp=rng.uniform(0, 2))
        N0 = rng.uniform(0.5, 10.0)
        ev = _fused((rho_raw, sigma_raw, F1, F2))

        def rhs(t, z, S0=S0, S1=S1, ev=ev, T=T, h=h):
            N, ly = z
            v = ev(t)
            r, sg, f1, f2 = math.tanh(2.0 * v[0]), math.tanh(2.0 * v[1]), v[2], v[3]
            G = T - t + h
            dN = r * ((1 + S0) / G + S1) * N + f2
            dly = 2.0 * (-N + sg * (0.5 * N + S0 / G + S1 + f1))
            return [dN, dly]

        sol = solve_ivp(rhs, (0.0, T), [N0, 0.0], method="DOP853", rtol=1e-10, atol=1e-12, dense_output=True)
        ts = np.linspace(0.0, T, 4001)
        Z = sol.sol(ts)
        G_ts = T - ts + h
        width = 0.5 * Z[0] + S0 / G_ts + S1 + F1(ts)
        if not sol.success or np.any(Z[0] <= 1e-3) or np.any(width < 0):
            continue
        tt = np.sort(rng.uniform(0, T, 3))
        if np.min(np.diff(tt)) < 0.05 * T:
            continue
        t1, t2, t3 = map(float, tt)
        return OdeLemmaInput(T, h, lambda t, s=sol: np.exp(s.sol(t)[1]), lambda t, s=sol: s.sol(t)[0],
                             F1, F2, float(S0), float(S1), t1, t2, t3, ts=ts)
    raise RuntimeError(f"sampler failed to produce a valid input for seed {seed}")
