"""Experiment configuration: INI text with a fixed set of sections.

Grammar (``;`` separates axes or intervals, whitespace separates run names)::

    [domain]        extents = 0, 1            (2D: 0, 1; 0, 2)
    [grid]          n = 129
    [time]          T = 1.0, dt = 1e-3, startup_steps = 2
    [coefficients]  A = 1 + 0.5*x   (2D: A11, A12, A22)
                    B = 0.5         (2D: B = bx; by)
                    a = 0, lam = auto
    [regions]       omega_tilde = 0.4, 0.6; omega = 0.3, 0.7; E = 0, 0.5
    [carleman]      s = auto, h = 0.1, l = 2, M = auto, stride = 1
    [runs]          fit = mode:0 mode:1 random:1   holdout = random:101
                    observe = random:1   interp_time = 0.5   fit_times = 10
    [identities]    ns = 129, 257, 513
    [suites]        run = energy identities ...
    [output]        dir = out, format = json, plots = true
    [seed]          value = 0

Expressions follow :mod:`neumann_uc.expr`. Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

import numpy as np

from . import expr, mesh

SUITES = ("weights", "solve", "energy", "identities", "frequency", "interpolation", "observability")

_KEYS = {
    "domain": {"extents"},
    "grid": {"n"},
    "time": {"t", "dt", "startup_steps"},
    "coefficients": {"A", "B", "a", "lam", "A11", "A12", "A22"},
    "regions": {"omega_tilde", "omega", "e"},
    "carleman": {"s", "h", "l", "m", "stride"},
    "runs": {"fit", "holdout", "observe", "interp_time", "fit_times"},
    "identities": {"ns"},
    "suites": {"run"},
    "output": {"dir", "format", "plots"},
    "seed": {"value"},
}


class ConfigError(ValueError):
    """Validation failure naming the offending ``section.key``."""

    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.field = fieldname


@dataclass(frozen=True)
class ExperimentConfig:
    extents: tuple
    n: int = 129
    T: float = 1.0
    dt: float = 1e-3
    startup_steps: int = 2
    A: tuple = ("1",)
    B: tuple = ("0",)
    a: str = "0"
    lam: float | None = None
    omega_tilde: tuple = ((0.4, 0.6),)
    omega: tuple = ((0.3, 0.7),)
    E: tuple = ((0.0, 0.5),)
    s: float | None = None
    h: float = 0.1
    l: float = 2.0
    M: float | None = None
    stride: int = 1
    fit_runs: tuple = ("mode:0", "mode:1", "mode:2", "mode:3", "mode:4", "mode:5", "mode:6", "mode:7",
                       "random:1", "random:2", "random:3", "random:4")
    holdout_runs: tuple = ("random:101", "random:102", "random:103", "random:104")
    observe_runs: tuple = ("mode:1", "random:1")
    interp_time: float = 0.5
    fit_times: int = 10
    identity_ns: tuple = (129, 257, 513)
    suites: tuple = SUITES
    out_dir: str = "out"
    format: str = "json"
    plots: bool = True
    seed: int = 0
    echo: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return len(self.extents)

    def grid(self, n: int | None = None) -> mesh.Grid:
        return mesh.build_grid(self.extents, self.n if n is None else n)

    def coefficients(self, grid: mesh.Grid | None = None) -> mesh.CoefficientSet:
        g = self.grid() if grid is None else grid
        X = g.coords
        fields = [expr.compile_expression(e, self.dim)(X) for e in self.A]
        if self.dim == 1 or len(fields) == 1:
            A = fields[0]
        else:
            a11, a12, a22 = fields
            A = np.stack([np.stack([a11, a12]), np.stack([a12, a22])])
        B = np.stack([expr.compile_expression(e, self.dim)(X) for e in self.B])
        a = expr.compile_expression(self.a, self.dim)(X)
        return mesh.coefficients(g, A=A, B=B, a=a, lam=self.lam)

    def box(self, which: str):
        b = getattr(self, which)
        return b[0] if self.dim == 1 else b

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        validate(cfg)
        return cfg

    def to_dict(self) -> dict:
        return {
            "extents": [list(e) for e in self.extents], "n": self.n, "T": self.T, "dt": self.dt,
            "startup_steps": self.startup_steps, "A": list(self.A), "B": list(self.B), "a": self.a,
            "lam": self.lam, "omega_tilde": [list(b) for b in self.omega_tilde],
            "omega": [list(b) for b in self.omega], "E": [list(b) for b in self.E],
            "s": self.s, "h": self.h, "l": self.l, "M": self.M, "stride": self.stride,
            "fit_runs": list(self.fit_runs), "holdout_runs": list(self.holdout_runs),
            "observe_runs": list(self.observe_runs), "interp_time": self.interp_time,
            "fit_times": self.fit_times, "identity_ns": list(self.identity_ns),
            "suites": list(self.suites), "format": self.format, "plots": self.plots, "seed": self.seed,
        }


# --------------------------------------------------------------------------
# parsing helpers


def _pairs(text, fieldname, count=None):
    out = []
    for part in str(text).split(";"):
        nums = part.replace(",", " ").split()
        if len(nums) != 2:
            raise ConfigError(fieldname, f"expected 'lo, hi' pairs, got {part.strip()!r}")
        try:
            lo, hi = float(nums[0]), float(nums[1])
        except ValueError:
            raise ConfigError(fieldname, f"non-numeric bound in {part.strip()!r}") from None
        if not hi > lo:
            raise ConfigError(fieldname, f"empty interval ({lo}, {hi})")
        out.append((lo, hi))
    if count is not None and len(out) != count:
        raise ConfigError(fieldname, f"expected {count} axis pair(s), got {len(out)}")
    return tuple(out)


def _num(sec, key, fieldname, kind=float, allow_auto=False):
    v = sec[key].strip()
    if allow_auto and v.lower() == "auto":
        return None
    try:
        return kind(v)
    except ValueError:
        raise ConfigError(fieldname, f"cannot read {v!r} as {kind.__name__}") from None


def _bool(v, fieldname):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(fieldname, f"not a boolean: {v!r}")


def _read(text):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # "A" and "a" are different coefficients
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError("file", str(e).splitlines()[0]) from None
    out = {}
    for sec in cp.sections():
        if sec not in _KEYS:
            raise ConfigError(sec, "unknown section")
        items = {}
        for key, val in cp[sec].items():
            k = key if sec == "coefficients" else key.lower()
            if k not in _KEYS[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")
            items[k] = val.strip()
        out[sec] = items
    return out


def parse_config(text: str) -> ExperimentConfig:
    cp = _read(text)
    sec = lambda name: cp.get(name, {})  # noqa: E731
    if "extents" not in sec("domain"):
        raise ConfigError("domain.extents", "required")
    kw = {"extents": _pairs(cp["domain"]["extents"], "domain.extents")}
    dim = len(kw["extents"])
    if dim not in (1, 2):
        raise ConfigError("domain.extents", "only 1D intervals and 2D rectangles are supported")
    g = sec("grid")
    if "n" in g:
        kw["n"] = _num(g, "n", "grid.n", int)
    t = sec("time")
    if "t" in t:
        kw["T"] = _num(t, "t", "time.T")
    if "dt" in t:
        kw["dt"] = _num(t, "dt", "time.dt")
    if "startup_steps" in t:
        kw["startup_steps"] = _num(t, "startup_steps", "time.startup_steps", int)
    c = sec("coefficients")
    if any(k in c for k in ("A11", "A12", "A22")):
        if dim != 2 or "A" in c:
            raise ConfigError("coefficients.A11", "matrix entries need a 2D domain and no scalar A")
        kw["A"] = tuple(c.get(k, "0" if k == "A12" else "1") for k in ("A11", "A12", "A22"))
    elif "A" in c:
        kw["A"] = (c["A"],)
    if "a" in c:
        kw["a"] = c["a"]
    if "B" in c:
        parts = tuple(p.strip() for p in c["B"].split(";"))
        if len(parts) == 1 and dim == 2:
            parts = parts * 2
        if len(parts) != dim:
            raise ConfigError("coefficients.B", f"expected {dim} components")
        kw["B"] = parts
    if "lam" in c:
        kw["lam"] = _num(c, "lam", "coefficients.lam", allow_auto=True)
    r = sec("regions")
    if "omega_tilde" in r:
        kw["omega_tilde"] = _pairs(r["omega_tilde"], "regions.omega_tilde", dim)
    if "omega" in r:
        kw["omega"] = _pairs(r["omega"], "regions.omega", dim)
    if "e" in r:
        kw["E"] = _pairs(r["e"], "regions.E")
    ca = sec("carleman")
    if "s" in ca:
        kw["s"] = _num(ca, "s", "carleman.s", allow_auto=True)
    if "h" in ca:
        kw["h"] = _num(ca, "h", "carleman.h")
    if "l" in ca:
        kw["l"] = _num(ca, "l", "carleman.l")
    if "m" in ca:
        kw["M"] = _num(ca, "m", "carleman.M", allow_auto=True)
    if "stride" in ca:
        kw["stride"] = _num(ca, "stride", "carleman.stride", int)
    ru = sec("runs")
    for key, name in (("fit", "fit_runs"), ("holdout", "holdout_runs"), ("observe", "observe_runs")):
        if key in ru:
            kw[name] = tuple(ru[key].split())
    if "interp_time" in ru:
        kw["interp_time"] = _num(ru, "interp_time", "runs.interp_time")
    if "fit_times" in ru:
        kw["fit_times"] = _num(ru, "fit_times", "runs.fit_times", int)
    if "ns" in sec("identities"):
        try:
            kw["identity_ns"] = tuple(int(v) for v in cp["identities"]["ns"].replace(",", " ").split())
        except ValueError:
            raise ConfigError("identities.ns", "expected integers") from None
    if "run" in sec("suites"):
        kw["suites"] = tuple(cp["suites"]["run"].replace(",", " ").split())
    o = sec("output")
    if "dir" in o:
        kw["out_dir"] = o["dir"]
    if "format" in o:
        kw["format"] = o["format"]
    if "plots" in o:
        kw["plots"] = _bool(o["plots"], "output.plots")
    if "value" in sec("seed"):
        kw["seed"] = _num(cp["seed"], "value", "seed.value", int)
    kw["echo"] = cp
    cfg = ExperimentConfig(**kw)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError("file", f"cannot read {path}: {e.strerror}") from None
    return parse_config(text)


def default_config() -> ExperimentConfig:
    """Heat equation on (0, 1) with the default regions and run family."""
    return ExperimentConfig(extents=((0.0, 1.0),))


# --------------------------------------------------------------------------
# validation


def _inside(box, extents, strict=False):
    for (lo, hi), (a, b) in zip(box, extents):
        if strict and not (a < lo and hi < b):
            return False
        if not (a <= lo and hi <= b):
            return False
    return True


def validate(cfg: ExperimentConfig) -> None:
    dim = cfg.dim
    for name in ("omega_tilde", "omega"):
        box = getattr(cfg, name)
        if len(box) != dim:
            raise ConfigError(f"regions.{name}", f"expected {dim} axis pair(s)")
        if not _inside(box, cfg.extents, strict=True):
            raise ConfigError(f"regions.{name}", "region must lie strictly inside the domain")
    if not _inside(cfg.omega_tilde, cfg.omega, strict=True):
        raise ConfigError("regions.omega_tilde", "must be compactly contained in omega")
    if cfg.n < 8:
        raise ConfigError("grid.n", "need at least 8 nodes per axis")
    if not cfg.T > 0:
        raise ConfigError("time.T", "must be positive")
    if not cfg.dt > 0:
        raise ConfigError("time.dt", "must be positive")
    K = round(cfg.T / cfg.dt)
    if K < 1 or abs(K * cfg.dt - cfg.T) > 1e-9 * cfg.T:
        raise ConfigError("time.dt", f"dt={cfg.dt} does not divide T={cfg.T}")
    if cfg.startup_steps < 0:
        raise ConfigError("time.startup_steps", "must be >= 0")
    for a, b in cfg.E:
        if not (0 <= a < b <= cfg.T):
            raise ConfigError("regions.E", f"interval ({a}, {b}) not inside (0, T)")
    iv = sorted(cfg.E)
    if any(a1 < b0 for (_, b0), (a1, _) in zip(iv, iv[1:])):
        raise ConfigError("regions.E", "intervals overlap")
    if cfg.s is not None and not 0 < cfg.s <= 1:
        raise ConfigError("carleman.s", "must lie in (0, 1]")
    if not 0 < cfg.h <= 1:
        raise ConfigError("carleman.h", "must lie in (0, 1]")
    if not cfg.l > 1:
        raise ConfigError("carleman.l", "must exceed 1")
    if cfg.h > cfg.T / (4 * cfg.l) * (1 + 1e-12):
        raise ConfigError("carleman.h", "need h <= T / (4 l)")
    if cfg.stride < 1:
        raise ConfigError("carleman.stride", "must be >= 1")
    if not 0 < cfg.interp_time <= cfg.T:
        raise ConfigError("runs.interp_time", "must lie in (0, T]")
    if cfg.fit_times < 1:
        raise ConfigError("runs.fit_times", "must be >= 1")
    if len(cfg.fit_runs) < 8:
        raise ConfigError("runs.fit", "need at least 8 fitting runs")
    if len(set(cfg.fit_runs)) != len(cfg.fit_runs):
        raise ConfigError("runs.fit", "fitting runs must be distinct")
    if not cfg.observe_runs:
        raise ConfigError("runs.observe", "need at least one run")
    for name in ("fit_runs", "holdout_runs", "observe_runs"):
        for datum in getattr(cfg, name):
            kind, _, arg = datum.partition(":")
            ok = kind == "one" or (kind in ("mode", "random", "smooth") and arg)
            if kind == "mode" and ok:
                ok = len(arg.split(",")) == dim and all(p.strip().isdigit() for p in arg.split(","))
            elif kind in ("random", "smooth") and ok:
                ok = arg.strip().lstrip("-").isdigit()
            if not ok:
                raise ConfigError(f"runs.{name.split('_')[0]}", f"bad initial datum {datum!r}")
    if any(n < 8 for n in cfg.identity_ns) or len(cfg.identity_ns) < 2:
        raise ConfigError("identities.ns", "need >= 2 grid sizes of at least 8 nodes")
    for s in cfg.suites:
        if s not in SUITES:
            raise ConfigError("suites.run", f"unknown suite {s!r}")
    if cfg.format not in ("json", "csv"):
        raise ConfigError("output.format", "json or csv")
    for name, exprs in (("A", cfg.A), ("B", cfg.B), ("a", (cfg.a,))):
        for e in exprs:
            try:
                expr.compile_expression(e, dim)
            except expr.ExpressionError as err:
                raise ConfigError(f"coefficients.{name}", str(err)) from None
    try:
        cfg.coefficients()
    except (ValueError, expr.ExpressionError) as err:
        raise ConfigError("coefficients", str(err)) from None
