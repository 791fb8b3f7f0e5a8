"""Command line front end.

Exit codes: 0 when every check passes, 1 when any check fails, 2 for a
configuration error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import sys

from . import config as cfgmod
from .experiment import run_experiment
from .plotting import render_plots
from .report import emit_report

COMMANDS = {
    "solve": ("solve",),
    "weights": ("weights",),
    "verify-identities": ("identities",),
    "verify-energy": ("energy",),
    "frequency": ("frequency",),
    "verify-interpolation": ("interpolation",),
    "verify-observability": ("observability",),
    "all": None,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neumann-uc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="INI experiment file (default: heat equation on (0, 1))")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed", type=int, help="offset added to every random initial datum")
    p.add_argument("--grid-n", type=int, help="nodes per axis")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--no-plots", action="store_true", help="skip SVG output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
        cfg = cfg.with_overrides(seed=args.seed, n=args.grid_n, dt=args.dt, format=args.format,
                                 out_dir=args.out, plots=False if args.no_plots else None)
    except cfgmod.ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    suites = COMMANDS[args.command]
    bundle = run_experiment(cfg, suites=suites, out_dir=cfg.out_dir)
    if cfg.plots:
        render_plots(bundle, cfg.out_dir)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    try:
        paths = emit_report(bundle, cfg.out_dir, cfg.format, timestamp=stamp)
    except OSError as e:
        print(f"cannot write report: {e}", file=sys.stderr)
        return 2
    for r in bundle.sorted_records():
        print(f"{r.status.upper():5s} {r.suite}/{r.name}" + (f"  ({r.message})" if r.message else ""))
    print(f"report: {paths[0]}")
    return 0 if bundle.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
