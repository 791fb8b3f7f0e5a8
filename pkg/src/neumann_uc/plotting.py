"""Static SVG plots of traces, weights and margins (matplotlib, Agg backend).

SVG output is made reproducible by fixing the hash salt and dropping the
date metadata.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "neumann-uc", "svg.fonttype": "none"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_trace(trace, path, title=""):
    """``y`` (log scale) and ``N`` (linear) against ``t``; ``None`` for an empty trace."""
    if trace is None or len(trace.t) == 0:
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.semilogy(trace.t, trace.y, color="C0", label="y")
        ax.set_xlabel("t")
        ax.set_ylabel("y", color="C0")
        ax2 = ax.twinx()
        ax2.plot(trace.t, trace.N, color="C1", label="N")
        ax2.set_ylabel("N", color="C1")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_weights(w, path):
    """``psi``, ``phi_1`` and ``phi_2`` over ``x`` (mid-line slice in 2D)."""
    g = w.grid
    curves = [w.psi[0], w.phi(0), w.phi(w.d)]
    if g.dim == 2:
        j = g.shape[1] // 2
        curves = [c[:, j] for c in curves]
    x = g.axes[0]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for c, lab in zip(curves, ("psi", "phi_1", "phi_2")):
            ax.plot(x, c, label=lab)
        ax.legend()
        ax.set_xlabel("x")
        fig.tight_layout()
        return _save(fig, path)


def plot_margins(names, values, path, title="log residuals"):
    """Horizontal bars of log residuals (non-positive means the check holds)."""
    vals = np.asarray(values, dtype=float)
    finite = np.isfinite(vals)
    if not finite.any():
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(vals) + 1.2))
        ax.barh(np.arange(len(vals))[finite], vals[finite], color="C2")
        ax.set_yticks(np.arange(len(vals)), labels=list(names))
        ax.axvline(0.0, color="k", lw=0.8)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def render_plots(bundle, out_dir) -> list:
    """SVGs for every stored trace; a notice is added for each skipped one."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for key in sorted(bundle.traces):
        kind, obj = bundle.traces[key]
        path = os.path.join(out_dir, f"{key}.svg")
        if kind == "trace":
            p = plot_trace(obj, path, title=key)
        elif kind == "weights":
            p = plot_weights(obj, path)
        elif kind == "margins":
            p = plot_margins(obj[0], obj[1], path, title=key)
        else:
            p = None
        if p is None:
            bundle.notices.append(f"plot {key} skipped: nothing to draw")
        else:
            paths.append(p)
    return paths
