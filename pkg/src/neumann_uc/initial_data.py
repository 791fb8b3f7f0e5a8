"""Named initial data: Neumann cosine modes and seeded random fields."""
from __future__ import annotations

import numpy as np

from . import mesh


def cosine_mode(grid: mesh.Grid, k) -> np.ndarray:
    """``prod_i cos(k_i pi (x_i - a_i) / L_i)``; ``k`` is an int in 1D or a tuple in 2D."""
    ks = (k,) if np.isscalar(k) else tuple(k)
    if len(ks) != grid.dim:
        raise ValueError(f"mode index needs {grid.dim} entries")
    out = np.ones(grid.shape)
    for c, (lo, hi), kk in zip(grid.coords, grid.extents, ks):
        out = out * np.cos(kk * np.pi * (c - lo) / (hi - lo))
    return out


def mode_indices(grid: mesh.Grid, count: int) -> list:
    """The first ``count`` modes ordered by eigenvalue (ties by index)."""
    if grid.dim == 1:
        return list(range(count))
    L0 = grid.extents[0][1] - grid.extents[0][0]
    L1 = grid.extents[1][1] - grid.extents[1][0]
    side = int(np.ceil(np.sqrt(count))) + 1
    cand = [(i, j) for i in range(side + count) for j in range(side + count)]
    cand.sort(key=lambda ij: ((ij[0] / L0) ** 2 + (ij[1] / L1) ** 2, ij))
    return cand[:count]


def random_field(grid: mesh.Grid, seed: int, smooth: bool = False) -> np.ndarray:
    """Standard normal nodal values, or a random combination of the first 16 modes."""
    rng = np.random.default_rng(seed)
    if not smooth:
        return rng.standard_normal(grid.shape)
    ks = mode_indices(grid, 16)
    c = rng.standard_normal(len(ks))
    return sum(ci * cosine_mode(grid, k) for ci, k in zip(c, ks))


def named_datum(grid: mesh.Grid, datum: str, seed: int = 0) -> np.ndarray:
    """Parse ``mode:K`` (``mode:K1,K2`` in 2D), ``random:SEED``, ``smooth:SEED`` or ``one``.

    ``seed`` is added to the seed of the random kinds.
    """
    kind, _, arg = datum.strip().partition(":")
    if kind == "one":
        return np.ones(grid.shape)
    if kind == "mode":
        parts = [int(p) for p in arg.split(",")]
        return cosine_mode(grid, parts[0] if len(parts) == 1 else tuple(parts))
    if kind in ("random", "smooth"):
        return random_field(grid, int(arg) + int(seed), smooth=(kind == "smooth"))
    raise ValueError(f"unknown initial datum {datum!r}")
