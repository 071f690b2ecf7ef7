"""Planar Brownian drivers, Levy area and horizontal Brownian motion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .heis_core import (DimensionError, HorizontalPath, as_array,
                        check_grid, group_mul, horizontality_residual)
from .rng import RngSpec, batch_normals

__all__ = [
    "PlanarPath", "HorizontalPath", "uniform_grid", "simulate_bm", "levy_area",
    "simulate_hbm", "quadratic_variation", "ito_integral", "write_path_csv",
    "horizontality_residual",
]


@dataclass
class PlanarPath:
    """Brownian motion in R^{2n} sampled on ``grid``.

    ``values`` is ``(..., K + 1, 2n)`` ordered ``(B^1_1, B^2_1, ..., B^2_n)``;
    ``increments`` ``(..., K, 2n)`` are the Gaussian steps that built it.
    """

    grid: np.ndarray
    values: np.ndarray
    increments: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.values.shape[-1] // 2


def uniform_grid(T: float, dt: float) -> np.ndarray:
    """Grid ``k * dt`` for k = 0..K with K = ceil(T / dt)."""
    if not (T > 0 and dt > 0):
        raise ValueError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    K = int(np.ceil(T / dt - 1e-9))
    return np.arange(K + 1) * dt


def simulate_bm(n: int, grid, rng: RngSpec, n_paths: Optional[int] = None) -> PlanarPath:
    """Brownian motion in R^{2n} from 0.

    A single path uses stream ``rng.stream``; a batch of ``n_paths`` uses
    consecutive streams, so path i of a batch equals the single path drawn
    with ``rng.substream(i)``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    grid = check_grid(grid, require_zero_start=True)
    if grid.size < 2:
        raise ValueError("time grid needs at least two points")
    K = grid.size - 1
    normals = batch_normals(rng, 1 if n_paths is None else n_paths, (K, 2 * n))
    if n_paths is None:
        normals = normals[0]
    inc = normals * np.sqrt(np.diff(grid))[:, None]
    zero = np.zeros(inc.shape[:-2] + (1, 2 * n))
    values = np.concatenate([zero, np.cumsum(inc, axis=-2)], axis=-2)
    return PlanarPath(grid, values, inc)


def ito_integral(integrand, increments) -> np.ndarray:
    """Running left-point sums ``sum_{m<k} integrand[m] * increments[m]``.

    Both inputs have K entries along the last axis; the result has K + 1,
    starting at 0.
    """
    a = np.asarray(integrand, dtype=float)
    d = np.asarray(increments, dtype=float)
    if a.shape[-1] != d.shape[-1]:
        raise ValueError(f"length mismatch: integrand {a.shape[-1]} vs increments {d.shape[-1]}")
    prod = a * d
    return np.concatenate([np.zeros(prod.shape[:-1] + (1,)), np.cumsum(prod, axis=-1)], axis=-1)


def levy_area(b: PlanarPath) -> np.ndarray:
    """``S(t_k) = 2 sum_j [I(B^2_j, dB^1_j) - I(B^1_j, dB^2_j)]`` on the grid."""
    if b.increments is None:
        raise ValueError("Levy area needs the driver increments")
    B, dB = b.values, b.increments
    terms = []
    for j in range(b.n):
        x, y = B[..., :-1, 2 * j], B[..., :-1, 2 * j + 1]
        dx, dy = dB[..., 2 * j], dB[..., 2 * j + 1]
        terms.append(ito_integral(y, dx) - ito_integral(x, dy))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return 2.0 * total


def simulate_hbm(g0, grid, rng: RngSpec, n_paths: Optional[int] = None) -> HorizontalPath:
    """Horizontal Brownian motion ``W(t) = g0 * (B(t), S(t))``."""
    G0 = as_array(g0)
    if G0.ndim != 1:
        raise DimensionError("start point must be a single point")
    n = (G0.size - 1) // 2
    bm = simulate_bm(n, grid, rng, n_paths)
    lifted = np.concatenate([bm.values, levy_area(bm)[..., None]], axis=-1)
    points = group_mul(G0, lifted)
    return HorizontalPath(bm.grid, points, bm.increments)


def quadratic_variation(series, axis: int = -1) -> np.ndarray:
    """Sum of squared increments along ``axis``."""
    s = np.asarray(series, dtype=float)
    return np.sum(np.diff(s, axis=axis) ** 2, axis=axis)


def path_header(n: int):
    cols = ["t"]
    for j in range(1, n + 1):
        cols += [f"x{j}", f"y{j}"]
    return cols + ["eta"]


def write_path_csv(path: HorizontalPath, dest) -> Path:
    """Dump one path as CSV with header ``t, x1, y1, ..., xn, yn, eta``."""
    if path.points.ndim != 2:
        raise ValueError("write one path at a time")
    dest = Path(dest)
    with dest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(path_header(path.n))
        for t, row in zip(path.grid, path.points):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return dest
