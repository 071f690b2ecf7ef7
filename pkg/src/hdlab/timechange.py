"""The clock sigma(t) = int_0^t |grad_H f_1|^2(W(s)) ds and the time-changed
image process Z(s) = f(W(sigma^{-1}(s)))."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .heis_core import (DEFAULT_STEP, DimensionError, GroupMap, HorizontalPath,
                        as_array, horizontal_gradient)
from .paths import simulate_hbm, uniform_grid
from .rng import RngSpec

# Step integrands below this make sigma non-invertible.
PLATEAU_TOL = 1e-14


class ClockError(ValueError):
    """The clock is not strictly increasing along the path."""


class ClockRangeError(ValueError):
    """Requested s lies beyond sigma at the end of the path."""


@dataclass
class TimeClock:
    """Sampled clock; ``values`` is ``(K + 1,)`` or ``(N, K + 1)``."""

    grid: np.ndarray
    values: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.values[..., -1]


@dataclass
class PushforwardProcess:
    """Z sampled on ``grid``; ``points`` is ``(..., M + 1, 2p + 1)``."""

    grid: np.ndarray
    points: np.ndarray
    map_name: str = ""
    source: Optional[HorizontalPath] = None

    @property
    def p(self) -> int:
        return (self.points.shape[-1] - 1) // 2


def clock_integrand(path: HorizontalPath, f: GroupMap, step: float = DEFAULT_STEP,
                    component: int = 0) -> np.ndarray:
    """``|grad_H f_c|^2`` at every path point."""
    if f.n != path.n:
        raise DimensionError(f"map on H^{f.n} applied to a path in H^{path.n}")
    comp = f.components[component]
    grad = horizontal_gradient(comp, path.points, step, analytic=comp.grad is not None)
    return np.sum(grad * grad, axis=-1)


def sigma_clock(path: HorizontalPath, f: GroupMap, step: float = DEFAULT_STEP,
                component: int = 0) -> TimeClock:
    """Left-point Riemann sums of the clock integrand along ``path``.

    ``component`` selects which horizontal component drives the clock; the
    default 0 is f_1.  Raises :class:`ClockError` on zero-gradient plateaus.
    """
    lam = clock_integrand(path, f, step, component)
    left = lam[..., :-1]
    if left.size and np.min(left) < PLATEAU_TOL:
        raise ClockError(
            f"clock integrand drops to {np.min(left):.3g} on the path; sigma is not invertible")
    dt = np.diff(path.grid)
    values = np.concatenate([np.zeros(left.shape[:-1] + (1,)),
                             np.cumsum(left * dt, axis=-1)], axis=-1)
    return TimeClock(path.grid, values)


def invert_clock(clock: TimeClock, s) -> np.ndarray:
    """Piecewise-linear inverse of a single-path clock."""
    if clock.values.ndim != 1:
        raise ValueError("invert_clock works on one path; index the batch first")
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("clock inverse is defined for s >= 0")
    top = clock.values[-1]
    if np.any(s > top):
        raise ClockRangeError(f"s = {np.max(s):.6g} exceeds the final clock value {top:.6g}")
    return np.interp(s, clock.values, clock.grid)


def _interp_points(grid: np.ndarray, points: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(t, grid, points[:, k]) for k in range(points.shape[-1])], axis=-1)


def pushforward(path: HorizontalPath, f: GroupMap, clock: Optional[TimeClock],
                s_grid) -> PushforwardProcess:
    """``Z(s) = f(W(sigma^{-1}(s)))`` with W linearly interpolated.

    ``clock=None`` skips the time change and samples ``f(W(s))`` directly.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    single = path.points.ndim == 2
    pts = path.points[None] if single else path.points
    out = np.empty(pts.shape[:1] + (s_grid.size, 2 * f.p + 1))
    for i in range(pts.shape[0]):
        if clock is None:
            if s_grid[-1] > path.grid[-1]:
                raise ClockRangeError(f"s = {s_grid[-1]:.6g} beyond the path horizon")
            t_star = s_grid
        else:
            vals = clock.values if clock.values.ndim == 1 else clock.values[i]
            t_star = invert_clock(TimeClock(clock.grid, vals), s_grid)
        out[i] = f(_interp_points(path.grid, pts[i], t_star))
    return PushforwardProcess(s_grid, out[0] if single else out, f.name, path)


def simulate_pushforward(f: GroupMap, g0, window: float, ds: float, n_paths: int,
                         rng: RngSpec, time_change: bool = True, oversample: int = 4,
                         step: float = DEFAULT_STEP) -> PushforwardProcess:
    """Simulate W from ``g0`` and push it through ``f`` on ``[0, window]``.

    W is sampled ``oversample`` times finer than the s-grid after scaling by
    the clock rate at ``g0``, so for constant-rate maps every s-knot falls on
    a W-knot.  Without the time change W is sampled ``oversample`` times
    finer than ``ds`` over the same window.
    """
    G0 = as_array(g0)
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    s_grid = uniform_grid(window, ds)
    if time_change:
        rate = float(clock_integrand(HorizontalPath(np.zeros(1), G0[None]), f, step)[0])
        if rate < PLATEAU_TOL:
            raise ClockError(f"clock rate vanishes at the start point ({rate:.3g})")
        dt_w = ds / (rate * oversample)
        K = oversample * (s_grid.size - 1) + 2
    else:
        dt_w = ds / oversample
        K = oversample * (s_grid.size - 1) + 1
    grid = np.arange(K + 1) * dt_w
    path = simulate_hbm(G0, grid, rng, n_paths)
    clock = sigma_clock(path, f, step) if time_change else None
    if clock is not None and np.min(clock.final) < s_grid[-1]:
        raise ClockRangeError(
            f"{int(np.sum(clock.final < s_grid[-1]))} path(s) did not reach s = {s_grid[-1]:.6g}")
    return pushforward(path, f, clock, s_grid)
