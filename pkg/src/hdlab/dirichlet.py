"""Exit-time Monte Carlo for the sub-Laplacian Dirichlet problem and the
harmonic measure of Koranyi balls.

Exit simulation advances all paths of a batch in lock step; path i draws its
Gaussians from ``rng.substream(i)`` in blocks, so its trajectory does not
depend on which other paths share the batch.

The harmonic measure of ``B(0, 1)`` seen from the center, written in the
coordinates ``(t, direction of z)`` of the unit sphere, has t-density
proportional to ``(1 - t^2)^((n - 1) / 2)`` and a uniform direction.  For
other balls it is pushed forward by ``g -> g0 * dilate(g, rho0)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np
from scipy.special import gamma

from .heis_core import (DimensionError, GroupPoint, as_array,
                        dilate, group_mul, koranyi_dist, koranyi_norm)
from .rng import RngSpec, chunk_ranges, ordered_map

DEFAULT_MAX_STEPS = 10 ** 7
DISCARD_BUDGET = 0.01
CHUNK = 2048
ON_SPHERE_TOL = 1e-8


class NonExitError(RuntimeError):
    """Too many paths failed to leave the domain within ``max_steps``."""


@dataclass(frozen=True)
class Domain:
    """Open set in H^n given by a vectorized membership predicate.

    ``distance`` is an optional lower bound on the Koranyi distance to the
    complement; it drives adaptive stepping.  Koranyi balls also carry
    ``center`` and ``radius``.
    """

    n: int
    contains: Callable[[np.ndarray], np.ndarray]
    distance: Optional[Callable[[np.ndarray], np.ndarray]] = None
    center: Optional[GroupPoint] = None
    radius: Optional[float] = None

    @property
    def is_ball(self) -> bool:
        return self.center is not None


def koranyi_ball(center, radius: float) -> Domain:
    if not radius > 0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    c = center if isinstance(center, GroupPoint) else GroupPoint.from_array(center)
    C = c.as_array()

    def contains(G):
        return koranyi_dist(G, C) < radius

    def distance(G):
        # radius - rho(c^-1 g) bounds the distance to the complement from below
        return np.maximum(radius - koranyi_dist(G, C), 0.0)

    return Domain(c.n, contains, distance, c, float(radius))


@dataclass
class ExitRecord:
    step: int
    time: float
    point: GroupPoint
    overshoot: Optional[float] = None


@dataclass
class ExitBatch:
    """Exit data for a batch; rows of discarded paths are NaN."""

    steps: np.ndarray
    times: np.ndarray
    points: np.ndarray
    exited: np.ndarray
    overshoot: Optional[np.ndarray] = None

    @property
    def n_discarded(self) -> int:
        return int(np.sum(~self.exited))

    def record(self, i: int) -> ExitRecord:
        if not self.exited[i]:
            raise NonExitError(f"path {i} did not exit within the step budget")
        ov = None if self.overshoot is None else float(self.overshoot[i])
        return ExitRecord(int(self.steps[i]), float(self.times[i]),
                          GroupPoint.from_array(self.points[i]), ov)


@dataclass
class Estimate:
    mean: float
    stderr: float
    samples: int
    dt: float
    discarded: int = 0
    notes: str = ""

    def to_dict(self) -> dict:
        return dict(mean=self.mean, stderr=self.stderr, samples=self.samples,
                    dt=self.dt, discarded=self.discarded, notes=self.notes)


def _simulate_chunk(domain: Domain, G0: np.ndarray, dt: float, rng: RngSpec, count: int,
                    max_steps: int, adaptive: bool, kappa: float, min_fraction: float,
                    block: int) -> ExitBatch:
    dim = G0.size
    steps = np.zeros(count, dtype=np.int64)
    times = np.full(count, np.nan)
    points = np.full((count, dim), np.nan)
    exited = np.zeros(count, dtype=bool)

    ball = domain.is_ball
    if ball:
        # simulate c^-1 W; left translation commutes with the right-acting steps
        C = domain.center.as_array()
        R = domain.radius
        start = group_mul(-C, G0)
    else:
        start = G0

    if not bool(domain.contains(G0)):
        steps[:] = 0
        times[:] = 0.0
        points[:] = G0
        exited[:] = True
        ov = None
        if ball:
            ov = np.full(count, max(float(koranyi_dist(G0, C)) - R, 0.0))
        return ExitBatch(steps, times, points, exited, ov)

    gens = [rng.substream(i).generator() for i in range(count)]
    active = np.arange(count)
    W = np.tile(start, (count, 1))
    T = np.zeros(count)
    dt_min = dt * min_fraction
    buf = np.empty((count, 0, dim - 1))
    cursor = block
    k = 0
    while active.size and k < max_steps:
        if cursor == block:
            buf = np.stack([gens[i].standard_normal((block, dim - 1)) for i in active])
            cursor = 0
        Z = buf[:, cursor]
        cursor += 1
        if ball:
            rho = koranyi_norm(W)
            h = np.clip(((R - rho) / kappa) ** 2, dt_min, dt) if adaptive else dt
        elif adaptive:
            h = np.clip((domain.distance(W) / kappa) ** 2, dt_min, dt)
        else:
            h = dt
        incr = np.zeros_like(W)
        incr[:, :-1] = Z * np.sqrt(h)[:, None] if adaptive else Z * math.sqrt(dt)
        W = group_mul(W, incr)
        T = T + h
        k += 1
        out = koranyi_norm(W) >= R if ball else ~np.asarray(domain.contains(W), dtype=bool)
        if np.any(out):
            idx = active[out]
            steps[idx] = k
            times[idx] = T[out]
            points[idx] = W[out]
            exited[idx] = True
            keep = ~out
            active, W, T, buf = active[keep], W[keep], T[keep], buf[keep]

    overshoot = None
    if ball:
        loc = points[exited]
        points[exited] = group_mul(C, loc)
        overshoot = np.full(count, np.nan)
        overshoot[exited] = np.maximum(koranyi_norm(loc) - R, 0.0)
    return ExitBatch(steps, times, points, exited, overshoot)


def simulate_exits(domain: Domain, g0, dt: float, rng: RngSpec, samples: int,
                   max_steps: int = DEFAULT_MAX_STEPS, adaptive: Optional[bool] = None,
                   kappa: float = 3.0, min_fraction: float = 0.01, block: int = 256,
                   workers: int = 1) -> ExitBatch:
    """Run ``samples`` independent paths from ``g0`` to their first exit.

    With adaptive stepping the step is ``(d / kappa)^2`` clipped to
    ``[dt * min_fraction, dt]``, d being the distance hint.  Adaptive
    stepping is on by default whenever the domain has a distance hint.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    G0 = as_array(g0)
    if G0.ndim != 1 or (G0.size - 1) // 2 != domain.n:
        raise DimensionError(f"start point does not live in H^{domain.n}")
    if adaptive is None:
        adaptive = domain.distance is not None
    if adaptive and domain.distance is None:
        raise ValueError("adaptive stepping needs a distance hint on the domain")

    def run(rng_range):
        lo, hi = rng_range
        return _simulate_chunk(domain, G0, dt, rng.substream(lo), hi - lo, max_steps,
                               adaptive, kappa, min_fraction, block)

    parts = ordered_map(run, chunk_ranges(samples, CHUNK), workers)
    ov = None if parts[0].overshoot is None else np.concatenate([p.overshoot for p in parts])
    return ExitBatch(np.concatenate([p.steps for p in parts]),
                     np.concatenate([p.times for p in parts]),
                     np.concatenate([p.points for p in parts]),
                     np.concatenate([p.exited for p in parts]), ov)


def run_to_exit(g0, domain: Domain, dt: float, rng: RngSpec,
                max_steps: int = DEFAULT_MAX_STEPS, adaptive: Optional[bool] = None) -> ExitRecord:
    """Single path to its first exit; raises :class:`NonExitError` on timeout."""
    return simulate_exits(domain, g0, dt, rng, 1, max_steps, adaptive).record(0)


def dirichlet_estimate(domain: Domain, phi, g0, dt: float, samples: int, rng: RngSpec,
                       max_steps: int = DEFAULT_MAX_STEPS, adaptive: Optional[bool] = None,
                       discard_budget: float = DISCARD_BUDGET, workers: int = 1,
                       exits: Optional[ExitBatch] = None) -> Estimate:
    """Monte Carlo estimate of ``E[phi(W(S_U)) | W(0) = g0]``.

    ``exits`` reuses a previously simulated batch.
    """
    if exits is None:
        exits = simulate_exits(domain, g0, dt, rng, samples, max_steps, adaptive, workers=workers)
    return estimate_from_exits(exits, phi, dt, discard_budget)


def estimate_from_exits(exits: ExitBatch, phi, dt: float,
                        discard_budget: float = DISCARD_BUDGET) -> Estimate:
    total = exits.exited.size
    if exits.n_discarded > discard_budget * total:
        raise NonExitError(
            f"{exits.n_discarded} of {total} paths did not exit (budget {discard_budget:.0%})")
    vals = np.asarray(phi(exits.points[exits.exited]), dtype=float)
    m = vals.size
    stderr = float(np.std(vals, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    notes = "first grid point outside the domain; overshoot bias O(sqrt(dt))"
    if exits.n_discarded:
        notes += f"; {exits.n_discarded} non-exiting paths discarded"
    return Estimate(float(np.mean(vals)), stderr, m, dt, exits.n_discarded, notes)


# --- harmonic measure of Koranyi balls --------------------------------------

def sphere_area(dim: int) -> float:
    """Area of the unit sphere S^{dim-1} in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / gamma(dim / 2)


def grad_rho4_norm(g) -> np.ndarray:
    """Euclidean ``|grad rho^4|(z, t) = (16 |z|^6 + 4 t^2)^(1/2)``."""
    G = as_array(g)
    z2 = np.sum(G[..., :-1] ** 2, axis=-1)
    return np.sqrt(16.0 * z2 ** 3 + 4.0 * G[..., -1] ** 2)


def _translated_grad_rho4_norm(G0: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Euclidean gradient norm of ``g -> rho^4(g0^-1 * g)``."""
    Q = group_mul(-G0, G)
    z2 = np.sum(Q[..., :-1] ** 2, axis=-1)
    dt_ = 2.0 * Q[..., -1]
    gx = 4.0 * z2[..., None] * Q[..., 0:-1:2] - 2.0 * G0[1:-1:2] * dt_[..., None]
    gy = 4.0 * z2[..., None] * Q[..., 1:-1:2] + 2.0 * G0[0:-1:2] * dt_[..., None]
    return np.sqrt(np.sum(gx ** 2, axis=-1) + np.sum(gy ** 2, axis=-1) + dt_ ** 2)


def closed_form_kernel_constant(n: int, rho0: float) -> float:
    """The closed-form prefactor ``2^(n-2) Gamma(1/n)^2 / (pi^(n+1) rho0^(2n))``."""
    return 2.0 ** (n - 2) * gamma(1.0 / n) ** 2 / (math.pi ** (n + 1) * rho0 ** (2 * n))


@dataclass(frozen=True)
class KernelNormalization:
    """Mass of ``|z - z0|^2 / |grad rho^4|`` over the sphere and derived constants.

    ``ratio`` is the numeric normalizing constant divided by the closed-form
    constant of the factor-2 form, i.e. the factor by which the closed form
    misses unit total mass.
    """

    n: int
    rho0: float
    mass: float
    constant: float
    closed_form_constant: float
    closed_form_total_mass: float
    ratio: float

    def to_dict(self) -> dict:
        return dict(n=self.n, rho0=self.rho0, mass=self.mass, constant=self.constant,
                    closed_form_constant=self.closed_form_constant,
                    closed_form_total_mass=self.closed_form_total_mass, ratio=self.ratio)


@functools.lru_cache(maxsize=64)
def kernel_normalization(n: int, rho0: float, nodes: int = 64) -> KernelNormalization:
    """Integrate the unnormalized kernel against the Euclidean area element.

    The sphere ``r^4 + t^2 = rho0^4`` is a hypersurface of revolution; each
    hemisphere is charted by ``t = rho0^2 (1 - s^4)``, s in [0, 1], which
    keeps the integrand smooth at the poles and the equator.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    tau = rho0 ** 2 * (1.0 - s ** 4)
    r = rho0 * s * (2.0 - s ** 4) ** 0.25
    dtau_ds = 4.0 * rho0 ** 2 * s ** 3
    dr_dtau = -tau / (2.0 * r ** 3)
    area = sphere_area(2 * n) * r ** (2 * n - 1) * np.sqrt(1.0 + dr_dtau ** 2)
    shape = r ** 2 / np.sqrt(16.0 * r ** 6 + 4.0 * tau ** 2)
    mass = 2.0 * float(np.sum(ws * dtau_ds * area * shape))
    K = closed_form_kernel_constant(n, rho0)
    return KernelNormalization(n, rho0, mass, 1.0 / mass, float(K), float(2.0 * K * mass),
                               float((1.0 / mass) / (2.0 * K)))


def _check_on_sphere(G0, rho0, G, tol):
    dev = np.abs(koranyi_dist(G, G0) - rho0)
    if np.any(dev > tol):
        raise ValueError(f"point off the sphere of radius {rho0} by {np.max(dev):.3g}")


def harmonic_measure_density(g0, rho0: float, g, tol: float = ON_SPHERE_TOL) -> np.ndarray:
    """Exit density at ``g`` on ``dB(g0, rho0)`` w.r.t. Euclidean area, from ``g0``.

    ``C |z - z0|^2 / |grad_g rho^4(g0^-1 g)|`` with C fixed by unit total
    mass.  For ``z0 = 0`` the gradient equals ``|grad rho^4|(g0^-1 g)``.
    """
    G0, G = as_array(g0), as_array(g)
    _check_on_sphere(G0, rho0, G, tol)
    norm = kernel_normalization((G0.size - 1) // 2, float(rho0))
    z2 = np.sum((G[..., :-1] - G0[:-1]) ** 2, axis=-1)
    return norm.constant * z2 / _translated_grad_rho4_norm(G0, G)


def closed_form_density_forms(g0, rho0: float, g):
    """Both closed-form displays of the density, with the closed-form constant.

    Returns ``(factor_two_form, expanded_form)``: the first uses
    ``2 |z - z0|^2 / |grad rho^4|(g0^-1 g)``, the second
    ``|z - z0|^2 / (4 |z - z0|^6 + (t - t0 - 2 Im sum z_j conj(z0_j))^2)^(1/2)``.
    """
    G0, G = as_array(g0), as_array(g)
    n = (G0.size - 1) // 2
    K = closed_form_kernel_constant(n, rho0)
    dz = G[..., :-1] - G0[:-1]
    z2 = np.sum(dz ** 2, axis=-1)
    first = K * 2.0 * z2 / grad_rho4_norm(group_mul(-G0, G))
    x, y = G[..., 0:-1:2], G[..., 1:-1:2]
    x0, y0 = G0[0:-1:2], G0[1:-1:2]
    im = np.sum(y * x0 - x * y0, axis=-1)
    vert = G[..., -1] - G0[-1] - 2.0 * im
    second = K * z2 / np.sqrt(4.0 * z2 ** 3 + vert ** 2)
    return first, second


class Quadrature(NamedTuple):
    value: float
    error: float
    method: str
    nodes: int


def _as_callable(h):
    return h if callable(h) else (lambda G: np.full(G.shape[:-1], float(h)))


def unit_sphere_rule(resolution: int):
    """Nodes and weights of the harmonic measure on dB(0, 1) in H^1.

    Gauss-Legendre in s for each hemisphere (``t = +-(1 - s^4)``) times the
    periodic trapezoid rule in the angle.  Weights sum to 1.
    """
    x, w = np.polynomial.legendre.leggauss(resolution)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    m = 2 * resolution
    theta = 2.0 * math.pi * np.arange(m) / m
    r = s * (2.0 - s ** 4) ** 0.25
    pts, wts = [], []
    for sign in (1.0, -1.0):
        tau = sign * (1.0 - s ** 4)
        P = np.empty((resolution, m, 3))
        P[..., 0] = r[:, None] * np.cos(theta)
        P[..., 1] = r[:, None] * np.sin(theta)
        P[..., 2] = tau[:, None]
        pts.append(P.reshape(-1, 3))
        # t is uniform on [-1, 1]: density 1/2, dt = 4 s^3 ds
        wts.append(np.repeat(0.5 * 4.0 * s ** 3 * ws / m, m))
    return np.concatenate(pts), np.concatenate(wts)


def sample_unit_sphere_measure(n: int, count: int, rng: RngSpec) -> np.ndarray:
    """Exact draws from the exit law of B(0, 1) in H^n started at 0."""
    gen = rng.generator()
    a = 0.5 * (n + 1)
    t = 2.0 * gen.beta(a, a, size=count) - 1.0
    omega = gen.standard_normal((count, 2 * n))
    omega /= np.linalg.norm(omega, axis=1, keepdims=True)
    r = (1.0 - t * t) ** 0.25
    return np.concatenate([r[:, None] * omega, t[:, None]], axis=1)


def sphere_quadrature(g0, rho0: float, h, resolution: int = 48,
                      samples: int = 200_000, rng: Optional[RngSpec] = None) -> Quadrature:
    """Integrate ``h`` against the harmonic measure of ``B(g0, rho0)`` at ``g0``.

    H^1 uses a deterministic tensor rule and reports the change from half
    resolution as its error; higher n uses Monte Carlo with exact sampling
    of the measure and reports the standard error.
    """
    if not rho0 > 0:
        raise ValueError(f"radius must be positive, got {rho0}")
    G0 = as_array(g0)
    n = (G0.size - 1) // 2
    func = _as_callable(h)
    if n == 1:
        def rule(res):
            P, w = unit_sphere_rule(res)
            return float(np.sum(w * func(group_mul(G0, dilate(P, rho0)))))

        val = rule(resolution)
        err = abs(val - rule(max(resolution // 2, 2)))
        return Quadrature(val, err, "tensor-gauss", 4 * resolution ** 2)
    P = sample_unit_sphere_measure(n, samples, rng or RngSpec(0))
    vals = func(group_mul(G0, dilate(P, rho0)))
    return Quadrature(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples)),
                      "monte-carlo", samples)


def mean_value_residual(u, g0, rho0: float, resolution: int = 48, **kw) -> float:
    """Harmonic-measure average of ``u`` over ``dB(g0, rho0)`` minus ``u(g0)``."""
    G0 = as_array(g0)
    func = _as_callable(u)
    u0 = float(func(G0))
    # integrating u - u(g0) keeps constants exact
    return sphere_quadrature(G0, rho0, lambda G: func(G) - u0, resolution, **kw).value


@dataclass
class KernelComparison:
    name: str
    mc_mean: float
    mc_stderr: float
    kernel: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(name=self.name, mc_mean=self.mc_mean, mc_stderr=self.mc_stderr,
                    kernel=self.kernel, tolerance=self.tolerance, passed=self.passed)


def compare_exits_to_kernel(exits: ExitBatch, ball: Domain, tests: Dict[str, Callable],
                            dt: float, rel_tol: float = 0.02,
                            sigmas: float = 3.0) -> List[KernelComparison]:
    """Monte Carlo exit averages versus kernel quadrature from the ball center.

    Passes when ``|mc - kernel| <= max(sigmas * stderr, rel_tol * |kernel|)``.
    """
    if not ball.is_ball:
        raise ValueError("kernel comparison needs a Koranyi ball")
    rows = []
    for name, fn in tests.items():
        est = estimate_from_exits(exits, fn, dt)
        ref = sphere_quadrature(ball.center, ball.radius, fn).value
        tol = max(sigmas * est.stderr, rel_tol * abs(ref))
        rows.append(KernelComparison(name, est.mean, est.stderr, ref, tol,
                                     abs(est.mean - ref) <= tol))
    return rows

