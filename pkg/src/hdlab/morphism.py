"""Harmonic-morphism checks for maps between Heisenberg groups and a
statistical battery for "is this horizontal Brownian motion".

A map passes as a harmonic morphism when every component is
sub-Laplacian harmonic, the horizontal gradients of the 2p horizontal
components are orthogonal with a common squared length (the conformal
factor, called ``lam`` here), and the contact equations hold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
from scipy import stats

from .catalog import CatalogMap, catalog_to_map
from .heis_core import (DEFAULT_STEP, DimensionError, GroupMap, HorizontalPath,
                        as_array, hsub_laplacian, koranyi_norm)
from .rng import RngSpec
from .timechange import PushforwardProcess

ANALYTIC_TOL = 1e-6
FD_TOL = 1e-4
QV_BAND = 0.04
CROSS_SIGMAS = 4.0
HEADER = ("necessary conditions only: Gaussian increments, quadratic variation, "
          "cross-covariation and the Levy-area identity; no finite battery "
          "characterizes Brownian motion")


def sample_points(n: int, count: int = 1000, radius: float = 2.0,
                  rng: Optional[RngSpec] = None) -> np.ndarray:
    """Uniform points of the Koranyi ball B(0, radius) in H^n (rejection)."""
    gen = (rng or RngSpec(0)).generator()
    out = []
    have = 0
    while have < count:
        box = gen.uniform(-1.0, 1.0, size=(2 * count, 2 * n + 1))
        box[:, :-1] *= radius
        box[:, -1] *= radius ** 2
        keep = box[koranyi_norm(box) < radius]
        out.append(keep)
        have += keep.shape[0]
    return np.concatenate(out)[:count]


@dataclass
class ResidualStats:
    max: float
    mean: float

    @classmethod
    def of(cls, values) -> "ResidualStats":
        a = np.abs(np.asarray(values, dtype=float))
        return cls(float(np.max(a)), float(np.mean(a)))


@dataclass
class HarmonicCheck:
    per_component: List[ResidualStats]
    overall: ResidualStats


@dataclass
class ConformalCheck:
    lam: np.ndarray = field(repr=False)
    residual: ResidualStats          # max |G - lam I| per point
    off_diagonal: ResidualStats
    diagonal_spread: ResidualStats   # max - min of the diagonal per point


@dataclass
class ContactCheck:
    per_direction: List[ResidualStats]   # X_1, Y_1, ..., X_n, Y_n
    overall: ResidualStats


def _use_analytic(f: GroupMap, analytic: Optional[bool]) -> bool:
    return f.has_analytic_gradients if analytic is None else analytic


def check_harmonic(f: GroupMap, points, step: float = DEFAULT_STEP,
                   analytic: Optional[bool] = None) -> HarmonicCheck:
    P = as_array(points)
    use = _use_analytic(f, analytic)
    per = []
    for comp in f.components:
        vals = hsub_laplacian(comp, P, step, analytic=use)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite sub-Laplacian for {comp.name or 'component'}")
        per.append(ResidualStats.of(vals))
    overall = ResidualStats(max(s.max for s in per), float(np.mean([s.mean for s in per])))
    return HarmonicCheck(per, overall)


def check_conformal(f: GroupMap, points, step: float = DEFAULT_STEP,
                    analytic: Optional[bool] = None) -> ConformalCheck:
    P = as_array(points)
    D = f.horizontal_differential(P, step, analytic=_use_analytic(f, analytic))[..., :2 * f.p, :]
    G = D @ D.swapaxes(-1, -2)
    diag = np.diagonal(G, axis1=-2, axis2=-1)
    lam = np.mean(diag, axis=-1)
    eye = np.eye(2 * f.p)
    dev = np.abs(G - lam[..., None, None] * eye)
    off = np.abs(G * (1.0 - eye))
    return ConformalCheck(
        lam,
        ResidualStats.of(np.max(dev, axis=(-2, -1))),
        ResidualStats.of(np.max(off, axis=(-2, -1))),
        ResidualStats.of(np.max(diag, axis=-1) - np.min(diag, axis=-1)),
    )


def contact_residuals(f: GroupMap, points, step: float = DEFAULT_STEP,
                      analytic: Optional[bool] = None) -> np.ndarray:
    """``X_i h - 2 sum_j (v_j X_i u_j - u_j X_i v_j)`` and the Y_i analogues.

    Shape ``(..., 2n)`` in the direction order ``X_1, Y_1, ..., Y_n``.
    """
    P = as_array(points)
    D = f.horizontal_differential(P, step, analytic=_use_analytic(f, analytic))
    vals = f(P)
    u, v = vals[..., 0:-1:2], vals[..., 1:-1:2]
    Du, Dv = D[..., 0:-1:2, :], D[..., 1:-1:2, :]
    rhs = 2.0 * np.sum(v[..., None] * Du - u[..., None] * Dv, axis=-2)
    return D[..., -1, :] - rhs


def check_contact(f: GroupMap, points, step: float = DEFAULT_STEP,
                  analytic: Optional[bool] = None) -> ContactCheck:
    res = contact_residuals(f, points, step, analytic)
    per = [ResidualStats.of(res[..., k]) for k in range(res.shape[-1])]
    return ContactCheck(per, ResidualStats.of(res))


@dataclass
class MorphismReport:
    map_name: str
    n: int
    p: int
    points: int
    analytic: bool
    tolerances: Dict[str, float]
    harmonic: HarmonicCheck
    conformal: ConformalCheck
    contact: ContactCheck
    is_harmonic: bool
    is_conformal: bool
    is_contact: bool

    @property
    def passed(self) -> bool:
        return self.is_harmonic and self.is_conformal and self.is_contact

    def to_dict(self) -> dict:
        lam = self.conformal.lam
        return {
            "map": self.map_name, "n": self.n, "p": self.p, "points": self.points,
            "analytic_gradients": self.analytic, "tolerances": self.tolerances,
            "harmonic": {"per_component": [asdict(s) for s in self.harmonic.per_component],
                         "max": self.harmonic.overall.max, "mean": self.harmonic.overall.mean},
            "conformal": {"lam_min": float(np.min(lam)), "lam_max": float(np.max(lam)),
                          "lam_mean": float(np.mean(lam)),
                          "residual": asdict(self.conformal.residual),
                          "off_diagonal": asdict(self.conformal.off_diagonal),
                          "diagonal_spread": asdict(self.conformal.diagonal_spread)},
            "contact": {"per_direction": [asdict(s) for s in self.contact.per_direction],
                        "max": self.contact.overall.max, "mean": self.contact.overall.mean},
            "verdicts": {"harmonic": self.is_harmonic, "conformal": self.is_conformal,
                         "contact": self.is_contact, "harmonic_morphism": self.passed},
        }


def is_harmonic_morphism(f: GroupMap, points, tolerances: Optional[Dict[str, float]] = None,
                         step: float = DEFAULT_STEP,
                         analytic: Optional[bool] = None) -> MorphismReport:
    """Run all three checks; a verdict holds iff its max residual is within tolerance."""
    P = as_array(points)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("need a non-empty (k, 2n+1) sample of points")
    if P.shape[-1] != 2 * f.n + 1:
        raise DimensionError(f"points do not live in H^{f.n}")
    use = _use_analytic(f, analytic)
    default = ANALYTIC_TOL if use else FD_TOL
    tol = {"harmonic": default, "conformal": default, "contact": default}
    tol.update(tolerances or {})
    h = check_harmonic(f, P, step, use)
    c = check_conformal(f, P, step, use)
    k = check_contact(f, P, step, use)
    return MorphismReport(f.name, f.n, f.p, P.shape[0], use, tol, h, c, k,
                          h.overall.max <= tol["harmonic"],
                          c.residual.max <= tol["conformal"],
                          k.overall.max <= tol["contact"])


@dataclass
class DistortionStats:
    residual: ResidualStats
    norm_power: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)


def distortion_check(f: Union[CatalogMap, GroupMap], points, n: Optional[int] = None,
                     step: float = DEFAULT_STEP) -> DistortionStats:
    """Residual of ``|D_H f|^(2n+2) = |J f|`` on a sample.

    ``|D_H f|`` is the operator norm of the horizontal differential of the
    2p horizontal components; ``|J f|`` the absolute determinant of the full
    Euclidean differential.
    """
    P = as_array(points)
    if not isinstance(f, GroupMap):
        f = catalog_to_map(f, n if n is not None else (P.shape[-1] - 1) // 2)
    if f.n != f.p:
        raise DimensionError(f"distortion needs a map H^n -> H^n, got H^{f.n} -> H^{f.p}")
    DH = f.horizontal_differential(P, step)[..., :2 * f.p, :]
    op = np.linalg.norm(DH, ord=2, axis=(-2, -1))
    power = op ** (2 * f.n + 2)
    jac = np.abs(np.linalg.det(f.euclidean_jacobian(P, step)))
    return DistortionStats(ResidualStats.of(power - jac), power, jac)


# --- Brownian motion battery ------------------------------------------------

@dataclass
class BmTestReport:
    ks_statistic: List[float]
    ks_pvalue: List[float]
    qv_ratio: List[float]
    max_cross_cov: float
    vertical_residual: float
    vertical_scale: float
    vertical_bound: float
    level: float
    ks_level: float
    qv_band: float
    cross_band: float
    increments: int
    paths: int
    ks_pass: List[bool]
    qv_pass: List[bool]
    cross_pass: bool
    vertical_pass: bool
    passed: bool
    header: str = HEADER

    def to_dict(self) -> dict:
        return asdict(self)


def _as_batch(z) -> tuple:
    P = as_array(z.points)
    if P.ndim == 2:
        P = P[None]
    return np.asarray(z.grid, dtype=float), P


def vertical_bound(ds: float, increments: int, p: int) -> float:
    """Threshold for the max Levy-area mismatch of a genuine motion.

    The sub-step area over one coarse step has exponential tails on the
    scale ``4 ds / pi`` per pair; twice the expected maximum over all
    increments keeps false alarms negligible.
    """
    return 8.0 / math.pi * p * ds * math.log(max(increments, 3))


def bm_test_battery(z: Union[PushforwardProcess, HorizontalPath],
                    level: float = 0.01, min_increments: int = 1000) -> BmTestReport:
    """Test a batch of sampled processes for the laws of horizontal BM.

    Increments of every path are pooled.  ``level`` is the family-wise level
    of the per-component KS tests (Bonferroni over 2p components).
    """
    grid, P = _as_batch(z)
    N, M1, D = P.shape
    p = (D - 1) // 2
    if M1 < 2:
        raise ValueError("need at least two samples per path")
    ds_all = np.diff(grid)
    ds = float(ds_all[0])
    if not np.allclose(ds_all, ds, rtol=1e-9, atol=0.0):
        raise ValueError("battery needs a uniform s-grid")
    m = N * (M1 - 1)
    if m < min_increments:
        raise ValueError(f"too few increments ({m} < {min_increments})")
    window = float(grid[-1] - grid[0])

    dZ = np.diff(P, axis=1)
    U = (dZ[..., :-1] / math.sqrt(ds)).reshape(m, 2 * p)

    ks_level = level / (2 * p)
    ks = [stats.kstest(U[:, k], "norm") for k in range(2 * p)]
    ks_stat = [float(r.statistic) for r in ks]
    ks_p = [float(r.pvalue) for r in ks]
    ks_pass = [pv >= ks_level for pv in ks_p]

    qv = [float(np.sum(dZ[..., k] ** 2) / (N * window)) for k in range(2 * p)]
    qv_band = max(QV_BAND, 4.0 * math.sqrt(2.0 / m))
    qv_pass = [abs(q - 1.0) <= qv_band for q in qv]

    cross = 0.0
    for a in range(2 * p):
        for b in range(a + 1, 2 * p):
            cross = max(cross, abs(float(np.mean(U[:, a] * U[:, b]))))
    cross_band = CROSS_SIGMAS / math.sqrt(m)
    cross_pass = cross <= cross_band

    x, y = P[:, :-1, 0:-1:2], P[:, :-1, 1:-1:2]
    area = 2.0 * np.sum(y * dZ[..., 0:-1:2] - x * dZ[..., 1:-1:2], axis=-1)
    vres = float(np.max(np.abs(dZ[..., -1] - area)))
    vb = vertical_bound(ds, m, p)
    vpass = vres <= vb

    passed = all(ks_pass) and all(qv_pass) and cross_pass and vpass
    return BmTestReport(ks_stat, ks_p, qv, cross, vres, ds, vb, level, ks_level, qv_band,
                        cross_band, m, N, ks_pass, qv_pass, cross_pass, vpass, passed)


def per_path_statistics(z: Union[PushforwardProcess, HorizontalPath]) -> List[dict]:
    """QV ratio and max vertical mismatch of each path, for CSV dumps."""
    grid, P = _as_batch(z)
    ds = float(grid[1] - grid[0])
    window = float(grid[-1] - grid[0])
    dZ = np.diff(P, axis=1)
    x, y = P[:, :-1, 0:-1:2], P[:, :-1, 1:-1:2]
    area = 2.0 * np.sum(y * dZ[..., 0:-1:2] - x * dZ[..., 1:-1:2], axis=-1)
    vres = np.max(np.abs(dZ[..., -1] - area), axis=-1)
    rows = []
    for i in range(P.shape[0]):
        row = {"path": i}
        for k in range(P.shape[-1] - 1):
            row[f"qv{k + 1}"] = float(np.sum(dZ[i, :, k] ** 2) / window)
        row["vertical_residual"] = float(vres[i])
        row["ds"] = ds
        rows.append(row)
    return rows
