"""Heisenberg group algebra, Koranyi geometry and left-invariant operators.

Points of H^n are stored as float arrays whose last axis has length 2n + 1,
laid out as ``(x_1, y_1, ..., x_n, y_n, t)``.  Every array routine broadcasts
over leading axes, so a batch of paths of shape ``(N, K, 2n + 1)`` goes
through the same code as a single point.  :class:`GroupPoint` is a thin
validated wrapper for call sites that want a named value.

Derivatives are taken along group flows: the flow of ``X_j`` (``Y_j``) for
time ``h`` is right multiplication by the point with ``x_j = h`` (``y_j = h``)
and all other coordinates zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_STEP = 1e-3


class DimensionError(ValueError):
    """Raised when points or maps of incompatible dimension are combined."""


def as_array(g) -> np.ndarray:
    """Return ``g`` as a float array with a valid trailing group axis."""
    if isinstance(g, GroupPoint):
        return g.as_array()
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] < 3 or arr.shape[-1] % 2 == 0:
        raise DimensionError(
            f"trailing axis must have odd length 2n+1 >= 3, got shape {arr.shape}")
    return arr


def group_dim(g) -> int:
    """Return n for points of H^n."""
    return (as_array(g).shape[-1] - 1) // 2


@dataclass(frozen=True, eq=False)
class GroupPoint:
    """A point (z, t) of H^n.

    ``horizontal`` holds the 2n reals ``(x_1, y_1, ..., x_n, y_n)`` and
    ``vertical`` the real t.
    """

    horizontal: np.ndarray
    vertical: float

    def __post_init__(self):
        hz = np.array(self.horizontal, dtype=float).reshape(-1)
        if hz.size == 0 or hz.size % 2:
            raise DimensionError(f"horizontal part must have even length >= 2, got {hz.size}")
        vt = float(self.vertical)
        if not (np.all(np.isfinite(hz)) and np.isfinite(vt)):
            raise ValueError("GroupPoint components must be finite")
        hz.flags.writeable = False
        object.__setattr__(self, "horizontal", hz)
        object.__setattr__(self, "vertical", vt)

    @classmethod
    def from_array(cls, arr) -> "GroupPoint":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 1:
            raise DimensionError(f"expected a single point, got shape {arr.shape}")
        as_array(arr)
        return cls(arr[:-1], arr[-1])

    @classmethod
    def origin(cls, n: int) -> "GroupPoint":
        return cls(np.zeros(2 * n), 0.0)

    @property
    def n(self) -> int:
        return self.horizontal.size // 2

    def as_array(self) -> np.ndarray:
        return np.append(self.horizontal, self.vertical)

    def __mul__(self, other: "GroupPoint") -> "GroupPoint":
        return group_mul(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroupPoint):
            return NotImplemented
        return (self.horizontal.shape == other.horizontal.shape
                and bool(np.all(self.horizontal == other.horizontal))
                and self.vertical == other.vertical)

    def __hash__(self):
        return hash((self.horizontal.tobytes(), self.vertical))

    def __repr__(self):
        return f"GroupPoint({self.as_array().tolist()})"


def _wrap(result: np.ndarray, *inputs):
    if all(isinstance(g, GroupPoint) for g in inputs):
        return GroupPoint.from_array(result)
    return result


def _check_same_dim(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"dimension mismatch: H^{(a.shape[-1] - 1) // 2} vs H^{(b.shape[-1] - 1) // 2}")


def symplectic_term(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``2 * sum_j (y_j^a x_j^b - x_j^a y_j^b)``, the vertical cross term."""
    xa, ya = a[..., 0:-1:2], a[..., 1:-1:2]
    xb, yb = b[..., 0:-1:2], b[..., 1:-1:2]
    return 2.0 * np.sum(ya * xb - xa * yb, axis=-1)


def group_mul(a, b):
    """Group product ``a * b``; broadcasts over leading axes."""
    A, B = as_array(a), as_array(b)
    _check_same_dim(A, B)
    out = A + B
    out[..., -1] += symplectic_term(A, B)
    return _wrap(out, a, b)


def group_inv(a):
    return _wrap(-as_array(a), a)


def dilate(g, alpha: float):
    """Anisotropic dilation (z, t) -> (alpha z, alpha^2 t)."""
    G = as_array(g).copy()
    G[..., :-1] *= alpha
    G[..., -1] *= alpha * alpha
    return _wrap(G, g)


def koranyi_norm(g) -> np.ndarray:
    """``(|z|^4 + t^2)^(1/4)``."""
    G = as_array(g)
    z2 = np.sum(G[..., :-1] ** 2, axis=-1)
    return np.sqrt(np.hypot(z2, G[..., -1]))


def koranyi_dist(a, b) -> np.ndarray:
    """Koranyi distance ``rho(b^-1 * a)``."""
    A, B = as_array(a), as_array(b)
    _check_same_dim(A, B)
    return koranyi_norm(group_mul(-B, A))


def flow_point(n: int, direction: int, h: float) -> np.ndarray:
    """Point whose right action is the time-``h`` flow of a horizontal field.

    Directions are ordered ``X_1, Y_1, ..., X_n, Y_n`` and coincide with the
    coordinate index of the point layout.
    """
    if not 0 <= direction < 2 * n:
        raise IndexError(f"direction {direction} out of range for H^{n}")
    e = np.zeros(2 * n + 1)
    e[direction] = h
    return e


def horizontal_gradient_of_coordinates(g) -> np.ndarray:
    """Horizontal gradients of every coordinate function at ``g``.

    Returns shape ``(..., 2n + 1, 2n)``: row k is the gradient of the k-th
    coordinate.  Horizontal coordinates have unit gradients; the vertical
    coordinate has ``X_j t = 2 y_j`` and ``Y_j t = -2 x_j``.
    """
    G = as_array(g)
    n = (G.shape[-1] - 1) // 2
    out = np.zeros(G.shape[:-1] + (2 * n + 1, 2 * n))
    idx = np.arange(2 * n)
    out[..., idx, idx] = 1.0
    out[..., -1, 0::2] = 2.0 * G[..., 1:-1:2]
    out[..., -1, 1::2] = -2.0 * G[..., 0:-1:2]
    return out


@dataclass(frozen=True)
class ScalarField:
    """A real function on H^n, vectorized over leading axes.

    ``func`` maps an array ``(..., 2n + 1)`` to ``(...)``.  ``grad``, when
    given, maps it to the horizontal gradient ``(..., 2n)`` ordered
    ``(X_1 u, Y_1 u, ..., X_n u, Y_n u)``.  Both must be side-effect free.
    """

    n: int
    func: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __call__(self, g) -> np.ndarray:
        G = as_array(g)
        self._check(G)
        return np.asarray(self.func(G), dtype=float)

    def gradient(self, g) -> np.ndarray:
        if self.grad is None:
            raise ValueError(f"field {self.name or '<anonymous>'} has no analytic gradient")
        G = as_array(g)
        self._check(G)
        return np.asarray(self.grad(G), dtype=float)

    def _check(self, G):
        if G.shape[-1] != 2 * self.n + 1:
            raise DimensionError(
                f"field on H^{self.n} evaluated at a point of H^{(G.shape[-1] - 1) // 2}")

    def gradient_consistency(self, points, step: float = DEFAULT_STEP) -> float:
        """Max deviation between the analytic gradient and the flow FD."""
        analytic = self.gradient(points)
        fd = horizontal_gradient(self, points, step, analytic=False)
        return float(np.max(np.abs(analytic - fd)))


def _check_step(step: float):
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")


def horizontal_derivative(u: ScalarField, g, direction: int,
                          step: float = DEFAULT_STEP, analytic: bool = False):
    """Derivative of ``u`` along ``X_i``/``Y_i`` at ``g``.

    Central difference along the group flow, O(step^2).  With
    ``analytic=True`` and a gradient attached, the analytic value is returned.
    """
    _check_step(step)
    G = as_array(g)
    if analytic and u.grad is not None:
        return u.gradient(G)[..., direction]
    e = flow_point(u.n, direction, step)
    return (u(group_mul(G, e)) - u(group_mul(G, -e))) / (2.0 * step)


def horizontal_gradient(u: ScalarField, g, step: float = DEFAULT_STEP,
                        analytic: bool = False) -> np.ndarray:
    """Stack of horizontal derivatives in the order ``X_1, Y_1, ..., Y_n``."""
    _check_step(step)
    if analytic and u.grad is not None:
        return u.gradient(g)
    return np.stack([horizontal_derivative(u, g, k, step) for k in range(2 * u.n)], axis=-1)


def hsub_laplacian(u: ScalarField, g, step: float = DEFAULT_STEP,
                   analytic: bool = False) -> np.ndarray:
    """Sub-Laplacian ``sum_j X_j^2 u + Y_j^2 u`` at ``g``.

    Three-point stencil along each horizontal flow.  With ``analytic=True``
    and a gradient attached, the analytic first derivative is differenced
    once instead.
    """
    _check_step(step)
    G = as_array(g)
    total = 0.0
    if analytic and u.grad is not None:
        for k in range(2 * u.n):
            e = flow_point(u.n, k, step)
            fwd = u.gradient(group_mul(G, e))[..., k]
            bwd = u.gradient(group_mul(G, -e))[..., k]
            total = total + (fwd - bwd) / (2.0 * step)
        return total
    center = u(G)
    for k in range(2 * u.n):
        e = flow_point(u.n, k, step)
        total = total + (u(group_mul(G, e)) - 2.0 * center + u(group_mul(G, -e)))
    return total / (step * step)


@dataclass
class HorizontalPath:
    """Sampled trajectory in H^n on a time grid.

    ``points`` has shape ``(K + 1, 2n + 1)`` for one path or
    ``(N, K + 1, 2n + 1)`` for a batch sharing ``grid``.  ``increments`` are
    the planar driver increments ``(..., K, 2n)`` when retained.
    """

    grid: np.ndarray
    points: np.ndarray
    increments: Optional[np.ndarray] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.points = as_array(self.points)
        if self.points.ndim not in (2, 3) or self.points.shape[-2] != self.grid.size:
            raise DimensionError(
                f"points shape {self.points.shape} does not match grid of {self.grid.size}")

    @property
    def n(self) -> int:
        return (self.points.shape[-1] - 1) // 2

    @property
    def n_paths(self) -> int:
        return 1 if self.points.ndim == 2 else self.points.shape[0]

    @property
    def horizontal(self) -> np.ndarray:
        return self.points[..., :-1]

    @property
    def vertical(self) -> np.ndarray:
        return self.points[..., -1]

    def path(self, i: int) -> "HorizontalPath":
        if self.points.ndim == 2:
            if i != 0:
                raise IndexError(i)
            return self
        inc = None if self.increments is None else self.increments[i]
        return HorizontalPath(self.grid, self.points[i], inc)


def check_grid(grid, require_zero_start: bool = False) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-D array")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("time grid must be strictly increasing")
    if require_zero_start and grid[0] != 0.0:
        raise ValueError(f"time grid must start at 0, starts at {grid[0]}")
    return grid


def horizontal_lift(grid, planar, eta0: float = 0.0) -> HorizontalPath:
    """Lift a planar curve to a horizontal curve with left-point sums.

    ``planar`` has shape ``(..., K + 1, 2n)``.  The vertical coordinate is
    ``eta0 + 2 sum_{m<k} sum_j (zeta_j(t_m) d xi_j - xi_j(t_m) d zeta_j)``.
    """
    grid = check_grid(grid)
    planar = np.asarray(planar, dtype=float)
    if planar.shape[-2] != grid.size or planar.shape[-1] % 2:
        raise DimensionError(f"planar curve shape {planar.shape} does not fit grid {grid.size}")
    d = np.diff(planar, axis=-2)
    xi, zeta = planar[..., :-1, 0::2], planar[..., :-1, 1::2]
    step = 2.0 * np.sum(zeta * d[..., 0::2] - xi * d[..., 1::2], axis=-1)
    eta = np.concatenate([np.zeros(step.shape[:-1] + (1,)), np.cumsum(step, axis=-1)], axis=-1)
    points = np.concatenate([planar, (eta0 + eta)[..., None]], axis=-1)
    return HorizontalPath(grid, points)


def horizontality_residual(path: HorizontalPath) -> float:
    """Max over steps of the discrete contact defect of a sampled path."""
    P = path.points
    if P.shape[-2] < 2:
        return 0.0
    d = np.diff(P, axis=-2)
    xi, zeta = P[..., :-1, 0:-1:2], P[..., :-1, 1:-1:2]
    expected = 2.0 * np.sum(zeta * d[..., 0:-1:2] - xi * d[..., 1:-1:2], axis=-1)
    return float(np.max(np.abs(d[..., -1] - expected)))


@dataclass(frozen=True)
class GroupMap:
    """A map from U in H^n to H^p given by 2p + 1 scalar components.

    Components are ordered ``(u_1, v_1, ..., u_p, v_p, h)``.  ``evaluator``
    is an optional whole-map fast path returning ``(..., 2p + 1)``;
    ``jacobian`` an optional Euclidean differential ``(..., 2p + 1, 2n + 1)``.
    """

    n: int
    p: int
    components: Sequence[ScalarField]
    name: str = ""
    evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != 2 * self.p + 1:
            raise DimensionError(f"map into H^{self.p} needs {2 * self.p + 1} components, got {len(comps)}")
        if any(c.n != self.n for c in comps):
            raise DimensionError(f"all components must live on H^{self.n}")
        object.__setattr__(self, "components", comps)

    @property
    def has_analytic_gradients(self) -> bool:
        return all(c.grad is not None for c in self.components)

    def __call__(self, g) -> np.ndarray:
        G = as_array(g)
        if G.shape[-1] != 2 * self.n + 1:
            raise DimensionError(f"map on H^{self.n} evaluated at a point of H^{(G.shape[-1] - 1) // 2}")
        if self.evaluator is not None:
            return np.asarray(self.evaluator(G), dtype=float)
        return np.stack([c(G) for c in self.components], axis=-1)

    def horizontal_differential(self, g, step: float = DEFAULT_STEP,
                                analytic: bool = True) -> np.ndarray:
        """Horizontal gradients of all components, shape ``(..., 2p + 1, 2n)``."""
        return np.stack([horizontal_gradient(c, g, step, analytic=analytic)
                         for c in self.components], axis=-2)

    def euclidean_jacobian(self, g, step: float = DEFAULT_STEP) -> np.ndarray:
        """Euclidean differential; analytic if attached, else central FD."""
        G = as_array(g)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(G), dtype=float)
        cols = []
        for k in range(2 * self.n + 1):
            e = np.zeros(2 * self.n + 1)
            e[k] = step
            cols.append((self(G + e) - self(G - e)) / (2.0 * step))
        return np.stack(cols, axis=-1)
