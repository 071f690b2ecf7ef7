"""Rigid maps of H^n (translations, unitary rotations, dilations) and
the shipped non-morphism counterexamples, nameable by string ids.

Every catalog map is affine on R^{2n+1}, so it is stored as a pair
``(M, c)`` with ``f(g) = M g + c`` and gets exact horizontal gradients and
Euclidean Jacobians for free.

Ids understood by :func:`parse_map`::

    identity
    dilation:<alpha>
    translation:<x1>,<y1>,...,<xn>,<yn>,<t>
    rotation:<theta_1>,...,<theta_n>      z_j -> exp(i theta_j) z_j
    compose:<id>;<id>[;...]               applied left to right
    projection                            H^2 -> H^1, (z_1, z_2, t) -> (z_1, t)
    anisotropic                           H^1, (x, y, t) -> (2x, y, 2t)
    square                                H^1, (x, y, t) -> (x^2, y, t)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .heis_core import (DimensionError, GroupMap, GroupPoint, ScalarField,
                        as_array, horizontal_gradient_of_coordinates)

UNITARY_TOL = 1e-10


def complex_structure(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    for j in range(n):
        J[2 * j + 1, 2 * j] = 1.0
        J[2 * j, 2 * j + 1] = -1.0
    return J


@dataclass(frozen=True)
class Translation:
    b: GroupPoint

    @property
    def n(self) -> Optional[int]:
        return self.b.n

    def affine(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        _require_dim(self, n)
        M = np.eye(2 * n + 1)
        hz = self.b.horizontal
        M[-1, 0:-1:2] = 2.0 * hz[1::2]
        M[-1, 1:-1:2] = -2.0 * hz[0::2]
        return M, self.b.as_array()


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unitary of C^n acting on z, given as a real 2n x 2n matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] % 2:
            raise DimensionError(f"rotation matrix must be 2n x 2n, got {A.shape}")
        m = A.shape[0]
        if np.max(np.abs(A.T @ A - np.eye(m))) > UNITARY_TOL:
            raise ValueError("rotation matrix is not orthogonal")
        J = complex_structure(m // 2)
        if np.max(np.abs(A @ J - J @ A)) > UNITARY_TOL:
            raise ValueError("rotation matrix does not commute with the complex structure")
        A.flags.writeable = False
        object.__setattr__(self, "matrix", A)

    @classmethod
    def from_angles(cls, angles: Sequence[float]) -> "Rotation":
        n = len(angles)
        A = np.zeros((2 * n, 2 * n))
        for j, th in enumerate(angles):
            c, s = np.cos(th), np.sin(th)
            A[2 * j:2 * j + 2, 2 * j:2 * j + 2] = [[c, -s], [s, c]]
        return cls(A)

    @property
    def n(self) -> Optional[int]:
        return self.matrix.shape[0] // 2

    def affine(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        _require_dim(self, n)
        M = np.eye(2 * n + 1)
        M[:-1, :-1] = self.matrix
        return M, np.zeros(2 * n + 1)


@dataclass(frozen=True)
class Dilation:
    alpha: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"dilation factor must be positive, got {self.alpha}")

    @property
    def n(self) -> Optional[int]:
        return None

    def affine(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        d = np.full(2 * n + 1, float(self.alpha))
        d[-1] = self.alpha ** 2
        return np.diag(d), np.zeros(2 * n + 1)


@dataclass(frozen=True)
class Composition:
    """Maps applied in list order: ``maps[0]`` first."""

    maps: Tuple["CatalogMap", ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise ValueError("empty composition")
        dims = {m.n for m in self.maps if m.n is not None}
        if len(dims) > 1:
            raise DimensionError(f"composition mixes dimensions {sorted(dims)}")

    @property
    def n(self) -> Optional[int]:
        dims = [m.n for m in self.maps if m.n is not None]
        return dims[0] if dims else None

    def affine(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        M, c = np.eye(2 * n + 1), np.zeros(2 * n + 1)
        for m in self.maps:
            Mi, ci = m.affine(n)
            M, c = Mi @ M, Mi @ c + ci
        return M, c


CatalogMap = Union[Translation, Rotation, Dilation, Composition]


def _require_dim(c, n: int):
    if c.n is not None and c.n != n:
        raise DimensionError(f"{type(c).__name__} lives on H^{c.n}, requested H^{n}")


def affine_map(M: np.ndarray, c: np.ndarray, name: str = "") -> GroupMap:
    """GroupMap for ``g -> M g + c`` with exact horizontal gradients."""
    M = np.array(M, dtype=float)
    c = np.array(c, dtype=float)
    n = (M.shape[1] - 1) // 2
    p = (M.shape[0] - 1) // 2

    def component(i: int) -> ScalarField:
        row, off = M[i].copy(), float(c[i])

        def func(G, row=row, off=off):
            return G @ row + off

        def grad(G, row=row):
            # X_j f = M[i, x_j] + 2 y_j M[i, t];  Y_j f = M[i, y_j] - 2 x_j M[i, t]
            return horizontal_gradient_of_coordinates(G).swapaxes(-1, -2) @ row

        return ScalarField(n, func, grad, name=f"{name}[{i}]")

    def jac(G):
        return np.broadcast_to(M, G.shape[:-1] + M.shape).copy()

    return GroupMap(n, p, [component(i) for i in range(2 * p + 1)], name=name,
                    evaluator=lambda G: G @ M.T + c, jacobian=jac)


def catalog_to_map(cmap: CatalogMap, n: Optional[int] = None, name: str = "") -> GroupMap:
    """Convert a catalog map to a GroupMap on H^n with analytic gradients."""
    dim = cmap.n if cmap.n is not None else n
    if dim is None:
        raise DimensionError("dimension-free catalog map needs an explicit n")
    if n is not None and dim != n:
        raise DimensionError(f"catalog map lives on H^{dim}, requested H^{n}")
    M, c = cmap.affine(dim)
    return affine_map(M, c, name=name or describe(cmap))


def describe(cmap: CatalogMap) -> str:
    if isinstance(cmap, Translation):
        return "translation:" + ",".join(repr(float(v)) for v in cmap.b.as_array())
    if isinstance(cmap, Dilation):
        return f"dilation:{cmap.alpha!r}"
    if isinstance(cmap, Rotation):
        return "rotation:<matrix>"
    return "compose:" + ";".join(describe(m) for m in cmap.maps)


# --- counterexamples -------------------------------------------------------

def projection_map() -> GroupMap:
    """(z_1, z_2, t) -> (z_1, t): conformal and harmonic but not contact."""
    def comp(k: int) -> ScalarField:
        return ScalarField(
            2, lambda G, k=k: G[..., k],
            lambda G, k=k: horizontal_gradient_of_coordinates(G)[..., k, :],
            name=f"projection[{k}]")

    idx = [0, 1, 4]
    return GroupMap(2, 1, [comp(k) for k in idx], name="projection",
                    evaluator=lambda G: G[..., idx])


def anisotropic_map() -> GroupMap:
    """(x, y, t) -> (2x, y, 2t): harmonic and contact but not conformal."""
    M = np.diag([2.0, 1.0, 2.0])
    return affine_map(M, np.zeros(3), name="anisotropic")


def square_map() -> GroupMap:
    """(x, y, t) -> (x^2, y, t): first component has sub-Laplacian 2."""
    def x2_grad(G):
        out = np.zeros(G.shape[:-1] + (2,))
        out[..., 0] = 2.0 * G[..., 0]
        return out

    comps = [
        ScalarField(1, lambda G: G[..., 0] ** 2, x2_grad, name="x^2"),
        ScalarField(1, lambda G: G[..., 1],
                    lambda G: horizontal_gradient_of_coordinates(G)[..., 1, :], name="y"),
        ScalarField(1, lambda G: G[..., 2],
                    lambda G: horizontal_gradient_of_coordinates(G)[..., 2, :], name="t"),
    ]
    return GroupMap(1, 1, comps, name="square")


COUNTEREXAMPLES = {
    "projection": projection_map,
    "anisotropic": anisotropic_map,
    "square": square_map,
}


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad number list {text!r}") from None


def parse_catalog(map_id: str) -> CatalogMap:
    """Parse a catalog id into a CatalogMap (counterexamples excluded)."""
    map_id = map_id.strip()
    kind, _, arg = map_id.partition(":")
    if kind == "identity" and not arg:
        return Dilation(1.0)
    if kind == "dilation":
        vals = _floats(arg)
        if len(vals) != 1:
            raise ValueError(f"dilation takes one factor, got {arg!r}")
        return Dilation(vals[0])
    if kind == "translation":
        vals = _floats(arg)
        if len(vals) < 3 or len(vals) % 2 == 0:
            raise ValueError(f"translation needs 2n+1 coordinates, got {len(vals)}")
        return Translation(GroupPoint.from_array(vals))
    if kind == "rotation":
        vals = _floats(arg)
        if not vals:
            raise ValueError("rotation needs at least one angle")
        return Rotation.from_angles(vals)
    if kind == "compose":
        parts = [p for p in arg.split(";") if p.strip()]
        if not parts:
            raise ValueError("compose needs at least one map id")
        return Composition(tuple(parse_catalog(p) for p in parts))
    raise ValueError(f"unknown catalog map id {map_id!r}")


def parse_map(map_id: str, n: Optional[int] = None) -> GroupMap:
    """Resolve any map id (catalog or counterexample) to a GroupMap."""
    key = map_id.strip()
    if key in COUNTEREXAMPLES:
        gm = COUNTEREXAMPLES[key]()
        if n is not None and gm.n != n:
            raise DimensionError(f"map {key!r} is defined on H^{gm.n}, requested H^{n}")
        return gm
    cmap = parse_catalog(key)
    dim = cmap.n if cmap.n is not None else (n if n is not None else 1)
    if n is not None and dim != n:
        raise DimensionError(f"map {key!r} lives on H^{dim}, requested H^{n}")
    return catalog_to_map(cmap, dim, name=key)


def is_catalog_id(map_id: str) -> bool:
    try:
        parse_catalog(map_id)
    except ValueError:
        return False
    return True


def apply_catalog(cmap: CatalogMap, g) -> np.ndarray:
    G = as_array(g)
    M, c = cmap.affine((G.shape[-1] - 1) // 2)
    return G @ M.T + c
