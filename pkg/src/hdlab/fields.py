"""Named scalar fields used as boundary data and test functions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .heis_core import ScalarField, as_array, group_mul, koranyi_norm


@dataclass(frozen=True)
class NamedField:
    name: str
    build: Callable[[int], ScalarField]
    harmonic: bool


def _coord(k_of_n: Callable[[int], int], name: str):
    def build(n: int) -> ScalarField:
        k = k_of_n(n)
        return ScalarField(n, lambda G: G[..., k], name=name)
    return build


def _expr(fn, name: str):
    def build(n: int) -> ScalarField:
        return ScalarField(n, fn, name=name)
    return build


def _z2(G):
    return np.sum(G[..., :-1] ** 2, axis=-1)


FIELDS: Dict[str, NamedField] = {
    "1": NamedField("1", _expr(lambda G: np.ones(G.shape[:-1]), "1"), True),
    "x1": NamedField("x1", _coord(lambda n: 0, "x1"), True),
    "y1": NamedField("y1", _coord(lambda n: 1, "y1"), True),
    "t": NamedField("t", _coord(lambda n: 2 * n, "t"), True),
    "x1^2": NamedField("x1^2", _expr(lambda G: G[..., 0] ** 2, "x1^2"), False),
    "y1^2": NamedField("y1^2", _expr(lambda G: G[..., 1] ** 2, "y1^2"), False),
    "t^2": NamedField("t^2", _expr(lambda G: G[..., -1] ** 2, "t^2"), False),
    "|z|^2": NamedField("|z|^2", _expr(_z2, "|z|^2"), False),
    "x1^2-y1^2": NamedField("x1^2-y1^2", _expr(lambda G: G[..., 0] ** 2 - G[..., 1] ** 2,
                                                "x1^2-y1^2"), True),
}


def get_field(name: str, n: int) -> NamedField:
    key = name.strip()
    if key.startswith("pole:"):
        return pole_field(key, n)
    if key not in FIELDS:
        raise ValueError(f"unknown field {name!r}; known: {', '.join(sorted(FIELDS))}, pole:<point>")
    return FIELDS[key]


def pole_field(text: str, n: int) -> NamedField:
    """``rho(q^-1 g)^(-2n)``: harmonic away from the pole ``q``."""
    q = as_array([float(v) for v in text.partition(":")[2].split(",")])
    if q.size != 2 * n + 1:
        raise ValueError(f"pole needs {2 * n + 1} coordinates, got {q.size}")

    def build(dim: int) -> ScalarField:
        return ScalarField(dim, lambda G: koranyi_norm(group_mul(-q, G)) ** (-2 * dim),
                           name=text)

    return NamedField(text, build, True)
