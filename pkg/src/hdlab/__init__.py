"""Horizontal Brownian motion on Heisenberg groups."""

from .heis_core import (GroupMap, GroupPoint, HorizontalPath, ScalarField, dilate,
                        group_inv, group_mul, horizontal_derivative, horizontal_gradient,
                        horizontal_lift, horizontality_residual, hsub_laplacian,
                        koranyi_dist, koranyi_norm)
from .rng import RngSpec

__all__ = [
    "GroupMap", "GroupPoint", "HorizontalPath", "RngSpec", "ScalarField", "dilate",
    "group_inv", "group_mul", "horizontal_derivative", "horizontal_gradient",
    "horizontal_lift", "horizontality_residual", "hsub_laplacian", "koranyi_dist",
    "koranyi_norm",
]
__version__ = "0.1.0"
