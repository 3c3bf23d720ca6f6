"""Geometry of the nonnegative orthant used as the constraint set.

The orthant is a retract of the whole space under componentwise clipping,
with Lipschitz constant one.  The clipping retraction, the distance to the
orthant, the generalized directional derivative of that distance, and the
one-sided semi-inner product are all the degree machinery needs; everything
here is a closed form.

A coordinate is "active" at a point when it sits on the boundary face
(within active_tol).  Directions that keep every active coordinate
nonnegative are tangent; the derivative of the distance in a direction v
measures exactly the inward-violating part of v on the active set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConstraintCone:
    """Nonnegative orthant in a fixed dimension."""

    dimension: int
    lipschitz_constant: float = 1.0  # of the clipping retraction
    active_tol: float = 1e-10

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")


def _check(cone: ConstraintCone, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (cone.dimension,):
        raise ValueError(f"expected a vector of length {cone.dimension}")
    return x


def retract(cone: ConstraintCone, x) -> np.ndarray:
    """Componentwise clip onto the orthant; the identity on the orthant itself."""
    return np.maximum(_check(cone, x), 0.0)


def distance(cone: ConstraintCone, x) -> float:
    """Euclidean distance to the orthant: the norm of the negative part."""
    return float(np.linalg.norm(np.minimum(_check(cone, x), 0.0)))


def active_set(cone: ConstraintCone, u) -> np.ndarray:
    """Indices of coordinates sitting on the boundary face at u."""
    return np.flatnonzero(_check(cone, u) <= cone.active_tol)


def tangent_cone_membership(cone: ConstraintCone, u, v, tol: float = 0.0) -> bool:
    """True when v points inside the orthant along every active coordinate of u."""
    v = _check(cone, v)
    act = active_set(cone, u)
    if act.size == 0:
        return True
    return bool(np.min(v[act]) >= -tol)


def clarke_derivative(cone: ConstraintCone, u, v) -> float:
    """Directional derivative of the orthant distance at u toward v.

    Only active coordinates can push the point off the orthant, and along
    those only the negative part of v counts, so the value is the norm of
    min(v, 0) restricted to the active set.
    """
    v = _check(cone, v)
    act = active_set(cone, u)
    if act.size == 0:
        return 0.0
    return float(np.linalg.norm(np.minimum(v[act], 0.0)))


def semi_inner_plus(x, y) -> float:
    """One-sided semi-inner product [x, y]_+: <x,y>/|x| for x != 0, else |y|."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("mismatched shapes")
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return float(np.linalg.norm(y))
    return float(np.dot(x, y) / nx)
