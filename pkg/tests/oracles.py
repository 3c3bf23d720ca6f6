"""Independent numerical oracles used to cross-check closed-form code paths.

Everything here is deliberately written from definitions (limits, sampling,
dense linear algebra) rather than reusing package internals, so agreement
between an oracle and the implementation is evidence, not tautology.
"""

from __future__ import annotations

import numpy as np


def orthant_distance(x) -> float:
    return float(np.linalg.norm(np.minimum(x, 0.0)))


def clarke_derivative_oracle(u, v, rng, deltas=(1e-2, 1e-3, 1e-4),
                             n_dirs: int = 30, n_steps: int = 6) -> float:
    """Sampled limsup of d(y + h v)/h over y in the orthant near u and h down to 0.

    The outer limit is approximated by the innermost radius; for each radius
    the sup is sampled over perturbed base points (clipped back onto the
    orthant) and dyadic step sizes.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    value = 0.0
    for delta in deltas:
        points = [u]
        for _ in range(n_dirs):
            y = np.maximum(u + delta * rng.uniform(-1.0, 1.0, size=u.size), 0.0)
            points.append(y)
        best = 0.0
        for y in points:
            for j in range(1, n_steps + 1):
                h = delta / 2.0**j
                best = max(best, orthant_distance(y + h * v) / h)
        value = best  # smallest radius decides the limit
    return value


def mixed_sign_point(rng, dim: int) -> np.ndarray:
    """Orthant point with a mix of exactly-zero and order-one coordinates."""
    u = np.where(rng.uniform(size=dim) < 0.5, 0.0, rng.uniform(0.5, 2.0, size=dim))
    if u.max() == 0.0 and dim > 1:
        u[rng.integers(dim)] = rng.uniform(0.5, 2.0)
    return u


def box_hull_oracle(eval_at, u, radii=(1e-2, 1e-3, 1e-4, 1e-5), n_samples: int = 120,
                    rng=None, include_center: bool = True):
    """Componentwise hull of a map over shrinking orthant half-balls around u.

    Samples the map on points of B(u, r) intersected with the orthant, hulls
    the values, and returns the hull at the smallest radius.  Sample points
    are reflected off the boundary instead of clipped, which keeps their
    distribution atom-free: they avoid switching surfaces and orthant faces
    almost surely, so with include_center=False this is a sampled essential
    hull to which the value exactly at u contributes nothing.
    """
    rng = rng or np.random.default_rng(0)
    u = np.asarray(u, dtype=float)
    lo = hi = None
    for r in radii:
        pts = [u] if include_center else []
        for _ in range(n_samples):
            y = u + r * rng.uniform(-1.0, 1.0, size=u.size)
            y = np.where(y < 0.0, -y, y)
            pts.append(y)
        vals = np.array([eval_at(p) for p in pts])
        lo, hi = vals.min(axis=0), vals.max(axis=0)
    return lo, hi


def newton_equilibrium_oracle(a_dense, f, fprime, u0, tol: float = 1e-12,
                              max_iters: int = 400):
    """Projected damped Newton for A u = f(u), u >= 0, from a fixed start.

    Written against the dense matrix and the scalar reaction derivative only,
    independent of the package's resolvent iteration.  Returns (u, converged).
    """
    a_dense = np.asarray(a_dense, dtype=float)
    u = np.maximum(np.asarray(u0, dtype=float).copy(), 0.0)
    for _ in range(max_iters):
        r = a_dense @ u - f(u)
        if np.linalg.norm(r) <= tol * (1.0 + np.linalg.norm(a_dense @ u)):
            return u, True
        jac = a_dense - np.diag(fprime(u))
        try:
            du = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            return u, False
        base = np.linalg.norm(r)
        t = 1.0
        for _ in range(50):
            cand = np.maximum(u - t * du, 0.0)
            if np.linalg.norm(a_dense @ cand - f(cand)) < base:
                u = cand
                break
            t *= 0.5
        else:
            return u, False
    return u, False
