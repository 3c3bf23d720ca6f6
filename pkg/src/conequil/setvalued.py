"""Box-valued fields: regularization of piecewise reactions and their uses.

A parsed piecewise field is single-valued but can tear along its switching
surfaces.  Two standard repairs fill the tear with a componentwise interval
(a box) built from one-sided limits:

* hull regularization keeps every locally attained value, including the
  function value at the point itself (and any explicit point override);
* essential regularization keeps only the one-sided limits, so values the
  function takes on single points cannot influence it.

Away from switching surfaces both collapse to the plain function value.  A
box field can also be given directly as a pair of lower/upper expressions.

On top of the boxes this module provides: node-by-node composition with a
diffusion substitution (including its numeric inverse), tangency tests and
tangent selections against the orthant, a partition-of-unity field built
from tangent selections together with its quality checker, and a separating
direction field certifying that a window boundary stays clear of solutions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cones import ConstraintCone, clarke_derivative
from .exprfield import FieldExpr, eval_field_batch
from .operators import DiscreteOperator, resolvent

_MAX_ACTIVE_SURFACES = 12


class SetValuedField:
    """Componentwise interval values [lower(u), upper(u)] on the orthant.

    Two kinds share the interface.  A regularized field wraps one piecewise
    expression; its box is the singleton function value away from switching
    surfaces and a hull of one-sided limits on them, per ``mode``:
    'krasowski' (limits plus the point value, including overrides),
    'filippov' (limits only) or 'pointwise' (always the singleton value).
    An envelope field wraps two expressions evaluated as the box ends.

    ``overrides`` maps a jump descriptor index to a replacement function
    value on that descriptor's switching surface.
    """

    def __init__(self, expr: FieldExpr, mode: str, overrides=None):
        if mode not in ("krasowski", "filippov", "pointwise"):
            raise ValueError(f"unknown regularization mode {mode!r}")
        self.kind = "regularized"
        self.expr = expr
        self.mode = mode
        self.arity = expr.arity
        self.components = len(expr.components)
        self.overrides = dict(overrides or {})
        self._lo_expr = self._hi_expr = None
        known = {d.index for d in expr.jump_descriptors}
        for idx in self.overrides:
            if idx not in known:
                raise ValueError(f"override references unknown jump descriptor {idx}")

    @classmethod
    def from_bounds(cls, lower: FieldExpr, upper: FieldExpr) -> "SetValuedField":
        if lower.arity != upper.arity or len(lower.components) != len(upper.components):
            raise ValueError("lower and upper bound fields must match in shape")
        self = cls.__new__(cls)
        self.kind = "envelope"
        self.expr = None
        self.mode = "envelope"
        self.arity = lower.arity
        self.components = len(lower.components)
        self.overrides = {}
        self._lo_expr, self._hi_expr = lower, upper
        return self

    def _active(self, u, jump_tol):
        return [d for d in self.expr.jump_descriptors
                if abs(u[d.var - 1] - d.threshold) <= jump_tol]

    def value(self, u, jump_tol: float = 0.0) -> np.ndarray:
        """Representative value: the function value (with point overrides
        applied) for regularized fields, the box midpoint for envelopes."""
        u = np.asarray(u, dtype=float)
        if self.kind == "envelope":
            lo, hi = self.box(u)
            return 0.5 * (lo + hi)
        out = eval_field_batch(self.expr, u.reshape(1, -1))[0]
        for d in self._active(u, jump_tol):
            if d.index in self.overrides:
                out[d.component - 1] = self.overrides[d.index]
        return out

    def box(self, u, jump_tol: float = 0.0):
        """Componentwise interval of admissible values at the single point u."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.arity,):
            raise ValueError(f"expected a point of length {self.arity}")
        if self.kind == "envelope":
            lo = eval_field_batch(self._lo_expr, u.reshape(1, -1))[0]
            hi = eval_field_batch(self._hi_expr, u.reshape(1, -1))[0]
            if np.any(lo > hi):
                raise ValueError("lower bound exceeds upper bound")
            return lo, hi
        base = self.value(u, jump_tol)
        active = self._active(u, jump_tol)
        if not active or self.mode == "pointwise":
            return base.copy(), base.copy()
        # descriptors sharing a switching surface must take one side jointly;
        # independent surfaces combine freely
        groups = {}
        for d in active:
            groups.setdefault((d.var, d.threshold), []).append(d)
        keys = sorted(groups)
        if len(keys) > _MAX_ACTIVE_SURFACES:
            raise ValueError("too many switching surfaces meet at one point")
        rows = []
        pts = u.reshape(1, -1)
        for sides in itertools.product(("left", "right"), repeat=len(keys)):
            forced = {}
            for side, key in zip(sides, keys):
                for d in groups[key]:
                    forced[d.index] = side
            rows.append(eval_field_batch(self.expr, pts, forced=forced)[0])
        rows = np.array(rows)
        lo, hi = rows.min(axis=0), rows.max(axis=0)
        if self.mode == "krasowski":
            lo = np.minimum(lo, base)
            hi = np.maximum(hi, base)
        return lo, hi

    def box_batch(self, pts, jump_tol: float = 0.0):
        """Boxes for an (n, arity) batch; plain values away from all surfaces."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "envelope":
            lo = eval_field_batch(self._lo_expr, pts)
            hi = eval_field_batch(self._hi_expr, pts)
            if np.any(lo > hi):
                raise ValueError("lower bound exceeds upper bound")
            return lo, hi
        base = eval_field_batch(self.expr, pts)
        lo = base.copy()
        hi = base.copy()
        special = np.zeros(pts.shape[0], dtype=bool)
        for d in self.expr.jump_descriptors:
            special |= np.abs(pts[:, d.var - 1] - d.threshold) <= jump_tol
        for i in np.flatnonzero(special):
            lo[i], hi[i] = self.box(pts[i], jump_tol)
        return lo, hi

    def lower(self, u, jump_tol: float = 0.0) -> np.ndarray:
        return self.box(u, jump_tol)[0]

    def upper(self, u, jump_tol: float = 0.0) -> np.ndarray:
        return self.box(u, jump_tol)[1]


def krasowski(f: FieldExpr, overrides=None) -> SetValuedField:
    """Hull regularization: one-sided limits plus the (overridable) point value."""
    return SetValuedField(f, "krasowski", overrides)


def filippov(f: FieldExpr) -> SetValuedField:
    """Essential regularization: one-sided limits only, point values ignored."""
    return SetValuedField(f, "filippov")


def pointwise(f: FieldExpr, overrides=None) -> SetValuedField:
    """No regularization: singleton boxes everywhere."""
    return SetValuedField(f, "pointwise", overrides)


def interval_field(lower: FieldExpr, upper: FieldExpr) -> SetValuedField:
    """Box field given directly by lower/upper bound expressions."""
    return SetValuedField.from_bounds(lower, upper)


# -- diffusion substitution and its numeric inverse -------------------------

def _vars_used(tree, out: set):
    tag = tree[0]
    if tag == "var":
        out.add(tree[1])
    elif tag == "neg":
        _vars_used(tree[1], out)
    elif tag in ("add", "sub", "mul", "div"):
        _vars_used(tree[1], out)
        _vars_used(tree[2], out)
    elif tag == "call":
        for a in tree[2]:
            _vars_used(a, out)
    elif tag == "pw":
        out.add(tree[2])
        _vars_used(tree[4], out)
        _vars_used(tree[5], out)
    return out


def _is_componentwise(f: FieldExpr) -> bool:
    if len(f.components) != f.arity:
        return False
    return all(_vars_used(tree, set()) <= {i + 1}
               for i, tree in enumerate(f.components))


def _invert_componentwise(f: FieldExpr, w, tol):
    n, m = w.shape
    x = np.zeros_like(w)
    for i in range(m):
        target = w[:, i]
        probe = np.zeros((n, f.arity))

        def comp(vals):
            probe[:, i] = vals
            return eval_field_batch(f, probe)[:, i]

        lo = np.zeros(n)
        hi = np.maximum(target, 1.0)
        for _ in range(200):
            grow = comp(hi) < target
            if not grow.any():
                break
            hi[grow] *= 2.0
        else:
            raise RuntimeError("could not bracket the substitution inverse")
        exact = comp(lo) >= target  # w == 0 inverts to 0 on the boundary face
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            below = comp(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        x[:, i] = np.where(exact, 0.0, 0.5 * (lo + hi))
        resid = np.abs(comp(x[:, i]) - target)
        if resid.max() > tol * (1.0 + np.abs(target).max()):
            raise RuntimeError("substitution inverse failed to converge")
    return x


def _invert_coupled(f: FieldExpr, w, tol):
    n, m = w.shape
    out = np.empty_like(w)
    for row in range(n):
        target = w[row]
        x = target.copy()  # substitutions are near identity at the origin
        ok = False
        for _ in range(120):
            fx = eval_field_batch(f, x.reshape(1, -1))[0]
            r = fx - target
            if np.linalg.norm(r) <= tol * (1.0 + np.linalg.norm(target)):
                ok = True
                break
            jac = np.empty((m, m))
            step = 1e-7 * (1.0 + np.abs(x))
            for j in range(m):
                xp = x.copy()
                xp[j] += step[j]
                jac[:, j] = (eval_field_batch(f, xp.reshape(1, -1))[0] - fx) / step[j]
            try:
                dx = np.linalg.solve(jac, r)
            except np.linalg.LinAlgError:
                raise RuntimeError("singular slope while inverting substitution")
            t = 1.0
            base = np.linalg.norm(r)
            for _ in range(40):
                cand = np.maximum(x - t * dx, 0.0)
                rc = eval_field_batch(f, cand.reshape(1, -1))[0] - target
                if np.linalg.norm(rc) < base:
                    x = cand
                    break
                t *= 0.5
            else:
                break
        if not ok:
            raise RuntimeError("substitution inverse failed to converge at a node")
        out[row] = x
    return out


def inverse_map(rho: FieldExpr, tol: float = 1e-13):
    """Numeric inverse of an orthant-to-orthant substitution.

    Returns a callable mapping (n, M) substituted states back to original
    ones.  Componentwise monotone substitutions go through a vectorized
    bracket-and-bisect; coupled ones fall back to damped per-node iteration.
    Zero maps to zero exactly, so orthant faces are preserved.
    """
    componentwise = _is_componentwise(rho)

    def gamma(w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if componentwise:
            return _invert_componentwise(rho, w, tol)
        return _invert_coupled(rho, w, tol)

    return gamma


@dataclass
class NemytskiiImage:
    """Per-node boxes of a box field composed through a stacked grid state."""

    lower: np.ndarray          # stacked, component-major
    upper: np.ndarray
    inner_points: np.ndarray   # (n_sites, M) states actually fed to the field
    growth_constant: float     # max corner norm over 1 + inner state norm


def _apply_substitution_inverse(gamma, pts):
    if gamma is None:
        return pts
    if isinstance(gamma, FieldExpr):
        try:
            return eval_field_batch(gamma, pts)
        except ArithmeticError as exc:
            for i, p in enumerate(pts):
                try:
                    eval_field_batch(gamma, p.reshape(1, -1))
                except ArithmeticError:
                    raise RuntimeError(
                        f"substitution inverse failed at node {i}") from exc
            raise
    return np.asarray(gamma(pts), dtype=float)


def nemytskii(svf: SetValuedField, gamma, u_stacked,
              jump_tol: float = 0.0) -> NemytskiiImage:
    """Apply the box field node by node to a stacked state.

    The stacked state holds svf.arity components, one grid's worth each.
    ``gamma`` (an expression, a callable on (n, M) arrays, or None for the
    identity) first pulls each node state back through the substitution
    inverse, so boxes are taken at the original states.
    """
    u = np.asarray(u_stacked, dtype=float)
    m = svf.arity
    if u.ndim != 1 or u.size % m:
        raise ValueError(f"stacked state length must be a multiple of {m}")
    pts = u.reshape(m, -1).T
    inner = _apply_substitution_inverse(gamma, pts)
    lo, hi = svf.box_batch(inner, jump_tol)
    corner = np.maximum(np.abs(lo), np.abs(hi))
    denom = 1.0 + np.linalg.norm(inner, axis=1)
    growth = float(np.max(np.linalg.norm(corner, axis=1) / denom))
    return NemytskiiImage(lower=np.ascontiguousarray(lo.T).reshape(-1),
                          upper=np.ascontiguousarray(hi.T).reshape(-1),
                          inner_points=inner,
                          growth_constant=growth)


# -- tangency against the orthant -------------------------------------------

@dataclass
class TangencyReport:
    ok: bool
    per_sample: np.ndarray     # bool per sample
    worst_margin: float        # smallest upper bound seen on an active coordinate
    failures: list             # (sample index, component, upper bound)


def weak_tangency_check(svf: SetValuedField, cone: ConstraintCone, samples,
                        jump_tol: float = 0.0) -> TangencyReport:
    """Can the box always point inward on boundary faces?

    At each sample, every coordinate sitting on its face must admit a
    nonnegative value in the box, i.e. the upper end must be >= 0 there.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    worst = np.inf
    failures = []
    per_sample = np.ones(len(samples), dtype=bool)
    for k, u in enumerate(samples):
        _, hi = svf.box(u, jump_tol)
        for i in np.flatnonzero(u <= cone.active_tol):
            worst = min(worst, hi[i])
            if hi[i] < 0.0:
                per_sample[k] = False
                failures.append((k, int(i), float(hi[i])))
    return TangencyReport(ok=bool(per_sample.all()), per_sample=per_sample,
                          worst_margin=float(worst), failures=failures)


def selection_batch(svf: SetValuedField, cone: ConstraintCone, pts,
                    activity=None, mode: str = "mid",
                    jump_tol: float = 0.0) -> np.ndarray:
    """Choose one admissible value per point, tangent on active coordinates.

    mode picks the starting value inside the box: 'mid', 'lower' or 'upper'.
    On coordinates where the activity state sits on its face the value is
    clamped up to zero, which stays inside the box whenever weak tangency
    holds; an entirely negative box there is an error.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lo, hi = svf.box_batch(pts, jump_tol)
    if mode == "mid":
        v = 0.5 * (lo + hi)
    elif mode == "lower":
        v = lo.copy()
    elif mode == "upper":
        v = hi.copy()
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    act_state = pts if activity is None else np.atleast_2d(np.asarray(activity, float))
    act = act_state <= cone.active_tol
    bad = act & (hi < 0.0)
    if np.any(bad):
        k, i = np.argwhere(bad)[0]
        raise ValueError(f"no tangent selection at sample {k}: box entirely "
                         f"negative on active component {i + 1}")
    return np.where(act, np.minimum(np.maximum(v, 0.0), hi), v)


def tangent_selection(svf: SetValuedField, cone: ConstraintCone, u,
                      mode: str = "mid", jump_tol: float = 0.0) -> np.ndarray:
    """Tangent selection at a single point: box midpoint (or end per mode),
    clamped up to zero on active coordinates."""
    u = np.asarray(u, dtype=float)
    return selection_batch(svf, cone, u.reshape(1, -1), mode=mode,
                           jump_tol=jump_tol)[0]


def box_min_norm(lo, hi) -> np.ndarray:
    """Smallest-norm point of a box: clamp zero into it componentwise."""
    return np.minimum(np.maximum(np.asarray(lo, float), 0.0), np.asarray(hi, float))


# -- partition-of-unity tangent approximation --------------------------------

@dataclass
class ApproximationCheck:
    ok: bool
    max_derivative: float      # worst orthant-distance derivative seen
    max_box_distance: float    # worst distance to the inflated local hull
    eps: float


@dataclass
class TangentApproximation:
    """Single-valued field blended from tangent selections at sample points.

    Radial bump weights (1 - |x - center|/delta)_+ are normalized into a
    partition of unity over the sampled region; outside the union of bumps
    the field is undefined and evaluation raises.  ``check`` holds the
    two-condition quality report computed at build time.
    """

    centers: np.ndarray
    values: np.ndarray
    delta: float
    eps: float
    check: ApproximationCheck | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dists = np.linalg.norm(self.centers - x, axis=1)
        weights = np.maximum(1.0 - dists / self.delta, 0.0)
        total = weights.sum()
        if total <= 0.0:
            raise ValueError("point lies outside the approximated region")
        return (weights[:, None] * self.values).sum(axis=0) / total


def default_validation_net(samples) -> np.ndarray:
    """Samples plus midpoints of near neighbours: a cheap covering probe."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 1:
        return samples.copy()
    extra = []
    nn = np.linalg.norm(samples[:, None, :] - samples[None, :, :], axis=2)
    np.fill_diagonal(nn, np.inf)
    for i in range(len(samples)):
        j = int(np.argmin(nn[i]))
        extra.append(0.5 * (samples[i] + samples[j]))
    return np.vstack([samples, np.array(extra)])


def approximation_check(svf: SetValuedField, approx: TangentApproximation,
                        points, eps: float, ball_samples: int = 48,
                        seed: int = 0) -> ApproximationCheck:
    """Gate for a blended field: near-tangency and graph proximity everywhere.

    At every checked point x two things must hold with margin eps: the
    orthant-distance derivative toward the blended value stays below eps, and
    the blended value sits within eps of the box hull the field attains on
    the eps-ball around x (intersected with the orthant).
    """
    rng = np.random.default_rng(seed)
    cone = ConstraintCone(dimension=svf.arity)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst_d = 0.0
    worst_b = 0.0
    for x in points:
        fx = approx(x)
        worst_d = max(worst_d, clarke_derivative(cone, x, fx))
        probes = [x]
        for _ in range(ball_samples):
            y = x + eps * rng.uniform(-1.0, 1.0, size=x.size)
            probes.append(np.where(y < 0.0, -y, y))  # stays in ball and orthant
        los, his = svf.box_batch(np.array(probes))
        lo = los.min(axis=0)
        hi = his.max(axis=0)
        excess = np.maximum(lo - fx, 0.0) + np.maximum(fx - hi, 0.0)
        worst_b = max(worst_b, float(np.linalg.norm(excess)))
    return ApproximationCheck(ok=bool(worst_d < eps and worst_b < eps),
                              max_derivative=float(worst_d),
                              max_box_distance=float(worst_b), eps=eps)


def epsilon_tangent_approximation(svf: SetValuedField, cone: ConstraintCone,
                                  sample_set, eps: float, validation=None,
                                  mode: str = "mid", ball_samples: int = 48,
                                  seed: int = 0) -> TangentApproximation:
    """Blend tangent selections into a continuous field on the sampled region.

    The bump radius is 1.2 times the covering radius of the samples measured
    over the validation net (default: samples plus neighbour midpoints), so
    every validated point sits inside at least one bump.  The two-condition
    quality check runs at every validation point and is attached as
    ``.check``; coverage failure raises.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    samples = np.atleast_2d(np.asarray(sample_set, dtype=float))
    vals = selection_batch(svf, cone, samples, mode=mode)
    if validation is None:
        validation = default_validation_net(samples)
    validation = np.atleast_2d(np.asarray(validation, dtype=float))
    dmat = np.linalg.norm(validation[:, None, :] - samples[None, :, :], axis=2)
    covering = float(dmat.min(axis=1).max())
    if covering == 0.0:
        nn = np.linalg.norm(samples[:, None, :] - samples[None, :, :], axis=2)
        np.fill_diagonal(nn, np.inf)
        covering = 0.5 * float(np.min(nn)) if np.isfinite(nn).any() else 1.0
    approx = TangentApproximation(centers=samples, values=vals,
                                  delta=1.2 * covering, eps=eps)
    if (dmat.min(axis=1) >= approx.delta).any():
        raise ValueError("coverage failure: a validation point lies outside "
                         "every bump support")
    approx.check = approximation_check(svf, approx, validation, eps,
                                       ball_samples=ball_samples, seed=seed)
    return approx


# -- separating direction field ----------------------------------------------

@dataclass
class SeparatingField:
    """Directions certifying a window boundary carries no solutions.

    At each boundary sample u a unit direction q0 exposes the displacement
    set J(u + step*box) - u from zero; q is the step-scaled pullback of q0
    through the resolvent and w the matching offset, so the separation reads:
    every admissible box value v satisfies <v, q(u)> > w(u) + eps0.
    """

    samples: np.ndarray
    q: np.ndarray
    w: np.ndarray
    margins: np.ndarray
    eps0: float
    identity_gap: float
    lambda0: float


def _dense_resolvent_matrix(op: DiscreteOperator, step: float) -> np.ndarray:
    n = op.scalar_matrix.shape[0]
    if n > 2000:
        raise ValueError("separating field needs a small grid")
    return np.linalg.inv(np.eye(n) + step * op.scalar_matrix.toarray())


def _min_norm_affine_box(c, t_scalar, col_sq, lo, hi, m, ns,
                         tol: float = 1e-10, max_sweeps: int = 2000):
    """argmin |c + T b| over the box, T block diagonal with scalar block t_scalar.

    Projected coordinate descent: each coordinate update is an exact clamped
    one-dimensional minimization, and the running residual is maintained.
    """
    b = box_min_norm(lo, hi)
    r = c.copy()
    for comp in range(m):
        sl = slice(comp * ns, (comp + 1) * ns)
        r[sl] += t_scalar @ b[sl]
    for _ in range(max_sweeps):
        shift = 0.0
        for comp in range(m):
            sl = slice(comp * ns, (comp + 1) * ns)
            rc = r[sl]
            bc = b[sl]
            lc = lo[sl]
            hc = hi[sl]
            for j in range(ns):
                if col_sq[j] == 0.0:
                    continue
                g = t_scalar[:, j] @ rc
                new = min(max(bc[j] - g / col_sq[j], lc[j]), hc[j])
                d = new - bc[j]
                if d != 0.0:
                    rc += t_scalar[:, j] * d
                    bc[j] = new
                    shift = max(shift, abs(d))
        if shift <= tol:
            break
    return b, r


def separating_field(op: DiscreteOperator, image, boundary_samples,
                     lambda0: float = 0.1,
                     coincidence_tol: float = 1e-9) -> SeparatingField:
    """Build separating directions on a window boundary.

    ``image`` maps a stacked state to (lower, upper) stacked box bounds.
    For each sample the displacement set is an affine image of that box; its
    minimum-norm point yields the exposing direction, and the certified gap
    eps0 is half the smallest margin over all samples.  A margin at or below
    coincidence_tol means the boundary touches the solution set: error.
    """
    if lambda0 <= 0 or lambda0 > 1.0:
        raise ValueError("lambda0 must lie in (0, 1]")
    samples = np.atleast_2d(np.asarray(boundary_samples, dtype=float))
    m, ns = op.grid.components, op.grid.n_sites()
    t_scalar = lambda0 * _dense_resolvent_matrix(op, lambda0)
    col_sq = (t_scalar**2).sum(axis=0)
    qs, ws, margins = [], [], []
    identity_gap = 0.0
    for u in samples:
        lo, hi = image(u)
        ju = resolvent(op, lambda0, u)
        c = ju - u
        b, vstar = _min_norm_affine_box(c, t_scalar, col_sq, lo, hi, m, ns)
        norm = float(np.linalg.norm(vstar))
        if norm <= coincidence_tol:
            raise ValueError("coincidence on the window boundary: no "
                             "separating direction at a sample")
        q0 = vstar / norm
        q = lambda0 * resolvent(op, lambda0, q0)  # symmetric block: adjoint = itself
        w = float((u - ju) @ q0)
        inf_box = float(np.where(q > 0, lo * q, hi * q).sum())
        margins.append(inf_box - w)
        qs.append(q)
        ws.append(w)
        identity_gap = max(identity_gap, abs(float(op.apply(u) @ q) - w))
    margins = np.array(margins)
    if margins.min() <= 0.0:
        raise ValueError("separation failed: nonpositive margin on the boundary")
    return SeparatingField(samples=samples, q=np.array(qs), w=np.array(ws),
                           margins=margins, eps0=0.5 * float(margins.min()),
                           identity_gap=identity_gap, lambda0=lambda0)
