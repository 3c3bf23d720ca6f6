"""Degree assignment and equilibrium solving on the nonnegative orthant.

The central object is the projected resolvent iteration

    u  <-  (1 - damping) u + damping * J_step(retract(u + step * field(u)))

whose fixed points with the state in the orthant interior solve
A u = field(u).  Around it sit: closed-form degree rules (linear comparison
with the principal eigenvalue, end linearizations, eigen-ray, normalization
by a bounded sweep, a one-sided-norm boundary condition), a brute-force
Brouwer degree for tiny instances used purely as a cross-check, the
end-to-end existence pipeline, and the pointwise primitive-solution check
for discontinuous reactions.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .cones import ConstraintCone, retract, semi_inner_plus
from .exprfield import FieldExpr, eval_field_batch
from .operators import DiscreteOperator, low_spectrum, principal_eigenpair, resolvent
from .setvalued import (
    SetValuedField,
    filippov,
    inverse_map,
    krasowski,
    nemytskii,
    pointwise,
    selection_batch,
    weak_tangency_check,
)
from .spectral import (
    ReactionMatrices,
    SpectralCertificate,
    certificate,
    is_quasi_nonnegative,
    sigma_plus,
    spectral_abscissa,
)


@dataclass
class SolverConfig:
    """Knobs of the projected resolvent iteration.

    step=None resolves to 0.1*min(1, 1/lambda1) at solve time.  eps is the
    selection band half-width around switching surfaces (the continuous
    approximation scale).  multistart=None resolves to scaled principal
    eigenvector stacks plus seeded random orthant points.
    """

    step: float | None = None
    eps: float = 1e-3
    max_iters: int = 100_000
    residual_tol: float = 1e-8
    damping: float = 1.0
    nontrivial_floor: float = 1e-2
    multistart: tuple | None = None
    seed: int = 0
    random_starts: int = 3

    def __post_init__(self):
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        for name in ("eps", "residual_tol", "nontrivial_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def resolve_step(self, op: DiscreteOperator) -> float:
        lam1 = principal_eigenpair(op).value
        step = self.step if self.step is not None else 0.1 * min(1.0, 1.0 / lam1)
        if op.omega != 0.0 and step * op.omega >= 1.0:
            raise ValueError("step * omega must stay below 1")
        return step


@dataclass
class Hypothesis:
    passed: bool
    margin: float
    note: str = ""


@dataclass
class DegreeReport:
    value: int | None
    rule: str
    hypotheses: dict
    window: dict

    @property
    def ok(self) -> bool:
        return self.value is not None


@dataclass
class SolveReport:
    solution: np.ndarray
    residual: float            # |Au - v_sel(u)|_2, v_sel the box-nearest value
    box_distance: float        # max over nodes of dist(Au(x), box(x))
    iterations: int
    converged: bool
    trivial: bool
    complementarity_gap: float
    max_norm: float            # largest |u|_2 seen along the trajectory
    escaped: bool = False
    start_index: int | None = None
    note: str = ""


# -- the projected resolvent iteration ----------------------------------------

def iteration_map(op: DiscreteOperator, field, step: float, cone: ConstraintCone):
    """The map whose fixed points are the constrained equilibria."""

    def g(u):
        return resolvent(op, step, retract(cone, u + step * field(u)))

    return g


def _report(op, u, field, image, cfg, iterations, converged, max_norm,
            escaped=False, start_index=None, note=""):
    au = op.apply(u)
    if image is not None:
        lo, hi = image(u)
    else:
        lo = hi = field(u)
    excess = np.maximum(lo - au, 0.0) + np.maximum(au - hi, 0.0)
    ns = u.size // _components(op)
    per_node = np.linalg.norm(excess.reshape(_components(op), ns), axis=0)
    residual = float(np.linalg.norm(excess))
    box_distance = float(per_node.max()) if per_node.size else 0.0
    gap = float(np.max(np.abs(u * excess))) if u.size else 0.0
    return SolveReport(solution=u,
                       residual=residual,
                       box_distance=box_distance,
                       iterations=iterations,
                       converged=converged,
                       trivial=bool(np.abs(u).max() < cfg.nontrivial_floor),
                       complementarity_gap=gap,
                       max_norm=max_norm,
                       escaped=escaped,
                       start_index=start_index,
                       note=note)


def _components(op) -> int:
    return op.grid.components


def resolvent_fixed_point_solve(op: DiscreteOperator, field, cone: ConstraintCone,
                                cfg: SolverConfig, u0, image=None,
                                confine_radius: float | None = None,
                                start_index: int | None = None) -> SolveReport:
    """Run the projected resolvent iteration from one start.

    field maps a stacked state to a selected admissible value; image, when
    given, maps a stacked state to (lower, upper) stacked box bounds used for
    the independently recomputed residual and box distance (default: the
    singleton at the field value).  The iteration stops on the step criterion
    |du| <= residual_tol*step, then polishes until the recomputed box
    distance also drops below residual_tol (bounded by max_iters), keeping
    the best state seen.  confine_radius aborts any run that leaves the ball
    of that radius (used by sweep evidence).
    """
    step = cfg.resolve_step(op)
    u = retract(cone, np.asarray(u0, dtype=float).copy())
    max_norm = float(np.linalg.norm(u))
    iters = 0
    converged = False
    # stall detection: a stable iteration shrinks the step size geometrically;
    # a steep selection slope (narrow blend bands) can make the map locally
    # oscillatory at the default step, which shows up as a non-decreasing
    # displacement.  Halving the step restores contraction there.
    check_every = 500
    prev_delta = None
    halvings = 0
    delta = np.inf
    while iters < cfg.max_iters:
        v = field(u)
        candidate = resolvent(op, step, retract(cone, u + step * v))
        nxt = u + cfg.damping * (candidate - u)
        iters += 1
        if not np.isfinite(nxt).all():
            return _report(op, u, field, image, cfg, iters, False, max_norm,
                           escaped=True, start_index=start_index,
                           note="aborted on non-finite iterate")
        delta = float(np.linalg.norm(nxt - u))
        u = nxt
        max_norm = max(max_norm, float(np.linalg.norm(u)))
        if confine_radius is not None and np.linalg.norm(u) > confine_radius:
            return _report(op, u, field, image, cfg, iters, False, max_norm,
                           escaped=True, start_index=start_index,
                           note="left the declared ball")
        if delta <= cfg.residual_tol * step:
            converged = True
            break
        if iters % check_every == 0:
            if (prev_delta is not None and delta >= 0.9 * prev_delta
                    and halvings < 12):
                step *= 0.5
                halvings += 1
                prev_delta = None
            else:
                prev_delta = delta
    if not converged:
        return _report(op, u, field, image, cfg, iters, False, max_norm,
                       start_index=start_index, note="step criterion not met")
    # polish: the step criterion bounds the slow-mode error only up to a
    # factor (1 + step*lambda1)/step; keep iterating until the recomputed
    # box distance meets the tolerance or stops improving
    best = _report(op, u, field, image, cfg, iters, True, max_norm,
                   start_index=start_index)
    stagnant = 0
    while best.box_distance > cfg.residual_tol and iters < cfg.max_iters:
        for _ in range(min(20, cfg.max_iters - iters)):
            v = field(u)
            candidate = resolvent(op, step, retract(cone, u + step * v))
            u = u + cfg.damping * (candidate - u)
            iters += 1
        if not np.isfinite(u).all():
            break
        max_norm = max(max_norm, float(np.linalg.norm(u)))
        trial = _report(op, u, field, image, cfg, iters, True, max_norm,
                        start_index=start_index)
        if trial.box_distance < best.box_distance * (1.0 - 1e-3):
            best, stagnant = trial, 0
        else:
            stagnant += 1
            if trial.box_distance < best.box_distance:
                best = trial
            if stagnant >= 10:
                break
    return best


def default_starts(op: DiscreteOperator, cfg: SolverConfig) -> list:
    """Scaled principal-eigenvector stacks plus seeded random orthant points."""
    pair = principal_eigenpair(op)
    phi = pair.vector / np.abs(pair.vector).max()
    stacked = np.tile(phi, _components(op))
    starts = [s * stacked for s in (0.1, 1.0, 10.0)]
    rng = np.random.default_rng(cfg.seed)
    size = op.scalar_matrix.shape[0] * _components(op)
    for _ in range(cfg.random_starts):
        starts.append(rng.uniform(0.0, 1.0, size=size))
    return starts


def multistart_solve(op: DiscreteOperator, field, cone: ConstraintCone,
                     cfg: SolverConfig, image=None,
                     confine_radius: float | None = None) -> list:
    """Run all starts concurrently; reports sorted by (residual, start index)."""
    starts = cfg.multistart if cfg.multistart is not None else \
        default_starts(op, cfg)
    cfg.resolve_step(op)  # fail fast and warm the shared eigen cache
    with ThreadPoolExecutor(max_workers=min(4, max(1, len(starts)))) as pool:
        futures = [pool.submit(resolvent_fixed_point_solve, op, field, cone,
                               cfg, u0, image, confine_radius, k)
                   for k, u0 in enumerate(starts)]
        reports = [f.result() for f in futures]
    reports.sort(key=lambda r: (r.residual, r.start_index))
    return reports


# -- sampled boundary exclusion ------------------------------------------------

def _sphere_samples(rng, dim: int, radius: float, count: int) -> np.ndarray:
    pts = np.abs(rng.normal(size=(count, dim)))
    norms = np.linalg.norm(pts, axis=1)
    norms[norms == 0.0] = 1.0
    return radius * pts / norms[:, None]


def sphere_margin(op: DiscreteOperator, field, step: float,
                  cone: ConstraintCone, radius: float, n_samples: int = 32,
                  seed: int = 0) -> float:
    """Smallest iteration displacement over a sampled orthant sphere.

    A positive value is sampled evidence that no fixed point sits at this
    radius, certifying the boundary of the ball window.
    """
    g = iteration_map(op, field, step, cone)
    rng = np.random.default_rng(seed)
    size = op.scalar_matrix.shape[0] * _components(op)
    worst = np.inf
    for u in _sphere_samples(rng, size, radius, n_samples):
        worst = min(worst, float(np.linalg.norm(g(u) - u)))
    return worst


def _search_radius(op, field, step, cone, start, grow: bool, margin_floor,
                   n_samples, seed, max_steps: int = 40):
    radius = start
    for _ in range(max_steps):
        margin = sphere_margin(op, field, step, cone, radius, n_samples, seed)
        if margin > margin_floor:
            return radius, margin
        radius = radius * 2.0 if grow else radius * 0.5
    return None, 0.0


def _linear_field(mat: np.ndarray):
    mat = np.asarray(mat, dtype=float)

    def field(u):
        m = mat.shape[0]
        return np.ascontiguousarray(mat @ u.reshape(m, -1)).reshape(-1)

    return field


# -- closed-form degree rules ----------------------------------------------------

def degree_linear(op: DiscreteOperator, comparison: np.ndarray,
                  ball_radius: float = 1.0,
                  exclusion_tol: float = 1e-8) -> DegreeReport:
    """Degree of the orthant-constrained linear problem on a zero ball.

    The comparison matrix couples components nodewise.  Value 1 when its
    abscissa sits below the principal eigenvalue, 0 when above; undefined
    when the principal eigenvalue is a feasible eigenvalue of the comparison
    (resonance) or quasi-nonnegativity fails.
    """
    comparison = np.atleast_2d(np.asarray(comparison, dtype=float))
    lam1 = principal_eigenpair(op).value
    hyps = {}
    off = comparison - np.diag(np.diag(comparison))
    hyps["quasi_nonnegative"] = Hypothesis(
        passed=is_quasi_nonnegative(comparison),
        margin=float(off.min()) if comparison.size > 1 else np.inf)
    feasible = sigma_plus(comparison)
    gap = min((abs(lam1 - s) for s in feasible), default=np.inf)
    hyps["principal_eigenvalue_excluded"] = Hypothesis(
        passed=gap > exclusion_tol, margin=float(gap))
    s = spectral_abscissa(comparison)
    hyps["abscissa_separated"] = Hypothesis(
        passed=abs(s - lam1) > exclusion_tol, margin=float(abs(s - lam1)))
    value = None
    if all(h.passed for h in hyps.values()):
        value = 1 if s < lam1 else 0
    return DegreeReport(value=value, rule="linear_comparison",
                        hypotheses=hyps,
                        window={"kind": "ball", "radius": float(ball_radius),
                                "abscissa": float(s), "lambda1": float(lam1)})


def _end_degree(op, ratio, rule, field, cfg, grow, start_radius, n_samples, seed):
    lam1 = principal_eigenpair(op).value
    base = degree_linear(op, ratio)
    hyps = dict(base.hypotheses)
    cfg = cfg or SolverConfig()
    step = cfg.resolve_step(op)
    cone = ConstraintCone(dimension=op.scalar_matrix.shape[0] * _components(op))
    probe = field if field is not None else _linear_field(ratio)
    radius, margin = _search_radius(op, probe, step, cone, start_radius, grow,
                                    margin_floor=0.0, n_samples=n_samples,
                                    seed=seed)
    hyps["boundary_excluded"] = Hypothesis(
        passed=radius is not None, margin=float(margin),
        note="sampled iteration displacement on the sphere")
    value = base.value if all(h.passed for h in hyps.values()) else None
    return DegreeReport(value=value, rule=rule, hypotheses=hyps,
                        window={"kind": "ball",
                                "radius": float(radius) if radius else None,
                                "sphere_samples": n_samples,
                                "sphere_margin": float(margin),
                                "lambda1": float(lam1),
                                "abscissa": base.window["abscissa"]})


def degree_at_zero(op: DiscreteOperator, mats: ReactionMatrices, field=None,
                   cfg: SolverConfig | None = None, start_radius: float = 1.0,
                   n_samples: int = 24, seed: int = 0) -> DegreeReport:
    """Degree on a small ball around the trivial state, from the zero-end
    linearization ratio; the ball radius is found by shrinking until the
    sampled sphere margin is positive."""
    return _end_degree(op, mats.ratio_at_zero(), "linearization_at_zero",
                       field, cfg, grow=False, start_radius=start_radius,
                       n_samples=n_samples, seed=seed)


def degree_at_infinity(op: DiscreteOperator, mats: ReactionMatrices, field=None,
                       cfg: SolverConfig | None = None,
                       start_radius: float = 10.0, n_samples: int = 24,
                       seed: int = 0) -> DegreeReport:
    """Degree on a large ball, from the infinity-end linearization ratio; the
    radius grows until the sampled sphere margin is positive."""
    return _end_degree(op, mats.ratio_at_infinity(), "linearization_at_infinity",
                       field, cfg, grow=True, start_radius=start_radius,
                       n_samples=n_samples, seed=seed)


def degree_eigen_ray(op: DiscreteOperator, ray: float,
                     margin_tol: float = 1e-8) -> DegreeReport:
    """Degree of the scaled-identity comparison over the whole orthant.

    Value 1 below the principal eigenvalue, 0 above.  Hypotheses: positive
    principal eigenvector, a spectral gap to the next mode, and sign changes
    in the next few modes (so no other eigenvector stays in the orthant).
    """
    pair = principal_eigenpair(op)
    lam1 = pair.value
    if abs(ray - lam1) <= margin_tol * (1.0 + abs(lam1)):
        raise ValueError("ray coincides with the principal eigenvalue")
    hyps = {"principal_vector_positive": Hypothesis(
        passed=bool(pair.vector.min() > 0.0), margin=float(pair.vector.min()))}
    n = op.scalar_matrix.shape[0]
    if n >= 2:
        vals, vecs = low_spectrum(op, k=min(4, n))
        gap = float(vals[1] - vals[0])
        hyps["eigen_gap"] = Hypothesis(passed=gap > 0.0, margin=gap)
        sign_margin = np.inf
        ok = True
        for j in range(1, vecs.shape[1]):
            pos, neg = float(vecs[:, j].max()), float(-vecs[:, j].min())
            sign_margin = min(sign_margin, pos, neg)
            ok = ok and pos > 0.0 and neg > 0.0
        hyps["higher_modes_change_sign"] = Hypothesis(
            passed=ok, margin=float(sign_margin),
            note="checked on the lowest modes only")
    value = (1 if ray < lam1 else 0) if all(h.passed for h in hyps.values()) \
        else None
    return DegreeReport(value=value, rule="eigen_ray", hypotheses=hyps,
                        window={"kind": "cone", "ray": float(ray),
                                "lambda1": float(lam1)})


def degree_normalization(op: DiscreteOperator, field, declared_radius: float,
                         cfg: SolverConfig | None = None,
                         t_grid: int = 11) -> DegreeReport:
    """Normalization evidence: sweep t*field over [0,1]; every run must stay
    inside the declared ball.  Confinement gives value 1; any escape refuses
    with the escaping t and the trajectory norm."""
    cfg = cfg or SolverConfig()
    cone = ConstraintCone(dimension=op.scalar_matrix.shape[0] * _components(op))
    pair = principal_eigenpair(op)
    phi = pair.vector / np.linalg.norm(pair.vector)
    stacked = np.tile(phi, _components(op)) / np.sqrt(_components(op))
    starts = [f * declared_radius * stacked for f in (0.1, 0.5, 0.9)]
    rng = np.random.default_rng(cfg.seed)
    size = op.scalar_matrix.shape[0] * _components(op)
    for _ in range(2):
        d = np.abs(rng.normal(size=size))
        starts.append(0.5 * declared_radius * d / np.linalg.norm(d))
    hyps = {}
    worst = 0.0
    for t in np.linspace(0.0, 1.0, t_grid):
        def scaled(u, t=t):
            return t * field(u)

        for k, u0 in enumerate(starts):
            rep = resolvent_fixed_point_solve(
                op, scaled, cone, cfg, u0, confine_radius=declared_radius,
                start_index=k)
            worst = max(worst, rep.max_norm)
            if rep.escaped:
                hyps["confinement"] = Hypothesis(
                    passed=False, margin=float(declared_radius - rep.max_norm),
                    note=f"escape at sweep value {t:.3f}, trajectory norm "
                         f"{rep.max_norm:.6g}")
                return DegreeReport(value=None, rule="normalization",
                                    hypotheses=hyps,
                                    window={"kind": "ball",
                                            "radius": float(declared_radius)})
    hyps["confinement"] = Hypothesis(passed=True,
                                     margin=float(declared_radius - worst),
                                     note=f"{t_grid} sweep values, "
                                          f"{len(starts)} starts each")
    return DegreeReport(value=1, rule="normalization", hypotheses=hyps,
                        window={"kind": "ball", "radius": float(declared_radius)})


@dataclass
class ConditionReport:
    ok: bool
    margin: float
    radius: float
    samples: int


def ls2_condition_check(op: DiscreteOperator, image, u0, radius: float,
                        sphere_samples: int = 64, seed: int = 0) -> ConditionReport:
    """One-sided-norm boundary condition at a sampled sphere.

    At each sampled orthant point u with |u - u0| = radius, the supremum of
    the semi-inner product [u - u0, v]+ over the admissible box must be
    negative; the smallest slack is reported as the margin.
    """
    u0 = np.asarray(u0, dtype=float)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(sphere_samples):
        d = rng.normal(size=u0.size)
        d /= np.linalg.norm(d)
        # flip coordinates that would leave the orthant; the norm is kept
        d = np.where(u0 + radius * d < 0.0, np.abs(d), d)
        u = u0 + radius * d
        x = u - u0
        lo, hi = image(u)
        v = np.where(x > 0, hi, lo)  # coordinatewise maximizer of <x, v>
        worst = max(worst, semi_inner_plus(x, v))
    return ConditionReport(ok=bool(worst < 0.0), margin=float(-worst),
                           radius=float(radius), samples=sphere_samples)


# -- brute-force Brouwer degree ---------------------------------------------------

def _fd_jacobian(h, x, scale: float = 1e-7):
    n = x.size
    hx = h(x)
    jac = np.empty((n, n))
    for j in range(n):
        dx = scale * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += dx
        jac[:, j] = (h(xp) - hx) / dx
    return jac


def _newton_roots(h, lo, hi, rng, n_random: int, grid_per_dim: int,
                  dedupe_tol: float):
    n = lo.size
    axes = [np.linspace(lo[j], hi[j], grid_per_dim) for j in range(n)]
    starts = [np.array(p) for p in itertools.product(*axes)]
    for _ in range(n_random):
        starts.append(rng.uniform(lo, hi))
    scale = float(np.max(hi - lo))
    roots = []
    for x0 in starts:
        x = x0.copy()
        ok = False
        for _ in range(80):
            r = h(x)
            if np.linalg.norm(r) <= 1e-12 * (1.0 + scale):
                ok = True
                break
            try:
                dx = np.linalg.solve(_fd_jacobian(h, x), r)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            base = np.linalg.norm(r)
            improved = False
            for _ in range(40):
                cand = x - t * dx
                if np.linalg.norm(h(cand)) < base:
                    x = cand
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
        if not ok:
            continue
        inside = np.all(x > lo + 1e-9 * scale) and np.all(x < hi - 1e-9 * scale)
        if not inside:
            continue
        if all(np.linalg.norm(x - r0) > dedupe_tol * (1.0 + scale)
               for r0 in roots):
            roots.append(x)
    return roots


def brouwer_degree_bruteforce(map_eval, box, n_shifts: int = 4, seed: int = 0,
                              boundary_samples: int = 400,
                              grid_per_dim: int = 6, n_random: int = 60,
                              regularity_tol: float = 1e-8,
                              dedupe_tol: float = 1e-6) -> int:
    """Brouwer degree of id - map_eval(retract(.)) over a small box, n <= 3.

    Zeros of the displacement can sit exactly on retraction kinks, where
    sign(det) sampling lies; instead the displacement is solved against
    several small generic right-hand sides (degree-invariant shifts), roots
    are found by dense multistart damped Newton, and the signed counts must
    agree across shifts.  Boundary zeros and irregular roots raise.
    """
    lo = np.atleast_1d(np.asarray(box[0], dtype=float))
    hi = np.atleast_1d(np.asarray(box[1], dtype=float))
    n = lo.size
    if n > 3:
        raise ValueError("brute force supports at most 3 unknowns")
    if np.any(hi <= lo):
        raise ValueError("empty box")

    def h(x):
        return x - map_eval(np.maximum(x, 0.0))

    rng = np.random.default_rng(seed)
    # dense boundary sampling: the degree needs a zero-free boundary
    worst = np.inf
    for j in range(n):
        for side in (lo[j], hi[j]):
            for _ in range(max(boundary_samples // (2 * n), 8)):
                p = rng.uniform(lo, hi)
                p[j] = side
                worst = min(worst, float(np.linalg.norm(h(p))))
    if worst < 1e-10:
        raise ValueError("zero of the displacement on the box boundary")
    shift_size = min(worst / 10.0, 1e-4 * float(np.max(hi - lo)))
    degrees = []
    attempts = 0
    while len(degrees) < n_shifts and attempts < 3 * n_shifts:
        attempts += 1
        p = rng.normal(size=n)
        p *= shift_size / np.linalg.norm(p)

        def shifted(x, p=p):
            return h(x) - p

        roots = _newton_roots(shifted, lo, hi, rng, n_random, grid_per_dim,
                              dedupe_tol)
        total = 0
        regular = True
        for root in roots:
            det = float(np.linalg.det(_fd_jacobian(shifted, root)))
            if abs(det) < regularity_tol:
                regular = False
                break
            total += 1 if det > 0 else -1
        if regular:
            degrees.append(total)
    if len(degrees) < max(2, n_shifts // 2):
        raise RuntimeError("could not find enough regular shifts")
    if len(set(degrees)) != 1:
        raise RuntimeError(f"shift consensus failed: {degrees}")
    return degrees[0]


# -- continuous selection with a band around switching surfaces -------------------

def banded_selection(svf: SetValuedField, cone: ConstraintCone, pts,
                     mode: str = "mid", band: float = 1e-3) -> np.ndarray:
    """Continuous admissible selection: one-sided branch values are blended
    linearly across a band of half-width ``band`` around each switching
    surface, then clamped tangent on active coordinates.  Away from all
    surfaces this is the plain function value.  For envelope fields and for
    the lower/upper modes this reduces to the box-end selection."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if svf.kind == "envelope" or mode != "mid":
        return selection_batch(svf, cone, pts, mode=mode, jump_tol=band)
    vals = eval_field_batch(svf.expr, pts)
    descriptors = svf.expr.jump_descriptors
    if descriptors:
        groups = {}
        for d in descriptors:
            groups.setdefault((d.var, d.threshold), []).append(d)
        keys = sorted(groups)
        in_band = np.zeros(pts.shape[0], dtype=bool)
        for var, thr in keys:
            in_band |= np.abs(pts[:, var - 1] - thr) < band
        for i in np.flatnonzero(in_band):
            u = pts[i]
            active = [k for k in keys if abs(u[k[0] - 1] - k[1]) < band]
            if len(active) > 12:
                raise ValueError("too many switching surfaces meet at one point")
            weights = [np.clip((u[v - 1] - (t - band)) / (2.0 * band), 0.0, 1.0)
                       for v, t in active]
            blended = np.zeros(len(svf.expr.components))
            row = u.reshape(1, -1)
            for sides in itertools.product((0, 1), repeat=len(active)):
                w = 1.0
                forced = {}
                for side, (v, t), tw in zip(sides, active, weights):
                    w *= tw if side else (1.0 - tw)
                    for d in groups[(v, t)]:
                        forced[d.index] = "right" if side else "left"
                if w > 0.0:
                    blended += w * eval_field_batch(svf.expr, row,
                                                    forced=forced)[0]
            vals[i] = blended
    act = pts <= cone.active_tol
    if np.any(act):
        _, hi = svf.box_batch(pts, jump_tol=band)
        bad = act & (hi < 0.0)
        if np.any(bad):
            k, i = np.argwhere(bad)[0]
            raise ValueError(f"no tangent selection at sample {k}: box "
                             f"entirely negative on active component {i + 1}")
        vals = np.where(act, np.minimum(np.maximum(vals, 0.0), hi), vals)
    return vals


def selection_field(svf: SetValuedField, gamma=None,
                    mode: str = "mid", band: float = 1e-3):
    """Stacked-state evaluator feeding the solver: pull back through the
    substitution inverse, select nodewise, restack."""
    node_cone = ConstraintCone(dimension=svf.arity)

    def field(w):
        pts = w.reshape(svf.arity, -1).T
        inner = gamma(pts) if gamma is not None else pts
        v = banded_selection(svf, node_cone, inner, mode=mode, band=band)
        return np.ascontiguousarray(v.T).reshape(-1)

    return field


def box_image(svf: SetValuedField, gamma=None, jump_tol: float = 0.0):
    """Stacked-state box evaluator (lower, upper) for residual reporting."""

    def image(w):
        img = nemytskii(svf, gamma, w, jump_tol=jump_tol)
        return img.lower, img.upper

    return image


# -- existence pipeline ------------------------------------------------------------

@dataclass
class Problem:
    """Everything the existence pipeline needs.

    reaction is a single-valued expression regularized per ``regularization``
    ('krasowski', 'filippov' or 'none'); alternatively pass a ready box field
    as svf.  rho=None means identity diffusion substitution.
    """

    op: DiscreteOperator
    mats: ReactionMatrices
    reaction: FieldExpr | None = None
    svf: SetValuedField | None = None
    rho: FieldExpr | None = None
    overrides: dict | None = None
    regularization: str = "krasowski"
    cfg: SolverConfig = dataclass_field(default_factory=SolverConfig)
    selection: str = "mid"


@dataclass
class ExistenceReport:
    outcome: str               # solution_found | certificate_declined | theory_gap
    certificate: SpectralCertificate
    checks: dict
    degree_zero: DegreeReport | None
    degree_infinity: DegreeReport | None
    best: SolveReport | None
    attempts: list
    annulus: tuple | None
    solution_substituted: np.ndarray | None
    solution_original: np.ndarray | None
    selection_used: str | None
    primitive: object | None = None
    svf: SetValuedField | None = None   # the box field the pipeline solved with
    gamma: object = None                # substitution inverse (None = identity)


def _assumption_checks(svf, rho, gamma, op, cfg):
    rng = np.random.default_rng(cfg.seed)
    m = svf.arity
    checks = {}
    pts = rng.uniform(0.0, 3.0, size=(40, m))
    pts[::3] *= (rng.uniform(size=(len(pts[::3]), m)) > 0.5)
    img = nemytskii(svf, None, np.ascontiguousarray(pts.T).reshape(-1))
    checks["growth_constant"] = Hypothesis(
        passed=bool(np.isfinite(img.growth_constant)),
        margin=float(img.growth_constant),
        note="sampled bound: corner norm <= c (1 + |state|)")
    cone = ConstraintCone(dimension=m)
    tangency = weak_tangency_check(svf, cone, pts)
    checks["weak_tangency"] = Hypothesis(
        passed=tangency.ok, margin=float(tangency.worst_margin))
    if rho is not None:
        vals = eval_field_batch(rho, pts)
        on_face = pts <= 1e-14
        face_ok = bool(np.all(np.abs(vals[on_face]) <= 1e-12))
        off_face = ~on_face
        pos_margin = float(vals[off_face].min()) if off_face.any() else np.inf
        checks["face_invariance"] = Hypothesis(
            passed=face_ok and pos_margin > 0.0,
            margin=pos_margin,
            note="rho vanishes exactly on faces and stays positive off them")
        norms = np.linalg.norm(pts, axis=1)
        keep = norms > 0
        alpha = float((np.linalg.norm(vals[keep], axis=1) / norms[keep]).min())
        checks["substitution_growth"] = Hypothesis(
            passed=alpha > 0.0, margin=alpha,
            note="sampled alpha with |rho(u)| >= alpha |u|")
    else:
        checks["face_invariance"] = Hypothesis(passed=True, margin=np.inf,
                                               note="identity substitution")
        checks["substitution_growth"] = Hypothesis(passed=True, margin=1.0)
    return checks


def existence_pipeline(problem: Problem) -> ExistenceReport:
    """Certificate-gated multistart search for a nontrivial equilibrium.

    Regularizes the reaction if needed, verifies the structural assumptions
    on samples, builds the spectral certificate, and only on a certified
    degree jump runs the multistart solver (midpoint selection first, then
    the extreme selections).  The returned annulus brackets the solution
    norm with sampled boundary-exclusion margins at both ends.
    """
    op, cfg = problem.op, problem.cfg
    if problem.svf is not None:
        svf = problem.svf
    elif problem.reaction is not None:
        if problem.regularization == "krasowski":
            svf = krasowski(problem.reaction, problem.overrides)
        elif problem.regularization == "filippov":
            svf = filippov(problem.reaction)
        elif problem.regularization == "none":
            svf = pointwise(problem.reaction, problem.overrides)
        else:
            raise ValueError(
                f"unknown regularization {problem.regularization!r}")
    else:
        raise ValueError("problem needs a reaction expression or a box field")
    if svf.arity != _components(op):
        raise ValueError("reaction arity must match grid components")
    gamma = inverse_map(problem.rho) if problem.rho is not None else None
    checks = _assumption_checks(svf, problem.rho, gamma, op, cfg)
    lam1 = principal_eigenpair(op).value
    cert = certificate(problem.mats, lam1)
    if cert.verdict != "degree_jump_exists":
        return ExistenceReport(outcome="certificate_declined", certificate=cert,
                               checks=checks, degree_zero=None,
                               degree_infinity=None, best=None, attempts=[],
                               annulus=None, solution_substituted=None,
                               solution_original=None, selection_used=None,
                               svf=svf, gamma=gamma)
    cone = ConstraintCone(dimension=op.scalar_matrix.shape[0] * _components(op))
    image = box_image(svf, gamma, jump_tol=cfg.eps)
    modes = [problem.selection] + [m for m in ("lower", "upper")
                                   if m != problem.selection]
    attempts = []
    best = None
    used = None
    for mode in modes:
        fld = selection_field(svf, gamma, mode=mode, band=cfg.eps)
        reports = multistart_solve(op, fld, cone, cfg, image=image)
        attempts.extend(reports)
        good = [r for r in reports if r.converged and not r.trivial]
        if good:
            best = good[0]
            used = mode
            break
    if best is None:
        return ExistenceReport(outcome="theory_gap", certificate=cert,
                               checks=checks, degree_zero=None,
                               degree_infinity=None, best=None,
                               attempts=attempts, annulus=None,
                               solution_substituted=None,
                               solution_original=None, selection_used=None,
                               svf=svf, gamma=gamma)
    fld = selection_field(svf, gamma, mode=used, band=cfg.eps)
    norm = float(np.linalg.norm(best.solution))
    dz = degree_at_zero(op, problem.mats, field=fld, cfg=cfg,
                        start_radius=max(norm / 2.0, 1e-3), seed=cfg.seed)
    di = degree_at_infinity(op, problem.mats, field=fld, cfg=cfg,
                            start_radius=max(2.0 * norm, 1.0), seed=cfg.seed)
    annulus = None
    if dz.window.get("radius") and di.window.get("radius"):
        annulus = (dz.window["radius"], di.window["radius"])
    w = best.solution
    u = gamma(w.reshape(_components(op), -1).T).T.reshape(-1) \
        if gamma is not None else w.copy()
    primitive = None
    if problem.reaction is not None and problem.reaction.jump_descriptors:
        primitive = primitive_solution_check(problem.reaction, svf, u, op)
    return ExistenceReport(outcome="solution_found", certificate=cert,
                           checks=checks, degree_zero=dz, degree_infinity=di,
                           best=best, attempts=attempts, annulus=annulus,
                           solution_substituted=w, solution_original=u,
                           selection_used=used, primitive=primitive,
                           svf=svf, gamma=gamma)


# -- primitive solutions --------------------------------------------------------------

@dataclass
class PrimitiveReport:
    verdict: str               # primitive | not-primitive | hypothesis-violated
    jump_nodes: list
    node_fraction: float
    worst_margin: float        # distance of 0 to the box at checked nodes
    note: str = ""


def primitive_solution_check(f: FieldExpr, svf: SetValuedField, u, op,
                             value_tol: float = 1e-6,
                             zero_tol: float = 1e-6) -> PrimitiveReport:
    """Does the regularized solution satisfy the original equation pointwise?

    At every node where a component of the state sits on a switching value
    of f, the filled-in box must not offer the value 0 unless the function
    value itself is 0 there.  If the box does offer 0, the function value
    does not, and the diffusion term actually vanishes at that node, the
    solution demonstrably uses a filled-in value: not primitive.  Otherwise
    the gate fails without proof and the verdict is withheld.
    """
    u = np.asarray(u, dtype=float)
    m = svf.arity
    pts = u.reshape(m, -1).T
    au = op.apply(u).reshape(m, -1).T
    jump_nodes = []
    for d in f.jump_descriptors:
        for k in np.flatnonzero(np.abs(pts[:, d.var - 1] - d.threshold)
                                <= value_tol):
            jump_nodes.append(int(k))
    jump_nodes = sorted(set(jump_nodes))
    if not jump_nodes:
        return PrimitiveReport(verdict="primitive", jump_nodes=[],
                               node_fraction=0.0, worst_margin=np.inf,
                               note="no node attains a switching value")
    worst = np.inf
    violated = []
    demonstrably_not = False
    for k in jump_nodes:
        lo, hi = svf.box(pts[k], jump_tol=value_tol)
        fval = svf.value(pts[k], jump_tol=value_tol)
        zero_in_box = bool(np.all(lo <= zero_tol) and np.all(hi >= -zero_tol))
        margin = float(np.linalg.norm(np.maximum(lo, 0.0)
                                      + np.minimum(hi, 0.0)))
        worst = min(worst, margin if not zero_in_box else 0.0)
        if zero_in_box and np.linalg.norm(fval) > zero_tol:
            violated.append(k)
            if np.linalg.norm(au[k]) <= zero_tol:
                demonstrably_not = True
    fraction = len(jump_nodes) / len(pts)
    if not violated:
        return PrimitiveReport(verdict="primitive", jump_nodes=jump_nodes,
                               node_fraction=fraction, worst_margin=worst)
    if demonstrably_not:
        return PrimitiveReport(verdict="not-primitive", jump_nodes=jump_nodes,
                               node_fraction=fraction, worst_margin=worst,
                               note="a node uses the filled-in zero value")
    return PrimitiveReport(verdict="hypothesis-violated",
                           jump_nodes=jump_nodes, node_fraction=fraction,
                           worst_margin=worst,
                           note="0 sits in the filled-in box away from the "
                                "function value; verdict withheld")
