import numpy as np
import pytest
from oracles import box_hull_oracle

from conequil.cones import ConstraintCone, tangent_cone_membership
from conequil.exprfield import parse_field
from conequil.operators import GridSpec, laplacian_dirichlet, resolvent
from conequil.setvalued import (
    NemytskiiImage,
    approximation_check,
    box_min_norm,
    epsilon_tangent_approximation,
    filippov,
    interval_field,
    inverse_map,
    krasowski,
    nemytskii,
    pointwise,
    selection_batch,
    separating_field,
    tangent_selection,
    weak_tangency_check,
)
from conequil.setvalued import _min_norm_affine_box

STEP = parse_field("piecewise(u1, 1, 0, 1)", 1)
CONE1 = ConstraintCone(dimension=1)


def test_continuity_point_is_singleton():
    for svf in (krasowski(STEP), filippov(STEP)):
        lo, hi = svf.box(np.array([0.5]))
        assert lo == pytest.approx([0.0], abs=0.0)
        assert hi == pytest.approx([0.0], abs=0.0)
        lo, hi = svf.box(np.array([3.0]))
        assert lo == hi == pytest.approx([1.0], abs=0.0)


def test_jump_hull_matches_sampled_oracle():
    svf = krasowski(STEP)
    lo, hi = svf.box(np.array([1.0]))
    assert (lo[0], hi[0]) == (0.0, 1.0)
    olo, ohi = box_hull_oracle(lambda p: svf.value(p), np.array([1.0]),
                               rng=np.random.default_rng(3), include_center=True)
    assert lo == pytest.approx(olo, abs=1e-12)
    assert hi == pytest.approx(ohi, abs=1e-12)


def test_value_at_threshold_takes_right_branch():
    assert krasowski(STEP).value(np.array([1.0])) == pytest.approx([1.0])


def test_point_override_control_case():
    # value at the jump overridden to 5: the hull keeps it, the essential
    # regularization discards it
    kra = krasowski(STEP, overrides={0: 5.0})
    fil = filippov(STEP)
    pnt = pointwise(STEP, overrides={0: 5.0})
    at1 = np.array([1.0])
    assert kra.value(at1) == pytest.approx([5.0])
    lo, hi = kra.box(at1)
    assert (lo[0], hi[0]) == (0.0, 5.0)
    lo, hi = fil.box(at1)
    assert (lo[0], hi[0]) == (0.0, 1.0)
    lo, hi = pnt.box(at1)
    assert (lo[0], hi[0]) == (5.0, 5.0)
    # sampled oracles: Krasowski hulls the center value, Filippov excludes it
    rng = np.random.default_rng(11)
    olo, ohi = box_hull_oracle(lambda p: kra.value(p), at1, rng=rng,
                               include_center=True)
    assert (olo[0], ohi[0]) == (0.0, 5.0)
    olo, ohi = box_hull_oracle(lambda p: kra.value(p), at1, rng=rng,
                               include_center=False)
    assert (olo[0], ohi[0]) == (0.0, 1.0)
    # away from the jump the override is inert
    assert kra.value(np.array([1.0 + 1e-12])) == pytest.approx([1.0])


def test_unknown_override_rejected():
    with pytest.raises(ValueError, match="unknown jump descriptor"):
        krasowski(STEP, overrides={3: 1.0})


def test_continuous_field_collapses_to_value():
    f = parse_field("u1*u1 - 3*u1 + exp(u2); u2", 2)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.0, 4.0, size=(50, 2))
    for svf in (krasowski(f), filippov(f)):
        lo, hi = svf.box_batch(pts)
        vals = np.array([svf.value(p) for p in pts])
        assert np.array_equal(lo, hi)
        assert lo == pytest.approx(vals, abs=0.0)


def test_same_surface_branches_switch_jointly():
    f = parse_field("piecewise(u1, 1, 0, 1) - piecewise(u1, 1, 0, 1)", 1)
    lo, hi = krasowski(f).box(np.array([1.0]))
    assert (lo[0], hi[0]) == (0.0, 0.0)


def test_independent_surfaces_combine_freely():
    f = parse_field("piecewise(u1, 1, 0, 2) + piecewise(u2, 1, 0, 4)", 2)
    svf = krasowski(f)
    lo, hi = svf.box(np.array([1.0, 1.0]))
    assert (lo[0], hi[0]) == (0.0, 6.0)
    lo, hi = svf.box(np.array([1.0, 0.5]))
    assert (lo[0], hi[0]) == (0.0, 2.0)


def test_inclusion_chain_and_ordering_fuzz():
    f = parse_field("piecewise(u1, 1, u1, u1 + 2) * piecewise(u2, 0.5, 1, 0 - 1)", 2)
    kra = krasowski(f)
    fil = filippov(f)
    rng = np.random.default_rng(7)
    pts = rng.uniform(0.0, 2.0, size=(10000, 2))
    pts[:2500, 0] = 1.0
    pts[1250:3750, 1] = 0.5
    klo, khi = kra.box_batch(pts)
    flo, fhi = fil.box_batch(pts)
    assert np.all(klo <= khi) and np.all(flo <= fhi)
    assert np.all(klo <= flo + 1e-15) and np.all(fhi <= khi + 1e-15)
    vals = np.array([kra.value(p) for p in pts[:500]])
    assert np.all(klo[:500] <= vals + 1e-15) and np.all(vals <= khi[:500] + 1e-15)


def test_box_batch_matches_pointwise_box():
    f = parse_field("piecewise(u1, 1, u1, 3 - u1)", 1)
    svf = krasowski(f)
    pts = np.array([[0.2], [1.0], [1.7]])
    blo, bhi = svf.box_batch(pts)
    for i, p in enumerate(pts):
        lo, hi = svf.box(p)
        assert np.array_equal(blo[i], lo) and np.array_equal(bhi[i], hi)


def test_usc_surrogate_at_jump():
    svf = krasowski(STEP)
    lo1, hi1 = svf.box(np.array([1.0]))
    for t in 1.0 + np.array([-1e-3, -1e-6, 1e-6, 1e-3]):
        lo, hi = svf.box(np.array([t]))
        assert lo1[0] <= lo[0] and hi[0] <= hi1[0]


def test_envelope_field_box_and_midpoint_value():
    svf = interval_field(parse_field("u1 - 1", 1), parse_field("u1 + 1", 1))
    lo, hi = svf.box(np.array([0.5]))
    assert (lo[0], hi[0]) == (-0.5, 1.5)
    assert svf.value(np.array([0.5])) == pytest.approx([0.5])
    assert svf.lower(np.array([2.0])) == pytest.approx([1.0])
    assert svf.upper(np.array([2.0])) == pytest.approx([3.0])


def test_envelope_ordering_violation_raises():
    svf = interval_field(parse_field("u1", 1), parse_field("0 - u1", 1))
    with pytest.raises(ValueError, match="lower bound exceeds upper"):
        svf.box(np.array([1.0]))


def test_envelope_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="match in shape"):
        interval_field(parse_field("u1", 1), parse_field("u1; u2", 2))


# -- substitution inverse ----------------------------------------------------

def test_inverse_map_componentwise():
    rho = parse_field("u1 + u1*u1 / (1 + u1)", 1)
    gamma = inverse_map(rho)
    rng = np.random.default_rng(1)
    x = rng.uniform(0.0, 8.0, size=(40, 1))
    from conequil.exprfield import eval_field_batch
    w = eval_field_batch(rho, x)
    back = gamma(w)
    assert back == pytest.approx(x, abs=1e-10)
    assert gamma(np.zeros((1, 1))) == pytest.approx(np.zeros((1, 1)), abs=0.0)


def test_inverse_map_coupled():
    rho = parse_field("u1 + 0.1*u2*u2; u2 + 0.1*u1*u1", 2)
    gamma = inverse_map(rho)
    rng = np.random.default_rng(2)
    x = rng.uniform(0.0, 2.0, size=(25, 2))
    from conequil.exprfield import eval_field_batch
    w = eval_field_batch(rho, x)
    assert gamma(w) == pytest.approx(x, abs=1e-9)


# -- grid composition ---------------------------------------------------------

def test_nemytskii_pointwise_composition():
    f = parse_field("2*u1", 1)
    svf = krasowski(f)
    u = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    img = nemytskii(svf, None, u)
    assert isinstance(img, NemytskiiImage)
    assert img.lower == pytest.approx(2 * u, abs=0.0)
    assert img.upper == pytest.approx(2 * u, abs=0.0)
    ident = parse_field("u1", 1)
    img2 = nemytskii(svf, ident, u)
    assert np.array_equal(img2.lower, img.lower)


def test_nemytskii_constant_state_identical_boxes():
    svf = krasowski(STEP)
    img = nemytskii(svf, None, np.full(6, 1.0))
    assert np.all(img.lower == 0.0) and np.all(img.upper == 1.0)


def test_nemytskii_matches_nodewise_box_and_growth():
    f = parse_field("piecewise(u1, 1, u2, u1 + u2); u2 - u1", 2)
    svf = krasowski(f)
    ns = 4
    rng = np.random.default_rng(5)
    u = rng.uniform(0.0, 2.0, size=2 * ns)
    u[1] = 1.0
    img = nemytskii(svf, None, u)
    pts = u.reshape(2, ns).T
    for k in range(ns):
        lo, hi = svf.box(pts[k])
        assert img.lower[[k, ns + k]] == pytest.approx(lo, abs=0.0)
        assert img.upper[[k, ns + k]] == pytest.approx(hi, abs=0.0)
    corners = np.maximum(np.abs(img.lower), np.abs(img.upper))
    corners = corners.reshape(2, ns).T
    for k in range(ns):
        bound = img.growth_constant * (1.0 + np.linalg.norm(pts[k]))
        assert np.linalg.norm(corners[k]) <= bound + 1e-12


def test_nemytskii_growth_constant_bounded_for_step_field():
    # |values| <= 1 everywhere, so the growth constant is at most 1
    svf = krasowski(STEP)
    img = nemytskii(svf, None, np.linspace(0.0, 3.0, 11))
    assert img.growth_constant <= 1.0


def test_nemytskii_gamma_failure_names_node():
    svf = krasowski(STEP)
    bad_gamma = parse_field("1 / u1", 1)
    u = np.array([1.0, 2.0, 0.0, 3.0])
    with pytest.raises(RuntimeError, match="node 2"):
        nemytskii(svf, bad_gamma, u)


def test_nemytskii_bad_length_rejected():
    f = parse_field("u1; u2", 2)
    with pytest.raises(ValueError, match="multiple"):
        nemytskii(krasowski(f), None, np.ones(5))


# -- tangency and selections ---------------------------------------------------

def test_weak_tangency_interval_field():
    svf = interval_field(parse_field("u1 - 1", 1), parse_field("u1 + 1", 1))
    rep = weak_tangency_check(svf, CONE1, np.array([[0.0], [0.5], [2.0]]))
    assert rep.ok and rep.per_sample.all()
    assert rep.worst_margin == pytest.approx(1.0)


def test_weak_tangency_failure_reported():
    svf = interval_field(parse_field("0 - u1 - 2", 1), parse_field("0 - u1 - 1", 1))
    rep = weak_tangency_check(svf, CONE1, np.array([[0.0], [1.0]]))
    assert not rep.ok
    assert list(rep.per_sample) == [False, True]
    assert rep.failures == [(0, 0, -1.0)]
    assert rep.worst_margin == pytest.approx(-1.0)


def test_tangent_selection_clamps_to_zero():
    # box [-1, 1] at the face: midpoint already admissible
    sym = interval_field(parse_field("u1 - 1", 1), parse_field("u1 + 1", 1))
    assert tangent_selection(sym, CONE1, np.array([0.0])) == pytest.approx([0.0])
    # box [-3, 1] at the face: midpoint -1 clamped up to 0, still in the box
    skew = interval_field(parse_field("u1 - 3", 1), parse_field("u1 + 1", 1))
    v = tangent_selection(skew, CONE1, np.array([0.0]))
    assert v == pytest.approx([0.0])
    assert tangent_selection(skew, CONE1, np.array([0.0]), mode="lower") == \
        pytest.approx([0.0])
    assert tangent_selection(skew, CONE1, np.array([0.0]), mode="upper") == \
        pytest.approx([1.0])
    # interior point: plain midpoint, no clamp
    assert tangent_selection(skew, CONE1, np.array([2.0])) == pytest.approx([1.0])
    assert tangent_selection(sym, CONE1, np.array([2.0])) == pytest.approx([2.0])


def test_tangent_selection_error_names_component():
    svf = interval_field(parse_field("0 - u1 - 2; u2", 2),
                         parse_field("0 - u1 - 1; u2 + 1", 2))
    cone = ConstraintCone(dimension=2)
    with pytest.raises(ValueError, match="component 1"):
        tangent_selection(svf, cone, np.array([0.0, 1.0]))


def test_selection_membership_fuzz():
    f = parse_field("piecewise(u1, 1, u2, u2 + 1); piecewise(u2, 1, 0, u1)", 2)
    svf = krasowski(f)
    cone = ConstraintCone(dimension=2)
    rng = np.random.default_rng(9)
    pts = rng.uniform(0.0, 2.0, size=(300, 2))
    pts[::3, 0] = rng.choice([0.0, 1.0], size=len(pts[::3, 0]))
    pts[::4, 1] = 0.0
    for mode in ("mid", "lower", "upper"):
        v = selection_batch(svf, cone, pts, mode=mode)
        lo, hi = svf.box_batch(pts)
        assert np.all(v >= lo - 1e-15) and np.all(v <= hi + 1e-15)
        for k in range(len(pts)):
            assert tangent_cone_membership(cone, pts[k], v[k])


# -- partition-of-unity approximation ------------------------------------------

def test_approximation_constant_field_is_constant():
    svf = interval_field(parse_field("2 + 0*u1", 1), parse_field("2 + 0*u1", 1))
    samples = np.linspace(0.0, 2.0, 9).reshape(-1, 1)
    approx = epsilon_tangent_approximation(svf, CONE1, samples, eps=0.1)
    assert approx.check.ok
    for x in np.linspace(0.0, 2.0, 17):
        assert approx(np.array([x])) == pytest.approx([2.0])


def test_approximation_interval_field_passes_gate():
    svf = interval_field(parse_field("u1 - 1", 1), parse_field("u1 + 1", 1))
    samples = np.linspace(0.0, 2.0, 50).reshape(-1, 1)
    for eps in (0.1, 0.01):
        approx = epsilon_tangent_approximation(svf, CONE1, samples, eps=eps)
        assert approx.check.ok
        assert approx.check.max_derivative < eps
        assert approx.check.max_box_distance < eps


def test_approximation_tracks_continuous_field():
    g = parse_field("exp(0 - u1)", 1)
    svf = krasowski(g)
    samples = np.linspace(0.0, 1.0, 60).reshape(-1, 1)
    approx = epsilon_tangent_approximation(svf, CONE1, samples, eps=0.1)
    rng = np.random.default_rng(4)
    xs = rng.uniform(0.0, 1.0, size=200)
    worst = max(abs(float(approx(np.array([x]))[0]) - np.exp(-x)) for x in xs)
    assert worst <= approx.delta  # Lipschitz constant of exp(-x) on [0,1] is 1


def test_approximation_outside_region_raises():
    svf = krasowski(STEP)
    approx = epsilon_tangent_approximation(
        svf, CONE1, np.array([[0.0], [0.5]]), eps=0.1)
    with pytest.raises(ValueError, match="outside"):
        approx(np.array([10.0]))


def test_approximation_check_flags_bad_field():
    svf = interval_field(parse_field("u1 + 1", 1), parse_field("u1 + 2", 1))
    approx = epsilon_tangent_approximation(
        svf, CONE1, np.linspace(0.0, 1.0, 11).reshape(-1, 1), eps=0.1)
    # hand the checker a resolution-mismatched field: constant -5 is far
    # below every box and points outward at the face
    approx.values = np.full_like(approx.values, -5.0)
    chk = approximation_check(svf, approx, approx.centers, eps=0.1)
    assert not chk.ok
    assert chk.max_derivative >= 5.0 - 1e-12
    assert chk.max_box_distance >= 5.0


# -- separating field -----------------------------------------------------------

def _constant_image(level, size):
    vec = np.full(size, float(level))
    return lambda u: (vec.copy(), vec.copy())


def test_box_min_norm():
    assert box_min_norm([-1.0, 2.0], [1.0, 3.0]) == pytest.approx([0.0, 2.0])


def test_separating_field_constant_image():
    grid = GridSpec(dim=1, extents=(1.0,), nodes=(3,))
    op = laplacian_dirichlet(grid)
    rng = np.random.default_rng(6)
    samples = []
    for _ in range(12):
        d = rng.normal(size=3)
        samples.append(0.01 * d / np.linalg.norm(d))
    samples = np.array(samples)
    sep = separating_field(op, _constant_image(5.0, 3), samples, lambda0=0.1)
    assert sep.eps0 > 0.0
    assert np.all(np.linalg.norm(sep.q, axis=1) <= 1.0 + 1e-12)
    # re-verify the separation inequality and the functional identity directly
    box_vec = np.full(3, 5.0)
    for k, u in enumerate(samples):
        lhs = float(box_vec @ sep.q[k])  # singleton box: inf is the value
        assert lhs > sep.w[k] + sep.eps0
        assert abs(float(op.apply(u) @ sep.q[k]) - sep.w[k]) <= 1e-8
    assert sep.identity_gap <= 1e-8


def test_separating_field_singleton_direction_formula():
    grid = GridSpec(dim=1, extents=(1.0,), nodes=(3,))
    op = laplacian_dirichlet(grid)
    u = np.array([0.01, -0.004, 0.003])
    lam0 = 0.1
    sep = separating_field(op, _constant_image(5.0, 3), u.reshape(1, -1),
                           lambda0=lam0)
    g = resolvent(op, lam0, u + lam0 * np.full(3, 5.0)) - u
    q0 = g / np.linalg.norm(g)
    q_expected = lam0 * resolvent(op, lam0, q0)
    assert sep.q[0] == pytest.approx(q_expected, abs=1e-9)
    assert sep.w[0] == pytest.approx(float((u - resolvent(op, lam0, u)) @ q0))


def test_separating_field_coincidence_raises():
    grid = GridSpec(dim=1, extents=(1.0,), nodes=(3,))
    op = laplacian_dirichlet(grid)
    ustar = np.linalg.solve(op.scalar_matrix.toarray(), np.full(3, 5.0))
    with pytest.raises(ValueError, match="coincidence"):
        separating_field(op, _constant_image(5.0, 3), ustar.reshape(1, -1),
                         lambda0=0.1)


def test_separating_field_bad_lambda0():
    grid = GridSpec(dim=1, extents=(1.0,), nodes=(3,))
    op = laplacian_dirichlet(grid)
    with pytest.raises(ValueError, match="lambda0"):
        separating_field(op, _constant_image(1.0, 3), np.zeros((1, 3)),
                         lambda0=0.0)


def test_min_norm_matches_lsq_linear():
    from scipy.optimize import lsq_linear

    grid = GridSpec(dim=1, extents=(1.0,), nodes=(5,))
    op = laplacian_dirichlet(grid)
    lam0 = 0.2
    t_scalar = lam0 * np.linalg.inv(np.eye(5) + lam0 * op.scalar_matrix.toarray())
    col_sq = (t_scalar**2).sum(axis=0)
    rng = np.random.default_rng(8)
    for _ in range(10):
        c = rng.normal(size=5)
        lo = rng.uniform(-3.0, 0.0, size=5)
        hi = lo + rng.uniform(0.5, 3.0, size=5)
        b, resid = _min_norm_affine_box(c, t_scalar, col_sq, lo, hi, 1, 5)
        ref = lsq_linear(t_scalar, -c, bounds=(lo, hi), tol=1e-14)
        assert np.linalg.norm(resid) == pytest.approx(
            np.linalg.norm(t_scalar @ ref.x + c), abs=1e-8)
        assert np.all(b >= lo - 1e-12) and np.all(b <= hi + 1e-12)
