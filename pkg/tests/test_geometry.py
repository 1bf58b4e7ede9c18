import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnacklab.errors import ArgumentError, PreconditionError
from harnacklab.geometry import (
    BallChain,
    annulus_sector,
    boundary_samples,
    check_chain,
    check_corkscrew,
    contains,
    contains_many,
    corkscrew,
    cube,
    cube_minus_ball,
    dist_to_boundary,
    dist_to_boundary_many,
    half_space,
    harnack_chain,
    hausdorff_distance,
    inward_normal,
    lipschitz_graph,
    lipschitz_to_delta,
    reifenberg_delta,
    retract_distance_constant,
    retracted_cap,
    stretch_map,
)


def _wedge():
    # boundary y = |x|, a 1-Lipschitz graph
    return lipschitz_graph([-2.0, 0.0, 2.0], [2.0, 0.0, 2.0])


def _zigzag(l=0.1, half_width=2.0, period=2.0):
    xs = np.arange(-half_width, half_width + period / 2, period / 2)
    ys = np.where(np.isclose(np.mod(xs, period), 0.0), 0.0, l * period / 2)
    return lipschitz_graph(xs, ys)


# ---------------------------------------------------------------------------
# membership and distance


def test_half_space_membership_and_distance():
    hs = half_space()
    assert contains(hs, (0.3, 0.2))
    assert not contains(hs, (0.3, 0.0))
    assert dist_to_boundary(hs, (5.0, 0.7)) == pytest.approx(0.7)
    assert dist_to_boundary(hs, (5.0, -0.7)) == pytest.approx(0.7)


def test_cube_membership_and_distance():
    q = cube((0, 0), (2, 1))
    assert contains(q, (1.0, 0.5))
    assert not contains(q, (2.0, 0.5))
    assert dist_to_boundary(q, (1.0, 0.25)) == pytest.approx(0.25)
    # outside point: distance to nearest edge point
    assert dist_to_boundary(q, (3.0, 0.5)) == pytest.approx(1.0)
    assert dist_to_boundary(q, (3.0, 2.0)) == pytest.approx(math.sqrt(2.0))


def test_cube_minus_ball_membership_and_distance():
    d = cube_minus_ball((0, 0), (4, 4), (2, 2), 1.0)
    assert contains(d, (0.5, 0.5))
    assert not contains(d, (2.0, 2.5))  # inside removed ball
    assert not contains(d, (2.0, 3.0))  # on removed sphere
    # distance from a point between wall and sphere
    assert dist_to_boundary(d, (2.0, 3.5)) == pytest.approx(0.5)
    assert dist_to_boundary(d, (0.25, 2.0)) == pytest.approx(0.25)


def test_annulus_membership_and_distance():
    a = annulus_sector((0, 0), 1.0, 2.0)
    assert contains(a, (1.5, 0.0))
    assert not contains(a, (0.5, 0.0))
    assert dist_to_boundary(a, (1.25, 0.0)) == pytest.approx(0.25)
    assert dist_to_boundary(a, (0.0, 1.8)) == pytest.approx(0.2)


def test_graph_membership_refuses_extrapolation():
    g = _zigzag()
    assert contains(g, (0.0, 0.5))
    with pytest.raises(ArgumentError):
        contains(g, (10.0, 0.5))


def test_vectorized_queries_match_scalar():
    d = cube_minus_ball((0, 0), (4, 4), (2, 2), 1.0)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1, 5, size=(200, 2))
    memb = contains_many(d, pts)
    dist = dist_to_boundary_many(d, pts)
    for p, m, dd in zip(pts, memb, dist):
        assert m == contains(d, p)
        assert dd == pytest.approx(dist_to_boundary(d, p), rel=1e-12, abs=1e-12)


def test_membership_distance_consistency_on_samples():
    # boundary samples must be at ~zero distance and not interior
    for dom in (cube((0, 0), (1, 1)), cube_minus_ball((0, 0), (4, 4), (2, 2), 1.0)):
        pts = boundary_samples(dom, 0.05)
        dst = dist_to_boundary_many(dom, pts)
        assert float(dst.max()) < 1e-12


def test_boundary_samples_cover_requested_ball():
    hs = half_space()
    pts = boundary_samples(hs, 0.01, center=(0.0, 0.0), radius=1.0)
    assert np.all(np.abs(pts[:, 1]) < 1e-15)
    assert pts[:, 0].min() == pytest.approx(-1.0, abs=0.02)
    assert pts[:, 0].max() == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ArgumentError):
        boundary_samples(hs, 0.01)  # unbounded without a window


def test_hausdorff_distance_known_value():
    A = np.array([[0.0, 0.0], [1.0, 0.0]])
    B = np.array([[0.0, 0.3], [1.0, 0.0], [2.0, 0.0]])
    # farthest B point from A is (2,0) at distance 1; A is within 0.3 of B
    assert hausdorff_distance(A, B) == pytest.approx(1.0)
    assert hausdorff_distance(A, A) == 0.0


# ---------------------------------------------------------------------------
# flatness


def test_reifenberg_half_space_is_flat():
    rep = reifenberg_delta(half_space(), (0.0, 0.0), 1.0)
    assert rep.delta <= 2e-3  # zero up to sampling resolution
    assert rep.separation_ok


def test_reifenberg_wedge_oracle():
    # right-angle wedge: best line is the one bisecting the exterior angle,
    # giving delta = sqrt(2)/2
    rep = reifenberg_delta(_wedge(), (0.0, 0.0), 1.0)
    assert rep.delta == pytest.approx(math.sqrt(2.0) / 2.0, abs=5e-3)
    # optimal direction is horizontal (0 or pi)
    ang = min(rep.theta % math.pi, math.pi - (rep.theta % math.pi))
    assert ang < 0.05


def test_reifenberg_zigzag_bounded_by_formula():
    l = 0.1
    g = _zigzag(l=l)
    rep = reifenberg_delta(g, (0.0, 0.0), 1.0)
    # measured flatness within the graph bound plus sampling slack
    assert rep.delta <= lipschitz_to_delta(l) + 2e-3
    assert rep.separation_ok


def test_reifenberg_requires_boundary_point():
    with pytest.raises(ArgumentError):
        reifenberg_delta(half_space(), (0.0, 0.5), 1.0)


def test_lipschitz_to_delta_values_and_range():
    assert lipschitz_to_delta(0.0) == 0.0
    assert lipschitz_to_delta(0.1) == pytest.approx(0.1 / math.sqrt(1.01), rel=1e-15)
    with pytest.raises(ArgumentError):
        lipschitz_to_delta(0.125)
    with pytest.raises(ArgumentError):
        lipschitz_to_delta(-0.1)


@settings(max_examples=50, deadline=None)
@given(l=st.floats(0.0, 0.1249, exclude_max=True))
def test_lipschitz_to_delta_monotone_below_small_slope(l):
    v = lipschitz_to_delta(l)
    assert 0.0 <= v <= l + 1e-15


# ---------------------------------------------------------------------------
# corkscrew


def test_corkscrew_half_space_pinned():
    a = corkscrew(half_space(), (0.0, 0.0), 1.0)
    assert a == pytest.approx((0.0, 0.5))
    assert check_corkscrew(half_space(), (0.0, 0.0), 1.0, a)


def test_corkscrew_cube_bottom_pinned():
    q = cube((0, 0), (1, 1))
    a = corkscrew(q, (0.5, 0.0), 0.5)
    assert a == pytest.approx((0.5, 0.25))


def test_corkscrew_zigzag_valid():
    g = _zigzag(l=0.1)
    a = corkscrew(g, (0.0, 0.0), 0.5)
    assert check_corkscrew(g, (0.0, 0.0), 0.5, a)


def test_corkscrew_rejects_interior_base():
    with pytest.raises(ArgumentError):
        corkscrew(half_space(), (0.0, 0.5), 1.0)


def test_inward_normals():
    assert inward_normal(half_space(), (3.0, 0.0)) == pytest.approx((0, 1))
    q = cube((0, 0), (1, 1))
    assert inward_normal(q, (0.5, 1.0)) == pytest.approx((0, -1))
    assert inward_normal(q, (0.0, 0.0)) == pytest.approx(
        (1 / math.sqrt(2), 1 / math.sqrt(2))
    )
    d = cube_minus_ball((0, 0), (4, 4), (2, 2), 1.0)
    assert inward_normal(d, (2.0, 3.0)) == pytest.approx((0, 1))
    a = annulus_sector((0, 0), 1.0, 2.0)
    assert inward_normal(a, (1.0, 0.0)) == pytest.approx((1, 0))
    assert inward_normal(a, (2.0, 0.0)) == pytest.approx((-1, 0))


# ---------------------------------------------------------------------------
# chains


def test_chain_half_space_pinned_example():
    chain = harnack_chain(half_space(), (0.0, 1.0), (3.0, 1.0), 1.0)
    assert chain.radius == pytest.approx(0.5)
    assert chain.n == 7
    ok, why = check_chain(half_space(), chain)
    assert ok, why
    assert chain.n <= chain.n_bound
    # endpoints are the first and last centers
    assert chain.centers[0] == pytest.approx((0.0, 1.0))
    assert chain.centers[-1] == pytest.approx((3.0, 1.0))


def test_chain_single_ball_when_endpoints_coincide():
    chain = harnack_chain(half_space(), (0.0, 1.0), (0.0, 1.0), 1.0)
    assert chain.n == 1


def test_chain_lifts_over_obstacle():
    d = cube_minus_ball((0, 0), (4, 4), (2, 1), 0.8)
    x, y = (1.0, 1.0), (3.0, 1.0)
    chain = harnack_chain(d, x, y, 0.4)
    ok, why = check_chain(d, chain)
    assert ok, why
    # the straight segment passes through the removed ball, so the path
    # must have been lifted above it
    assert chain.centers[:, 1].max() > 1.05


def test_chain_precondition_failures():
    with pytest.raises(PreconditionError):
        harnack_chain(half_space(), (0.0, 0.1), (1.0, 0.1), 1.0)  # too shallow
    with pytest.raises(PreconditionError):
        harnack_chain(half_space(), (0.0, 1.0), (100.0, 1.0), 1.0)  # too far


@settings(max_examples=25, deadline=None)
@given(
    x0=st.floats(-2.0, 2.0),
    x1=st.floats(-2.0, 2.0),
    y0=st.floats(0.6, 3.0),
    y1=st.floats(0.6, 3.0),
)
def test_chain_properties_random_half_space(x0, x1, y0, y1):
    p, q = (x0, y0), (x1, y1)
    if math.hypot(x0 - x1, y0 - y1) > 7.9:
        return
    chain = harnack_chain(half_space(), p, q, 1.0)
    ok, why = check_chain(half_space(), chain)
    assert ok, why
    assert chain.n <= chain.n_bound


# ---------------------------------------------------------------------------
# caps


def test_cap_membership_half_space():
    cap0 = retracted_cap(half_space(), 0.0)
    assert cap0.contains((0.0, 1.0))
    assert cap0.contains((2.2, 0.1))
    assert not cap0.contains((0.0, 2.3))  # outside the 2.25 ball
    assert not cap0.contains((0.0, -0.1))
    cap = retracted_cap(half_space(), 0.5)
    assert cap.contains((0.0, 1.0))
    assert not cap.contains((0.0, 0.3))  # too close to gamma
    assert cap.s_tilde == pytest.approx(0.5)


def test_cap_gamma_distance_accounts_for_clipping():
    # gamma is only the part of the boundary inside B(0, 2); a point just
    # past its edge measures distance to the endpoint (2, 0)
    cap = retracted_cap(half_space(), 0.0)
    assert cap.dist_gamma((0.0, 0.7)) == pytest.approx(0.7)
    assert cap.dist_gamma((2.2, 0.0)) == pytest.approx(0.2)


def test_cap_requires_anchored_boundary():
    with pytest.raises(ArgumentError):
        retracted_cap(cube((1, 1), (2, 2)), 0.1)  # 0 not on this boundary


def test_retract_distance_constant_half_space():
    out = retract_distance_constant(half_space(), 0.15)
    # marching inward by s reaches the 2s retraction within a few s
    assert out["C"] <= 2 * 2.0 + 2.0 + 0.5
    assert out["n_retract_s"] > out["n_retract_2s"] > 0


def test_retract_distance_constant_stability():
    a = retract_distance_constant(half_space(), 0.2, grid_step=0.025)
    b = retract_distance_constant(half_space(), 0.2, grid_step=0.0125)
    assert abs(a["C"] - b["C"]) <= 0.25 * max(a["C"], b["C"])


# ---------------------------------------------------------------------------
# stretch map


def test_stretch_map_flattens_graph():
    g = _zigzag(l=0.1)
    sm = stretch_map(0.1, 0.01)
    assert sm.factor == pytest.approx(10.0)
    flat = sm.transform_graph(g)
    assert flat.lip == pytest.approx(0.01, rel=1e-12)
    # round trip
    pts = np.array([[0.3, 0.7], [1.0, 2.0]])
    assert sm.inverse(sm.forward(pts)) == pytest.approx(pts)


def test_stretch_map_identity_and_multipliers():
    sm = stretch_map(0.05, 0.05)
    assert sm.factor == 1.0
    assert sm.mult == (1.0, 1.0)
    sm = stretch_map(0.1, 0.001)
    k = 100.0
    assert sm.mult[0] == pytest.approx(1.0 / k**2)
    assert sm.mult[1] == 1.0


def test_stretch_map_rejects_expansion():
    with pytest.raises(ArgumentError):
        stretch_map(0.01, 0.1)
