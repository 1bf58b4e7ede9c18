"""Solver and grid tests.

Expected values are closed-form: quadratics are differenced exactly by
every leg, so the frame envelope reproduces the extremal operators
whenever an eigenframe is available, and linear data makes every solve
land on the exact solution up to iteration tolerance.
"""

import numpy as np
import pytest

from harnacklab.errors import ArgumentError, ConfigError, ConvergenceFailure
from harnacklab.geometry import half_space, lipschitz_graph
from harnacklab.grid import (GridField, MASK_BOUNDARY, MASK_EXTERIOR, MASK_INTERIOR,
                             apply_boundary_data, bilinear, export_csv, load_grid,
                             make_disc_grid, make_domain_grid, make_rect_grid,
                             oscillation, prolong, save_grid, sup_over_ball,
                             validate_grid)
from harnacklab.nonlinearity import make_nonlinearity, rescale
from harnacklab.solver import (EllipticityPair, Problem, check_viscosity_inequalities,
                               operator_values, pucci_apply, residual,
                               solve_cascadic, solve_dirichlet)

HOM = rescale(make_nonlinearity("homogeneous"), 1.0)
LOG1 = make_nonlinearity("log_model", c=1.0)


def _zigzag(l=0.1, half_width=2.0, period=2.0):
    xs = np.arange(-half_width, half_width + period / 2, period / 2)
    ys = np.where(np.arange(xs.size) % 2 == 0, 0.0, l * period / 2)
    return lipschitz_graph(xs, ys)


def _laplace_problem():
    return Problem("pucci_minus_drift", EllipticityPair(1.0, 1.0), rnl=HOM)


# ---------------------------------------------------------------------------
# pucci_apply


def test_pucci_apply_identity():
    ell = EllipticityPair(1.0, 2.0)
    assert pucci_apply(ell, np.eye(2), "plus") == pytest.approx(-2.0, abs=1e-14)
    assert pucci_apply(ell, np.eye(2), "minus") == pytest.approx(-4.0, abs=1e-14)


def test_pucci_apply_mixed_signs():
    ell = EllipticityPair(1.0, 2.0)
    X = np.diag([1.0, -1.0])
    assert pucci_apply(ell, X, "plus") == pytest.approx(1.0, abs=1e-14)
    assert pucci_apply(ell, X, "minus") == pytest.approx(-1.0, abs=1e-14)


def test_pucci_ordering_and_rotation_covariance():
    rng = np.random.default_rng(7)
    ell = EllipticityPair(0.5, 3.0)
    for _ in range(50):
        A = rng.normal(size=(2, 2))
        X = A + A.T
        pp = pucci_apply(ell, X, "plus")
        pm = pucci_apply(ell, X, "minus")
        assert pm <= pp + 1e-12
        th = rng.uniform(0, 2 * np.pi)
        Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert pucci_apply(ell, Q.T @ X @ Q, "plus") == pytest.approx(pp, abs=1e-12)
        assert pucci_apply(ell, Q.T @ X @ Q, "minus") == pytest.approx(pm, abs=1e-12)


def test_pucci_apply_rejects_asymmetric():
    with pytest.raises(ArgumentError):
        pucci_apply(EllipticityPair(1, 2), np.array([[1.0, 0.5], [0.0, 1.0]]), "plus")
    with pytest.raises(ArgumentError):
        pucci_apply(EllipticityPair(1, 2), np.eye(2), "both")


def test_problem_validation():
    with pytest.raises(ConfigError):
        EllipticityPair(2.0, 1.0)
    with pytest.raises(ConfigError):
        Problem("pucci_minus_drift", EllipticityPair(1, 2))
    with pytest.raises(ConfigError):
        Problem("px_laplace", EllipticityPair(1, 2))
    with pytest.raises(ConfigError):
        Problem("heat", EllipticityPair(1, 2), rnl=HOM)


# ---------------------------------------------------------------------------
# discrete envelope vs the exact operator on quadratics


def _rasterize_quadratic(a, b, theta, h=1 / 16):
    g = make_rect_grid(-1.0, 1.0, -1.0, 1.0, h)
    xg, yg = g.node_xy()
    c, s = np.cos(theta), np.sin(theta)
    u = 0.5 * a * (c * xg + s * yg) ** 2 + 0.5 * b * (-s * xg + c * yg) ** 2
    g.values[:] = u
    return g


@pytest.mark.parametrize("theta", [0.0, np.pi / 4, np.arctan(0.5), np.arctan(2.0)])
@pytest.mark.parametrize("a,b", [(2.0, -3.0), (1.0, 1.0), (-0.5, -2.0)])
def test_envelope_exact_on_frame_aligned_quadratics(theta, a, b):
    ell = EllipticityPair(1.0, 2.5)
    prob = Problem("pucci_minus_drift", ell, rnl=HOM)
    g = _rasterize_quadratic(a, b, theta)
    vals = operator_values(prob, g)
    X = np.diag([a, b])  # rotation leaves the extremal values alone
    want_minus = pucci_apply(ell, X, "minus")
    want_plus = pucci_apply(ell, X, "plus")
    full = vals["frame_ok"].all(axis=0)
    scale = 1 + abs(a) + abs(b)
    assert np.abs(vals["pminus"][full] - want_minus).max() <= 1e-11 * scale
    assert np.abs(vals["pplus"][full] - want_plus).max() <= 1e-11 * scale


def test_envelope_bounds_on_misaligned_quadratic():
    # worst frame misalignment is half the 26.57 degree angular gap, so the
    # envelope sits within 0.106*(Lam-lam)*|a-b|/2 below the exact value
    ell = EllipticityPair(1.0, 3.0)
    prob = Problem("pucci_minus_drift", ell, rnl=HOM)
    a, b, theta = 2.0, -1.0, 0.3
    g = _rasterize_quadratic(a, b, theta)
    vals = operator_values(prob, g)
    full = vals["frame_ok"].all(axis=0)
    want_plus = pucci_apply(ell, np.diag([a, b]), "plus")
    defect = 0.11 * (ell.Lam - ell.lam) * abs(a - b) / 2
    assert np.all(vals["pplus"][full] <= want_plus + 1e-11)
    assert np.all(vals["pplus"][full] >= want_plus - defect)
    want_minus = pucci_apply(ell, np.diag([a, b]), "minus")
    assert np.all(vals["pminus"][full] >= want_minus - 1e-11)
    assert np.all(vals["pminus"][full] <= want_minus + defect)


# ---------------------------------------------------------------------------
# exact solves


def test_slab_reproduces_linear_data():
    g = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 16)
    apply_boundary_data(g, lambda x, y: y)
    res = solve_dirichlet(_laplace_problem(), g, tol_solve=1e-12)
    xg, yg = res.field.node_xy()
    sel = res.field.mask == MASK_INTERIOR
    assert np.abs(res.field.values[sel] - yg[sel]).max() <= 1e-10
    assert res.residual <= 1e-12


def test_disc_constant_data():
    g = make_disc_grid((0.0, 0.0), 0.75, 1 / 16)
    apply_boundary_data(g, lambda x, y: np.ones_like(x))
    res = solve_dirichlet(_laplace_problem(), g, tol_solve=1e-12)
    sel = res.field.mask == MASK_INTERIOR
    assert np.abs(res.field.values[sel] - 1.0).max() <= 1e-10


def test_harmonic_quadratic_exact():
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 16)
    apply_boundary_data(g, lambda x, y: x * x - y * y)
    res = solve_dirichlet(_laplace_problem(), g, tol_solve=1e-12)
    xg, yg = res.field.node_xy()
    sel = res.field.mask == MASK_INTERIOR
    assert np.abs(res.field.values[sel] - (xg[sel] ** 2 - yg[sel] ** 2)).max() <= 5e-11


def test_px_p2_harmonic_exact():
    prob = Problem("px_laplace", EllipticityPair(1.0, 1.0),
                   p_field=lambda x, y: np.full_like(np.asarray(x, float), 2.0))
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 16)
    apply_boundary_data(g, lambda x, y: x * x - y * y)
    res = solve_dirichlet(prob, g, tol_solve=1e-12)
    xg, yg = res.field.node_xy()
    sel = res.field.mask == MASK_INTERIOR
    assert np.abs(res.field.values[sel] - (xg[sel] ** 2 - yg[sel] ** 2)).max() <= 5e-11


def test_px_exact_plane_solution():
    # with p(x) = 3 - x1 the plane 2*H*x2 has zero gradient-direction
    # curvature and a gradient orthogonal to grad p: exact at every node
    H = 10.0
    prob = Problem("px_laplace", EllipticityPair(1.0, 2.0), p_field=lambda x, y: 3.0 - x)
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 16)
    xg, yg = g.node_xy()
    g.values[:] = 2.0 * H * yg
    assert residual(prob, g) == 0.0
    g2 = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 16)
    apply_boundary_data(g2, lambda x, y: 2.0 * H * y)
    res = solve_dirichlet(prob, g2, tol_solve=1e-10)
    sel = g2.mask == MASK_INTERIOR
    assert np.abs(res.field.values[sel] - 2.0 * H * yg[sel]).max() <= 1e-8


def test_quartic_refinement_factor():
    # x^4 - 6x^2y^2 + y^4 is harmonic but the 5-point stencil leaves a 4h^2
    # defect, so the error is genuinely O(h^2) and halving h divides it by
    # about four
    quart = lambda x, y: x ** 4 - 6.0 * x ** 2 * y ** 2 + y ** 4
    errs = []
    for h in (1 / 16, 1 / 32):
        g = make_rect_grid(0.0, 1.0, 0.0, 1.0, h)
        apply_boundary_data(g, quart)
        res = solve_dirichlet(_laplace_problem(), g, tol_solve=1e-12)
        xg, yg = g.node_xy()
        sel = g.mask == MASK_INTERIOR
        errs.append(np.abs(res.field.values[sel] - quart(xg[sel], yg[sel])).max())
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] <= 5 * (1 / 32) ** 2


# ---------------------------------------------------------------------------
# residual semantics


def test_residual_postcondition_and_perturbation_jump():
    h = 1 / 16
    prob = _laplace_problem()
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, h)
    apply_boundary_data(g, lambda x, y: x * x - y * y)
    res = solve_dirichlet(prob, g, tol_solve=1e-10)
    assert residual(prob, res.field) <= 1e-10
    bumped = res.field.copy()
    bumped.values[8, 8] += 1.0
    # every frame feels at least 4/(5 h^2) from a unit bump at the center
    assert residual(prob, bumped) >= 0.7 / h ** 2


def test_solver_is_deterministic():
    rnl = rescale(LOG1, 0.5)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 2.0), rnl=rnl)
    fields = []
    for _ in range(2):
        g = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 8)
        apply_boundary_data(g, lambda x, y: 2 * y * (1 + 0.6 * np.sin(np.pi * x)))
        fields.append(solve_dirichlet(prob, g, tol_solve=1e-8, dt_factor=0.25).field.values)
    assert np.array_equal(fields[0], fields[1])


# ---------------------------------------------------------------------------
# comparison, sign preservation, warnings


def test_discrete_comparison_principle():
    rnl = rescale(LOG1, 1.0)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 2.0), rnl=rnl)
    tol = 1e-8

    def solve_with(data):
        g = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 8)
        apply_boundary_data(g, data)
        return solve_dirichlet(prob, g, tol_solve=tol, dt_factor=0.25).field

    u = solve_with(lambda x, y: y * (1 + 0.5 * np.sin(np.pi * x)))
    v = solve_with(lambda x, y: y * (1 + 0.5 * np.sin(np.pi * x)) + 0.3)
    sel = u.mask != MASK_EXTERIOR
    assert np.all(v.values[sel] >= u.values[sel] - 10 * tol)


def test_nonnegative_data_keeps_solution_nonnegative():
    rnl = rescale(LOG1, 0.5)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 2.0), rnl=rnl)
    g = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 8)
    apply_boundary_data(g, lambda x, y: y * (1 + 0.9 * np.sin(3 * x)))
    res = solve_dirichlet(prob, g, tol_solve=1e-8, dt_factor=0.25)
    assert res.field.values[res.field.mask == MASK_INTERIOR].min() >= -1e-7
    assert not res.warnings


def test_negative_data_warning():
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 8)
    apply_boundary_data(g, lambda x, y: y - 0.5)
    res = solve_dirichlet(_laplace_problem(), g, tol_solve=1e-9)
    assert any("negative boundary data" in w for w in res.warnings)


def test_steep_drift_lipschitz_warning():
    tt = np.geomspace(1e-10, 1e6, 65)
    steep = rescale(make_nonlinearity("tabulated", table_t=tt, table_phi=tt ** 2), 1.0)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 1.0), rnl=steep)
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 8)
    apply_boundary_data(g, lambda x, y: 0.05 * y)
    res = solve_dirichlet(prob, g, tol_solve=1e-8, dt_factor=0.25)
    assert any("Lip" in w for w in res.warnings)


def test_stall_fallback_restarts_once():
    # dt_factor 0.4 limit-cycles on this instance; the stall detector must
    # halve the step and still converge
    rnl = rescale(LOG1, 0.5)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 2.0), rnl=rnl)
    g = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 16)
    apply_boundary_data(g, lambda x, y: 2 * y * (1 + 0.6 * np.sin(np.pi * x)))
    res = solve_dirichlet(prob, g, tol_solve=1e-8, dt_factor=0.4)
    assert res.restarts == 1
    assert res.residual <= 1e-8 * 3.2 + 1e-15


def test_nonconvergence_raises_with_history():
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 16)
    apply_boundary_data(g, lambda x, y: x * x - y * y)
    with pytest.raises(ConvergenceFailure) as exc:
        solve_dirichlet(_laplace_problem(), g, tol_solve=1e-13, max_iters=50)
    assert len(exc.value.residual_history) >= 1


# ---------------------------------------------------------------------------
# viscosity report


def test_viscosity_report_on_converged_solve():
    rnl = rescale(LOG1, 1.0)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 2.0), rnl=rnl)
    g = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 8)
    apply_boundary_data(g, lambda x, y: y * (1 + 0.5 * np.sin(np.pi * x)))
    res = solve_dirichlet(prob, g, tol_solve=1e-8, dt_factor=0.25)
    rep = check_viscosity_inequalities(prob, res.field, tol=1e-7)
    assert rep.passed
    assert rep.super_violations == 0 and rep.sub_violations == 0


def test_viscosity_flags_paraboloid():
    # |x|^2 has P+(D^2 u) = -2*lam*2 = -4 < 0 with unit ellipticity, so the
    # supersolution side fails at every interior node
    prob = Problem("pucci_plus_drift", EllipticityPair(1.0, 1.0), rnl=HOM)
    g = make_rect_grid(-1.0, 1.0, -1.0, 1.0, 1 / 8)
    xg, yg = g.node_xy()
    g.values[:] = xg ** 2 + yg ** 2
    rep = check_viscosity_inequalities(prob, g, tol=1e-7)
    assert not rep.passed
    assert rep.super_violations == (g.mask == MASK_INTERIOR).sum()
    assert rep.worst_super_slack == pytest.approx(-4.0, abs=1e-10)
    assert rep.sub_violations == 0


def test_viscosity_check_rejects_px():
    prob = Problem("px_laplace", EllipticityPair(1, 1),
                   p_field=lambda x, y: np.full_like(np.asarray(x, float), 2.0))
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 8)
    with pytest.raises(ArgumentError):
        check_viscosity_inequalities(prob, g)


# ---------------------------------------------------------------------------
# masks, exterior hygiene, cascadic path


def test_graph_grid_masks_and_nan_poison():
    dom = _zigzag()
    g = make_domain_grid(dom, (-1.0, 1.0, -0.125, 1.0), 1 / 16)
    validate_grid(g)
    assert (g.mask == MASK_EXTERIOR).any()
    xg, yg = g.node_xy()
    below = g.mask[yg < 0.0]
    assert set(np.unique(below)) <= {MASK_BOUNDARY, MASK_EXTERIOR}
    # poison the exterior: a correct stencil never reads those nodes
    g.values[g.mask == MASK_EXTERIOR] = np.nan
    apply_boundary_data(g, lambda x, y: np.clip(y, 0, None) * (1 + 0.5 * np.cos(x)))
    rnl = rescale(LOG1, 0.5)
    prob = Problem("pucci_minus_drift", EllipticityPair(1.0, 2.0), rnl=rnl)
    res = solve_dirichlet(prob, g, tol_solve=1e-8, dt_factor=0.25)
    live = res.field.mask != MASK_EXTERIOR
    assert np.all(np.isfinite(res.field.values[live]))
    assert np.isnan(res.field.values[res.field.mask == MASK_EXTERIOR]).all()


def test_cascadic_matches_direct_solve():
    prob = _laplace_problem()
    grids = [make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), h)
             for h in (1 / 4, 1 / 8, 1 / 16)]
    casc = solve_cascadic(prob, grids, lambda x, y: y, tol_solve=1e-12)
    direct = make_domain_grid(half_space(), (-1.0, 1.0, 0.0, 1.0), 1 / 16)
    apply_boundary_data(direct, lambda x, y: y)
    ref = solve_dirichlet(prob, direct, tol_solve=1e-12)
    assert np.abs(casc.field.values - ref.field.values).max() <= 1e-9
    assert casc.iterations < ref.iterations


def test_prolong_requires_exterior_free():
    dom = _zigzag()
    g1 = make_domain_grid(dom, (-1.0, 1.0, -0.125, 1.0), 1 / 8)
    g2 = make_domain_grid(dom, (-1.0, 1.0, -0.125, 1.0), 1 / 16)
    with pytest.raises(ArgumentError):
        prolong(g1, g2)


def test_validate_grid_rejects_surgery():
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 8)
    g.mask[4, 4] = MASK_EXTERIOR
    with pytest.raises(ConfigError):
        validate_grid(g)
    g2 = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 8)
    g2.values[3, 3] = np.inf
    with pytest.raises(ConfigError):
        validate_grid(g2)


def test_window_must_fit_lattice():
    with pytest.raises(ConfigError):
        make_rect_grid(0.0, 1.05, 0.0, 1.0, 1 / 8)


# ---------------------------------------------------------------------------
# interpolation, oscillation, IO


def test_bilinear_exact_on_linear_field():
    g = make_rect_grid(0.0, 1.0, 0.0, 1.0, 1 / 8)
    xg, yg = g.node_xy()
    g.values[:] = 2.0 * xg - 3.0 * yg + 0.25
    pts = np.array([[0.13, 0.57], [0.5, 0.5], [0.99, 0.01]])
    want = 2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 0.25
    got = bilinear(g, pts[:, 0], pts[:, 1])
    assert np.abs(got - want).max() <= 1e-13


def test_bilinear_rejects_exterior_cells_and_outside_points():
    g = make_disc_grid((0.0, 0.0), 0.5, 1 / 8)
    with pytest.raises(ArgumentError):
        bilinear(g, 0.55, 0.55)  # corner cell is exterior
    with pytest.raises(ArgumentError):
        bilinear(g, 5.0, 0.0)


def test_oscillation_scaling_on_linear_field():
    g = make_rect_grid(-1.0, 1.0, -1.0, 1.0, 1 / 32)
    xg, _ = g.node_xy()
    g.values[:] = xg
    big = oscillation(g, (0.0, 0.0), 16 / 32)
    small = oscillation(g, (0.0, 0.0), 8 / 32)
    assert big == pytest.approx(2 * small, abs=1e-14)
    assert big == pytest.approx(1.0, abs=1e-14)
    assert sup_over_ball(g, (0.0, 0.0), 16 / 32) == pytest.approx(0.5, abs=1e-14)


def test_grid_io_round_trip_is_byte_identical(tmp_path):
    dom = _zigzag()
    g = make_domain_grid(dom, (-1.0, 1.0, -0.125, 1.0), 1 / 8)
    apply_boundary_data(g, lambda x, y: np.clip(y, 0, None))
    g.values[g.mask == MASK_INTERIOR] = np.pi
    p1 = tmp_path / "a.grid"
    p2 = tmp_path / "b.grid"
    save_grid(g, str(p1))
    g2 = load_grid(str(p1))
    save_grid(g2, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(g.mask, g2.mask)
    live = g.mask != MASK_EXTERIOR
    assert np.array_equal(g.values[live], g2.values[live])
    assert (g2.nx, g2.ny, g2.h, g2.origin) == (g.nx, g.ny, g.h, g.origin)


def test_grid_load_rejects_corruption(tmp_path):
    g = make_rect_grid(0.0, 0.5, 0.0, 0.5, 1 / 4)
    p = tmp_path / "c.grid"
    save_grid(g, str(p))
    lines = p.read_text().splitlines()
    (tmp_path / "trunc.grid").write_text("\n".join(lines[:4]) + "\n")
    with pytest.raises(ConfigError):
        load_grid(str(tmp_path / "trunc.grid"))
    lines[1] = "# wrong legend"
    (tmp_path / "legend.grid").write_text("\n".join(lines) + "\n")
    with pytest.raises(ConfigError):
        load_grid(str(tmp_path / "legend.grid"))


def test_export_csv(tmp_path):
    g = make_rect_grid(0.0, 0.5, 0.0, 0.5, 1 / 4)
    apply_boundary_data(g, lambda x, y: x + y)
    p = tmp_path / "g.csv"
    export_csv(g, str(p))
    rows = p.read_text().splitlines()
    assert rows[0] == "x,y,value"
    assert len(rows) == 1 + int((g.mask != MASK_EXTERIOR).sum())
