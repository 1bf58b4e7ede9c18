"""Monotone finite differences for Pucci extremal equations with gradient
drift and the non-divergence p(x)-Laplacian on masked 2D grids.

Scheme
------
Second derivatives are sampled along eight signed legs grouped into four
orthogonal frames: the axes, the diagonals, and the two knight-move frames
(2,1)/(-1,2) and (1,2)/(-2,1).  Sixteen signed directions total.  For a
frame with directional second differences (d_a, d_b),

    plus-value  = -lam*max(d,0) - Lam*min(d,0)   summed over a, b
    minus-value = -Lam*max(d,0) - lam*min(d,0)   summed over a, b

and the discrete extremal operators are the envelope over the frames whose
stencil stays on readable nodes (the axis and diagonal frames always
qualify on a validated grid).  The envelope is attained at the eigenframe
for quadratics whose eigdirections hit one of the four frames, and is a
lower (upper) bound within a documented angular defect otherwise.

The drift right-hand side is the rescaled R*phi(|Du|); a drift-free
problem therefore stays exactly drift-free.  The gradient is centered with
a one-sided monotone fallback wherever the two readings disagree beyond
the consistency budget h*(1+|centered|).

Iteration is plain damped pseudo-time (Jacobi, bitwise deterministic):
u <- u - dt*G with dt = dt_factor*h^2/Lambda_eff.  A stalled residual
halves dt once and restarts from the current field before giving up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, ConfigError, ConvergenceFailure
from .grid import (GridField, MASK_BOUNDARY, MASK_EXTERIOR, MASK_INTERIOR,
                   apply_boundary_data, prolong, validate_grid)
from .nonlinearity import _phi_raw, eval_drift

_LEGS = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (-1, 2), (1, 2), (-2, 1))
_LEG_LEN2 = np.array([1.0, 1.0, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0])
_N_FRAMES = 4

_STALL_WINDOW = 5000
_STALL_FACTOR = 0.999
_MAX_RESTARTS = 1


@dataclass(frozen=True)
class EllipticityPair:
    lam: float
    Lam: float

    def __post_init__(self):
        if not (0.0 < self.lam <= self.Lam) or not np.isfinite(self.Lam):
            raise ConfigError(f"need 0 < lam <= Lam, got ({self.lam}, {self.Lam})")


@dataclass(frozen=True)
class Problem:
    operator: str                      # pucci_minus_drift | pucci_plus_drift | px_laplace
    ell: EllipticityPair
    rnl: object = None                 # RescaledNonlinearity for the pucci kinds
    p_field: Optional[Callable] = None  # p(x, y), vectorized, for px_laplace

    def __post_init__(self):
        if self.operator in ("pucci_minus_drift", "pucci_plus_drift"):
            if self.rnl is None:
                raise ConfigError(f"{self.operator} requires a rescaled nonlinearity")
        elif self.operator == "px_laplace":
            if self.p_field is None:
                raise ConfigError("px_laplace requires a p(x) field")
        else:
            raise ConfigError(f"unknown operator {self.operator!r}")


def pucci_apply(ell: EllipticityPair, X, sign: str) -> float:
    """Extremal operator on one symmetric 2x2 matrix via its eigenvalues."""
    X = np.asarray(X, dtype=float)
    if X.shape != (2, 2) or abs(X[0, 1] - X[1, 0]) > 1e-12 * (1 + np.abs(X).max()):
        raise ArgumentError("X must be a symmetric 2x2 matrix")
    e = np.linalg.eigvalsh(X)
    pos = e[e >= 0].sum()
    neg = e[e < 0].sum()
    if sign == "plus":
        return float(-ell.lam * pos - ell.Lam * neg)
    if sign == "minus":
        return float(-ell.Lam * pos - ell.lam * neg)
    raise ArgumentError(f"sign must be 'plus' or 'minus', got {sign!r}")


class _Stencil:
    """Per-grid tables for the discrete operators.

    The pucci kinds evaluate on the full node set through shifted slices
    of a padded copy of the field (the knight legs reach two cells out, so
    the collar is two deep) and exclude invalid frames by precomputed
    masks; every inner-loop read is then contiguous and the iteration
    allocates nothing.  The px operator keeps a flat gather layout: it
    carries nodewise p(x) tables and sits outside the estimate drivers'
    hot loop.
    """

    def __init__(self, prob: Problem, grid: GridField):
        validate_grid(grid)
        self.h = grid.h
        self.ny, self.nx = ny, nx = grid.ny, grid.nx
        mask_flat = grid.mask.ravel()
        self.ii = np.flatnonzero(mask_flat == MASK_INTERIOR)
        n = self.ii.size

        if prob.operator == "px_laplace":
            jj, iq = np.divmod(self.ii, nx)
            self.nidx = np.empty((16, n), dtype=np.intp)
            legvalid = np.empty((16, n), dtype=bool)
            for k, (di, dj) in enumerate(_LEGS):
                for s, row in ((1, 2 * k), (-1, 2 * k + 1)):
                    ti = iq + s * di
                    tj = jj + s * dj
                    ok = (ti >= 0) & (ti < nx) & (tj >= 0) & (tj < ny)
                    flat = np.where(ok, tj * nx + ti, self.ii)
                    ok &= mask_flat[flat] != MASK_EXTERIOR
                    self.nidx[row] = np.where(ok, flat, self.ii)
                    legvalid[row] = ok
            pair_ok = legvalid[0::2] & legvalid[1::2]          # (8, n)
            self.frame_ok = pair_ok[0::2] & pair_ok[1::2]      # (4, n)
            if not self.frame_ok[0].all() or not self.frame_ok[1].all():
                raise ConfigError("axis or diagonal frame blocked at an interior node")
            self.d_scale = 1.0 / (self.h ** 2 * _LEG_LEN2)
            xg, yg = grid.node_xy()
            pn = np.asarray(prob.p_field(xg.ravel(), yg.ravel()), dtype=float)
            live = mask_flat != MASK_EXTERIOR
            if not np.all(np.isfinite(pn[live])):
                raise ConfigError("p(x) not finite on grid nodes")
            pmin, pmax = float(pn[live].min()), float(pn[live].max())
            if pmin <= 1.0:
                raise ConfigError(f"p(x) must stay > 1, sampled min {pmin}")
            self.p_min, self.p_max = pmin, pmax
            self.p_int = pn[self.ii]
            inv2h = 0.5 / self.h
            self.gpx = (pn[self.nidx[0]] - pn[self.nidx[1]]) * inv2h
            self.gpy = (pn[self.nidx[2]] - pn[self.nidx[3]]) * inv2h
            return

        N = ny * nx
        self.pad = np.zeros((ny + 4, nx + 4))
        self.center = self.pad[2:-2, 2:-2]
        mpad = np.full((ny + 4, nx + 4), MASK_EXTERIOR, dtype=grid.mask.dtype)
        mpad[2:-2, 2:-2] = grid.mask
        views = []
        legok = np.empty((16, N), dtype=bool)
        for k, (di, dj) in enumerate(_LEGS):
            for s, row in ((1, 2 * k), (-1, 2 * k + 1)):
                sl = (slice(2 + s * dj, 2 + s * dj + ny),
                      slice(2 + s * di, 2 + s * di + nx))
                views.append(self.pad[sl])
                legok[row] = (mpad[sl] != MASK_EXTERIOR).ravel()
        self.views = views
        pair_ok = legok[0::2] & legok[1::2]                # (8, N)
        ok4 = pair_ok[0::2] & pair_ok[1::2]                # (4, N)
        self.frame_ok = ok4[:, self.ii]
        if not self.frame_ok[0].all() or not self.frame_ok[1].all():
            raise ConfigError("axis or diagonal frame blocked at an interior node")
        self.knight_ok = (ok4[2], ok4[3])
        # envelope coefficients with the leg scale folded in; both legs of
        # a frame share one length
        lam, Lam = prob.ell.lam, prob.ell.Lam
        fscale = 1.0 / (self.h ** 2 * _LEG_LEN2[0::2])
        self.env_m = (-0.5 * (lam + Lam) * fscale)[:, None]
        self.env_w = (0.5 * (Lam - lam) * fscale)[:, None]
        self.drift_free = prob.rnl.base.kind == "homogeneous"
        self.P = np.empty((8, N))
        self.Draw = np.empty((8, N))
        self.Dabs = np.empty((8, N))
        self.S = np.empty((4, N))
        self.A = np.empty((4, N))
        self.FP = np.empty((4, N))
        self.FM = np.empty((4, N))
        self.Uax = np.empty((4, N))
        (self.m2u, self.pp, self.pm, self.gx, self.gy, self.gm,
         self.t1, self.t2, self.dr, self.G) = (np.empty(N) for _ in range(10))
        self.int_mask = np.zeros(N)
        self.int_mask[self.ii] = 1.0
        # exterior storage may hold anything (tests poison it with NaN);
        # reads go through a zero-filled staging copy so that content
        # never reaches the arithmetic
        self.live = mask_flat != MASK_EXTERIOR
        self.us = np.zeros(N)


def _second_diffs(st: _Stencil, u: np.ndarray):
    """Gather-layout second differences for the px path."""
    u0 = u[st.ii]
    U = u[st.nidx]
    D = (U[0::2] + U[1::2] - 2.0 * u0) * st.d_scale[:, None]
    return u0, D, U


def _drift_full(prob: Problem, st: _Stencil, u: np.ndarray) -> np.ndarray:
    """R*phi at the regularized gradient, centered with monotone fallback,
    written into st.dr over the full node set."""
    rnl = prob.rnl
    h = st.h
    eps = h * h
    inv2h = 0.5 / h
    np.subtract(st.Uax[0], st.Uax[1], out=st.gx)
    st.gx *= inv2h
    np.subtract(st.Uax[2], st.Uax[3], out=st.gy)
    st.gy *= inv2h
    np.hypot(st.gx, st.gy, out=st.gm)
    np.maximum(st.gm, eps, out=st.t1)
    # _phi_raw skips argument validation: the clamp keeps its input
    # positive, and a non-finite u trips the residual guard instead
    dc = _phi_raw(rnl.base, st.t1)
    dc *= rnl.R
    # max one-sided slope; max commutes with the common subtraction
    if prob.operator == "pucci_minus_drift":
        np.maximum(st.Uax[0], st.Uax[1], out=st.t2)
        np.maximum(st.t2, st.Uax[2], out=st.t2)
        np.maximum(st.t2, st.Uax[3], out=st.t2)
        np.subtract(st.t2, u, out=st.t2)
    else:
        np.minimum(st.Uax[0], st.Uax[1], out=st.t2)
        np.minimum(st.t2, st.Uax[2], out=st.t2)
        np.minimum(st.t2, st.Uax[3], out=st.t2)
        np.subtract(u, st.t2, out=st.t2)
    np.maximum(st.t2, 0.0, out=st.t2)
    st.t2 /= h
    np.maximum(st.t2, eps, out=st.t2)
    du = _phi_raw(rnl.base, st.t2)
    du *= rnl.R
    # continuous blend: a hard centered/upwind switch makes G discontinuous
    # in u and the iteration cycles around the switching manifold
    np.abs(dc, out=st.gy)
    st.gy += 1.0
    st.gy *= h
    np.subtract(du, dc, out=st.gm)
    np.abs(st.gm, out=st.gx)
    st.gx /= st.gy
    st.gx -= 1.0
    np.clip(st.gx, 0.0, 1.0, out=st.gx)
    st.gm *= st.gx
    np.add(dc, st.gm, out=st.dr)
    return st.dr


def _pucci_full(prob: Problem, st: _Stencil, u: np.ndarray,
                need_plus: bool, need_minus: bool) -> _Stencil:
    """Envelopes, drift and G over the full node set, in the stencil's
    scratch buffers.  Entries at non-interior nodes are garbage and must
    not be read; u itself is never written."""
    ny, nx = st.ny, st.nx
    np.copyto(st.us, u, where=st.live)
    u = st.us
    np.copyto(st.center, u.reshape(ny, nx))
    v = st.views
    P = st.P
    for k in range(4):
        np.copyto(st.Uax[k].reshape(ny, nx), v[k])
    np.add(st.Uax[0], st.Uax[1], out=P[0])
    np.add(st.Uax[2], st.Uax[3], out=P[1])
    for k in range(2, 8):
        np.add(v[2 * k], v[2 * k + 1], out=P[k].reshape(ny, nx))
    np.multiply(u, -2.0, out=st.m2u)
    np.add(P, st.m2u, out=st.Draw)     # second diffs, leg scale pending
    np.abs(st.Draw, out=st.Dabs)
    np.add(st.Draw[0::2], st.Draw[1::2], out=st.S)
    np.add(st.Dabs[0::2], st.Dabs[1::2], out=st.A)
    np.multiply(st.S, st.env_m, out=st.S)
    np.multiply(st.A, st.env_w, out=st.A)
    ok2, ok3 = st.knight_ok
    if need_plus:
        np.add(st.S, st.A, out=st.FP)
        np.maximum(st.FP[0], st.FP[1], out=st.pp)
        np.maximum(st.pp, st.FP[2], out=st.pp, where=ok2)
        np.maximum(st.pp, st.FP[3], out=st.pp, where=ok3)
    if need_minus:
        np.subtract(st.S, st.A, out=st.FM)
        np.minimum(st.FM[0], st.FM[1], out=st.pm)
        np.minimum(st.pm, st.FM[2], out=st.pm, where=ok2)
        np.minimum(st.pm, st.FM[3], out=st.pm, where=ok3)
    drift = None if st.drift_free else _drift_full(prob, st, u)
    base = st.pm if prob.operator == "pucci_minus_drift" else st.pp
    if drift is None:
        np.copyto(st.G, base)
    elif prob.operator == "pucci_minus_drift":
        np.subtract(base, drift, out=st.G)
    else:
        np.add(base, drift, out=st.G)
    return st


def _operator_parts(prob: Problem, st: _Stencil, u: np.ndarray) -> dict:
    if prob.operator == "px_laplace":
        u0, D, U = _second_diffs(st, u)
        inv2h = 0.5 / st.h
        dux = (U[0] - U[1]) * inv2h
        duy = (U[2] - U[3]) * inv2h
        gm = np.hypot(dux, duy)
        safe = np.maximum(gm, 1e-30)
        xix = dux / safe
        xiy = duy / safe
        # directional second derivative assembled from the frame data:
        # D2 - D3 is the discrete 2*u_xy, exact on quadratics.
        dinf = xix ** 2 * D[0] + xiy ** 2 * D[1] + xix * xiy * (D[2] - D[3])
        dinf = np.where(gm > 1e-14, dinf, 0.0)
        logterm = np.log(np.maximum(gm, st.h ** 2))
        G = -(D[0] + D[1]) - (st.p_int - 2.0) * dinf \
            - logterm * (st.gpx * dux + st.gpy * duy)
        return {"G": G, "u0": u0}
    _pucci_full(prob, st, u, need_plus=True, need_minus=True)
    ii = st.ii
    drift = np.zeros(ii.size) if st.drift_free else st.dr[ii]
    return {"G": st.G[ii], "pplus": st.pp[ii], "pminus": st.pm[ii],
            "drift": drift, "u0": u[ii]}


def _dt_bound(prob: Problem, st: _Stencil, dt_factor: float) -> float:
    """Pseudo-time step.  The pucci envelope tolerates dt_factor up to 0.4
    (the diagonal frame reads the worst checkerboard mode as flat, so the
    envelope clips its growth); the envelope-free px path is bound by the
    5-point spectral radius 8/h^2 and needs half that."""
    if prob.operator == "px_laplace":
        return 0.5 * dt_factor * st.h ** 2 / max(1.0, st.p_max - 1.0)
    return dt_factor * st.h ** 2 / prob.ell.Lam


def _drift_lip_warning(prob: Problem, grid: GridField, scale: float) -> Optional[str]:
    """Documented stability precondition h*Lip(drift) <= 1 on the slope
    range the data can generate; a warning, not a gate."""
    rnl = getattr(prob, "rnl", None)
    if rnl is None or rnl.base.kind == "homogeneous":
        return None
    t_hi = 4.0 * scale / grid.h
    ts = np.geomspace(grid.h ** 2, t_hi, 65)
    vals = eval_drift(rnl, ts)
    lip = float(np.max(np.diff(vals) / np.diff(ts)))
    if grid.h * lip > 1.0:
        return f"h*Lip(drift) = {grid.h * lip:.3g} > 1 on the data slope range"
    return None


@dataclass
class SolveResult:
    field: GridField
    iterations: int
    residual: float
    dt: float
    restarts: int
    residual_history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def solve_dirichlet(prob: Problem, grid: GridField, tol_solve: float = 1e-8,
                    max_iters: int = 400_000, dt_factor: float = 0.4,
                    init: str = "mean") -> SolveResult:
    """Damped fixed-point iteration to max nodal residual <= tol_solve
    scaled by the data magnitude.  Deterministic; raises
    ConvergenceFailure with the residual history if the budget runs out.
    """
    if init not in ("mean", "keep"):
        raise ArgumentError(f"init must be 'mean' or 'keep', got {init!r}")
    st = _Stencil(prob, grid)
    out = grid.copy()
    bsel = out.mask == MASK_BOUNDARY
    bdata = out.values[bsel]
    warnings: list[str] = []
    if prob.operator != "px_laplace" and bdata.size and bdata.min() < 0:
        warnings.append("negative boundary data: the estimates assume u >= 0")
    scale = max(1.0, float(np.abs(bdata).max())) if bdata.size else 1.0
    lw = _drift_lip_warning(prob, out, scale)
    if lw:
        warnings.append(lw)
    tol_eff = tol_solve * scale

    u = out.values.ravel()
    if init == "mean":
        u[out.mask.ravel() == MASK_INTERIOR] = float(bdata.mean()) if bdata.size else 0.0

    dt = _dt_bound(prob, st, dt_factor)
    history: list[float] = []
    restarts = 0
    res = np.inf
    stall_ref = np.inf
    px = prob.operator == "px_laplace"
    minus = prob.operator == "pucci_minus_drift"
    it = 0
    while it < max_iters:
        if px:
            G = _operator_parts(prob, st, u)["G"]
            res = float(np.abs(G).max())
        else:
            _pucci_full(prob, st, u, need_plus=not minus, need_minus=minus)
            G = st.G
            G *= st.int_mask   # freeze non-interior nodes
            res = float(np.abs(G, out=st.t1).max())
        if it % 100 == 0:
            history.append(res)
        if not np.isfinite(res):
            raise ConvergenceFailure("iteration diverged to non-finite residual",
                                     residual_history=history)
        if res <= tol_eff:
            break
        if it % _STALL_WINDOW == 0:
            if res > stall_ref * _STALL_FACTOR:
                if restarts >= _MAX_RESTARTS:
                    raise ConvergenceFailure(
                        f"residual stalled at {res:.3g} (tol {tol_eff:.3g})",
                        residual_history=history)
                dt *= 0.5
                restarts += 1
                stall_ref = np.inf
            else:
                stall_ref = res
        if px:
            u[st.ii] -= dt * G
        else:
            np.multiply(G, dt, out=st.t1)
            u -= st.t1
        it += 1
    else:
        raise ConvergenceFailure(
            f"no convergence in {max_iters} iterations (residual {res:.3g}, "
            f"tol {tol_eff:.3g})", residual_history=history)
    history.append(res)
    return SolveResult(field=out, iterations=it, residual=res, dt=dt,
                       restarts=restarts, residual_history=history,
                       warnings=warnings)


def solve_cascadic(prob: Problem, grids: list, data_fn,
                   tol_solve: float = 1e-8, max_iters: int = 400_000,
                   dt_factor: float = 0.4) -> SolveResult:
    """Coarse-to-fine solve chain on exterior-free grids: each level starts
    from the bilinear prolongation of the previous solution."""
    if not grids:
        raise ArgumentError("need at least one grid")
    result = None
    for k, g in enumerate(grids):
        if k == 0:
            apply_boundary_data(g, data_fn)
            result = solve_dirichlet(prob, g, tol_solve, max_iters, dt_factor, init="mean")
        else:
            prolong(result.field, g)
            apply_boundary_data(g, data_fn)
            warm = solve_dirichlet(prob, g, tol_solve, max_iters, dt_factor, init="keep")
            warm.warnings = result.warnings + warm.warnings
            result = warm
    return result


def residual(prob: Problem, grid: GridField) -> float:
    """Max nodal residual of the discrete operator on the given field."""
    st = _Stencil(prob, grid)
    parts = _operator_parts(prob, st, grid.values.ravel())
    return float(np.abs(parts["G"]).max())


def operator_values(prob: Problem, grid: GridField) -> dict:
    """Nodewise operator components over interior nodes, with coordinates
    and frame availability; diagnostics for tests and plots."""
    st = _Stencil(prob, grid)
    parts = _operator_parts(prob, st, grid.values.ravel())
    jj, ii = np.divmod(st.ii, grid.nx)
    out = {k: v for k, v in parts.items() if k != "u0"}
    out["x"] = grid.origin[0] + ii * grid.h
    out["y"] = grid.origin[1] + jj * grid.h
    out["frame_ok"] = st.frame_ok
    return out


@dataclass(frozen=True)
class ViscosityReport:
    tol: float
    n_nodes: int
    super_violations: int
    sub_violations: int
    worst_super_slack: float   # min of P+ + drift, want >= -tol
    worst_sub_slack: float     # max of P- - drift, want <= tol
    worst_super_node: tuple
    worst_sub_node: tuple

    @property
    def passed(self) -> bool:
        return self.super_violations == 0 and self.sub_violations == 0


def check_viscosity_inequalities(prob: Problem, grid: GridField,
                                 tol: float = 1e-7) -> ViscosityReport:
    """Discrete stand-in for the two one-sided model inequalities: at every
    interior node, P+(D^2 u) + drift >= -tol and P-(D^2 u) - drift <= tol."""
    if prob.operator == "px_laplace":
        raise ArgumentError("viscosity check applies to the pucci operators")
    st = _Stencil(prob, grid)
    parts = _operator_parts(prob, st, grid.values.ravel())
    sup_side = parts["pplus"] + parts["drift"]
    sub_side = parts["pminus"] - parts["drift"]
    n = st.ii.size
    bad_super = sup_side < -tol
    bad_sub = sub_side > tol
    k_sup = int(np.argmin(sup_side))
    k_sub = int(np.argmax(sub_side))

    def _node(flat_k):
        j, i = divmod(int(st.ii[flat_k]), grid.nx)
        return (grid.origin[0] + i * grid.h, grid.origin[1] + j * grid.h)

    return ViscosityReport(tol=tol, n_nodes=n,
                           super_violations=int(bad_super.sum()),
                           sub_violations=int(bad_sub.sum()),
                           worst_super_slack=float(sup_side[k_sup]),
                           worst_sub_slack=float(sub_side[k_sub]),
                           worst_super_node=_node(k_sup),
                           worst_sub_node=_node(k_sub))
