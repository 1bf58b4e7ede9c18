"""Empirical certification of the boundary estimates on solved instances.

Each verifier takes a solved field and produces either a certificate
(value against budget) or a fitted constant with per-rung slack.  The
committed instance family (three domains x three drift laws x three
radii x three boundary-data seeds) feeds the independence checks: the
theorems claim constants independent of the solution and of the radius,
and the harness restates that as a relative spread of per-instance
values, reported raw.

Fits are deliberately coarse-grained (dyadic constant grids, committed
candidate lists) so that reruns are bit-reproducible and the fitted
numbers are comparable across refinement studies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .barriers import choose_ctilde
from .errors import ArgumentError, ConvergenceFailure, PreconditionError
from .geometry import (DomainSpec, corkscrew, cube, dist_to_boundary_many,
                       half_space, lipschitz_graph, reifenberg_delta,
                       retracted_cap)
from .grid import (GridField, MASK_BOUNDARY, MASK_EXTERIOR, MASK_INTERIOR,
                   apply_boundary_data, bilinear, make_domain_grid,
                   oscillation, sup_over_ball)
from .harnack import (HarnackCertificate, Unbounded, carleson_integral,
                      certify, harnack_integral_rescaled, px_bharnack_bound,
                      px_carleson_bound)
from .nonlinearity import (eval_eta_R, eval_phi_R, make_nonlinearity,
                           osgood_classify, rescale)
from .solver import EllipticityPair, Problem, SolveResult, solve_dirichlet

THEOREMS = ("interior_harnack", "carleson", "interior_holder", "osc_decay",
            "boundary_holder", "blowup", "boundary_harnack", "px_carleson",
            "px_bharnack")

C_TRIAL_SWEEP = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)
ALPHA0 = 1.0            # admissible exponent cap of the rescaled functional
PATCH_RADIUS = 1.0      # boundary patch where data must vanish, unit scale
POSITIVITY_SLACK = 1e-6  # per unit of data scale; solver noise allowance


# ---------------------------------------------------------------------------
# committed instance family


@dataclass(frozen=True)
class FamilyDomain:
    """A domain with its sampling window and boundary anchor."""

    name: str
    dom: DomainSpec
    window: tuple
    w: tuple       # boundary anchor: patches, corkscrews and caps hang here
    y_top: float   # data ramp starts above the highest boundary point


def _zigzag() -> DomainSpec:
    kx = list(range(-4, 5))
    ky = [0.1 * (abs(k) % 2) for k in kx]
    return lipschitz_graph(kx, ky)


FAMILY_DOMAINS = (
    FamilyDomain("half_space", half_space(), (-1.0, 1.0, 0.0, 1.0),
                 (0.0, 0.0), 0.0),
    # height 1.25 keeps the data-carrying top wall strictly outside the
    # closed unit patch ball around the anchor (1, 0)
    FamilyDomain("cube", cube((0.0, 0.0), (2.0, 1.25)), (0.0, 2.0, 0.0, 1.25),
                 (1.0, 0.0), 0.0),
    FamilyDomain("graph", _zigzag(), (-1.0, 1.0, -0.25, 1.0),
                 (0.0, 0.0), 0.15),
)
FAMILY_DOMAIN_BY_NAME = {d.name: d for d in FAMILY_DOMAINS}

LOG_C = 0.15
FAMILY_NLS = (
    ("homogeneous", make_nonlinearity("homogeneous")),
    ("linear", make_nonlinearity("linear")),
    ("log_model", make_nonlinearity("log_model", c=LOG_C)),
)
FAMILY_NL_BY_KIND = dict(FAMILY_NLS)

FAMILY_ELL = EllipticityPair(1.0, 2.0)
FAMILY_RS = (1.0, 0.5, 0.25)
FAMILY_SEEDS = (0, 1, 2)
FAMILY_H = 1.0 / 64
FAMILY_TOL = 1e-7       # tol_solve for family instances; scaled by data range
FAMILY_DT_FACTOR = 0.25  # 0.4 trips one stall-restart on the graph ladder

DATA_AMP = 2.0
_SEED_WAVES = {0: (0.6, 1, 0.0), 1: (0.9, 2, 0.7), 2: (0.45, 3, 2.1)}

HARNACK_BALL_R = 0.2    # committed interior certificate ball at the corkscrew
HARNACK_ALPHA = 1.0


@dataclass(frozen=True, order=True)
class Instance:
    domain: str
    nl_kind: str
    R: float
    seed: int

    def describe(self) -> dict:
        return {"domain": self.domain, "nl": self.nl_kind,
                "R": self.R, "seed": self.seed}


def family_data(dm: FamilyDomain, seed: int) -> Callable:
    """Nonnegative Dirichlet data vanishing on the boundary patch: a ramp
    in height modulated by a seed-keyed transverse wave."""
    if seed not in _SEED_WAVES:
        raise ArgumentError(f"unknown data seed {seed}; committed {sorted(_SEED_WAVES)}")
    a, f, ph = _SEED_WAVES[seed]
    y_top = dm.y_top
    den = 1.0 - y_top

    def data(x, y):
        ramp = np.maximum(np.asarray(y, dtype=float) - y_top, 0.0) / den
        wave = 1.0 + a * np.sin(f * np.pi * np.asarray(x, dtype=float) + ph)
        return DATA_AMP * ramp * wave

    return data


def family_instances(rs: Sequence[float] = FAMILY_RS,
                     seeds: Sequence[int] = FAMILY_SEEDS) -> list:
    out = []
    for dm in FAMILY_DOMAINS:
        for kind, _ in FAMILY_NLS:
            for R in rs:
                for seed in seeds:
                    out.append(Instance(dm.name, kind, float(R), int(seed)))
    return sorted(out)


# ---------------------------------------------------------------------------
# instance solves: cascadic warm ladder with Richardson start


_SOLVE_CACHE: dict = {}


def clear_solve_cache() -> None:
    _SOLVE_CACHE.clear()


def _fits_window(window, h) -> bool:
    x0, x1, y0, y1 = window
    for ext in (x1 - x0, y1 - y0):
        n = ext / h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            return False
    return True


def _sample_raw(field: GridField, X, Y):
    """Bilinear sample ignoring masks; warm starts only, never estimates."""
    gx = np.clip((X - field.origin[0]) / field.h, 0.0, field.nx - 1.0)
    gy = np.clip((Y - field.origin[1]) / field.h, 0.0, field.ny - 1.0)
    i0 = np.minimum(gx.astype(np.intp), field.nx - 2)
    j0 = np.minimum(gy.astype(np.intp), field.ny - 2)
    fx = gx - i0
    fy = gy - j0
    V = field.values
    return (V[j0, i0] * (1 - fx) * (1 - fy) + V[j0, i0 + 1] * fx * (1 - fy)
            + V[j0 + 1, i0] * (1 - fx) * fy + V[j0 + 1, i0 + 1] * fx * fy)


def _warm_start(fine: GridField, coarse: GridField,
                coarser: Optional[GridField]) -> None:
    """Interior initial guess from the previous ladder levels.  With two
    levels available the O(h^2) tail is cancelled by extrapolation; the
    combination can overshoot near boundary kinks, so it is clipped to
    the coarse value range."""
    xg, yg = fine.node_xy()
    sel = fine.mask == MASK_INTERIOR
    w = _sample_raw(coarse, xg[sel], yg[sel])
    if coarser is not None:
        w2 = _sample_raw(coarser, xg[sel], yg[sel])
        w = w + (w - w2) / 3.0
        live = coarse.values[coarse.mask != MASK_EXTERIOR]
        np.clip(w, float(live.min()), float(live.max()), out=w)
    fine.values[sel] = w


def _ladder_solve(prob: Problem, dm: FamilyDomain, data_fn, h_final: float,
                  tol: float) -> SolveResult:
    levels = [h_final]
    while levels[0] * 2.0 <= 0.125 + 1e-12 and _fits_window(dm.window, levels[0] * 2.0):
        levels.insert(0, levels[0] * 2.0)
    prev = prev2 = None
    result = None
    for h in levels:
        g = make_domain_grid(dm.dom, dm.window, h)
        apply_boundary_data(g, data_fn)
        if prev is None:
            init = "mean"
        else:
            _warm_start(g, prev, prev2)
            init = "keep"
        result = solve_dirichlet(prob, g, tol_solve=tol,
                                 dt_factor=FAMILY_DT_FACTOR, init=init)
        prev2, prev = prev, result.field
    return result


def solve_family_instance(inst: Instance, h: float = FAMILY_H,
                          tol: float = FAMILY_TOL) -> SolveResult:
    """Solve (or fetch) one committed instance.  Drift-free solves do not
    see R at all, so they are cached once across the R sweep."""
    dm = FAMILY_DOMAIN_BY_NAME.get(inst.domain)
    if dm is None:
        raise ArgumentError(f"unknown family domain {inst.domain!r}")
    nl = FAMILY_NL_BY_KIND.get(inst.nl_kind)
    if nl is None:
        raise ArgumentError(f"unknown family nonlinearity {inst.nl_kind!r}")
    r_key = 0.0 if inst.nl_kind == "homogeneous" else inst.R
    key = (inst.domain, inst.nl_kind, r_key, inst.seed, round(h, 14), tol)
    hit = _SOLVE_CACHE.get(key)
    if hit is not None:
        return hit
    prob = Problem("pucci_minus_drift", FAMILY_ELL, rnl=rescale(nl, inst.R))
    result = _ladder_solve(prob, dm, family_data(dm, inst.seed), h, tol)
    _SOLVE_CACHE[key] = result
    return result


# ---------------------------------------------------------------------------
# report container


def relative_spread(values) -> float:
    """(max - min) / max|value|; zero for an all-zero or singleton set."""
    vals = np.asarray([float(v) for v in values], dtype=float)
    if vals.size == 0:
        raise ArgumentError("spread needs at least one value")
    if not np.all(np.isfinite(vals)):
        return math.inf
    top = float(np.abs(vals).max())
    if top == 0.0:
        return 0.0
    return float((vals.max() - vals.min()) / top)


def _num(v):
    """JSON-safe rendering of a possibly unbounded integral value."""
    if isinstance(v, Unbounded):
        return {"unbounded": True, "reason": v.reason}
    v = float(v)
    if not math.isfinite(v):
        return {"unbounded": True, "reason": "non-finite"}
    return v


def _as_float(v) -> float:
    if isinstance(v, Unbounded):
        return math.inf
    return float(v)


@dataclass
class EstimateReport:
    theorem: str
    instances: list
    fitted_constant: float
    per_instance_values: list
    independence_spread: float
    group_spreads: dict = dc_field(default_factory=dict)
    details: dict = dc_field(default_factory=dict)
    schema: str = "estimate-report/1"

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ArgumentError(f"unknown theorem tag {self.theorem!r}")
        finite = [v for v in map(_as_float, self.per_instance_values)
                  if math.isfinite(v)]
        if finite and self.fitted_constant < max(finite) - 1e-12 * max(finite):
            raise ArgumentError(
                f"fitted constant {self.fitted_constant} below the worst "
                f"per-instance value {max(finite)}")

    def to_json(self) -> str:
        payload = {
            "schema": self.schema,
            "theorem": self.theorem,
            "instances": self.instances,
            "fitted_constant": _num(self.fitted_constant),
            "per_instance_values": [_num(v) for v in self.per_instance_values],
            "independence_spread": _num(self.independence_spread),
            "group_spreads": {k: _num(v) for k, v in self.group_spreads.items()},
            "details": self.details,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_rows(self) -> list:
        rows = ["theorem,domain,nl,R,seed,value"]
        for inst, val in zip(self.instances, self.per_instance_values):
            rows.append("{},{},{},{},{},{!r}".format(
                self.theorem, inst.get("domain", ""), inst.get("nl", ""),
                inst.get("R", ""), inst.get("seed", ""), _as_float(val)))
        return rows


def _group_spreads(descs, values) -> dict:
    buckets: dict = {}
    for d, v in zip(descs, values):
        key = "{}/{}/seed{}".format(d["domain"], d["nl"], d["seed"])
        buckets.setdefault(key, []).append(v)
    return {k: relative_spread(vs) for k, vs in sorted(buckets.items())}


# ---------------------------------------------------------------------------
# shared precondition helpers


def _field_scale(field: GridField) -> float:
    live = field.values[field.mask != MASK_EXTERIOR]
    return max(1.0, float(np.abs(live).max())) if live.size else 1.0


def _min_clamped(vals, scale, what) -> float:
    lo = float(np.min(vals))
    if lo < -POSITIVITY_SLACK * scale:
        raise ArgumentError(
            f"{what}: field dips to {lo:.3g}, beyond the solver-noise "
            f"allowance {POSITIVITY_SLACK * scale:.3g}")
    return max(lo, 0.0)


def _require_interior_ball(field: GridField, center, rho, what):
    """Closed ball inside the window and free of exterior nodes."""
    eps = 1e-12
    x0w, y0w = field.origin
    x1w = x0w + (field.nx - 1) * field.h
    y1w = y0w + (field.ny - 1) * field.h
    if (center[0] - rho < x0w - eps or center[0] + rho > x1w + eps
            or center[1] - rho < y0w - eps or center[1] + rho > y1w + eps):
        raise ArgumentError(f"{what}: ball B({tuple(center)}, {rho}) leaves the sampled window")
    xg, yg = field.node_xy()
    sel = (xg - center[0]) ** 2 + (yg - center[1]) ** 2 <= rho * rho
    if not sel.any():
        raise ArgumentError(f"{what}: ball contains no grid nodes")
    if (field.mask[sel] == MASK_EXTERIOR).any():
        raise ArgumentError(f"{what}: ball B({tuple(center)}, {rho}) is not fully interior")
    return sel


def _check_boundary_patch(field: GridField, dom: DomainSpec, w, radius,
                          tol=1e-12) -> None:
    """Dirichlet data must vanish on domain-boundary nodes inside
    B(w, radius); window-edge boundary nodes are exempt."""
    xg, yg = field.node_xy()
    bsel = field.mask == MASK_BOUNDARY
    if not bsel.any():
        raise PreconditionError("grid has no boundary nodes")
    pts = np.column_stack([xg[bsel], yg[bsel]])
    near_dom = dist_to_boundary_many(dom, pts) <= 1.5 * field.h
    in_patch = np.hypot(pts[:, 0] - w[0], pts[:, 1] - w[1]) <= radius + 1e-12
    sel = near_dom & in_patch
    if not sel.any():
        raise PreconditionError(
            f"no domain-boundary nodes inside the patch B({tuple(w)}, {radius})")
    worst = float(np.abs(field.values[bsel][sel]).max())
    if worst > tol * _field_scale(field):
        raise PreconditionError(
            f"boundary data must vanish on the patch B({tuple(w)}, {radius}); "
            f"max |u| = {worst:.3g}")


# ---------------------------------------------------------------------------
# interior certificate


def verify_interior_harnack(field: GridField, center, r, R, nl, alpha,
                            budget: Optional[float] = None) -> HarnackCertificate:
    """Certificate of the rescaled interior functional on a grid ball.

    m and M are the field extrema over the closed ball B(center, r);
    positivity is required on the doubled ball, with the documented
    solver-noise allowance clamped to zero.
    """
    if not (0.0 < r <= 1.0):
        raise ArgumentError(f"need 0 < r <= 1, got r={r}")
    if not (0.0 <= alpha <= ALPHA0):
        raise ArgumentError(f"need 0 <= alpha <= {ALPHA0}, got {alpha}")
    sel2 = _require_interior_ball(field, center, 2.0 * r, "interior harnack")
    _min_clamped(field.values[sel2], _field_scale(field), "interior harnack")
    xg, yg = field.node_xy()
    sel = (xg - center[0]) ** 2 + (yg - center[1]) ** 2 <= r * r
    vals = field.values[sel]
    m = max(float(vals.min()), 0.0)
    M = float(vals.max())
    if budget is not None:
        return certify(m, M, r, R, alpha, nl, budget)
    value = harnack_integral_rescaled(m, M, r, R, alpha, nl)
    return HarnackCertificate(m=m, M=M, r=r, R=R, alpha=alpha, value=value)


# ---------------------------------------------------------------------------
# Carleson-type boundary certificate


def verify_carleson(u_field: GridField, dom: DomainSpec, R, nl,
                    w=(0.0, 0.0), patch_radius: float = PATCH_RADIUS,
                    sweep: Sequence[float] = C_TRIAL_SWEEP) -> EstimateReport:
    """Smallest sweep constant C with integral(u(A) -> sup over B(w, 1/C))
    of dt/Phi_R at most C.

    The constant appears in its own ball radius, so it is swept over the
    committed dyadic grid rather than solved for.  A nonpositive u(A)
    under a non-Osgood drift law is flagged (the strong minimum principle
    is unavailable there), not failed.
    """
    _check_boundary_patch(u_field, dom, w, patch_radius)
    A = corkscrew(dom, w, patch_radius)
    uA = float(bilinear(u_field, A[0], A[1]))
    caveat = None
    uA_eff = uA
    if uA <= 0.0:
        uA_eff = 0.0
        og = osgood_classify(nl)
        if og.at_zero == "diverges":
            caveat = "u(A) <= 0; integral taken from 0"
        else:
            # only a divergent zero-end integral buys the strong minimum
            # principle, so anything weaker is flagged
            caveat = ("u(A) <= 0 with no verified minimum principle "
                      f"(zero-end verdict: {og.at_zero}); integral taken from 0")
    rows = []
    best = math.inf
    for C in sweep:
        M_C = sup_over_ball(u_field, w, 1.0 / C)
        if M_C <= uA_eff:
            val = 0.0  # sup already below the corkscrew level: empty window
        else:
            val = carleson_integral(uA_eff, M_C, R, nl)
        ok = val <= C
        rows.append({"C_trial": float(C), "sup": M_C, "integral": _num(val),
                     "passed": bool(ok)})
        if ok:
            best = min(best, float(C))
    details = {"sweep": rows, "u_corkscrew": uA,
               "corkscrew_point": [float(A[0]), float(A[1])],
               "patch_radius": float(patch_radius)}
    if caveat:
        details["caveat"] = caveat
    inst = {"domain": dom.kind, "nl": nl.kind, "R": float(R), "seed": None}
    return EstimateReport(theorem="carleson", instances=[inst],
                          fitted_constant=best, per_instance_values=[best],
                          independence_spread=0.0, details=details)


# ---------------------------------------------------------------------------
# oscillation decay fit


OSC_TAU_CAP = 0.95
OSC_C_GRID = tuple(0.01 * 2.0 ** j for j in range(14))
OSC_RUNG_FLOOR = 4.0  # in units of h; below this the ball sup is mesh noise


@dataclass(frozen=True)
class OscDecayFit:
    tau: float
    C: float
    rho: tuple
    osc: tuple
    slack: tuple
    M: float
    phi_M: float
    notes: tuple = ()


def verify_osc_decay(field: GridField, x0, r, R, nl,
                     rho_floor: Optional[float] = None) -> OscDecayFit:
    """Fit (tau < 1, C) with osc(rho/2) <= tau*osc(rho) + C*Phi_R(M)*sqrt(rho)
    down a dyadic rung ladder; C comes from a committed dyadic grid and
    tau is then minimal.  No admissible pair signals a solver-scale bug.
    An explicit rho_floor pins the smallest probed radius so fits on two
    grid levels share one ladder and stay comparable.
    """
    if r <= 0:
        raise ArgumentError(f"need r > 0, got {r}")
    _require_interior_ball(field, x0, r, "osc decay")
    h = field.h
    floor = OSC_RUNG_FLOOR * h
    if rho_floor is not None:
        if rho_floor < floor - 1e-12:
            raise ArgumentError(
                f"rho_floor={rho_floor} below the mesh floor {floor}")
        floor = float(rho_floor)
    rhos = []
    p = float(r)
    while p / 2.0 >= floor - 1e-12:
        rhos.append(p)
        p /= 2.0
    if not rhos:
        raise ArgumentError(
            f"osc decay: r={r} leaves no rung with rho/2 >= {floor}")
    osc_all = [oscillation(field, x0, q) for q in rhos]
    osc_all.append(oscillation(field, x0, rhos[-1] / 2.0))
    if not np.all(np.isfinite(osc_all)):
        raise ConvergenceFailure(
            "oscillation ladder is not finite; the field is corrupt",
            residual_history=osc_all)
    xg, yg = field.node_xy()
    sel = (xg - x0[0]) ** 2 + (yg - x0[1]) ** 2 <= r * r
    M = float(np.abs(field.values[sel]).max())
    phi_M = float(eval_phi_R(rescale(nl, R), M))
    num = np.asarray(osc_all[1:])
    den = np.asarray(osc_all[:-1])
    src = phi_M * np.sqrt(np.asarray(rhos))
    act = den > 0.0  # nested balls: den = 0 forces num = 0, rung is free

    def fitted_tau(C):
        if not act.any():
            return 0.0
        t = (num[act] - C * src[act]) / den[act]
        return max(float(t.max()), 0.0)

    for C in (0.0,) + OSC_C_GRID:
        tau = fitted_tau(C)
        if tau <= OSC_TAU_CAP:
            slack = tuple(num - (tau * den + C * src))
            return OscDecayFit(tau=tau, C=float(C), rho=tuple(rhos),
                               osc=tuple(osc_all), slack=slack,
                               M=M, phi_M=phi_M)
    raise ConvergenceFailure(
        f"no (tau <= {OSC_TAU_CAP}, C <= {OSC_C_GRID[-1]:.3g}) fits the "
        f"decay ladder; worst raw ratio {fitted_tau(0.0):.4g}",
        residual_history=list(num / np.maximum(den, 1e-300)))


# ---------------------------------------------------------------------------
# boundary Hölder fit


HOLDER_ALPHAS = tuple(float(a) for a in np.linspace(0.004, 0.124, 61))
DELTA_GATE = 0.01


@dataclass(frozen=True)
class BoundaryHolderFit:
    C1: float
    alpha: float
    delta: float
    rho: tuple
    sup: tuple
    M: float
    phi_M: float
    at_window_edge: bool
    notes: tuple = ()


def verify_boundary_holder(field: GridField, dom: DomainSpec, x0, r, R,
                           nl) -> BoundaryHolderFit:
    """Fit (C1, alpha) with sup over B(x0, rho) of u bounded by
    C1*(M*(rho/r)^alpha + Phi_R(M)*(rho*r)^(2*alpha)) down the rung
    ladder; alpha is the largest committed candidate whose constant stays
    within twice the best, flagged when it saturates the candidate list.
    """
    rep = reifenberg_delta(dom, x0, r)
    if rep.delta > DELTA_GATE + 1e-12:
        raise PreconditionError(
            f"flatness delta = {rep.delta:.4g} exceeds 1/100 at x0={tuple(x0)}, r={r}")
    _check_boundary_patch(field, dom, x0, r)
    h = field.h
    rhos = []
    p = float(r) / 2.0
    while p >= OSC_RUNG_FLOOR * h - 1e-12:
        rhos.append(p)
        p /= 2.0
    if not rhos:
        raise ArgumentError(f"boundary holder: r={r} leaves no usable rung")
    sups = np.asarray([sup_over_ball(field, x0, q) for q in rhos])
    xg, yg = field.node_xy()
    ball = ((xg - x0[0]) ** 2 + (yg - x0[1]) ** 2 <= r * r) \
        & (field.mask != MASK_EXTERIOR)
    M = float(np.abs(field.values[ball]).max())
    phi_M = float(eval_phi_R(rescale(nl, R), M))
    if M == 0.0:
        return BoundaryHolderFit(C1=0.0, alpha=HOLDER_ALPHAS[-1],
                                 delta=rep.delta, rho=tuple(rhos),
                                 sup=tuple(sups), M=0.0, phi_M=phi_M,
                                 at_window_edge=False,
                                 notes=("field vanishes on the ball; every "
                                        "rung passes trivially",))
    rr = np.asarray(rhos)
    c1s = []
    for a in HOLDER_ALPHAS:
        env = M * (rr / r) ** a + phi_M * (rr * r) ** (2.0 * a)
        c1s.append(float((sups / env).max()))
    c1s = np.asarray(c1s)
    cmin = float(c1s.min())
    ok = c1s <= 2.0 * cmin * (1.0 + 1e-12)
    idx = int(np.flatnonzero(ok)[-1])
    notes = ()
    if idx == len(HOLDER_ALPHAS) - 1:
        notes = ("fitted alpha saturates the candidate window; the true "
                 "exponent may be larger",)
    return BoundaryHolderFit(C1=float(c1s[idx]), alpha=HOLDER_ALPHAS[idx],
                             delta=rep.delta, rho=tuple(rhos),
                             sup=tuple(sups), M=M, phi_M=phi_M,
                             at_window_edge=bool(idx == len(HOLDER_ALPHAS) - 1),
                             notes=notes)


# ---------------------------------------------------------------------------
# blow-up profile of the cap suprema


BLOWUP_LADDER_RATIO = 2.0 ** -0.25
BLOWUP_DELTA_TRIAL = 1.0  # grid-scale surrogate; see notes in the report
BLOWUP_S0_BUDGET = 8.0


@dataclass(frozen=True)
class BlowupReport:
    s: tuple
    M_s: tuple
    crit: tuple
    S: Optional[float]
    gamma: float
    alternative: str
    cap_integral: object
    u_corkscrew: float
    delta_trial: float
    alpha: float
    notes: tuple = ()


def blowup_profile(field: GridField, dom: DomainSpec, R, nl, alpha,
                   delta_trial: float = BLOWUP_DELTA_TRIAL) -> BlowupReport:
    """Retraction suprema M_s on a geometric ladder, the largest s whose
    criterion s^alpha * eta_R(M_s) stays under delta_trial, and a slope
    fit of the growth below it.

    eta_R >= 1 makes the theorem's own small-delta threshold sit below
    any practical grid, so the committed delta_trial = 1 is a grid-scale
    surrogate: it localizes where the criterion changes sign at unit
    order rather than certifying the theorem's S.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ArgumentError(f"need 0 <= alpha <= 1, got {alpha}")
    cap = retracted_cap(dom, 0.0)
    xg, yg = field.node_xy()
    base = (field.mask != MASK_EXTERIOR) & (np.hypot(xg, yg) <= 2.0 + 1e-9)
    if not base.any():
        raise ArgumentError("no cap nodes inside the sampled window")
    pts = np.column_stack([xg[base], yg[base]])
    vals = field.values[base]
    _min_clamped(vals, _field_scale(field), "blowup profile")
    d = cap.dist_gamma_many(pts)
    rnl = rescale(nl, R)
    notes = []
    s_list, M_list = [], []
    skipped = 0
    s = cap.s_tilde
    while s >= OSC_RUNG_FLOOR * field.h - 1e-12:
        sel = d >= s - 1e-12
        if not sel.any():
            # retractions nest, so only the leading (largest-s) rungs can
            # come up empty when the window is shallower than s_tilde
            skipped += 1
            s *= BLOWUP_LADDER_RATIO
            continue
        s_list.append(float(s))
        M_list.append(float(vals[sel].max()))
        s *= BLOWUP_LADDER_RATIO
    if not s_list:
        raise ArgumentError(
            f"retraction ladder empty between the {OSC_RUNG_FLOOR:.0f}h floor "
            f"and s_tilde={cap.s_tilde:.4g}")
    if skipped:
        notes.append(f"{skipped} leading rungs empty: the sampled window is "
                     f"shallower than s_tilde={cap.s_tilde:.4g}")
    crit = []
    for sk, Mk in zip(s_list, M_list):
        if Mk <= 0.0:
            eta = 1.0 if nl.kind == "homogeneous" else math.inf
            if math.isinf(eta):
                notes.append(f"M_s = 0 at s={sk:.4g}: eta_R undefined, criterion set to inf")
        else:
            eta = float(eval_eta_R(rnl, Mk))
        crit.append(sk ** alpha * eta)
    ok = [c <= delta_trial for c in crit]
    S = max((sk for sk, o in zip(s_list, ok) if o), default=None)
    if S is None:
        notes.append(f"no admissible s at delta_trial={delta_trial}; with "
                     "eta_R >= 1 the theorem's threshold sits below the grid scale")
    gamma = 0.0
    if S is not None:
        below = [(sk, Mk) for sk, Mk in zip(s_list, M_list)
                 if sk < S and Mk > 0.0]
        if len(below) >= 3:
            ls = np.log([b[0] for b in below])
            lm = np.log([b[1] for b in below])
            slope = float(np.polyfit(ls, lm, 1)[0])
            gamma = max(-slope, 0.0)
        else:
            notes.append("fewer than three rungs below S; growth slope not fitted")
    A = corkscrew(dom, (0.0, 0.0), 1.0)
    try:
        uA = float(bilinear(field, A[0], A[1]))
    except ArgumentError:
        notes.append("corkscrew point not sampled by the window; the "
                     "integral alternative is unresolved")
        return BlowupReport(s=tuple(s_list), M_s=tuple(M_list),
                            crit=tuple(crit), S=S, gamma=gamma,
                            alternative="unresolved", cap_integral=None,
                            u_corkscrew=math.nan, delta_trial=delta_trial,
                            alpha=alpha, notes=tuple(notes))
    M_cap = max(float(vals.max()), max(uA, 0.0))
    cap_integral = carleson_integral(max(uA, 0.0), M_cap, R, nl)
    bounded = (not isinstance(cap_integral, Unbounded)) \
        and cap_integral <= BLOWUP_S0_BUDGET
    alternative = "S0" if bounded else "S1-S3"
    return BlowupReport(s=tuple(s_list), M_s=tuple(M_list), crit=tuple(crit),
                        S=S, gamma=gamma, alternative=alternative,
                        cap_integral=cap_integral, u_corkscrew=uA,
                        delta_trial=delta_trial, alpha=alpha,
                        notes=tuple(notes))


# ---------------------------------------------------------------------------
# boundary Harnack comparison


@dataclass(frozen=True)
class BoundaryHarnackReport:
    mu0: float
    mu1: float
    ctilde: float
    sup_ratio: float
    ratio_bound: float
    mu_integral: object
    bound_ok: bool
    excluded_nodes: int
    compared_nodes: int
    u_corkscrew: float
    v_corkscrew: float
    ball_radius: float
    branch_w1: str
    branch_w2: str
    notes: tuple = ()


def verify_boundary_harnack(u_field: GridField, v_field: GridField,
                            dom: DomainSpec, R, nl, w=(0.0, 0.0),
                            ell: Optional[EllipticityPair] = None,
                            tol_solve: float = 1e-8) -> BoundaryHarnackReport:
    """Two-solution comparison: barrier levels mu0 (for u from below) and
    mu1 (for v from above) at matched corkscrew values, the measured sup
    of v/u on the comparison ball, and the mu-window integral.

    Only the drift-free operator is 1-homogeneous, so only there is v
    rescaled to match u(A) exactly; drift instances must arrive matched
    (amplitude shooting upstream) and a mismatch is flagged, not fixed.
    """
    same_layout = (u_field.nx == v_field.nx and u_field.ny == v_field.ny
                   and u_field.h == v_field.h
                   and u_field.origin == v_field.origin)
    if not same_layout:
        raise ArgumentError("u and v must share one grid layout")
    _check_boundary_patch(u_field, dom, w, PATCH_RADIUS)
    _check_boundary_patch(v_field, dom, w, PATCH_RADIUS)
    A = corkscrew(dom, w, PATCH_RADIUS)
    uA = float(bilinear(u_field, A[0], A[1]))
    vA = float(bilinear(v_field, A[0], A[1]))
    if uA <= 0.0 or vA <= 0.0:
        raise ArgumentError(
            f"corkscrew values must be positive, got u(A)={uA:.3g}, v(A)={vA:.3g}")
    notes = []
    v_vals = v_field.values
    if nl.kind == "homogeneous" and vA != uA:
        k = uA / vA
        v_vals = v_field.values * k
        notes.append(f"v rescaled by u(A)/v(A) = {k:.6g} (drift-free operator "
                     "is 1-homogeneous)")
        vA = uA
    elif nl.kind != "homogeneous" and abs(vA / uA - 1.0) > 0.05:
        notes.append(f"v(A)/u(A) = {vA / uA:.4g}: drift operators admit no "
                     "post-scaling; match amplitudes upstream for a sharp bound")
    xg, yg = u_field.node_xy()
    dist_w = np.hypot(xg - w[0], yg - w[1])
    live = u_field.mask != MASK_EXTERIOR
    M_v = float(v_vals[(dist_w <= 2.0) & live].max())
    m_u = min(uA, vA)
    ct, w1, w2 = choose_ctilde(m_u, M_v, rescale(nl, R), ell=ell)
    mu0 = float(w1.mu0)
    mu1 = float(w2.mu1)
    if math.isinf(mu1):
        mu_integral = Unbounded("mu1 = infinity branch taken")
        ratio_bound = math.inf
    else:
        mu_integral = carleson_integral(mu0, mu1, R, nl)
        ratio_bound = math.inf if mu0 == 0.0 else mu1 / mu0
    rho = 1.0 / ct
    thresh = 10.0 * tol_solve * _field_scale(u_field)
    ball = (u_field.mask == MASK_INTERIOR) & (dist_w <= rho)
    usable = ball & (u_field.values >= thresh)
    n_ball = int(ball.sum())
    n_used = int(usable.sum())
    if n_used == 0:
        raise ArgumentError(
            f"no nodes above the division floor {thresh:.3g} in B(w, {rho:.3g})")
    sup_ratio = float((v_vals[usable] / u_field.values[usable]).max())
    bound_ok = bool(sup_ratio <= ratio_bound * (1.0 + 1e-12))
    return BoundaryHarnackReport(
        mu0=mu0, mu1=mu1, ctilde=float(ct), sup_ratio=sup_ratio,
        ratio_bound=ratio_bound, mu_integral=mu_integral, bound_ok=bound_ok,
        excluded_nodes=n_ball - n_used, compared_nodes=n_used,
        u_corkscrew=uA, v_corkscrew=vA, ball_radius=rho,
        branch_w1=w1.branch, branch_w2=w2.branch, notes=tuple(notes))


def match_corkscrew_amplitude(dm: FamilyDomain, nl, R, seed, target_uA,
                              h=1.0 / 16, tol=1e-6, rel=1e-3,
                              max_iters=12) -> tuple:
    """Secant loop on the boundary-data amplitude until the corkscrew
    value matches target_uA; the matching device for drift operators,
    where post-scaling a solution is not legitimate.

    Returns (kappa, SolveResult).  Each probe is a full solve: intended
    for the coarse verification meshes, not the h = 1/64 family runs.
    """
    dmw = dm
    base = family_data(dmw, seed)
    A = corkscrew(dmw.dom, dmw.w, PATCH_RADIUS)
    prob_nl = rescale(nl, R)

    def probe(kappa):
        prob = Problem("pucci_minus_drift", FAMILY_ELL, rnl=prob_nl)
        res = _ladder_solve(prob, dmw,
                            lambda x, y: kappa * base(x, y), h, tol)
        return res, float(bilinear(res.field, A[0], A[1]))

    k0, k1 = 1.0, None
    res0, f0 = probe(k0)
    if abs(f0 - target_uA) <= rel * target_uA:
        return k0, res0
    k1 = k0 * target_uA / f0  # drift response is near-linear at unit scale
    for _ in range(max_iters):
        res1, f1 = probe(k1)
        if abs(f1 - target_uA) <= rel * target_uA:
            return k1, res1
        if f1 == f0:
            break
        k0, k1 = k1, k1 + (target_uA - f1) * (k1 - k0) / (f1 - f0)
        f0 = f1
    raise ConvergenceFailure(
        f"amplitude match stalled: last corkscrew value {f1:.6g} vs "
        f"target {target_uA:.6g}")


# ---------------------------------------------------------------------------
# p(x)-operator corollary check


@dataclass(frozen=True)
class PxReport:
    c_fit: float
    u_corkscrew: float
    sup_value: float
    bound: float
    margin: float
    passed: bool
    sweep: tuple
    R: float
    ratio_sup: Optional[float] = None
    ratio_bound: Optional[float] = None
    ratio_ok: Optional[bool] = None
    notes: tuple = ()


def px_corollary_check(field: GridField, p_field, dom: DomainSpec, R,
                       w=(0.0, 0.0), v_field: Optional[GridField] = None,
                       tol_solve: float = 1e-8) -> PxReport:
    """Carleson-type bound for the p(x) operator: sup over B(w, R/C) of u
    against C*max(u(A)^(1+CR), u(A)^(1/(1+CR))) at the smallest passing
    sweep constant.  With a second field the two-solution bound is also
    evaluated at that constant, normalized by the corkscrew ratio."""
    if R <= 0:
        raise ArgumentError(f"need R > 0, got {R}")
    _check_boundary_patch(field, dom, w, R)
    A = corkscrew(dom, w, R)
    uA = float(bilinear(field, A[0], A[1]))
    if uA <= 0.0:
        raise ArgumentError(f"corkscrew value must be positive, got {uA:.3g}")
    rows = []
    c_fit = math.inf
    for C in C_TRIAL_SWEEP:
        sup_C = sup_over_ball(field, w, R / C)
        bnd = px_carleson_bound(uA, R, C)
        ok = sup_C <= bnd
        rows.append({"C_trial": float(C), "sup": sup_C, "bound": bnd,
                     "passed": bool(ok)})
        if ok:
            c_fit = min(c_fit, float(C))
    if math.isinf(c_fit):
        sup_v = rows[0]["sup"]
        bnd_v = rows[0]["bound"]
        margin = bnd_v - sup_v
        passed = False
    else:
        hit = next(r for r in rows if r["C_trial"] == c_fit)
        sup_v, bnd_v = hit["sup"], hit["bound"]
        margin = bnd_v - sup_v
        passed = True
    notes = []
    pvals = np.asarray(p_field(np.array([A[0]]), np.array([A[1]])), dtype=float)
    notes.append(f"p at the corkscrew: {float(pvals[0]):.6g}")
    ratio_sup = ratio_bound = ratio_ok = None
    if v_field is not None and passed:
        vA = float(bilinear(v_field, A[0], A[1]))
        xg, yg = field.node_xy()
        sel = (field.mask == MASK_INTERIOR) \
            & (np.hypot(xg - w[0], yg - w[1]) <= R / c_fit) \
            & (field.values >= 10.0 * tol_solve * _field_scale(field))
        if not sel.any():
            raise ArgumentError("no usable nodes for the two-solution ratio")
        ratio_sup = float((v_field.values[sel] / field.values[sel]).max())
        ratio_bound = (vA / uA) * px_bharnack_bound(uA, R, c_fit)
        ratio_ok = bool(ratio_sup <= ratio_bound * (1.0 + 1e-12))
        notes.append("two-solution bound normalized by v(A)/u(A)")
    return PxReport(c_fit=c_fit, u_corkscrew=uA, sup_value=sup_v, bound=bnd_v,
                    margin=margin, passed=passed, sweep=tuple(rows), R=float(R),
                    ratio_sup=ratio_sup, ratio_bound=ratio_bound,
                    ratio_ok=ratio_ok, notes=tuple(notes))


# ---------------------------------------------------------------------------
# family drivers: the independence studies


def run_carleson_family(h: float = FAMILY_H, tol: float = FAMILY_TOL,
                        instances: Optional[Sequence[Instance]] = None
                        ) -> EstimateReport:
    """Carleson certificates over the committed family; the per-instance
    value is the smallest passing sweep constant and the group spreads
    track it across the R ladder for fixed domain, drift law and seed."""
    insts = sorted(instances) if instances is not None else family_instances()
    descs, values, inst_details = [], [], []
    for inst in insts:
        res = solve_family_instance(inst, h, tol)
        dm = FAMILY_DOMAIN_BY_NAME[inst.domain]
        nl = FAMILY_NL_BY_KIND[inst.nl_kind]
        rep = verify_carleson(res.field, dm.dom, inst.R, nl, w=dm.w)
        desc = inst.describe()
        descs.append(desc)
        values.append(rep.fitted_constant)
        inst_details.append({**desc, "sweep": rep.details["sweep"],
                             "u_corkscrew": rep.details["u_corkscrew"]})
    fitted = max(map(_as_float, values))
    return EstimateReport(
        theorem="carleson", instances=descs, fitted_constant=fitted,
        per_instance_values=values,
        independence_spread=relative_spread(values),
        group_spreads=_group_spreads(descs, values),
        details={"h": h, "tol_solve": tol, "per_instance": inst_details})


def run_harnack_family(h: float = FAMILY_H, tol: float = FAMILY_TOL,
                       instances: Optional[Sequence[Instance]] = None
                       ) -> EstimateReport:
    """Interior certificates at the committed corkscrew ball; the value is
    the rescaled integral itself, whose r^alpha weight suppresses the
    structural R-dependence the raw drift term would carry."""
    insts = sorted(instances) if instances is not None else family_instances()
    descs, values, inst_details = [], [], []
    for inst in insts:
        res = solve_family_instance(inst, h, tol)
        dm = FAMILY_DOMAIN_BY_NAME[inst.domain]
        nl = FAMILY_NL_BY_KIND[inst.nl_kind]
        A = corkscrew(dm.dom, dm.w, PATCH_RADIUS)
        cert = verify_interior_harnack(res.field, (float(A[0]), float(A[1])),
                                       HARNACK_BALL_R, inst.R, nl,
                                       HARNACK_ALPHA)
        desc = inst.describe()
        descs.append(desc)
        values.append(_as_float(cert.value))
        inst_details.append({**desc, "m": cert.m, "M": cert.M,
                             "value": _num(cert.value)})
    fitted = max(values)
    return EstimateReport(
        theorem="interior_harnack", instances=descs, fitted_constant=fitted,
        per_instance_values=values,
        independence_spread=relative_spread(values),
        group_spreads=_group_spreads(descs, values),
        details={"h": h, "tol_solve": tol, "ball_r": HARNACK_BALL_R,
                 "alpha": HARNACK_ALPHA, "per_instance": inst_details})
