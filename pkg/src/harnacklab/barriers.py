"""Radial comparison functions driven by the drift completion Phi_R.

Three constructions share one mechanism: a monotone profile is defined
implicitly by an integral relation

    t = integral_a^{x(t)} ds / den(s)        (increasing profile)
    t = integral_{x(t)}^b ds / den(s)        (decreasing profile)

with den a positive multiple of Phi_R (or of its plateau regularization
phi_eps).  The relation is inverted on a fine mesh, integrated once more
to produce a radial function, and the Pucci image of that function has a
closed radial formula whose sign we certify pointwise on the mesh.

The profiles can traverse hundreds of decades (the completion of the
log-model drift decays only double-exponentially), so all quadrature
runs in the log coordinate y = log s, and the double-exponential
quantities of the sharpness construction are carried as LogLogValue
payloads with two-sided rectangle brackets instead of floats.

Plane geometry throughout: the tangential curvature term of a radial
function contributes a single 1/r eigenvalue.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._quad import integrate_log
from .errors import (
    ArgumentError,
    BracketFailure,
    ConvergenceFailure,
    PreconditionError,
)
from .harnack import Unbounded, carleson_integral
from .loglog import LogLogValue
from .nonlinearity import (
    Nonlinearity,
    RescaledNonlinearity,
    eval_eta_R,
    eval_phi,
    eval_phi_R,
)
from .solver import EllipticityPair

_DIM = 2

# profile meshes: this many points, graded geometrically toward 0
_N_MESH = 4096
# implicit relations are inverted by bracketing bisection in y = log s;
# 72 halvings push any bracket below 1e-12 relative width
_BISECT_ITERS = 72
# smallest profile value we tabulate; beyond it the slack certificate is
# closed by monotonicity instead of pointwise evaluation
_VAL_FLOOR = 1e-250

_GL_X, _GL_W = np.polynomial.legendre.leggauss(7)


# ---------------------------------------------------------------------------
# plateau regularization


@dataclass(frozen=True)
class RegularizedPhi:
    """(1+eps) * max{phi(t), phi(eps)}: positive at zero, drift above eps.

    Built on either a bare profile phi or a completion Phi_R; `floor` is
    the constant value taken on [0, eps] when phi is monotone there.
    Tabulated profiles are evaluated at max(t, t_min of the table):
    below their sampled range the plateau value governs, which is the
    only fill-in consistent with the max construction.
    """

    eps: float
    floor: float
    source_kind: str
    rescaled: bool
    t_clamp: float
    _src: object = field(repr=False)

    def __call__(self, t):
        base = self._raw(t)
        out = (1.0 + self.eps) * np.maximum(base, self.floor / (1.0 + self.eps))
        scalar = np.isscalar(t) or (hasattr(t, "ndim") and getattr(t, "ndim", 1) == 0)
        return float(out) if scalar else out

    def _raw(self, t):
        if self.t_clamp > 0.0:
            t = np.maximum(np.asarray(t, dtype=float), self.t_clamp)
        if self.rescaled:
            return eval_phi_R(self._src, t)
        return eval_phi(self._src, t)


def build_phi_eps(source, eps) -> RegularizedPhi:
    """Regularize a drift profile (or completion) away from zero.

    source: Nonlinearity or RescaledNonlinearity.  Tabulated profiles
    whose sample range does not reach down to eps are rejected: the
    value phi(eps) is then not determined by the data (this bites
    exactly when phi(0) > 0, where no continuity argument fills the
    gap).
    """
    eps = float(eps)
    if not (eps > 0.0 and math.isfinite(eps)):
        raise ArgumentError(f"need eps > 0, got {eps}")
    if isinstance(source, RescaledNonlinearity):
        base, rescaled = source.base, True
    elif isinstance(source, Nonlinearity):
        base, rescaled = source, False
    else:
        raise ArgumentError("source must be a Nonlinearity or RescaledNonlinearity")
    t_clamp = 0.0
    if base.kind == "tabulated":
        t_min = float(np.exp(base.log_t[0]))
        if eps < t_min * (1.0 - 1e-12):
            raise ArgumentError(
                f"tabulated profile starts at t={t_min:.6g} and has no value at "
                f"eps={eps:.6g}; phi(0)={base.phi_at_zero} gives no admissible "
                "fill-in for the gap"
            )
        t_clamp = t_min
    at_eps = eval_phi_R(source, eps) if rescaled else eval_phi(base, eps)
    return RegularizedPhi(
        eps=eps,
        floor=(1.0 + eps) * float(at_eps),
        source_kind=base.kind,
        rescaled=rescaled,
        t_clamp=t_clamp,
        _src=source,
    )


# ---------------------------------------------------------------------------
# cumulative quadrature machine in the log coordinate


class _ProfileMachine:
    """Prefix antiderivatives of 1/den and s/den on a log-space GL mesh.

    Panels are uniform in y = log s (one edge pinned at s = 1 where the
    built-in profiles have a |log| kink); partial panels reuse the same
    7-point rule, so point queries agree with the prefix sums to
    quadrature accuracy.  Inversion is bracketing bisection in y.
    """

    def __init__(self, den, s_lo, s_hi, per_unit=512):
        self.den = den
        self.per_unit = int(per_unit)
        self._build(float(s_lo), float(s_hi))

    def _build(self, s_lo, s_hi):
        if not (0.0 < s_lo < s_hi and np.isfinite(s_hi)):
            raise ArgumentError(f"need 0 < s_lo < s_hi finite, got [{s_lo}, {s_hi}]")
        y0, y1 = math.log(s_lo), math.log(s_hi)
        n = max(8, int(math.ceil((y1 - y0) * self.per_unit)))
        edges = np.linspace(y0, y1, n + 1)
        if y0 < 0.0 < y1:
            edges = np.unique(np.concatenate([edges, [0.0]]))
        half = 0.5 * np.diff(edges)
        mid = edges[:-1] + half
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        s = np.exp(nodes)
        d = self.den(s.ravel()).reshape(s.shape)
        if np.any(~np.isfinite(d)) or np.any(d <= 0.0):
            raise ArgumentError("denominator must be positive and finite on the table range")
        w = _GL_W[None, :]
        pI = ((s / d) * w).sum(axis=1) * half
        pJ = ((s * s / d) * w).sum(axis=1) * half
        # extended-precision prefix sums: the table can span hundreds of
        # thousands of panels and the shooting needs ~1e-12 absolutely
        self.edges = edges
        self.I_edges = np.concatenate([[0.0], np.cumsum(pI.astype(np.longdouble))]).astype(float)
        self.J_edges = np.concatenate([[0.0], np.cumsum(pJ.astype(np.longdouble))]).astype(float)
        self.s_lo, self.s_hi = s_lo, s_hi
        self.y0, self.y1 = y0, y1

    def extend(self, s_lo=None, s_hi=None):
        self._build(min(self.s_lo, s_lo or self.s_lo), max(self.s_hi, s_hi or self.s_hi))

    def _at_y(self, y):
        y = np.asarray(y, dtype=float)
        k = np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, len(self.edges) - 2)
        a = self.edges[k]
        half = 0.5 * (y - a)
        mid = a + half
        nodes = mid[..., None] + half[..., None] * _GL_X
        s = np.exp(nodes)
        d = self.den(s.ravel()).reshape(s.shape)
        pI = ((s / d) * _GL_W).sum(axis=-1) * half
        pJ = ((s * s / d) * _GL_W).sum(axis=-1) * half
        return self.I_edges[k] + pI, self.J_edges[k] + pJ

    def at(self, x):
        """(I, J) antiderivatives from s_lo to x, vectorized."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.s_lo * (1 - 1e-12)) or np.any(x > self.s_hi * (1 + 1e-12)):
            raise ArgumentError(
                f"query outside table range [{self.s_lo:.3g}, {self.s_hi:.3g}]"
            )
        return self._at_y(np.log(np.clip(x, self.s_lo, self.s_hi)))

    def I_of(self, x):
        return self.at(x)[0]

    def J_of(self, x):
        return self.at(x)[1]

    def invert(self, targets):
        """x with I(x) = target per entry; flags mark range saturation."""
        t = np.atleast_1d(np.asarray(targets, dtype=float))
        top = float(self.I_edges[-1])
        hit_hi = t > top * (1 + 1e-12) + 1e-300
        hit_lo = t < -1e-14
        tc = np.clip(t, 0.0, top)
        lo = np.full(tc.shape, self.y0)
        hi = np.full(tc.shape, self.y1)
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            v, _ = self._at_y(mid)
            take = v < tc
            lo = np.where(take, mid, lo)
            hi = np.where(take, hi, mid)
        return np.exp(0.5 * (lo + hi)), hit_lo, hit_hi

    def segments(self, xs):
        """(dI, dJ) over consecutive [xs[j-1], xs[j]]; xs increasing."""
        ys = np.log(np.clip(np.asarray(xs, dtype=float), self.s_lo, self.s_hi))
        a, b = ys[:-1], ys[1:]
        # split any interval straddling y=0: |log s| kinks there and the
        # Gauss rule sheds ~7 digits on a non-smooth panel
        cut = (a < 0.0) & (b > 0.0)
        dIa, dJa = self._gauss_pieces(a, np.where(cut, 0.0, b))
        dIb, dJb = self._gauss_pieces(np.zeros_like(a), np.where(cut, b, 0.0))
        return dIa + dIb, dJa + dJb

    def _gauss_pieces(self, a, b):
        half = 0.5 * (b - a)
        mid = a + half
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        s = np.exp(nodes)
        d = self.den(s.ravel()).reshape(s.shape)
        dI = ((s / d) * _GL_W).sum(axis=1) * half
        dJ = ((s * s / d) * _GL_W).sum(axis=1) * half
        return dI, dJ


# ---------------------------------------------------------------------------
# integral budgets for the two branch conditions


def zero_end_budget(rnl, upper):
    """integral_0^upper ds/Phi_R; Unbounded when divergent at zero."""
    return carleson_integral(0.0, float(upper), rnl.R, rnl.base)


def tail_budget(rnl, lower):
    """integral_lower^infinity ds/Phi_R; Unbounded when divergent."""
    lower = float(lower)
    if not (lower > 0 and math.isfinite(lower)):
        raise ArgumentError(f"need finite lower > 0, got {lower}")

    def f(t):
        return 1.0 / eval_phi_R(rnl, t)

    total, a = 0.0, lower
    for _ in range(40):
        if a >= 1e300:
            return Unbounded(f"tail integral beyond 1e300 with running total {total:.6g}")
        b = min(a * 1e4, 1e300)
        chunk = integrate_log(f, a, b)
        total += chunk
        if chunk <= 1e-10 * max(total, 1.0):
            return total
        a = b
    return Unbounded(f"tail integral still growing at {a:.3g}; running total {total:.6g}")


# ---------------------------------------------------------------------------
# barrier container


@dataclass(frozen=True)
class RadialBarrier:
    """A tabulated radial comparison function with its slack certificate.

    kind "lower_inner": val is the increasing generator g of an annulus
    barrier growing toward the inner sphere (t = distance inward from
    the outer sphere, ray = its running integral).  kind "upper_outer":
    val is the decreasing generator f, t measured outward from the inner
    sphere.  kind "small_ball_max": val is the accumulated profile of
    the almost-maximum comparison function on a ball, deriv its slope,
    ray the barrier values themselves.

    certificate is the worst pointwise slack of the target Pucci
    inequality over the mesh (>= 0 when certified); ode_residual is the
    worst defect of the defining implicit relation in t units.
    """

    kind: str
    center: tuple
    inner_radius: float
    outer_radius: float
    orientation: str
    t: np.ndarray
    val: np.ndarray
    deriv: np.ndarray
    ray: np.ndarray
    certificate: float
    certificate_scale: float
    ode_residual: float
    ctilde: Optional[float] = None
    mu0: Optional[float] = None
    mu1: Optional[float] = None
    eps: Optional[float] = None
    branch: str = "standard"
    level_hit: Optional[float] = None
    collar_closure: Optional[float] = None
    notes: tuple = ()


def _check_level(x, name):
    x = float(x)
    if not (x > 0 and math.isfinite(x)):
        raise ArgumentError(f"{name} must be finite and > 0, got {x}")
    return x


def _check_ctilde(ct):
    ct = float(ct)
    if not (ct > 1.0 and math.isfinite(ct)):
        raise ArgumentError(f"need ctilde > 1, got {ct}")
    return ct


def _den_for(rnl, ct):
    def den(s):
        return ct * eval_phi_R(rnl, s)

    return den


def _table_floor(rnl) -> float:
    """Lowest argument at which the profile is determined by its data:
    positive only for tabulated sources, which refuse extrapolation."""
    if rnl.base.kind == "tabulated":
        return float(np.exp(rnl.base.log_t[0])) * (1.0 + 1e-9)
    return 0.0


def _estimate_top(rnl, ct, start):
    """Crude upper envelope for the increasing profile: march the log of
    the generator, whose slope is ct * eta_R, and pad by e^3."""
    y = math.log(start)
    dt = 1.0 / 256.0
    for _ in range(256):
        k1 = ct * eval_eta_R(rnl, math.exp(min(y, 690.0)))
        k2 = ct * eval_eta_R(rnl, math.exp(min(y + dt * k1, 690.0)))
        y = min(y + 0.5 * dt * (k1 + k2), 690.0)
    return math.exp(min(y + 3.0, 700.0))


def _geometric_bisect(machine_eval, lo, hi, flo, fhi, target_tol, what):
    """Bisection on log-spaced midpoints for a monotone shoot function."""
    if not (flo < 0.0 < fhi):
        raise BracketFailure(
            f"{what}: shooting bracket does not straddle the target",
            lo=lo, hi=hi, flo=flo, fhi=fhi,
        )
    best, fbest = hi, fhi
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        fmid = machine_eval(mid)
        if abs(fmid) < abs(fbest):
            best, fbest = mid, fmid
        if fmid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi and abs(fbest) <= target_tol:
            break
    if abs(fbest) > target_tol * 10.0:
        raise ConvergenceFailure(
            f"{what}: shooting stalled with residual {fbest:.3g}",
            residual_history=[fbest],
        )
    return best, fbest


def w1_inner_level(rnl, ctilde, mu0, machine=None):
    """Inner-sphere value of the lower annulus barrier for a given mu0:
    the integral of the generator g over one unit of inward distance."""
    ct = _check_ctilde(ctilde)
    mu0 = _check_level(mu0, "mu0")
    if machine is None:
        machine = _ProfileMachine(_den_for(rnl, ct), mu0 * 1e-3, _estimate_top(rnl, ct, mu0))
    I0, J0 = machine.at(mu0)
    for _ in range(6):
        x, _, hit_hi = machine.invert(float(I0) + 1.0)
        if not bool(hit_hi[0]):
            break
        machine.extend(s_hi=machine.s_hi * 1e8)
        I0, J0 = machine.at(mu0)
    else:
        raise BracketFailure("generator escaped every table extension", lo=mu0)
    _, Jx = machine.at(float(x[0]))
    return float(Jx) - float(J0)


def w2_outer_level(rnl, ctilde, mu1, machine=None):
    """Outer-sphere value of the upper annulus barrier for a given mu1:
    the integral of the generator f over the two-unit annulus width."""
    ct = _check_ctilde(ctilde)
    mu1 = _check_level(mu1, "mu1")
    if machine is None:
        machine = _ProfileMachine(
            _den_for(rnl, ct), max(mu1 * 1e-100, 5e-300), mu1 * 1.000001
        )
    I1, J1 = machine.at(mu1)
    target = float(I1) - 2.0
    if target <= 0.0:
        # the generator leaves the representable range before t = 2; the
        # truncated mass below the table floor is O(s_lo^2), negligible
        return float(J1) - 0.0
    x, hit_lo, _ = machine.invert(target)
    xv = machine.s_lo if bool(hit_lo[0]) else float(x[0])
    return float(J1) - float(machine.J_of(xv))


def lower_barrier_w1(m_u, rnl, ctilde, ell=None, n_mesh=_N_MESH,
                     require_certified=True) -> RadialBarrier:
    """Annulus barrier vanishing on the outer sphere and shot to hit the
    level m_u on the inner sphere.

    The generator g solves t = integral_mu0^g ds/(ctilde*Phi_R) and the
    barrier is its running integral in the inward distance t.  When the
    zero-end budget integral_0^{m_u/3} ds/Phi_R falls short of 4*ctilde
    the shooting target is unreachable and the degenerate mu0 = 0 branch
    is returned without a profile.
    """
    m_u = _check_level(m_u, "m_u")
    ct = _check_ctilde(ctilde)
    ell = ell if ell is not None else EllipticityPair(1.0, 1.0)
    budget = zero_end_budget(rnl, m_u / 3.0)
    need = 4.0 * ct
    if not isinstance(budget, Unbounded) and budget < need:
        return RadialBarrier(
            kind="lower_inner", center=(0.0, 2.0), inner_radius=1.0,
            outer_radius=2.0, orientation="increasing-inward",
            t=np.empty(0), val=np.empty(0), deriv=np.empty(0), ray=np.empty(0),
            certificate=0.0, certificate_scale=0.0, ode_residual=0.0,
            ctilde=ct, mu0=0.0, branch="degenerate-mu0-zero",
            notes=(
                f"zero-end budget {budget:.6g} < 4*ctilde = {need:.6g}; "
                "no inner level is certified and mu0 = 0 is taken directly",
            ),
        )

    floor = max(m_u * 1e-280, _table_floor(rnl))
    machine = _ProfileMachine(
        _den_for(rnl, ct), max(m_u * 1e-60, floor), _estimate_top(rnl, ct, m_u)
    )

    def shoot(mu0):
        if mu0 < machine.s_lo * 10.0:
            machine.extend(s_lo=max(mu0 * 1e-3, floor * (1 + 1e-12)))
        return w1_inner_level(rnl, ct, mu0, machine) - m_u

    hi = m_u
    fhi = shoot(hi)
    if fhi <= 0.0:
        raise BracketFailure(
            "upper shooting endpoint fails: generator started at m_u does not "
            "exceed m_u on the inner sphere", lo=None, hi=hi, flo=None, fhi=fhi,
        )
    lo, flo = m_u * 1e-3, None
    while True:
        flo = shoot(lo)
        if flo < 0.0:
            break
        hi, fhi = lo, flo
        lo *= 1e-3
        if lo < floor:
            raise BracketFailure(
                "no lower shooting endpoint above the representable range",
                lo=lo, hi=hi, flo=flo, fhi=fhi,
            )
    mu0, resid = _geometric_bisect(shoot, lo, hi, flo, fhi, 1e-9 * m_u, "lower barrier")

    tmesh = np.geomspace(1e-9, 1.0, int(n_mesh))
    I0 = float(machine.I_of(mu0))
    g, _, hit_hi = machine.invert(I0 + tmesh)
    if np.any(hit_hi):
        machine.extend(s_hi=machine.s_hi * 1e8)
        g, _, hit_hi = machine.invert(float(machine.I_of(mu0)) + tmesh)
    dI, dJ = machine.segments(np.concatenate([[mu0], g]))
    ray = np.cumsum(dJ.astype(np.longdouble)).astype(float)
    ode_res = float(np.max(np.abs(np.cumsum(dI.astype(np.longdouble)).astype(float) - tmesh)))
    phi_g = eval_phi_R(rnl, g)
    slack = (ell.lam * ct - 2.0) * phi_g - (_DIM - 1) * ell.Lam * g / (2.0 - tmesh)
    cert = float(np.min(slack))
    scale = float(np.max(phi_g))
    if require_certified and cert < -1e-12 * scale:
        k = int(np.argmin(slack))
        raise PreconditionError(
            f"lower barrier slack {cert:.6g} < 0 at inward distance {tmesh[k]:.6g}; "
            f"ctilde = {ct} is too small for ellipticity ({ell.lam}, {ell.Lam})"
        )
    return RadialBarrier(
        kind="lower_inner", center=(0.0, 2.0), inner_radius=1.0, outer_radius=2.0,
        orientation="increasing-inward", t=tmesh, val=g,
        deriv=ct * phi_g, ray=ray, certificate=cert, certificate_scale=scale,
        ode_residual=ode_res, ctilde=ct, mu0=float(mu0), branch="standard",
        level_hit=float(ray[-1]),
        notes=(f"shooting residual {resid:.3g}",),
    )


def upper_barrier_w2(M_v, rnl, ctilde, ell=None, n_mesh=_N_MESH,
                     require_certified=True) -> RadialBarrier:
    """Annulus barrier vanishing on the inner sphere and shot to hit the
    level M_v on the outer sphere, two units away.

    The generator f solves t = integral_f^mu1 ds/(ctilde*Phi_R) and
    decreases outward.  When the tail budget integral_{M_v}^inf ds/Phi_R
    falls short of 2*ctilde the finite shooting target is unreachable
    and the degenerate mu1 = infinity branch is returned.  For strongly
    Osgood-divergent completions f leaves the float range before t = 2;
    the mesh then stops at the representability edge and the slack over
    the remaining collar is closed by monotonicity of eta_R.
    """
    M_v = _check_level(M_v, "M_v")
    ct = _check_ctilde(ctilde)
    ell = ell if ell is not None else EllipticityPair(1.0, 1.0)
    budget = tail_budget(rnl, M_v)
    need = 2.0 * ct
    if not isinstance(budget, Unbounded) and budget < need:
        return RadialBarrier(
            kind="upper_outer", center=(0.0, -1.0), inner_radius=1.0,
            outer_radius=3.0, orientation="increasing-outward",
            t=np.empty(0), val=np.empty(0), deriv=np.empty(0), ray=np.empty(0),
            certificate=0.0, certificate_scale=0.0, ode_residual=0.0,
            ctilde=ct, mu1=math.inf, branch="degenerate-mu1-infinite",
            notes=(
                f"tail budget {budget:.6g} < 2*ctilde = {need:.6g}; "
                "no finite outer level is certified and mu1 = infinity is taken",
            ),
        )

    # table depth: just enough decades that the profile time from the
    # floor to M_v exceeds the annulus width, or the float (or tabulated)
    # range runs out
    floor = max(5e-250, _table_floor(rnl))
    s_lo = max(M_v * 1e-12, floor)
    while s_lo > floor:
        cap = carleson_integral(s_lo, M_v, rnl.R, rnl.base)
        if not isinstance(cap, Unbounded) and cap >= 2.05 * ct:
            break
        s_lo = max(s_lo * 1e-50, floor)
    machine = _ProfileMachine(_den_for(rnl, ct), s_lo, M_v * 1e6)

    def shoot(mu1):
        if mu1 > machine.s_hi * 0.1:
            machine.extend(s_hi=mu1 * 1e3)
        return w2_outer_level(rnl, ct, mu1, machine) - M_v

    lo = M_v / 3.0
    flo = shoot(lo)
    hi, fhi = M_v, shoot(M_v)
    while fhi <= 0.0:
        hi *= 2.0
        if hi > M_v * 1e12:
            raise BracketFailure(
                "no upper shooting endpoint below 1e12 * M_v",
                lo=lo, hi=hi, flo=flo, fhi=fhi,
            )
        fhi = shoot(hi)
    mu1, resid = _geometric_bisect(shoot, lo, hi, flo, fhi, 1e-9 * M_v, "upper barrier")

    I1 = float(machine.I_of(mu1))
    s_rep = max(machine.s_lo * 1e3, _VAL_FLOOR)
    t_hi = min(2.0, I1 - float(machine.I_of(s_rep)))
    capped = t_hi < 2.0
    tmesh = np.geomspace(t_hi * 1e-9, t_hi, int(n_mesh))
    f, hit_lo, _ = machine.invert(I1 - tmesh)
    if np.any(hit_lo):
        raise ArgumentError("internal: capped mesh still left the table range")
    xs = np.concatenate([f[::-1], [mu1]])
    dI, dJ = machine.segments(xs)
    sufI = np.cumsum(dI[::-1].astype(np.longdouble))[::-1].astype(float)
    sufJ = np.cumsum(dJ[::-1].astype(np.longdouble))[::-1].astype(float)
    ray = sufJ[::-1]
    ode_res = float(np.max(np.abs(sufI[::-1] - tmesh)))
    phi_f = eval_phi_R(rnl, f)
    slack = (ell.lam * ct - 2.0) * phi_f - (_DIM - 1) * ell.Lam * f / (1.0 + tmesh)
    cert = float(np.min(slack))
    scale = float(np.max(phi_f))
    closure = None
    notes = [f"shooting residual {resid:.3g}"]
    if capped:
        # on the collar t in (t_hi, 2) the generator only shrinks, eta_R
        # only grows below 1, and 1+t only grows, so the normalized slack
        # (lam*ct - 2) - Lam/(eta_R(f)*(1+t)) is below its t_hi value
        closure = float(
            (ell.lam * ct - 2.0)
            - (_DIM - 1) * ell.Lam / (eval_eta_R(rnl, float(f[-1])) * (1.0 + t_hi))
        )
        notes.append(
            f"generator reaches the float floor at t = {t_hi:.6g}; collar slack "
            f"closed by monotonicity with margin {closure:.6g}"
        )
    if require_certified and cert < -1e-12 * scale:
        k = int(np.argmin(slack))
        raise PreconditionError(
            f"upper barrier slack {cert:.6g} < 0 at outward distance {tmesh[k]:.6g}; "
            f"ctilde = {ct} is too small for ellipticity ({ell.lam}, {ell.Lam})"
        )
    if require_certified and closure is not None and closure < 0.0:
        raise PreconditionError(
            f"upper barrier collar closure {closure:.6g} < 0 at t = {t_hi:.6g}"
        )
    return RadialBarrier(
        kind="upper_outer", center=(0.0, -1.0), inner_radius=1.0, outer_radius=3.0,
        orientation="increasing-outward", t=tmesh, val=f,
        deriv=-ct * phi_f, ray=ray, certificate=cert, certificate_scale=scale,
        ode_residual=ode_res, ctilde=ct, mu1=float(mu1), branch="standard",
        level_hit=float(M_v + resid), collar_closure=closure, notes=tuple(notes),
    )


def _certified(b: RadialBarrier) -> bool:
    if b.branch != "standard":
        return True
    ok = b.certificate >= -1e-12 * max(b.certificate_scale, 1e-300)
    if b.collar_closure is not None:
        ok = ok and b.collar_closure >= 0.0
    return ok


def choose_ctilde(m_u, M_v, rnl, ell=None, start=2.0, max_doublings=16,
                  n_mesh=_N_MESH):
    """Double the profile constant from `start` until both annulus
    barriers certify their Pucci inequalities; returns (ctilde, w1, w2)."""
    ct = float(start)
    for _ in range(int(max_doublings) + 1):
        w1 = lower_barrier_w1(m_u, rnl, ct, ell, n_mesh, require_certified=False)
        w2 = upper_barrier_w2(M_v, rnl, ct, ell, n_mesh, require_certified=False)
        if _certified(w1) and _certified(w2):
            return ct, w1, w2
        ct *= 2.0
    raise BracketFailure(
        f"no certifying constant below {ct}", lo=float(start), hi=ct,
    )


# ---------------------------------------------------------------------------
# small-ball almost-maximum barrier


def _r0_cap(rnl, ell):
    """Largest admissible ball radius: half of lam * integral_0^1 of the
    reciprocal half-regularized completion."""
    ph0 = build_phi_eps(rnl, 0.5)
    tail = integrate_log(lambda s: 1.0 / ph0(s), 1e-12, 1.0)
    head = 1e-12 / ph0.floor
    return 0.5 * ell.lam * (tail + head), tail + head


def radial_max_barrier(M, r, rnl, eps, ell=None, n_mesh=_N_MESH) -> RadialBarrier:
    """Ball comparison function dominating subsolutions capped at M on
    the sphere of radius r.

    The slope profile solves t = lam * integral_0^f ds/phi_eps with
    phi_eps the plateau regularization of Phi_R, its running integral g
    is exactly quadratic while f stays on the plateau, and the barrier
    is g(r) + M - g(|x|).
    """
    M = float(M)
    if not math.isfinite(M):
        raise ArgumentError(f"need finite M, got {M}")
    r = float(r)
    if not (0.0 < r <= 1.0 and math.isfinite(r)):
        raise ArgumentError(f"need 0 < r <= 1, got {r}")
    ell = ell if ell is not None else EllipticityPair(1.0, 1.0)
    r0, integral_half = _r0_cap(rnl, ell)
    if r > r0:
        raise PreconditionError(
            f"radius {r:.6g} exceeds r0 = {r0:.6g}: the admissibility bound "
            f"lam * integral_0^1 ds/phi_(1/2) = {ell.lam * integral_half:.6g} > 2*r "
            "fails"
        )
    phe = build_phi_eps(rnl, float(eps))
    epsv = phe.eps
    # plateau check: the closed-form head below relies on phi_eps being
    # constant on [0, eps]
    probe = phe(np.geomspace(epsv * 1e-8, epsv, 33))
    if float(np.max(np.abs(probe - phe.floor))) > 1e-12 * phe.floor:
        raise ArgumentError("regularized profile is not constant on [0, eps]")

    def den(s):
        return phe(s) / ell.lam

    machine = _ProfileMachine(den, epsv * 1e-8, 1.0)
    knee_t = ell.lam * epsv / phe.floor
    I_eps = float(machine.I_of(epsv))
    J_eps = float(machine.J_of(epsv))
    g_eps = ell.lam * epsv * epsv / (2.0 * phe.floor)

    tmesh = np.geomspace(r * 1e-9, r, int(n_mesh))
    small = tmesh <= knee_t * (1.0 + 1e-12)
    f = np.empty_like(tmesh)
    g = np.empty_like(tmesh)
    f[small] = tmesh[small] * phe.floor / ell.lam
    g[small] = 0.5 * f[small] * f[small] * ell.lam / phe.floor
    if np.any(~small):
        targets = tmesh[~small] - knee_t + I_eps
        fx, _, hit_hi = machine.invert(targets)
        if np.any(hit_hi):
            raise PreconditionError(
                "slope profile reached 1 inside the ball; the admissibility "
                "bound must have failed"
            )
        _, Jx = machine.at(fx)
        f[~small] = fx
        g[~small] = g_eps + (Jx - J_eps)
    if float(np.max(f)) >= 1.0:
        raise PreconditionError("slope profile must stay below 1 on [0, r]")
    g_r = float(g[-1])
    ray = g_r + M - g
    # implicit-relation residual, mapped back to t units
    t_back = np.where(
        f <= epsv, ell.lam * f / phe.floor, knee_t + (machine.I_of(np.maximum(f, epsv)) - I_eps)
    )
    ode_res = float(np.max(np.abs(t_back - tmesh)))
    slack = (_DIM - 1) * ell.lam * f / tmesh
    return RadialBarrier(
        kind="small_ball_max", center=(0.0, 0.0), inner_radius=0.0, outer_radius=r,
        orientation="increasing-inward", t=tmesh, val=g, deriv=f, ray=ray,
        certificate=float(np.min(slack)), certificate_scale=float(np.max(phe(f))),
        ode_residual=ode_res, eps=epsv, branch="standard", level_hit=M,
        notes=(f"quadratic head below t = {knee_t:.6g}",),
    )


@dataclass(frozen=True)
class AlmostMaxReport:
    threshold: float
    c0: float
    sigma: float
    M: float
    eta_R_M: float
    r0: float
    r_star_by_M: tuple
    exact_max_principle: bool
    g_at_threshold: float
    bound: float
    verified: bool
    notes: tuple


class _LimitProfile:
    """The eps -> 0 slope profile t = lam * integral_0^f ds/Phi_R and its
    gain g = lam * integral_0^f u du/Phi_R(u), on one cumulative table.

    When the zero-end integral of 1/Phi_R diverges the profile vanishes
    identically (`exact` flag) and the gain is zero at every radius.
    Otherwise the head of the table range is reconciled against the
    ladder value of the full integral, so f is inverted without ever
    evaluating the profile below the representable (or tabulated) floor;
    the gain's own head is bounded by the floor since u/Phi_R(u) <= 1.
    """

    def __init__(self, rnl, ell):
        self.rnl, self.ell = rnl, ell
        total = zero_end_budget(rnl, 1.0)
        self.exact = isinstance(total, Unbounded)
        if self.exact:
            return
        s_floor = 1e-250
        if rnl.base.kind == "tabulated":
            s_floor = max(s_floor, float(np.exp(rnl.base.log_t[0])) * (1 + 1e-9))
        self.machine = _ProfileMachine(
            lambda s: eval_phi_R(rnl, s) / ell.lam, s_floor, 1.0
        )
        self.t_total = ell.lam * float(total)  # t at f = 1
        self.I1 = float(self.machine.I_of(1.0))
        self.s_floor = s_floor

    def gain(self, rr):
        """g at radius rr; clips to 0 when f falls below the table floor."""
        if self.exact:
            return 0.0
        # t(x) = t_total - (I(1) - I(x)) in machine units
        target = self.I1 - (self.t_total - rr)
        if target <= 0.0:
            return 0.0
        x, _, hit_hi = self.machine.invert(target)
        if bool(hit_hi[0]):
            raise PreconditionError(
                f"limit profile reaches slope 1 inside radius {rr:.6g}; "
                "the admissibility bound must have failed"
            )
        return float(self.machine.J_of(float(x[0])))


def almost_max_threshold(M, rnl, sigma, ell=None) -> AlmostMaxReport:
    """Ball radius below which subsolutions overshoot their boundary cap
    by at most the factor sigma: c0 / eta_R(M)^2 with c0 calibrated by
    bisection of the limit-profile gain against (sigma-1)*M.
    """
    M = _check_level(M, "M")
    sigma = float(sigma)
    if not (sigma > 1.0 and math.isfinite(sigma)):
        raise ArgumentError(f"need sigma > 1, got {sigma}")
    ell = ell if ell is not None else EllipticityPair(1.0, 1.0)
    r0, _ = _r0_cap(rnl, ell)
    prof = _LimitProfile(rnl, ell)
    exact = prof.exact

    r_star = []
    for Mt in (0.25 * M, 0.5 * M, M, 2.0 * M, 4.0 * M):
        bound = (sigma - 1.0) * Mt
        if exact:
            r_star.append((Mt, r0))
            continue
        lo, hi = r0 * 1e-8, r0
        g_lo = prof.gain(lo)
        if g_lo > bound:
            raise BracketFailure(
                f"no radius above {lo:.3g} keeps the gain below {bound:.6g}",
                lo=lo, hi=hi, flo=g_lo - bound,
            )
        if prof.gain(hi) <= bound:
            r_star.append((Mt, r0))
            continue
        for _ in range(60):
            mid = math.sqrt(lo * hi)
            if prof.gain(mid) <= bound:
                lo = mid
            else:
                hi = mid
        r_star.append((Mt, lo))
    c0 = 0.5 * min(rs * eval_eta_R(rnl, Mt) ** 2 for Mt, rs in r_star)
    eta_M = float(eval_eta_R(rnl, M))
    threshold = c0 / eta_M**2
    g_thr = prof.gain(threshold)
    bound_M = (sigma - 1.0) * M
    notes = []
    if exact:
        notes.append(
            "maximum principle exact: the zero-end integral of 1/Phi_R diverges "
            "and the limit profile vanishes"
        )
    return AlmostMaxReport(
        threshold=float(threshold), c0=float(c0), sigma=sigma, M=M,
        eta_R_M=eta_M, r0=float(r0),
        r_star_by_M=tuple((float(a), float(b)) for a, b in r_star),
        exact_max_principle=exact, g_at_threshold=float(g_thr),
        bound=float(bound_M), verified=bool(g_thr <= bound_M * (1 + 1e-9)),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# double-exponential integrals and the sharpness construction

_RECT_N = 65536


def _ll_rect(tag_payload):
    tag, v = tag_payload
    if tag == "log":
        return LogLogValue.from_log(v)
    return LogLogValue.from_loglog(v)


def _log_rect_sum(L, h):
    """log(h * sum_i exp(exp(L_i))), pushed down a level when needed."""
    Lmax = float(np.max(L))
    if Lmax <= 700.0:
        inner = np.exp(L)
        m = float(np.max(inner))
        s = float(np.exp(inner - m).sum())
        p = m + math.log(s) + math.log(h)
        if p <= 1e15:
            return ("log", p)
        # log-level ulp already swamps the node-sum and width corrections
        return ("loglog", math.log(p))
    # the dominant node exceeds the float range; every additive
    # correction to its double log underflows
    return ("loglog", Lmax)


def exp_exp_integral(a, b, lo, hi, n=_RECT_N):
    """Two-sided rectangle bracket of integral_lo^hi exp(exp(a + b*s)) ds.

    The integrand is monotone in s, so per-subinterval rectangles at the
    smaller/larger endpoint bound the integral from below/above; sums
    are carried at log level, or double-log level once even the log of a
    node overflows.  Returns (lower, upper) LogLogValues.
    """
    a, b, lo, hi = float(a), float(b), float(lo), float(hi)
    if not (lo < hi and math.isfinite(lo) and math.isfinite(hi)):
        raise ArgumentError(f"need finite lo < hi, got [{lo}, {hi}]")
    if b == 0.0 or not math.isfinite(b) or not math.isfinite(a):
        raise ArgumentError("need finite a and nonzero finite b")
    n = int(n)
    if n < 2:
        raise ArgumentError(f"need n >= 2 subintervals, got {n}")
    s = np.linspace(lo, hi, n + 1)
    L = a + b * s
    h = (hi - lo) / n
    lower = _ll_rect(_log_rect_sum(np.minimum(L[:-1], L[1:]), h))
    upper = _ll_rect(_log_rect_sum(np.maximum(L[:-1], L[1:]), h))
    return lower, upper


def _least_a_reaching(target, b, lo, hi, n=_RECT_N, a_min=-10.0, a_max=220.0):
    """Least shift a at which the lower rectangle bound of the
    double-exponential integral reaches `target` (a LogLogValue)."""

    def reaches(a):
        return exp_exp_integral(a, b, lo, hi, n)[0] >= target

    if reaches(a_min):
        raise BracketFailure("target already reached at the lower search end",
                             lo=a_min, hi=a_max)
    if not reaches(a_max):
        raise BracketFailure("target not reached at the upper search end",
                             lo=a_min, hi=a_max)
    alo, ahi = a_min, a_max
    for _ in range(64):
        mid = 0.5 * (alo + ahi)
        if reaches(mid):
            ahi = mid
        else:
            alo = mid
    return ahi


@dataclass(frozen=True)
class Lemma61Report:
    eps: float
    khat: float
    k_step: float
    k_max: float
    sufficient_lhs: float
    sufficient_rhs: float
    sufficient_ok: bool
    integral_slacks: tuple
    passed: bool
    notes: tuple


def lemma61_check(eps, k_step=0.25, k_max=200.0, n=_RECT_N) -> Lemma61Report:
    """Least grid K at which the unit integral of exp(exp(K + s/2))
    provably dominates exp(exp(K + 1/2 - eps)).

    The search walks the sufficient condition log(1/eps) <= e^K *
    (e^{eps/2} - 1); at the returned K and at K + {1, 5, 10} the
    integral inequality itself is re-verified through the conservative
    lower rectangle bound, in the double-log domain.
    """
    eps = float(eps)
    if not (0.0 < eps < 0.25):
        raise PreconditionError(f"need eps in (0, 1/4), got {eps}")
    need = math.log(1.0 / eps)
    gain = math.expm1(eps / 2.0)
    khat = None
    k = 1.0
    while k <= k_max + 1e-12:
        if math.exp(k) * gain >= need:
            khat = k
            break
        k += k_step
    if khat is None:
        raise BracketFailure(
            f"sufficient condition not reached on the grid below K = {k_max}",
            lo=1.0, hi=k_max, fhi=math.exp(k_max) * gain - need,
        )
    slacks = []
    for dk in (0.0, 1.0, 5.0, 10.0):
        K = khat + dk
        low, _ = exp_exp_integral(K, 0.5, 0.0, 1.0, n)
        slacks.append((K, low.loglog_value() - (K + 0.5 - eps)))
    return Lemma61Report(
        eps=eps, khat=khat, k_step=float(k_step), k_max=float(k_max),
        sufficient_lhs=need, sufficient_rhs=math.exp(khat) * gain,
        sufficient_ok=True,
        integral_slacks=tuple((float(a), float(b)) for a, b in slacks),
        passed=bool(all(s > 0.0 for _, s in slacks)),
        notes=(),
    )


def _ll_close(x: LogLogValue, y: LogLogValue, rel=1e-12) -> bool:
    try:
        return math.isclose(x.log_value(), y.log_value(), rel_tol=rel, abs_tol=rel)
    except ArgumentError:
        return math.isclose(x.loglog_value(), y.loglog_value(), rel_tol=rel, abs_tol=rel)


def _fd_relative_residual(fun, rate, grid, delta=1e-6):
    """max |centered difference of fun / rate(fun) - 1| over the grid."""
    worst = 0.0
    for t in grid:
        num = (fun(t + delta) - fun(t - delta)) / (2.0 * delta)
        den = rate(t)
        worst = max(worst, abs(num / den - 1.0))
    return worst


@dataclass(frozen=True)
class SharpnessReport:
    H: LogLogValue
    eps: float
    K: float
    M_lower: LogLogValue
    M_upper: LogLogValue
    R: float
    rhat_exact: float
    rhat_grid: float
    gamma: float
    gamma_gt_one: bool
    ratio_lower_bound: Optional[LogLogValue]
    psi_lower: LogLogValue
    psi_rect_lower: LogLogValue
    c_H_gamma: LogLogValue
    H_le_double_exp: bool
    lemma_khat: float
    lemma_applicable: bool
    lemma_direct_holds: bool
    barrier_certified: bool
    barrier_reduced_slack: float
    chain_certified: bool
    H_min_certified: LogLogValue
    u_at_xhat_is_H: bool
    F_ode_residual: float
    G_ode_residual: float
    notes: tuple

    def as_dict(self) -> dict:
        def enc(v):
            if isinstance(v, LogLogValue):
                return v.as_dict()
            if isinstance(v, tuple):
                return list(v)
            return v

        return {k: enc(getattr(self, k)) for k in self.__dataclass_fields__}

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


def sharpness_example(H, eps, n=_RECT_N) -> SharpnessReport:
    """Degenerate-comparison construction on the unit square for the
    gradient-log drift: a flat solution of height H against a boundary
    spike of height M, with the ratio at (7/8, 1/2) bounded below by
    H^(gamma-1), gamma = exp(1/16 - 2*eps).

    All double-exponential quantities are carried as LogLogValues.  The
    report records which links of the lower-bound chain are certified at
    this H and, when some are not, the smallest H at which all of them
    are.
    """
    eps = float(eps)
    if not (0.0 < eps < 0.25):
        raise PreconditionError(f"need eps in (0, 1/4), got {eps}")
    H_ll = H if isinstance(H, LogLogValue) else LogLogValue.from_plain(float(H))
    if H_ll < 1e4:
        raise PreconditionError("H below the documented floor 1e4")

    K = _least_a_reaching(H_ll, 0.5, 0.0, 0.5, n)
    H_le = H_ll <= LogLogValue.from_loglog(K + 0.25)
    M_lo, M_hi = exp_exp_integral(K, 0.5, 0.0, 1.0, n)
    R = _least_a_reaching(M_lo, -(1.0 + eps), 0.25, 0.5, n)
    rhat = math.log(4.0 / eps) + 0.5 * (1.0 + eps)
    rhat_grid = 1.0 + 0.25 * max(0.0, math.ceil((rhat - 1.0) / 0.25 - 1e-12))
    g_slack = (math.log(eps) + R - 0.5 * (1.0 + eps)) - math.log(4.0)
    barrier_ok = g_slack >= 0.0

    lem = lemma61_check(eps, n=n)
    lemma_applicable = K >= lem.khat
    lemma_direct = M_lo >= LogLogValue.from_loglog(K + 0.5 - eps)

    gamma = math.exp(1.0 / 16.0 - 2.0 * eps)
    gamma_gt_one = (1.0 / 16.0 - 2.0 * eps) > 0.0
    ratio = H_ll ** (gamma - 1.0) if gamma_gt_one else None

    psi_lo, _ = exp_exp_integral(R, -(1.0 + eps), 3.0 / 8.0, 0.5, n)
    x = R - (7.0 / 16.0) * (1.0 + eps)
    if x <= 700.0:
        psi_rect = LogLogValue.from_log(math.log(1.0 / 16.0) + math.exp(x))
    else:
        psi_rect = LogLogValue.from_loglog(x)
    cHg = LogLogValue.from_plain(1.0 / 16.0) * (H_ll ** gamma)
    chain_final = psi_lo >= cHg
    chain = bool(barrier_ok and lemma_direct and chain_final and gamma_gt_one)

    u_xhat = (H_ll * 2.0) * 0.5
    u_ok = _ll_close(u_xhat, H_ll)

    t_grid = np.linspace(0.05, 0.95, 19)
    F_res = _fd_relative_residual(
        lambda t: math.exp(K + 0.5 * t), lambda t: 0.5 * math.exp(K + 0.5 * t), t_grid
    )
    tg = np.linspace(0.26, 0.49, 12)
    G_res = _fd_relative_residual(
        lambda t: math.exp(R - (1.0 + eps) * t),
        lambda t: -(1.0 + eps) * math.exp(R - (1.0 + eps) * t),
        tg,
    )

    M_need = exp_exp_integral(rhat_grid, -(1.0 + eps), 0.25, 0.5, n)[1]
    K_R = _least_a_reaching(M_need, 0.5, 0.0, 1.0, n)
    K_min = max(lem.khat, K_R)
    H_min = exp_exp_integral(K_min, 0.5, 0.0, 0.5, n)[1]

    notes = []
    if not chain:
        notes.append(
            "lower-bound chain not certified at this H; every link holds for "
            f"H >= {H_min.render()}"
        )
    return SharpnessReport(
        H=H_ll, eps=eps, K=float(K), M_lower=M_lo, M_upper=M_hi, R=float(R),
        rhat_exact=float(rhat), rhat_grid=float(rhat_grid), gamma=float(gamma),
        gamma_gt_one=bool(gamma_gt_one), ratio_lower_bound=ratio,
        psi_lower=psi_lo, psi_rect_lower=psi_rect, c_H_gamma=cHg,
        H_le_double_exp=bool(H_le), lemma_khat=float(lem.khat),
        lemma_applicable=bool(lemma_applicable),
        lemma_direct_holds=bool(lemma_direct),
        barrier_certified=bool(barrier_ok),
        barrier_reduced_slack=float(g_slack), chain_certified=chain,
        H_min_certified=H_min, u_at_xhat_is_H=bool(u_ok),
        F_ode_residual=float(F_res), G_ode_residual=float(G_res),
        notes=tuple(notes),
    )
