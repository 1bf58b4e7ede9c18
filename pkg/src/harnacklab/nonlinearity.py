"""Drift profiles phi(t) = eta(t) * t and their structural checks.

The drift profile controls how strongly the first-order term can grow
with the gradient.  Everything downstream consumes either phi itself or
its unit-scale completion

    Phi_R(t) = R * phi(t) + t,      0 < R <= 1,

which stays comparable to t near zero and carries the drift growth at
scale R.  Built-in kinds:

  homogeneous   phi(t) = 0                     (drift-free)
  linear        phi(t) = t                     (eta == 1)
  log_model     phi(t) = c * (|log t| + 1) * t
  tabulated     piecewise log-log-linear interpolation of user samples

Structural checks cover: the lower bound phi(t) >= t together with the
monotonicity of eta (non-increasing on (0,1), non-decreasing on [1,oo));
a finite-sample proxy for the vanishing of t*eta'(t)*log(eta(t))/eta(t)
along the tail; and the sampled submultiplicativity constant lambda0
with eta(s*t) <= lambda0 * eta(s) * eta(t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._quad import integrate_log
from .errors import ArgumentError, ConfigError

KINDS = ("homogeneous", "linear", "log_model", "tabulated")

# Safety factor applied to the sampled submultiplicativity constant.
_LAMBDA0_SAFETY = 1.25


@dataclass(frozen=True)
class Nonlinearity:
    """A drift profile. Construct via make_nonlinearity."""

    kind: str
    c: float = 1.0
    lambda0: float = 1.0
    eps_floor: float = 1e-300
    log_t: Optional[np.ndarray] = field(default=None, repr=False)
    log_phi: Optional[np.ndarray] = field(default=None, repr=False)
    phi_at_zero: float = 0.0

    def phi(self, t):
        return eval_phi(self, t)

    def eta(self, t):
        return eval_eta(self, t)


@dataclass(frozen=True)
class RescaledNonlinearity:
    """A drift profile together with the scale R of its completion."""

    base: Nonlinearity
    R: float

    def phi_R(self, t):
        return eval_phi_R(self, t)

    def eta_R(self, t):
        return eval_eta_R(self, t)


def make_nonlinearity(kind, c=1.0, table_t=None, table_phi=None):
    """Build a drift profile of the given kind.

    For kind="tabulated" pass strictly increasing abscissae table_t >= 0
    and positive ordinates table_phi; a leading t=0 row supplies phi(0).
    Queries outside the tabulated range are hard errors, never silent
    extrapolation.
    """
    if kind not in KINDS:
        raise ArgumentError(f"unknown nonlinearity kind {kind!r}; expected one of {KINDS}")
    if kind == "tabulated":
        if table_t is None or table_phi is None:
            raise ArgumentError("tabulated kind needs table_t and table_phi")
        t = np.asarray(table_t, dtype=float).ravel()
        p = np.asarray(table_phi, dtype=float).ravel()
        if t.size != p.size or t.size < 2:
            raise ArgumentError("tabulated input needs >= 2 matching samples")
        phi_at_zero = 0.0
        if t[0] == 0.0:
            phi_at_zero = float(p[0])
            if phi_at_zero < 0:
                raise ArgumentError("phi(0) must be >= 0")
            t, p = t[1:], p[1:]
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            i = int(bad[0])
            raise ArgumentError(
                f"tabulated abscissae must increase strictly; "
                f"t[{i}]={t[i]!r} >= t[{i + 1}]={t[i + 1]!r}"
            )
        if np.any(t <= 0) or np.any(p <= 0):
            raise ArgumentError("tabulated samples need t > 0 and phi > 0 past the origin row")
        return Nonlinearity(
            kind=kind,
            c=float(c),
            log_t=np.log(t),
            log_phi=np.log(p),
            phi_at_zero=phi_at_zero,
        )
    if kind == "log_model" and c <= 0:
        raise ArgumentError(f"log_model needs c > 0, got {c}")
    return Nonlinearity(kind=kind, c=float(c))


def _as_positive_array(t, allow_zero=True):
    a = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0) or (not allow_zero and np.any(a == 0)):
        bound = ">= 0" if allow_zero else "> 0"
        raise ArgumentError(f"argument must be finite and {bound}")
    return a


def _phi_raw(nl, a):
    """phi on a pre-validated float array; hot-path helper, no arg checks."""
    if nl.kind == "homogeneous":
        return np.zeros_like(a)
    if nl.kind == "linear":
        return a.copy()
    if nl.kind == "log_model":
        # c*(|log t|+1)*t with the t=0 limit 0
        with np.errstate(divide="ignore"):
            lg = np.where(a > 0, np.abs(np.log(np.where(a > 0, a, 1.0))) + 1.0, 0.0)
        return nl.c * lg * a
    out = np.empty_like(a)
    zero = a == 0.0
    out[zero] = nl.phi_at_zero
    pos = ~zero
    if np.any(pos):
        la = np.log(a[pos])
        lo, hi = nl.log_t[0], nl.log_t[-1]
        if np.any(la < lo - 1e-12) or np.any(la > hi + 1e-12):
            raise ArgumentError(
                "tabulated phi queried outside its range "
                f"[{np.exp(lo):.6g}, {np.exp(hi):.6g}]; extrapolation refused"
            )
        out[pos] = np.exp(np.interp(la, nl.log_t, nl.log_phi))
    return out


def eval_phi(nl, t):
    """phi(t), vectorized; scalar in -> scalar out."""
    a = _as_positive_array(t)
    scalar = np.isscalar(t) or (hasattr(t, "ndim") and getattr(t, "ndim", 1) == 0)
    out = _phi_raw(nl, a)
    return float(out) if scalar else out


def eval_eta(nl, t):
    """eta(t) = phi(t)/t, vectorized, for t > 0."""
    a = _as_positive_array(t, allow_zero=False)
    scalar = np.isscalar(t) or (hasattr(t, "ndim") and getattr(t, "ndim", 1) == 0)
    a = np.maximum(a, nl.eps_floor)
    if nl.kind == "homogeneous":
        out = np.zeros_like(a)
    elif nl.kind == "linear":
        out = np.ones_like(a)
    elif nl.kind == "log_model":
        out = nl.c * (np.abs(np.log(a)) + 1.0)
    else:
        out = eval_phi(nl, a) / a
    return float(out) if scalar else out


def rescale(nl, R):
    """Attach the completion scale R in (0, 1]."""
    if not (0.0 < R <= 1.0) or not np.isfinite(R):
        raise ConfigError(f"completion scale must satisfy 0 < R <= 1, got {R}")
    return RescaledNonlinearity(base=nl, R=float(R))


def eval_phi_R(rnl, t):
    """Phi_R(t) = R*phi(t) + t, vectorized."""
    a = _as_positive_array(t)
    out = rnl.R * eval_phi(rnl.base, a) + a
    scalar = np.isscalar(t) or (hasattr(t, "ndim") and getattr(t, "ndim", 1) == 0)
    return float(out) if scalar else out


def eval_eta_R(rnl, t):
    """eta_R(t) = R*eta(t) + 1, vectorized, for t > 0."""
    a = _as_positive_array(t, allow_zero=False)
    out = rnl.R * eval_eta(rnl.base, a) + 1.0
    scalar = np.isscalar(t) or (hasattr(t, "ndim") and getattr(t, "ndim", 1) == 0)
    return float(out) if scalar else out


def eval_drift(rnl, t):
    """Pure rescaled drift R*phi(t): the PDE right-hand side at scale R.

    Distinct from eval_phi_R, whose +t completion belongs to the integral
    functionals and barrier denominators, never to the equation itself
    (a drift-free problem must stay drift-free after rescaling).
    """
    a = _as_positive_array(t)
    out = rnl.R * eval_phi(rnl.base, a)
    scalar = np.isscalar(t) or (hasattr(t, "ndim") and getattr(t, "ndim", 1) == 0)
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# structure report


@dataclass(frozen=True)
class StructureReport:
    kind: str
    drift_free: bool
    p1_lower_ok: Optional[bool]
    p1_monotone_ok: Optional[bool]
    p1_first_violation: Optional[tuple]
    p2_tail: Optional[list]
    p2_pass_proxy: Optional[bool]
    lambda0_sampled: Optional[float]
    lambda0_reported: Optional[float]
    passed: bool
    notes: tuple


def _default_grid(nl):
    lo, hi = 1e-8, 1e8
    if nl.kind == "tabulated":
        lo = max(lo, float(np.exp(nl.log_t[0])))
        hi = min(hi, float(np.exp(nl.log_t[-1])))
    return np.geomspace(lo, hi, 321)


def check_structure(nl, sample_grid=None):
    """Sampled verdicts on the structural hypotheses for phi.

    The lower bound and eta-monotonicity are checked on the grid; the
    tail condition is a finite-sample proxy (the report states the tail
    values, never just a bare boolean); lambda0 is the sampled
    submultiplicativity constant times a 1.25 safety factor.
    """
    notes = []
    if nl.kind == "homogeneous":
        return StructureReport(
            kind=nl.kind,
            drift_free=True,
            p1_lower_ok=None,
            p1_monotone_ok=None,
            p1_first_violation=None,
            p2_tail=None,
            p2_pass_proxy=None,
            lambda0_sampled=None,
            lambda0_reported=1.0,
            passed=True,
            notes=("drift-free profile: structural hypotheses are vacuous",),
        )

    grid = _default_grid(nl) if sample_grid is None else np.asarray(sample_grid, dtype=float)
    grid = np.sort(grid[grid > 0])
    phi = eval_phi(nl, grid)
    eta = eval_eta(nl, grid)

    # lower bound phi(t) >= t, up to roundoff
    low_bad = phi < grid * (1.0 - 1e-12)
    p1_lower_ok = not bool(np.any(low_bad))
    first_violation = None
    if not p1_lower_ok:
        i = int(np.nonzero(low_bad)[0][0])
        first_violation = (float(grid[i]), float(phi[i]))
        notes.append(f"phi(t) < t first at t={grid[i]:.6g}")

    # eta non-increasing below 1, non-decreasing above 1
    tol = 1e-10
    below = grid <= 1.0
    above = grid >= 1.0
    mono_ok = True
    if np.count_nonzero(below) >= 2:
        d = np.diff(eta[below])
        bad = d > tol * np.maximum(1.0, np.abs(eta[below][:-1]))
        if np.any(bad):
            mono_ok = False
            i = int(np.nonzero(bad)[0][0])
            tt = grid[below]
            if first_violation is None:
                first_violation = (float(tt[i]), float(tt[i + 1]))
            notes.append(f"eta increases on (0,1) between t={tt[i]:.6g} and t={tt[i + 1]:.6g}")
    if np.count_nonzero(above) >= 2:
        d = np.diff(eta[above])
        bad = d < -tol * np.maximum(1.0, np.abs(eta[above][:-1]))
        if np.any(bad):
            mono_ok = False
            i = int(np.nonzero(bad)[0][0])
            tt = grid[above]
            if first_violation is None:
                first_violation = (float(tt[i]), float(tt[i + 1]))
            notes.append(f"eta decreases on [1,oo) between t={tt[i]:.6g} and t={tt[i + 1]:.6g}")

    # tail proxy q(t) = t*eta'(t)*log(eta(t))/eta(t) on a log-spaced tail
    tail_hi = grid[-1]
    tail = np.geomspace(min(1e2, tail_hi / 2), tail_hi / 1.1, 25)
    k = 1.02
    p2_tail = None
    p2_pass = None
    try:
        e_mid = eval_eta(nl, tail)
        e_up = eval_eta(nl, tail * k)
        e_dn = eval_eta(nl, tail / k)
        deta = (e_up - e_dn) / (tail * (k - 1.0 / k))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(e_mid > 0, tail * deta * np.log(np.maximum(e_mid, 1e-300)) / e_mid, 0.0)
        q = np.abs(q)
        p2_tail = [(float(tt), float(qq)) for tt, qq in zip(tail, q)]
        half = q[q.size // 2 :]
        nonincreasing = bool(np.all(np.diff(half) <= 1e-9 + 1e-6 * np.abs(half[:-1])))
        p2_pass = bool((nonincreasing and q[-1] <= 0.8 * max(q[0], 1e-300)) or q[-1] <= 1e-6)
        if not p2_pass:
            notes.append(f"tail proxy did not decay: last value {q[-1]:.4g}")
    except ArgumentError:
        notes.append("tail proxy not computable on the available range")

    # submultiplicativity constant on a 50x50 log grid
    if nl.kind == "tabulated":
        glo = float(np.exp(nl.log_t[0]))
        ghi = float(np.exp(nl.log_t[-1]))
        pts = np.geomspace(np.sqrt(glo) * 1.0000001, np.sqrt(ghi) * 0.9999999, 50)
    else:
        pts = np.geomspace(1e-4, 1e4, 50)
    # t = 1 is the normalization point of eta and often the extremal pair
    pts = np.unique(np.append(pts, 1.0))
    s, t = np.meshgrid(pts, pts, indexing="ij")
    e_s = eval_eta(nl, pts)
    n = pts.size
    ratio = eval_eta(nl, (s * t).ravel()).reshape(n, n) / np.outer(e_s, e_s)
    lambda0_sampled = float(np.max(ratio))
    lambda0_reported = lambda0_sampled * _LAMBDA0_SAFETY

    passed = bool(p1_lower_ok and mono_ok and (p2_pass is not False) and np.isfinite(lambda0_reported))
    return StructureReport(
        kind=nl.kind,
        drift_free=False,
        p1_lower_ok=p1_lower_ok,
        p1_monotone_ok=mono_ok,
        p1_first_violation=first_violation,
        p2_tail=p2_tail,
        p2_pass_proxy=p2_pass,
        lambda0_sampled=lambda0_sampled,
        lambda0_reported=lambda0_reported,
        passed=passed,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# divergence classification for improper integrals of 1/phi


@dataclass(frozen=True)
class OsgoodReport:
    at_zero: str
    at_infinity: str
    zero_values: tuple
    infinity_values: tuple
    notes: tuple


def classify_improper(integrand, end):
    """Classify integral of `integrand` toward 0+ ("zero") or +oo ("inf").

    Truncation ladder with anchor 1: values I_k over widening windows.
    Verdicts: "diverges" when the per-rung increment is sustained (last
    increment >= 20% of the first, or the total exceeds 50 while still
    growing); "converges" when the increment has collapsed below 1e-9
    relative; "indeterminate" otherwise.  The raw ladder is returned so
    callers can report it instead of trusting a bare verdict.
    """
    if end == "zero":
        truncs = [10.0 ** (-2 * k) for k in range(1, 7)]
        windows = [(tr, 1.0) for tr in truncs]
    elif end == "inf":
        truncs = [10.0 ** (2 * k) for k in range(1, 7)]
        windows = [(1.0, tr) for tr in truncs]
    else:
        raise ArgumentError(f"end must be 'zero' or 'inf', got {end!r}")

    values = []
    try:
        for a, b in windows:
            values.append(integrate_log(integrand, a, b))
    except ArgumentError as exc:
        return "indeterminate", tuple(values), (f"ladder not evaluable: {exc}",)

    inc = np.diff(np.asarray(values))
    if np.any(inc < -1e-9 * max(values[-1], 1.0)):
        return "indeterminate", tuple(values), ("ladder not monotone",)
    first, last = float(inc[0]), float(inc[-1])
    total = float(values[-1])
    scale = max(abs(total), 1.0)
    if last <= 1e-9 * scale:
        return "converges", tuple(values), ()
    if (first > 0 and last >= 0.2 * first) or (total > 50.0 and last > 1e-9 * scale):
        return "diverges", tuple(values), ()
    return "indeterminate", tuple(values), ("increments neither sustained nor collapsed",)


def osgood_classify(nl):
    """Divergence verdicts for integral dt/phi(t) at 0 and at infinity."""
    if nl.kind == "homogeneous":
        return OsgoodReport(
            at_zero="diverges",
            at_infinity="diverges",
            zero_values=(),
            infinity_values=(),
            notes=("phi == 0: both integrals are infinite by convention",),
        )

    def integrand(t):
        return 1.0 / eval_phi(nl, t)

    v0, zero_values, n0 = classify_improper(integrand, "zero")
    vi, inf_values, ni = classify_improper(integrand, "inf")
    return OsgoodReport(
        at_zero=v0,
        at_infinity=vi,
        zero_values=zero_values,
        infinity_values=inf_values,
        notes=tuple(n0) + tuple(ni),
    )
