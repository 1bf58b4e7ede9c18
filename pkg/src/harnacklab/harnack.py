"""Integral functionals measuring oscillation against the drift profile.

The central quantity is

    J(m, M; rho) = integral_m^M dt / (rho^2 phi(t/rho) + t),

whose value is what the interior estimates actually bound.  Two
companion forms appear after normalizing to unit scale:

    J_resc(m, M) = integral_m^M dt / (r^alpha Phi_R(t) + t),
    J_cap(m, M)  = integral_m^M dt / Phi_R(t),

with Phi_R(t) = R phi(t) + t.  The exact change of variables s = R t
identifies the original functional at scale rho = r R with the rescaled
one; scaling_identity_residual measures how well the two independently
computed routes agree.

All integrals run in log coordinates (see _quad).  When an endpoint
makes the integral infinite the functions return the Unbounded sentinel
instead of a float; it carries a reason and compares greater than every
float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from ._quad import integrate_log
from .errors import ArgumentError, BracketFailure, ConvergenceFailure
from .nonlinearity import eval_phi, eval_phi_R, rescale


class Unbounded:
    """Tagged +infinity for diverging integrals.

    Compares greater than every float and equal to other Unbounded
    instances; never silently converts to a float.
    """

    __slots__ = ("reason",)

    def __init__(self, reason: str = ""):
        self.reason = reason

    def __repr__(self):
        return f"Unbounded({self.reason!r})"

    def __eq__(self, other):
        return isinstance(other, Unbounded)

    def __hash__(self):
        return hash("Unbounded")

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return isinstance(other, Unbounded)

    def __gt__(self, other):
        return not isinstance(other, Unbounded)

    def __ge__(self, other):
        return True

    def __float__(self):
        raise ArgumentError(f"Unbounded integral has no float value ({self.reason})")


IntegralValue = Union[float, Unbounded]


@dataclass(frozen=True)
class HarnackCertificate:
    """A computed functional value with the budget it was tested against."""

    m: float
    M: float
    r: float
    R: float
    alpha: float
    value: IntegralValue
    budget: Optional[float] = None
    passed: Optional[bool] = None


def _check_window(m, M):
    if not (np.isfinite(m) and np.isfinite(M)) or m < 0 or M < m:
        raise ArgumentError(f"need finite 0 <= m <= M, got m={m}, M={M}")


def _lower_ladder_integral(f, m, M, what):
    """integral_0^M f dt via a truncation ladder; Unbounded when divergent."""
    t_ref = min(M, 1.0)
    values = []
    try:
        base = integrate_log(f, t_ref * 1e-2, M)
        values.append(base)
        for k in range(2, 8):
            values.append(values[-1] + integrate_log(f, t_ref * 10.0 ** (-2 * k), t_ref * 10.0 ** (-2 * (k - 1))))
    except ArgumentError as exc:
        raise ArgumentError(f"{what}: lower endpoint 0 not probeable ({exc})") from exc
    inc = np.diff(np.asarray(values))
    if inc[-1] <= 1e-10 * max(values[-1], 1.0):
        return float(values[-1])
    return Unbounded(f"{what} diverges at the lower endpoint 0; ladder {[round(v, 6) for v in values]}")


def harnack_integral_original(m, M, rho, nl) -> IntegralValue:
    """integral_m^M dt / (rho^2 phi(t/rho) + t) for 0 < rho <= 1."""
    _check_window(m, M)
    if not (0 < rho <= 1):
        raise ArgumentError(f"need 0 < rho <= 1, got rho={rho}")
    if m == M:
        return 0.0

    def f(t):
        return 1.0 / (rho * rho * eval_phi(nl, t / rho) + t)

    if m == 0.0:
        return _lower_ladder_integral(f, m, M, "original functional")
    return integrate_log(f, m, M)


def harnack_integral_rescaled(m, M, r, R, alpha, nl) -> IntegralValue:
    """integral_m^M dt / (r^alpha Phi_R(t) + t)."""
    _check_window(m, M)
    if not (0 < r <= 1):
        raise ArgumentError(f"need 0 < r <= 1, got r={r}")
    if alpha < 0:
        raise ArgumentError(f"need alpha >= 0, got {alpha}")
    if m == M:
        return 0.0
    rnl = rescale(nl, R)
    ra = r**alpha

    def f(t):
        return 1.0 / (ra * eval_phi_R(rnl, t) + t)

    if m == 0.0:
        return _lower_ladder_integral(f, m, M, "rescaled functional")
    return integrate_log(f, m, M)


def carleson_integral(m, M, R, nl) -> IntegralValue:
    """integral_m^M dt / Phi_R(t), the form used by boundary certificates."""
    _check_window(m, M)
    if m == M:
        return 0.0
    rnl = rescale(nl, R)

    def f(t):
        return 1.0 / eval_phi_R(rnl, t)

    if m == 0.0:
        return _lower_ladder_integral(f, m, M, "boundary functional")
    return integrate_log(f, m, M)


def scaling_identity_residual(m, M, r, R, nl) -> float:
    """Relative defect between the two routes related by s = R t.

    Route 1: original functional over [R m, R M] at rho = r R.
    Route 2: integral_m^M dt / (R r^2 phi(t/r) + t), computed directly.
    The change of variables makes these equal exactly; the residual is
    pure quadrature error.
    """
    _check_window(m, M)
    if m == 0:
        raise ArgumentError("scaling residual needs m > 0")
    if not (0 < r <= 1 and 0 < R <= 1):
        raise ArgumentError(f"need r, R in (0, 1], got r={r}, R={R}")
    lhs = harnack_integral_original(R * m, R * M, r * R, nl)

    def f(t):
        return 1.0 / (R * r * r * eval_phi(nl, t / r) + t)

    rhs = integrate_log(f, m, M)
    scale = max(abs(rhs), 1e-30)
    return abs(lhs - rhs) / scale


def invert_upper(a, budget, R, nl) -> IntegralValue:
    """Least M >= a with integral_a^M dt/(R^2 phi(t/R) + t) = budget.

    Returns Unbounded when the integral converges below the budget as
    M -> oo (or when the solution exceeds the float range).
    """
    if not (a > 0 and np.isfinite(a)):
        raise ArgumentError(f"need a > 0 finite, got {a}")
    if budget < 0:
        raise ArgumentError(f"need budget >= 0, got {budget}")
    if budget == 0.0:
        return float(a)
    if not (0 < R <= 1):
        raise ArgumentError(f"need 0 < R <= 1, got R={R}")

    def f(t):
        return 1.0 / (R * R * eval_phi(nl, t / R) + t)

    log_a = math.log(a)
    log_cap = 700.0  # stay clear of float overflow in M
    total = 0.0
    log_lo = log_a
    step = 1.0
    while True:
        log_hi = min(log_lo + step, log_cap)
        piece = integrate_log(f, math.exp(log_lo), math.exp(log_hi))
        if total + piece >= budget:
            # solution in (log_lo, log_hi]
            def g(logM):
                return total + integrate_log(f, math.exp(log_lo), math.exp(logM)) - budget

            sol = brentq(g, log_lo, log_hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
            M = math.exp(sol)
            achieved = integrate_log(f, a, M)
            if abs(achieved - budget) > 1e-8 * max(budget, 1.0):
                raise ConvergenceFailure(
                    f"inverse solve landed at {achieved}, target {budget}",
                    residual_history=[achieved - budget],
                )
            return M
        total += piece
        log_lo = log_hi
        if piece < 1e-12:
            return Unbounded(
                f"functional converges to ~{total:.6g} < budget {budget:.6g} as M grows"
            )
        if log_lo >= log_cap:
            return Unbounded("solution exceeds the representable float range (log M > 700)")
        step *= 2.0


def px_carleson_bound(uA, R, C) -> float:
    """C * max(uA^(1 + C R), uA^(1/(1 + C R)))."""
    if uA < 0 or C <= 0 or not (0 <= R <= 1):
        raise ArgumentError(f"need uA >= 0, C > 0, R in [0,1]; got {uA}, {C}, {R}")
    e = 1.0 + C * R
    return C * max(uA**e, uA ** (1.0 / e))


def px_bharnack_bound(uA, R, C) -> float:
    """C * max(uA^(C R), uA^(-C R))."""
    if uA <= 0 or C <= 0 or not (0 <= R <= 1):
        raise ArgumentError(f"need uA > 0, C > 0, R in [0,1]; got {uA}, {C}, {R}")
    e = C * R
    return C * max(uA**e, uA ** (-e))


def certify(m, M, r, R, alpha, nl, budget) -> HarnackCertificate:
    """Evaluate the rescaled functional and compare against a budget."""
    value = harnack_integral_rescaled(m, M, r, R, alpha, nl)
    passed = bool(value <= budget) if not isinstance(value, Unbounded) else False
    return HarnackCertificate(
        m=float(m), M=float(M), r=float(r), R=float(R), alpha=float(alpha),
        value=value, budget=float(budget), passed=passed,
    )
