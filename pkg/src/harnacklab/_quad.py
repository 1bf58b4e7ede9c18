"""Quadrature helpers shared by the integral functionals.

Every integrand in this package has the shape t -> 1/(positive, smooth)
with at worst 1/t-type behavior near zero, so the substitution t = e^s
turns it into a bounded smooth integrand on a finite s-interval.  All
integrals are evaluated in that log coordinate.
"""

from __future__ import annotations

import math

from scipy.integrate import quad

from .errors import ArgumentError

ABS_TOL = 1e-11
REL_TOL = 1e-11

# QUADPACK gets unhappy on very long intervals; chunking keeps each call
# on a modest window while the summed tolerance stays far below 1e-10.
_MAX_CHUNK = 12.0


def integrate_log(f, a: float, b: float) -> float:
    """integral_a^b f(t) dt for 0 < a <= b via the t = e^s substitution.

    f must accept scalar floats and be smooth on [a, b].
    """
    if not (a > 0.0 and math.isfinite(a) and math.isfinite(b)):
        raise ArgumentError(f"integrate_log needs finite 0 < a <= b, got [{a}, {b}]")
    if b < a:
        raise ArgumentError(f"integrate_log needs a <= b, got [{a}, {b}]")
    if a == b:
        return 0.0
    la, lb = math.log(a), math.log(b)
    n_chunks = max(1, int(math.ceil((lb - la) / _MAX_CHUNK)))
    edges = [la + (lb - la) * k / n_chunks for k in range(n_chunks + 1)]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = quad(
            lambda s: f(math.exp(s)) * math.exp(s),
            lo,
            hi,
            epsabs=ABS_TOL,
            epsrel=REL_TOL,
            limit=200,
        )
        total += val
    return total
