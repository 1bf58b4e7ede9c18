"""Planar domains and the access geometry used by the boundary estimates.

Domains are described by a small closed set of kinds; every boundary is
a union of segment and circular-arc pieces, which keeps distances and
clipped boundary portions exact.  On top of that sit:

  * reifenberg_delta: how far a boundary patch is from a line, in
    normalized Hausdorff distance, minimized over lines through the
    base point, together with the two-sided separation check;
  * corkscrew: a deterministic interior point at comparable depth and
    distance inside a boundary ball;
  * harnack_chain: an explicit chain of overlapping balls of a common
    radius joining two interior points, with the a-priori length bound;
  * retracted_cap: the concrete bounded cap around a boundary point and
    its retractions by boundary distance;
  * lipschitz_to_delta / stretch_map: the flatness value of a Lipschitz
    graph and the vertical compression that flattens it.

Conventions: half_space is {y > 0}; a graph domain is {y > g(x)} over
the knot window; all containment tests are strict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, PreconditionError

TWO_PI = 2.0 * math.pi

KINDS = ("half_space", "lipschitz_graph", "cube", "cube_minus_ball", "annulus_sector")

# window half-width used when an unbounded boundary must be materialized
_UNBOUNDED_WINDOW = 64.0


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    lip: float = 0.0
    graph_x: tuple = ()
    graph_y: tuple = ()
    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    r_in: float = 1.0
    r_out: float = 2.0
    theta0: float = 0.0
    theta1: float = TWO_PI

    @property
    def L(self) -> float:
        """Access constant: max(lipschitz constant, 2)."""
        return max(self.lip, 2.0)


def half_space() -> DomainSpec:
    return DomainSpec(kind="half_space")


def lipschitz_graph(knots_x, knots_y) -> DomainSpec:
    x = np.asarray(knots_x, dtype=float)
    y = np.asarray(knots_y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ArgumentError("graph needs >= 2 matching knots")
    if np.any(np.diff(x) <= 0):
        raise ArgumentError("graph knots must increase strictly in x")
    slopes = np.diff(y) / np.diff(x)
    return DomainSpec(
        kind="lipschitz_graph",
        lip=float(np.max(np.abs(slopes))) if slopes.size else 0.0,
        graph_x=tuple(float(v) for v in x),
        graph_y=tuple(float(v) for v in y),
    )


def cube(lo=(0.0, 0.0), hi=(1.0, 1.0)) -> DomainSpec:
    if not (hi[0] > lo[0] and hi[1] > lo[1]):
        raise ArgumentError(f"degenerate box: lo={lo}, hi={hi}")
    return DomainSpec(kind="cube", lo=tuple(map(float, lo)), hi=tuple(map(float, hi)))


def cube_minus_ball(lo, hi, center, radius) -> DomainSpec:
    if radius <= 0:
        raise ArgumentError("ball radius must be positive")
    if not (hi[0] > lo[0] and hi[1] > lo[1]):
        raise ArgumentError(f"degenerate box: lo={lo}, hi={hi}")
    return DomainSpec(
        kind="cube_minus_ball",
        lo=tuple(map(float, lo)),
        hi=tuple(map(float, hi)),
        center=tuple(map(float, center)),
        radius=float(radius),
    )


def annulus_sector(center=(0.0, 0.0), r_in=1.0, r_out=2.0, theta0=0.0, theta1=TWO_PI) -> DomainSpec:
    if not (0 < r_in < r_out):
        raise ArgumentError(f"need 0 < r_in < r_out, got {r_in}, {r_out}")
    if not (theta0 < theta1 <= theta0 + TWO_PI):
        raise ArgumentError("need theta0 < theta1 <= theta0 + 2 pi")
    return DomainSpec(
        kind="annulus_sector",
        center=tuple(map(float, center)),
        r_in=float(r_in),
        r_out=float(r_out),
        theta0=float(theta0),
        theta1=float(theta1),
    )


# ---------------------------------------------------------------------------
# graph evaluation


def _graph_eval(dom, x):
    xs = np.asarray(dom.graph_x)
    xq = np.asarray(x, dtype=float)
    if np.any(xq < xs[0] - 1e-12) or np.any(xq > xs[-1] + 1e-12):
        raise ArgumentError(
            f"graph queried outside its knot window [{xs[0]}, {xs[-1]}]"
        )
    return np.interp(xq, xs, np.asarray(dom.graph_y))


# ---------------------------------------------------------------------------
# membership


def contains(dom, p) -> bool:
    """Strict interior membership."""
    x, y = float(p[0]), float(p[1])
    if dom.kind == "half_space":
        return y > 0.0
    if dom.kind == "lipschitz_graph":
        return y > float(_graph_eval(dom, x))
    if dom.kind == "cube":
        return dom.lo[0] < x < dom.hi[0] and dom.lo[1] < y < dom.hi[1]
    if dom.kind == "cube_minus_ball":
        inside_box = dom.lo[0] < x < dom.hi[0] and dom.lo[1] < y < dom.hi[1]
        dx, dy = x - dom.center[0], y - dom.center[1]
        return inside_box and math.hypot(dx, dy) > dom.radius
    if dom.kind == "annulus_sector":
        dx, dy = x - dom.center[0], y - dom.center[1]
        rr = math.hypot(dx, dy)
        if not (dom.r_in < rr < dom.r_out):
            return False
        if dom.theta1 - dom.theta0 >= TWO_PI - 1e-14:
            return True
        ang = math.atan2(dy, dx)
        rel = (ang - dom.theta0) % TWO_PI
        return 0.0 < rel < (dom.theta1 - dom.theta0)
    raise ArgumentError(f"unknown domain kind {dom.kind!r}")


def contains_many(dom, pts) -> np.ndarray:
    """Vectorized strict membership for an (N, 2) array."""
    p = np.asarray(pts, dtype=float)
    x, y = p[:, 0], p[:, 1]
    if dom.kind == "half_space":
        return y > 0.0
    if dom.kind == "lipschitz_graph":
        return y > _graph_eval(dom, x)
    if dom.kind == "cube":
        return (
            (x > dom.lo[0]) & (x < dom.hi[0]) & (y > dom.lo[1]) & (y < dom.hi[1])
        )
    if dom.kind == "cube_minus_ball":
        inside = (
            (x > dom.lo[0]) & (x < dom.hi[0]) & (y > dom.lo[1]) & (y < dom.hi[1])
        )
        rr = np.hypot(x - dom.center[0], y - dom.center[1])
        return inside & (rr > dom.radius)
    if dom.kind == "annulus_sector":
        dx, dy = x - dom.center[0], y - dom.center[1]
        rr = np.hypot(dx, dy)
        ok = (rr > dom.r_in) & (rr < dom.r_out)
        if dom.theta1 - dom.theta0 < TWO_PI - 1e-14:
            rel = (np.arctan2(dy, dx) - dom.theta0) % TWO_PI
            ok &= (rel > 0.0) & (rel < dom.theta1 - dom.theta0)
        return ok
    raise ArgumentError(f"unknown domain kind {dom.kind!r}")


# ---------------------------------------------------------------------------
# boundary pieces: ("seg", p0, p1) and ("arc", center, radius, th0, th1)


def _box_edges(lo, hi):
    c = [
        (lo[0], lo[1]),
        (hi[0], lo[1]),
        (hi[0], hi[1]),
        (lo[0], hi[1]),
    ]
    return [("seg", np.array(c[i]), np.array(c[(i + 1) % 4])) for i in range(4)]


def _seg_circle_roots(p0, p1, c, rad):
    """Parameters t in [0,1] where the segment meets the circle |q - c| = rad."""
    d = p1 - p0
    f = p0 - np.asarray(c, dtype=float)
    a = float(d @ d)
    if a == 0.0:
        return []
    b = 2.0 * float(f @ d)
    cc = float(f @ f) - rad * rad
    disc = b * b - 4 * a * cc
    if disc <= 0:
        return []
    sq = math.sqrt(disc)
    out = [t for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)) if 0.0 < t < 1.0]
    return sorted(out)


def _seg_clip_outside_circle(p0, p1, c, rad):
    """Subsegments of [p0, p1] lying outside the open disc."""
    ts = [0.0] + _seg_circle_roots(p0, p1, c, rad) + [1.0]
    out = []
    for a, b in zip(ts[:-1], ts[1:]):
        if b - a < 1e-14:
            continue
        mid = p0 + 0.5 * (a + b) * (p1 - p0)
        if math.hypot(mid[0] - c[0], mid[1] - c[1]) >= rad:
            out.append(("seg", p0 + a * (p1 - p0), p0 + b * (p1 - p0)))
    return out


def _arcs_inside_box(c, rad, lo, hi):
    """Arc pieces of the circle (c, rad) lying inside the closed box."""
    angles = []
    for _, p0, p1 in _box_edges(lo, hi):
        for t in _seg_circle_roots(p0, p1, np.asarray(c), rad):
            q = p0 + t * (p1 - p0)
            angles.append(math.atan2(q[1] - c[1], q[0] - c[0]) % TWO_PI)
    if not angles:
        mid = (c[0] + rad, c[1])
        if lo[0] <= mid[0] <= hi[0] and lo[1] <= mid[1] <= hi[1]:
            return [("arc", np.asarray(c, dtype=float), rad, 0.0, TWO_PI)]
        return []
    angles = sorted(set(angles))
    angles.append(angles[0] + TWO_PI)
    out = []
    for a, b in zip(angles[:-1], angles[1:]):
        if b - a < 1e-13:
            continue
        m = 0.5 * (a + b)
        q = (c[0] + rad * math.cos(m), c[1] + rad * math.sin(m))
        if lo[0] <= q[0] <= hi[0] and lo[1] <= q[1] <= hi[1]:
            out.append(("arc", np.asarray(c, dtype=float), rad, a, b))
    return out


def boundary_pieces(dom, clip_center=None, clip_radius=None):
    """Exact boundary decomposition; unbounded kinds need a clip window."""
    if dom.kind == "half_space":
        if clip_center is None:
            w = _UNBOUNDED_WINDOW
            return [("seg", np.array([-w, 0.0]), np.array([w, 0.0]))]
        cx = float(clip_center[0])
        r = float(clip_radius)
        return [("seg", np.array([cx - r, 0.0]), np.array([cx + r, 0.0]))]
    if dom.kind == "lipschitz_graph":
        xs = np.asarray(dom.graph_x)
        ys = np.asarray(dom.graph_y)
        return [
            ("seg", np.array([xs[i], ys[i]]), np.array([xs[i + 1], ys[i + 1]]))
            for i in range(xs.size - 1)
        ]
    if dom.kind == "cube":
        return _box_edges(dom.lo, dom.hi)
    if dom.kind == "cube_minus_ball":
        pieces = []
        for _, p0, p1 in _box_edges(dom.lo, dom.hi):
            pieces.extend(_seg_clip_outside_circle(p0, p1, dom.center, dom.radius))
        pieces.extend(_arcs_inside_box(dom.center, dom.radius, dom.lo, dom.hi))
        return pieces
    if dom.kind == "annulus_sector":
        c = np.asarray(dom.center, dtype=float)
        pieces = [
            ("arc", c, dom.r_in, dom.theta0, dom.theta1),
            ("arc", c, dom.r_out, dom.theta0, dom.theta1),
        ]
        if dom.theta1 - dom.theta0 < TWO_PI - 1e-14:
            for th in (dom.theta0, dom.theta1):
                u = np.array([math.cos(th), math.sin(th)])
                pieces.append(("seg", c + dom.r_in * u, c + dom.r_out * u))
        return pieces
    raise ArgumentError(f"unknown domain kind {dom.kind!r}")


def _dist_seg(p, p0, p1):
    d = p1 - p0
    L2 = float(d @ d)
    t = 0.0 if L2 == 0 else float(np.clip((p - p0) @ d / L2, 0.0, 1.0))
    q = p0 + t * d
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _dist_arc(p, c, rad, th0, th1):
    ang = math.atan2(p[1] - c[1], p[0] - c[0])
    rel = (ang - th0) % TWO_PI
    span = th1 - th0
    if rel <= span or span >= TWO_PI - 1e-14:
        return abs(math.hypot(p[0] - c[0], p[1] - c[1]) - rad)
    best = math.inf
    for th in (th0, th1):
        q = (c[0] + rad * math.cos(th), c[1] + rad * math.sin(th))
        best = min(best, math.hypot(p[0] - q[0], p[1] - q[1]))
    return best


def _dist_pieces(p, pieces):
    p = np.asarray(p, dtype=float)
    best = math.inf
    for piece in pieces:
        if piece[0] == "seg":
            best = min(best, _dist_seg(p, piece[1], piece[2]))
        else:
            best = min(best, _dist_arc(p, piece[1], piece[2], piece[3], piece[4]))
    return best


def dist_to_boundary(dom, p) -> float:
    """Euclidean distance from p to the boundary set (exact per piece)."""
    if dom.kind == "half_space":
        return abs(float(p[1]))
    return _dist_pieces(p, boundary_pieces(dom))


def dist_to_boundary_many(dom, pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    if dom.kind == "half_space":
        return np.abs(p[:, 1])
    pieces = boundary_pieces(dom)
    out = np.full(p.shape[0], np.inf)
    for piece in pieces:
        if piece[0] == "seg":
            p0, p1 = piece[1], piece[2]
            d = p1 - p0
            L2 = float(d @ d)
            if L2 == 0:
                q = p0[None, :]
            else:
                t = np.clip(((p - p0) @ d) / L2, 0.0, 1.0)
                q = p0[None, :] + t[:, None] * d[None, :]
            out = np.minimum(out, np.hypot(p[:, 0] - q[:, 0], p[:, 1] - q[:, 1]))
        else:
            _, c, rad, th0, th1 = piece
            dx, dy = p[:, 0] - c[0], p[:, 1] - c[1]
            ang = np.arctan2(dy, dx)
            rel = (ang - th0) % TWO_PI
            span = th1 - th0
            on_arc = (rel <= span) | (span >= TWO_PI - 1e-14)
            radial = np.abs(np.hypot(dx, dy) - rad)
            ends = np.full(p.shape[0], np.inf)
            for th in (th0, th1):
                q = (c[0] + rad * math.cos(th), c[1] + rad * math.sin(th))
                ends = np.minimum(ends, np.hypot(p[:, 0] - q[0], p[:, 1] - q[1]))
            out = np.minimum(out, np.where(on_arc, radial, ends))
    return out


def boundary_samples(dom, spacing, center=None, radius=None) -> np.ndarray:
    """Arc-length-uniform samples of the boundary, optionally limited to a ball."""
    if spacing <= 0:
        raise ArgumentError("spacing must be positive")
    if dom.kind == "half_space" and center is None:
        raise ArgumentError("half_space boundary is unbounded; pass center and radius")
    pieces = boundary_pieces(dom, clip_center=center, clip_radius=radius)
    chunks = []
    for piece in pieces:
        if piece[0] == "seg":
            p0, p1 = piece[1], piece[2]
            length = math.hypot(*(p1 - p0))
            n = max(2, int(math.ceil(length / spacing)) + 1)
            t = np.linspace(0.0, 1.0, n)
            chunks.append(p0[None, :] + t[:, None] * (p1 - p0)[None, :])
        else:
            _, c, rad, th0, th1 = piece
            length = rad * (th1 - th0)
            n = max(2, int(math.ceil(length / spacing)) + 1)
            th = np.linspace(th0, th1, n)
            chunks.append(
                np.stack([c[0] + rad * np.cos(th), c[1] + rad * np.sin(th)], axis=1)
            )
    pts = np.concatenate(chunks, axis=0)
    if center is not None and radius is not None:
        keep = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) <= radius
        pts = pts[keep]
    return pts


def hausdorff_distance(A, B) -> float:
    """Symmetric Hausdorff distance between two planar point sets."""
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    if A.size == 0 or B.size == 0:
        raise ArgumentError("hausdorff_distance needs nonempty point sets")
    ta, tb = cKDTree(A), cKDTree(B)
    d_ab = tb.query(A)[0].max()
    d_ba = ta.query(B)[0].max()
    return float(max(d_ab, d_ba))


# ---------------------------------------------------------------------------
# flatness


@dataclass(frozen=True)
class ReifenbergReport:
    delta: float
    theta: float
    separation_ok: Optional[bool]
    n_boundary_samples: int
    notes: tuple


def _flatness_objective(rel, tree, r, n_chord=513):
    offs = np.linspace(-r, r, n_chord)

    def value(theta):
        ct, st = math.cos(theta), math.sin(theta)
        n_hat = np.array([-st, ct])
        h1 = float(np.max(np.abs(rel @ n_hat))) if rel.size else 0.0
        chord = np.stack([offs * ct, offs * st], axis=1)
        h2 = float(np.max(tree.query(chord)[0]))
        return max(h1, h2) / r

    return value


def reifenberg_delta(dom, w, r, n_angles=720, spacing=None) -> ReifenbergReport:
    """Normalized distance of the boundary patch B(w, r) from a line through w.

    The patch-to-line and line-to-patch deviations are both measured on
    samples with spacing r/512 by default (the returned delta carries
    that resolution); the direction search runs a coarse sweep plus a
    golden-section refinement to 1e-6 radians.  The report also states
    whether interior points at depth >= 2 delta r all lie on one side of
    the optimal line.
    """
    w = np.asarray(w, dtype=float)
    if r <= 0:
        raise ArgumentError("r must be positive")
    if dist_to_boundary(dom, w) > 1e-9 * r:
        raise ArgumentError("w must lie on the boundary")
    if spacing is None:
        spacing = r / 512.0
    pts = boundary_samples(dom, spacing, center=w, radius=r)
    if pts.shape[0] < 2:
        raise ArgumentError("no boundary arc found inside B(w, r)")
    rel = pts - w[None, :]
    tree = cKDTree(rel)
    f = _flatness_objective(rel, tree, r)

    thetas = np.linspace(0.0, math.pi, n_angles, endpoint=False)
    vals = np.array([f(t) for t in thetas])
    i = int(np.argmin(vals))
    lo = thetas[i] - math.pi / n_angles
    hi = thetas[i] + math.pi / n_angles

    # golden-section refinement on the bracketing basin
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = f(c1), f(c2)
    while b - a > 1e-6:
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = f(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = f(c2)
    theta = 0.5 * (a + b)
    delta = f(theta)

    notes = [f"boundary sampling spacing {spacing:.3g}"]
    separation_ok = None
    n_hat = np.array([-math.sin(theta), math.cos(theta)])
    step = r / 40.0
    g = np.arange(-r, r + step / 2, step)
    gx, gy = np.meshgrid(w[0] + g, w[1] + g, indexing="ij")
    cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = contains_many(dom, cand)
    cand = cand[inside]
    if cand.size:
        in_ball = np.hypot(cand[:, 0] - w[0], cand[:, 1] - w[1]) < r
        cand = cand[in_ball]
    if cand.size:
        deep = dist_to_boundary_many(dom, cand) >= 2.0 * delta * r
        cand = cand[deep]
    if cand.size:
        signs = (cand - w[None, :]) @ n_hat
        separation_ok = bool(np.all(signs > 0) or np.all(signs < 0))
    else:
        separation_ok = True
        notes.append("no interior sample at the required depth; separation vacuous")
    return ReifenbergReport(
        delta=float(delta),
        theta=float(theta),
        separation_ok=separation_ok,
        n_boundary_samples=int(pts.shape[0]),
        notes=tuple(notes),
    )


def lipschitz_to_delta(l) -> float:
    """Flatness value of an l-Lipschitz graph: l / sqrt(l^2 + 1), for l < 1/8."""
    if not (0.0 <= l < 0.125):
        raise ArgumentError(f"formula is stated for 0 <= l < 1/8, got {l}")
    return l / math.sqrt(l * l + 1.0)


# ---------------------------------------------------------------------------
# corkscrew points


def inward_normal(dom, w) -> np.ndarray:
    """Unit inward direction at a boundary point (vertical for graph kinds)."""
    w = np.asarray(w, dtype=float)
    if dom.kind in ("half_space", "lipschitz_graph"):
        return np.array([0.0, 1.0])
    if dom.kind in ("cube", "cube_minus_ball"):
        if dom.kind == "cube_minus_ball":
            rr = math.hypot(w[0] - dom.center[0], w[1] - dom.center[1])
            if abs(rr - dom.radius) < 1e-9:
                v = (w - np.asarray(dom.center)) / rr
                return v
        lo, hi = dom.lo, dom.hi
        n = np.array([0.0, 0.0])
        if abs(w[0] - lo[0]) < 1e-9:
            n[0] += 1.0
        if abs(w[0] - hi[0]) < 1e-9:
            n[0] -= 1.0
        if abs(w[1] - lo[1]) < 1e-9:
            n[1] += 1.0
        if abs(w[1] - hi[1]) < 1e-9:
            n[1] -= 1.0
        nn = math.hypot(n[0], n[1])
        if nn == 0:
            raise ArgumentError("w is not on a box face")
        return n / nn
    if dom.kind == "annulus_sector":
        rr = math.hypot(w[0] - dom.center[0], w[1] - dom.center[1])
        v = (w - np.asarray(dom.center)) / rr
        if abs(rr - dom.r_in) < 1e-9:
            return v
        if abs(rr - dom.r_out) < 1e-9:
            return -v
        raise ArgumentError("w is not on an annulus circle")
    raise ArgumentError(f"unknown domain kind {dom.kind!r}")


def check_corkscrew(dom, w, r, a, L=None, tol=1e-12) -> bool:
    """Non-strict corkscrew inequalities: |a-w| <= r and d(a) >= r/L.

    At L = 2 the pinned mid-radius construction attains equality in the
    depth bound, so the check is closed with a tiny tolerance.
    """
    L = dom.L if L is None else L
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    gap = math.hypot(*(a - w))
    if not (gap <= r * (1 + tol)):
        return False
    return dist_to_boundary(dom, a) >= (r / L) * (1 - tol) and contains(dom, a)


def corkscrew(dom, w, r) -> np.ndarray:
    """Deterministic interior point at depth ~ r/2 inside B(w, r).

    Marches from w along the inward direction (vertical for graph
    kinds); if the half-radius point fails the depth check, a short
    documented ladder of fractions is tried before failing.
    """
    w = np.asarray(w, dtype=float)
    if r <= 0:
        raise ArgumentError("r must be positive")
    if dist_to_boundary(dom, w) > 1e-9 * max(r, 1.0):
        raise ArgumentError("w must lie on the boundary")
    n_hat = inward_normal(dom, w)
    for t in (0.5, 0.55, 0.6, 0.65, 0.7, 0.45):
        a = w + t * r * n_hat
        if check_corkscrew(dom, w, r, a):
            return a
    raise PreconditionError(
        f"no corkscrew point found at {w} for r={r}; boundary too rough at this scale"
    )


# ---------------------------------------------------------------------------
# ball chains


@dataclass(frozen=True)
class BallChain:
    centers: np.ndarray
    radius: float
    n_bound: int  # a-priori bound 1 + ceil(16 L), a function of L only

    @property
    def n(self) -> int:
        return int(self.centers.shape[0])


# documented preconditions: interior depth >= scale * _CHAIN_DEPTH and
# separation <= 4 * L * scale
_CHAIN_DEPTH = 0.5


def _walk_polyline(poly, step):
    """Points along a polyline at arc-length intervals `step`, both ends kept."""
    pts = [np.asarray(poly[0], dtype=float)]
    carry = 0.0
    for p0, p1 in zip(poly[:-1], poly[1:]):
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        seg = math.hypot(*(p1 - p0))
        if seg == 0:
            continue
        u = (p1 - p0) / seg
        s = step - carry
        while s < seg:
            pts.append(p0 + s * u)
            s += step
        carry = seg - (s - step)
    end = np.asarray(poly[-1], dtype=float)
    if math.hypot(*(pts[-1] - end)) > 1e-12 * max(1.0, step):
        pts.append(end)
    return np.asarray(pts)


def check_chain(dom, chain) -> tuple[bool, Optional[str]]:
    """Re-verify the chain predicates on a finished chain."""
    c = chain.centers
    rho = chain.radius
    tol = 1e-12
    for j in range(c.shape[0]):
        if not contains(dom, c[j]):
            return False, f"center {j} not interior"
        if dist_to_boundary(dom, c[j]) < 2.0 * rho * (1 - tol):
            return False, f"doubled ball {j} leaves the domain"
    gaps = np.hypot(*np.diff(c, axis=0).T)
    if np.any(gaps >= 2.0 * rho * (1 - 1e-12)):
        j = int(np.argmax(gaps))
        return False, f"balls {j} and {j + 1} do not intersect"
    return True, None


def harnack_chain(dom, x, y, scale) -> BallChain:
    """Chain of overlapping balls of one radius joining x to y.

    Preconditions (documented): both endpoints at depth >= scale/2 and
    |x - y| <= 4 L scale.  The common radius is min(d(x), d(y), scale)/2
    and centers are spaced one radius apart along a straight or lifted
    path, so consecutive balls overlap and doubled balls stay inside.
    The a-priori length bound 1 + ceil(16 L) depends on L alone.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if scale <= 0:
        raise ArgumentError("scale must be positive")
    dx_ = dist_to_boundary(dom, x)
    dy_ = dist_to_boundary(dom, y)
    if not (contains(dom, x) and contains(dom, y)):
        raise PreconditionError("chain endpoints must be interior")
    if min(dx_, dy_) < scale * _CHAIN_DEPTH * (1 - 1e-12):
        raise PreconditionError(
            f"endpoint depth {min(dx_, dy_):.6g} below scale/2 = {scale * _CHAIN_DEPTH:.6g}"
        )
    L = dom.L
    sep = math.hypot(*(x - y))
    if sep > 4.0 * L * scale * (1 + 1e-12):
        raise PreconditionError(f"|x - y| = {sep:.6g} exceeds the 4 L scale budget")
    rho = min(dx_, dy_, scale) / 2.0
    n_bound = 1 + int(math.ceil(16.0 * L))
    if sep <= 1e-15:
        chain = BallChain(centers=np.array([x]), radius=rho, n_bound=n_bound)
        return chain

    candidates = [[x, y]]
    apex_base = max(x[1], y[1])
    for lift in (0.5, 1.0, 2.0, 4.0):
        a = apex_base + lift * scale
        candidates.append([x, np.array([x[0], a]), np.array([y[0], a]), y])

    for poly in candidates:
        centers = _walk_polyline(poly, rho)
        chain = BallChain(centers=centers, radius=rho, n_bound=n_bound)
        ok, _ = check_chain(dom, chain)
        if ok:
            return chain
    raise PreconditionError(
        f"no admissible chain from {x} to {y} at scale {scale}; "
        "the domain pinches below the requested depth"
    )


# ---------------------------------------------------------------------------
# caps and retractions

_CAP_EPS = 0.25
_CAP_GAMMA_RADIUS = 2.0


def _clip_seg_to_disc(p0, p1, c, rad):
    ts = [0.0] + _seg_circle_roots(p0, p1, np.asarray(c), rad) + [1.0]
    out = []
    for a, b in zip(ts[:-1], ts[1:]):
        if b - a < 1e-14:
            continue
        mid = p0 + 0.5 * (a + b) * (p1 - p0)
        if math.hypot(mid[0] - c[0], mid[1] - c[1]) <= rad:
            out.append(("seg", p0 + a * (p1 - p0), p0 + b * (p1 - p0)))
    return out


def _clip_arc_to_disc(arc, c2, rad2):
    _, c, rad, th0, th1 = arc
    d = math.hypot(c[0] - c2[0], c[1] - c2[1])
    if d < 1e-15:
        return [arc] if rad <= rad2 else []
    # two-circle intersection on the arc's circle
    cosb = (d * d + rad * rad - rad2 * rad2) / (2.0 * d * rad)
    base = math.atan2(c2[1] - c[1], c2[0] - c[0])
    if cosb > 1.0:
        return []  # entirely outside
    if cosb < -1.0:
        return [arc]  # entirely inside
    beta = math.acos(cosb)
    cuts = sorted({(base - beta) % TWO_PI, (base + beta) % TWO_PI})
    # break [th0, th1] at the cuts and keep sub-arcs inside the disc
    brk = [th0]
    for cut in cuts:
        k = cut + TWO_PI * math.floor((th0 - cut) / TWO_PI)
        while k < th1:
            if k > th0:
                brk.append(k)
            k += TWO_PI
    brk.append(th1)
    brk = sorted(set(brk))
    out = []
    for a, b in zip(brk[:-1], brk[1:]):
        if b - a < 1e-13:
            continue
        m = 0.5 * (a + b)
        q = (c[0] + rad * math.cos(m), c[1] + rad * math.sin(m))
        if math.hypot(q[0] - c2[0], q[1] - c2[1]) <= rad2:
            out.append(("arc", c, rad, a, b))
    return out


@dataclass(frozen=True)
class CapRegion:
    """The bounded cap around the boundary point 0 and its retractions.

    cap = dom intersect B(0, 2.25); gamma = boundary portion inside
    B(0, 2); the s-retraction keeps cap points at distance >= s from
    gamma.  s_tilde is the admissible retraction range for the concrete
    cap (r0' = 2, L' = max(L, 2)).
    """

    dom: DomainSpec
    s: float
    gamma_pieces: tuple = field(repr=False)
    s_tilde: float = 0.5

    def dist_gamma(self, p) -> float:
        return _dist_pieces(np.asarray(p, dtype=float), self.gamma_pieces)

    def dist_gamma_many(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return np.array([_dist_pieces(q, self.gamma_pieces) for q in p])

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        if math.hypot(p[0], p[1]) >= _CAP_GAMMA_RADIUS + _CAP_EPS:
            return False
        if not contains(self.dom, p):
            return False
        return self.dist_gamma(p) >= self.s


def retracted_cap(dom, s) -> CapRegion:
    """Cap around 0 retracted by distance s from its boundary portion."""
    if s < 0:
        raise ArgumentError("retraction distance must be >= 0")
    if dist_to_boundary(dom, (0.0, 0.0)) > 1e-9:
        raise ArgumentError("caps are anchored at the boundary point 0")
    pieces = boundary_pieces(
        dom, clip_center=(0.0, 0.0), clip_radius=_CAP_GAMMA_RADIUS + _CAP_EPS
    )
    clipped = []
    for piece in pieces:
        if piece[0] == "seg":
            clipped.extend(
                _clip_seg_to_disc(piece[1], piece[2], (0.0, 0.0), _CAP_GAMMA_RADIUS)
            )
        else:
            clipped.extend(_clip_arc_to_disc(piece, (0.0, 0.0), _CAP_GAMMA_RADIUS))
    if not clipped:
        raise ArgumentError("no boundary portion inside the gamma ball")
    s_tilde = _CAP_GAMMA_RADIUS / (2.0 * max(dom.L, 2.0))
    return CapRegion(dom=dom, s=float(s), gamma_pieces=tuple(clipped), s_tilde=s_tilde)


def retract_distance_constant(dom, s, grid_step=None) -> dict:
    """Sampled constant C with d(x, retraction by 2s) <= C s on the s-retraction.

    Grid-sampled on the cap; the result dict states the resolution used.
    """
    if s <= 0:
        raise ArgumentError("s must be positive")
    if grid_step is None:
        grid_step = min(s / 8.0, 0.05)
    cap_s = retracted_cap(dom, s)
    cap_2s = retracted_cap(dom, 2.0 * s)
    r_out = _CAP_GAMMA_RADIUS + _CAP_EPS
    g = np.arange(-r_out, r_out + grid_step / 2, grid_step)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = contains_many(dom, pts)
    pts = pts[inside]
    rr = np.hypot(pts[:, 0], pts[:, 1])
    pts = pts[rr < r_out]
    dg = cap_s.dist_gamma_many(pts)
    in_s = dg >= s
    in_2s = dg >= 2.0 * s
    P_s = pts[in_s]
    P_2s = pts[in_2s]
    if P_s.shape[0] == 0 or P_2s.shape[0] == 0:
        raise PreconditionError("retraction is empty at this s; reduce s")
    tree = cKDTree(P_2s)
    dmax = float(tree.query(P_s)[0].max())
    return {
        "C": dmax / s,
        "n_retract_s": int(P_s.shape[0]),
        "n_retract_2s": int(P_2s.shape[0]),
        "grid_step": grid_step,
        "s": s,
    }


# ---------------------------------------------------------------------------
# flattening map


@dataclass(frozen=True)
class StretchMap:
    """Vertical compression flattening an l-Lipschitz graph to slope `target`.

    forward(x, y) = (x, y / factor) with factor = l / target >= 1.  A
    solution carried through the map stays uniformly elliptic with the
    multipliers below: lambda -> lambda * mult[0], Lambda -> Lambda * mult[1].
    """

    factor: float
    lip_in: float
    lip_out: float

    @property
    def mult(self) -> tuple:
        k = self.factor
        return (min(1.0, 1.0 / (k * k)), max(1.0, 1.0 / (k * k)))

    def forward(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        out = p.copy().reshape(-1, 2)
        out[:, 1] /= self.factor
        return out.reshape(p.shape)

    def inverse(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        out = p.copy().reshape(-1, 2)
        out[:, 1] *= self.factor
        return out.reshape(p.shape)

    def transform_graph(self, dom) -> DomainSpec:
        if dom.kind != "lipschitz_graph":
            raise ArgumentError("only graph domains can be flattened")
        ys = np.asarray(dom.graph_y) / self.factor
        return lipschitz_graph(dom.graph_x, ys)


def stretch_map(l, target) -> StretchMap:
    if l <= 0 or target <= 0:
        raise ArgumentError("need l > 0 and target > 0")
    if target > l:
        raise ArgumentError("stretch only flattens: need target <= l")
    return StretchMap(factor=l / target, lip_in=float(l), lip_out=float(target))
