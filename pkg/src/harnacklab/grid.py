"""Masked 2D grids: construction, boundary data, interpolation, file IO.

Nodes live at (x0 + i*h, y0 + j*h) with values stored row-major as
values[j, i].  The mask classifies every node as interior (unknown),
boundary (Dirichlet data), or exterior (never read by any stencil).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, ConfigError
from .geometry import DomainSpec, contains_many

MASK_INTERIOR = 0
MASK_BOUNDARY = 1
MASK_EXTERIOR = 2

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class GridField:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float]
    values: np.ndarray  # (ny, nx) float64
    mask: np.ndarray    # (ny, nx) uint8

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Full coordinate arrays, shape (ny, nx) each."""
        return np.meshgrid(self.xs, self.ys)

    @property
    def boundary_data(self) -> np.ndarray:
        return self.values[self.mask == MASK_BOUNDARY]

    def copy(self) -> "GridField":
        return GridField(self.nx, self.ny, self.h, self.origin,
                         self.values.copy(), self.mask.copy())


def _axis_count(lo: float, hi: float, h: float) -> int:
    n = (hi - lo) / h
    nr = round(n)
    if hi <= lo or abs(n - nr) > 1e-9 or nr < 2:
        raise ConfigError(f"window [{lo}, {hi}] not an h={h} lattice span")
    return nr + 1


def _classify(inside: np.ndarray) -> np.ndarray:
    """Mask from a node-wise candidacy array.

    Interior nodes are the candidates; any non-candidate 8-adjacent to an
    interior node becomes boundary so every interior stencil neighbor is
    readable.  The window edge is never a candidate, hence always boundary
    or exterior.
    """
    inside = inside.copy()
    inside[0, :] = inside[-1, :] = False
    inside[:, 0] = inside[:, -1] = False
    mask = np.full(inside.shape, MASK_EXTERIOR, dtype=np.uint8)
    mask[inside] = MASK_INTERIOR
    ring = ndimage.binary_dilation(inside, structure=_EIGHT) & ~inside
    mask[ring] = MASK_BOUNDARY
    return mask


def make_rect_grid(x0: float, x1: float, y0: float, y1: float, h: float) -> GridField:
    """Full rectangle: one-node boundary frame, no exterior."""
    nx = _axis_count(x0, x1, h)
    ny = _axis_count(y0, y1, h)
    inside = np.ones((ny, nx), dtype=bool)
    mask = _classify(inside)
    return GridField(nx, ny, float(h), (float(x0), float(y0)),
                     np.zeros((ny, nx)), mask)


def make_domain_grid(dom: DomainSpec, window: tuple[float, float, float, float],
                     h: float) -> GridField:
    """Domain-intersect-window grid; boundary nodes may sit just outside
    the domain (graph kinds), so Dirichlet data callables must be defined
    there and vanish where the theorems need u = 0.
    """
    x0, x1, y0, y1 = window
    nx = _axis_count(x0, x1, h)
    ny = _axis_count(y0, y1, h)
    xg, yg = np.meshgrid(x0 + h * np.arange(nx), y0 + h * np.arange(ny))
    pts = np.column_stack([xg.ravel(), yg.ravel()])
    inside = contains_many(dom, pts).reshape(ny, nx)
    mask = _classify(inside)
    if not (mask == MASK_INTERIOR).any():
        raise ConfigError("window contains no interior nodes at this h")
    return GridField(nx, ny, float(h), (float(x0), float(y0)),
                     np.zeros((ny, nx)), mask)


def make_disc_grid(center: tuple[float, float], radius: float, h: float) -> GridField:
    if radius <= 2 * h:
        raise ArgumentError("disc radius must exceed 2h")
    cx, cy = center
    half = (np.ceil(radius / h) + 2) * h
    nx = _axis_count(cx - half, cx + half, h)
    ny = _axis_count(cy - half, cy + half, h)
    xg, yg = np.meshgrid(cx - half + h * np.arange(nx), cy - half + h * np.arange(ny))
    inside = (xg - cx) ** 2 + (yg - cy) ** 2 < radius ** 2
    mask = _classify(inside)
    return GridField(nx, ny, float(h), (float(cx - half), float(cy - half)),
                     np.zeros((ny, nx)), mask)


def apply_boundary_data(grid: GridField, fn) -> None:
    """Evaluate fn(x, y) at boundary nodes in place; exterior left alone."""
    bidx = grid.mask == MASK_BOUNDARY
    xg, yg = grid.node_xy()
    vals = np.asarray(fn(xg[bidx], yg[bidx]), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ArgumentError("boundary data must be finite on boundary nodes")
    grid.values[bidx] = vals


def validate_grid(grid: GridField) -> None:
    """Invariants: shapes agree, non-exterior values finite, no interior
    node touches exterior within its 8-neighborhood, and every interior
    component reaches a boundary node."""
    if grid.values.shape != (grid.ny, grid.nx) or grid.mask.shape != (grid.ny, grid.nx):
        raise ConfigError("grid array shapes disagree with nx/ny")
    nonext = grid.mask != MASK_EXTERIOR
    if not np.all(np.isfinite(grid.values[nonext])):
        raise ConfigError("non-finite values on non-exterior nodes")
    interior = grid.mask == MASK_INTERIOR
    near_ext = ndimage.binary_dilation(grid.mask == MASK_EXTERIOR, structure=_EIGHT)
    if np.any(interior & near_ext):
        raise ConfigError("interior node 8-adjacent to exterior")
    labels, nlab = ndimage.label(nonext, structure=_FOUR)
    for k in range(1, nlab + 1):
        sel = labels == k
        if np.any(sel & interior) and not np.any(sel & (grid.mask == MASK_BOUNDARY)):
            raise ConfigError("interior component with no boundary contact")


def bilinear(grid: GridField, x, y) -> np.ndarray:
    """Bilinear interpolation; every node of each surrounding cell must be
    non-exterior."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    fx = (x - grid.origin[0]) / grid.h
    fy = (y - grid.origin[1]) / grid.h
    i0 = np.floor(fx).astype(int)
    j0 = np.floor(fy).astype(int)
    i0 = np.clip(i0, 0, grid.nx - 2)
    j0 = np.clip(j0, 0, grid.ny - 2)
    ax = fx - i0
    ay = fy - j0
    if np.any(ax < -1e-9) or np.any(ax > 1 + 1e-9) or \
       np.any(ay < -1e-9) or np.any(ay > 1 + 1e-9):
        raise ArgumentError("interpolation point outside the grid window")
    corners = [(j0, i0), (j0, i0 + 1), (j0 + 1, i0), (j0 + 1, i0 + 1)]
    if any(np.any(grid.mask[jj, ii] == MASK_EXTERIOR) for jj, ii in corners):
        raise ArgumentError("interpolation cell touches exterior nodes")
    v = grid.values
    out = (v[j0, i0] * (1 - ax) * (1 - ay) + v[j0, i0 + 1] * ax * (1 - ay)
           + v[j0 + 1, i0] * (1 - ax) * ay + v[j0 + 1, i0 + 1] * ax * ay)
    return out if out.size > 1 else float(out[0])


def prolong(coarse: GridField, fine: GridField) -> None:
    """Bilinear transfer of coarse values onto fine non-exterior nodes.
    Requires the fine window to sit inside the coarse one and both grids
    exterior-free (used by the cascadic solve path)."""
    if np.any(coarse.mask == MASK_EXTERIOR) or np.any(fine.mask == MASK_EXTERIOR):
        raise ArgumentError("prolongation only on exterior-free grids")
    xg, yg = fine.node_xy()
    fine.values[:] = np.asarray(bilinear(coarse, xg.ravel(), yg.ravel())).reshape(fine.ny, fine.nx)


def oscillation(grid: GridField, center: tuple[float, float], rho: float) -> float:
    """max - min of values over non-exterior nodes in the closed ball."""
    xg, yg = grid.node_xy()
    sel = ((xg - center[0]) ** 2 + (yg - center[1]) ** 2 <= rho ** 2) \
        & (grid.mask != MASK_EXTERIOR)
    if not np.any(sel):
        raise ArgumentError("ball contains no grid nodes")
    vals = grid.values[sel]
    return float(vals.max() - vals.min())


def sup_over_ball(grid: GridField, center: tuple[float, float], rho: float,
                  interior_only: bool = False) -> float:
    xg, yg = grid.node_xy()
    keep = grid.mask == MASK_INTERIOR if interior_only else grid.mask != MASK_EXTERIOR
    sel = ((xg - center[0]) ** 2 + (yg - center[1]) ** 2 <= rho ** 2) & keep
    if not np.any(sel):
        raise ArgumentError("ball contains no grid nodes")
    return float(grid.values[sel].max())


def save_grid(grid: GridField, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(_serialize(grid))


def _serialize(grid: GridField) -> str:
    buf = io.StringIO()
    buf.write(f"{grid.nx} {grid.ny} {grid.h!r}\n")
    buf.write("# mask: 0=interior 1=boundary 2=exterior\n")
    buf.write(f"# origin: {grid.origin[0]!r} {grid.origin[1]!r}\n")
    vals = grid.values.copy()
    vals[grid.mask == MASK_EXTERIOR] = 0.0  # canonical: exterior never read
    for m, v in zip(grid.mask.ravel(), vals.ravel()):
        buf.write(f"{int(m)} {float(v)!r}\n")
    return buf.getvalue()


def load_grid(path: str) -> GridField:
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    if len(lines) < 3:
        raise ConfigError(f"{path}: truncated grid file")
    try:
        nx_s, ny_s, h_s = lines[0].split()
        nx, ny, h = int(nx_s), int(ny_s), float(h_s)
    except ValueError as exc:
        raise ConfigError(f"{path}: bad header line {lines[0]!r}") from exc
    if not lines[1].startswith("# mask:"):
        raise ConfigError(f"{path}: missing mask legend")
    if not lines[2].startswith("# origin:"):
        raise ConfigError(f"{path}: missing origin line")
    ox, oy = (float(t) for t in lines[2].split(":")[1].split())
    body = lines[3:]
    if len(body) != nx * ny:
        raise ConfigError(f"{path}: expected {nx * ny} node records, got {len(body)}")
    mask = np.empty(nx * ny, dtype=np.uint8)
    vals = np.empty(nx * ny, dtype=float)
    for k, line in enumerate(body):
        m_s, v_s = line.split()
        mask[k] = int(m_s)
        vals[k] = float(v_s)
    if np.any(mask > 2):
        raise ConfigError(f"{path}: mask codes must be 0, 1 or 2")
    return GridField(nx, ny, h, (ox, oy), vals.reshape(ny, nx), mask.reshape(ny, nx))


def export_csv(grid: GridField, path: str) -> None:
    """x,y,value rows for non-exterior nodes, row-major order."""
    xg, yg = grid.node_xy()
    keep = (grid.mask != MASK_EXTERIOR).ravel()
    with open(path, "w", encoding="ascii") as f:
        f.write("x,y,value\n")
        for x, y, v in zip(xg.ravel()[keep], yg.ravel()[keep], grid.values.ravel()[keep]):
            f.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
