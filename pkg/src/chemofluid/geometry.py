"""Level-set domains and embedded-boundary grid geometry.

A domain is the sublevel set {phi < 0} of a smooth function on an axis-aligned
bounding box. Cells of a uniform Cartesian grid are classified from the sign
of phi at cell corners:

    interior  : all four corners strictly inside
    band      : the zero level set crosses the cell (or a corner sits on it)
    exterior  : all four corners strictly outside

The boundary is extracted as one straight segment per cut cell (marching
segments with linear interpolation along cell edges). Each segment carries a
midpoint, an outward unit normal from the level-set gradient, an arc-length
weight, and a curvature sample. Quadrature weights:

    volume  : h^2 per interior cell, linear cut-cell wet fraction in the band
              (floored at VOL_FRAC_FLOOR for time-stepping stability; the same
              floored volumes are used everywhere so conservation is exact)
    surface : segment length per boundary segment

Face apertures (wet fraction of each cell edge) are precomputed for the
conservative flux operators in :mod:`chemofluid.fields`. Faces adjacent to
exterior cells always have zero aperture, which makes zero-flux boundary
conditions automatic in flux form.

Geometry objects are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

EXTERIOR = 0
INTERIOR = 1
BAND = 2

# Linear cut-cell fractions below this are floored (explicit fluxes on
# slivers would otherwise force the global step size to collapse).
VOL_FRAC_FLOOR = 0.1

# Faces between two active cells keep at least this aperture so sliver cells
# never decouple from the diffusion operator; faces beside exterior cells
# stay at exactly zero (no flux through the boundary).
APERTURE_FLOOR = 0.1

# |grad phi| threshold near the zero level set.
GRAD_MIN = 1e-6

# Corner values closer to zero than this (times h) classify the cell as band.
TIE_EPS = 1e-12

# kappa_max safety padding over the sampled curvature magnitude.
KAPPA_PAD = 1.1


class DomainError(ValueError):
    """Degenerate or ill-posed domain (empty interior, missing margin, ...)."""


class ResolutionError(RuntimeError):
    """Grid too coarse to resolve the boundary (ambiguous cut cells, ...)."""


class SingularGradientError(RuntimeError):
    """|grad phi| below threshold where a normal or curvature is needed."""


@dataclass(frozen=True)
class LevelSetDomain:
    """A smooth bounded domain {phi < 0} on a bounding box.

    phi must accept numpy arrays (broadcast over x, y) and be smooth with a
    nonvanishing gradient near its zero level set.
    """

    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bbox: tuple[float, float, float, float]  # (xlo, xhi, ylo, yhi)
    tag: str = "custom"

    @staticmethod
    def disk(radius: float = 1.0, center=(0.0, 0.0), margin: float = 0.2) -> "LevelSetDomain":
        cx, cy = center
        r2 = radius * radius

        def phi(x, y):
            return (x - cx) ** 2 + (y - cy) ** 2 - r2

        half = radius * (1.0 + margin)
        return LevelSetDomain(phi, (cx - half, cx + half, cy - half, cy + half), tag="disk")

    @staticmethod
    def annulus(r_inner: float = 0.5, r_outer: float = 1.0, margin: float = 0.2) -> "LevelSetDomain":
        if not 0.0 < r_inner < r_outer:
            raise DomainError("annulus needs 0 < r_inner < r_outer")
        ri2, ro2 = r_inner * r_inner, r_outer * r_outer

        def phi(x, y):
            r2 = x * x + y * y
            return (r2 - ri2) * (r2 - ro2)

        half = r_outer * (1.0 + margin)
        return LevelSetDomain(phi, (-half, half, -half, half), tag="annulus")

    @staticmethod
    def star(k: int = 3, amplitude: float = 0.4, margin: float = 0.2,
             base_radius: float = 1.0) -> "LevelSetDomain":
        """Star-shaped domain r(theta) = base_radius * (1 + amplitude*cos(k*theta)).

        The canonical smooth non-convex test domain for amplitude large
        enough; amplitude must stay below 1 so the boundary is a graph
        over theta.
        """
        if not 0.0 <= amplitude < 1.0:
            raise DomainError("star amplitude must be in [0, 1)")

        def phi(x, y):
            r = np.sqrt(x * x + y * y)
            th = np.arctan2(y, x)
            return r - base_radius * (1.0 + amplitude * np.cos(k * th))

        half = base_radius * (1.0 + amplitude) * (1.0 + margin)
        return LevelSetDomain(phi, (-half, half, -half, half), tag=f"star({k},{amplitude})")

    @staticmethod
    def from_sampled(values: np.ndarray, bbox, tag: str = "sampled") -> "LevelSetDomain":
        """Domain from phi sampled on a regular node grid covering bbox.

        values[i, j] is phi at (xlo + i*dx, ylo + j*dy) with dx = (xhi-xlo)/(nx-1).
        Evaluation is bilinear; queries outside bbox clamp to the edge.
        """
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2 or vals.shape[1] < 2:
            raise DomainError("sampled phi must be a 2D array with at least 2x2 nodes")
        xlo, xhi, ylo, yhi = (float(v) for v in bbox)
        nx, ny = vals.shape
        dx = (xhi - xlo) / (nx - 1)
        dy = (yhi - ylo) / (ny - 1)

        def phi(x, y):
            fx = np.clip((np.asarray(x, dtype=float) - xlo) / dx, 0.0, nx - 1 - 1e-12)
            fy = np.clip((np.asarray(y, dtype=float) - ylo) / dy, 0.0, ny - 1 - 1e-12)
            i0 = fx.astype(int)
            j0 = fy.astype(int)
            tx = fx - i0
            ty = fy - j0
            v00 = vals[i0, j0]
            v10 = vals[i0 + 1, j0]
            v01 = vals[i0, j0 + 1]
            v11 = vals[i0 + 1, j0 + 1]
            return (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
                    + v01 * (1 - tx) * ty + v11 * tx * ty)

        return LevelSetDomain(phi, (xlo, xhi, ylo, yhi), tag=tag)


@dataclass(frozen=True)
class GridGeometry:
    """Classified uniform grid plus extracted boundary data. Immutable."""

    domain: LevelSetDomain
    h: float
    nx: int
    ny: int
    bbox: tuple[float, float, float, float]
    cell_class: np.ndarray          # (nx, ny) int8, EXTERIOR/INTERIOR/BAND
    vol_frac: np.ndarray            # (nx, ny) raw linear wet fraction
    cell_vol: np.ndarray            # (nx, ny) floored volume, 0 on exterior
    aperture_x: np.ndarray          # (nx+1, ny) wet fraction of x-faces
    aperture_y: np.ndarray          # (nx, ny+1) wet fraction of y-faces
    seg_mid: np.ndarray             # (nseg, 2) segment midpoints
    seg_normal: np.ndarray          # (nseg, 2) outward unit normals
    seg_weight: np.ndarray          # (nseg,) arc-length weights
    seg_curvature: np.ndarray       # (nseg,) level-set curvature samples
    seg_cell: np.ndarray            # (nseg, 2) host cell indices
    kappa_max: float
    _extras: dict = field(default_factory=dict, repr=False)

    # ---- derived masks and coordinates -------------------------------

    @property
    def interior(self) -> np.ndarray:
        return self.cell_class == INTERIOR

    @property
    def band(self) -> np.ndarray:
        return self.cell_class == BAND

    @property
    def active(self) -> np.ndarray:
        return self.cell_class != EXTERIOR

    @property
    def xc(self) -> np.ndarray:
        return self.bbox[0] + (np.arange(self.nx) + 0.5) * self.h

    @property
    def yc(self) -> np.ndarray:
        return self.bbox[2] + (np.arange(self.ny) + 0.5) * self.h

    @property
    def xn(self) -> np.ndarray:
        return self.bbox[0] + np.arange(self.nx + 1) * self.h

    @property
    def yn(self) -> np.ndarray:
        return self.bbox[2] + np.arange(self.ny + 1) * self.h

    def cell_centers(self):
        """Meshgrid of cell-center coordinates, shape (nx, ny) each."""
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    @property
    def area(self) -> float:
        return float(self.cell_vol.sum())

    @property
    def perimeter(self) -> float:
        return float(self.seg_weight.sum())

    @property
    def diameter(self) -> float:
        return self._extras["diameter"]

    @property
    def is_convex(self) -> bool:
        """All curvature samples nonnegative (up to discretization noise)."""
        tol = 1e-6 + 0.02 * float(np.max(np.abs(self.seg_curvature), initial=0.0))
        return bool(np.all(self.seg_curvature >= -tol))

    @property
    def fluid_face_x(self) -> np.ndarray:
        """x-faces whose both neighbor cells are interior (velocity dofs)."""
        return self._extras["fluid_face_x"]

    @property
    def fluid_face_y(self) -> np.ndarray:
        return self._extras["fluid_face_y"]

    @property
    def n_components(self) -> int:
        """Connected components of the interior cell set (4-connectivity)."""
        return self._extras["n_components"]

    @property
    def stencil_ok(self) -> np.ndarray:
        """Cells whose full 3x3 neighborhood is active.

        Quadratures of squared second derivatives are restricted to these
        cells: cut cells carry grid-scale solution roughness that squared
        difference stencils amplify to O(1/h), while dropping the collar is
        a first-order quadrature error consistent with the scheme.
        """
        cached = self._extras.get("stencil_ok")
        if cached is None:
            act = self.active
            ok = act.copy()
            ok[1:, :] &= act[:-1, :]
            ok[:-1, :] &= act[1:, :]
            ok[:, 1:] &= act[:, :-1]
            ok[:, :-1] &= act[:, 1:]
            ok[1:, 1:] &= act[:-1, :-1]
            ok[:-1, :-1] &= act[1:, 1:]
            ok[1:, :-1] &= act[:-1, 1:]
            ok[:-1, 1:] &= act[1:, :-1]
            ok.setflags(write=False)
            self._extras["stencil_ok"] = ok
            cached = ok
        return cached


def _phi_derivatives(domain: LevelSetDomain, x, y, step: float):
    """Centered first and second differences of phi at points (x, y)."""
    p = domain.phi
    d = step
    fxp = p(x + d, y)
    fxm = p(x - d, y)
    fyp = p(x, y + d)
    fym = p(x, y - d)
    f0 = p(x, y)
    gx = (fxp - fxm) / (2 * d)
    gy = (fyp - fym) / (2 * d)
    gxx = (fxp - 2 * f0 + fxm) / (d * d)
    gyy = (fyp - 2 * f0 + fym) / (d * d)
    gxy = (p(x + d, y + d) - p(x + d, y - d) - p(x - d, y + d) + p(x - d, y - d)) / (4 * d * d)
    return gx, gy, gxx, gyy, gxy


def boundary_curvature(domain: LevelSetDomain, point, step: float | None = None) -> float:
    """Signed curvature div(grad phi / |grad phi|) at a point near the boundary.

    Positive where the domain is locally convex: a disk of radius R gives
    1/R on its boundary with phi negative inside.
    """
    x, y = float(point[0]), float(point[1])
    if step is None:
        xlo, xhi, ylo, yhi = domain.bbox
        step = 1e-3 * max(xhi - xlo, yhi - ylo)
    gx, gy, gxx, gyy, gxy = _phi_derivatives(domain, np.float64(x), np.float64(y), step)
    g2 = gx * gx + gy * gy
    if g2 < GRAD_MIN * GRAD_MIN:
        raise SingularGradientError(f"|grad phi| = {np.sqrt(g2):.3e} at ({x}, {y})")
    return float((gxx * gy * gy - 2.0 * gxy * gx * gy + gyy * gx * gx) / g2 ** 1.5)


def _edge_crossing(pa, pb, fa, fb):
    """Linear zero crossing between points pa, pb with values fa, fb."""
    t = fa / (fa - fb)
    return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))


def _wet_polygon_area(corners, phis):
    """Area of {phi < 0} within a cell, linear along edges.

    corners are the 4 cell vertices in counterclockwise order with their phi
    values; the wet region is the polygon of inside vertices plus edge
    crossings, traversed in boundary order.
    """
    poly = []
    for k in range(4):
        pa, fa = corners[k], phis[k]
        pb, fb = corners[(k + 1) % 4], phis[(k + 1) % 4]
        if fa < 0:
            poly.append(pa)
        if (fa < 0) != (fb < 0):
            poly.append(_edge_crossing(pa, pb, fa, fb))
    if len(poly) < 3:
        return 0.0
    a = 0.0
    for k in range(len(poly)):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % len(poly)]
        a += x0 * y1 - x1 * y0
    return 0.5 * abs(a)


def classify_cells(domain: LevelSetDomain, h: float) -> GridGeometry:
    """Build the embedded-boundary grid geometry at spacing h.

    Raises DomainError for empty interiors or missing bounding-box margin
    (at least 2 exterior cells on every side), ResolutionError when a cut
    cell carries more than two edge crossings, and SingularGradientError
    when |grad phi| degenerates on the boundary band.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    xlo, xhi, ylo, yhi = domain.bbox
    w, ht = xhi - xlo, yhi - ylo
    nx = int(round(w / h))
    ny = int(round(ht / h))
    if nx < 16 or ny < 16:
        raise ResolutionError(f"need at least 16 cells per side, got {nx} x {ny}")
    hx, hy = w / nx, ht / ny
    if abs(hx - hy) > 1e-12 * max(hx, hy):
        raise ValueError("bounding box does not tile into square cells at this h")
    h = hx

    xn = xlo + np.arange(nx + 1) * h
    yn = ylo + np.arange(ny + 1) * h
    Xn, Yn = np.meshgrid(xn, yn, indexing="ij")
    node_phi = np.asarray(domain.phi(Xn, Yn), dtype=float)

    neg = node_phi < 0.0
    tie = np.abs(node_phi) < TIE_EPS * h
    in00, in10, in01, in11 = neg[:-1, :-1], neg[1:, :-1], neg[:-1, 1:], neg[1:, 1:]
    all_in = in00 & in10 & in01 & in11
    all_out = ~(in00 | in10 | in01 | in11)
    cut = ~(all_in | all_out)
    tie_cell = tie[:-1, :-1] | tie[1:, :-1] | tie[:-1, 1:] | tie[1:, 1:]

    cell_class = np.full((nx, ny), EXTERIOR, dtype=np.int8)
    cell_class[all_in] = INTERIOR
    cell_class[cut | tie_cell] = BAND

    if not np.any(cell_class == INTERIOR):
        raise DomainError("domain has no interior cells at this resolution")

    active = cell_class != EXTERIOR
    ii, jj = np.nonzero(active)
    if ii.min() < 2 or jj.min() < 2 or ii.max() > nx - 3 or jj.max() > ny - 3:
        raise DomainError("interior must keep at least a 2-cell exterior margin inside the bounding box")

    # Face apertures: wet fraction of each cell edge from its two node values.
    def edge_wet(fa, fb):
        wet = np.zeros_like(fa)
        both_in = (fa < 0) & (fb < 0)
        wet[both_in] = 1.0
        mixed = (fa < 0) != (fb < 0)
        t = np.zeros_like(fa)
        t[mixed] = fa[mixed] / (fa[mixed] - fb[mixed])
        wet[mixed & (fa < 0)] = t[mixed & (fa < 0)]
        wet[mixed & (fa >= 0)] = 1.0 - t[mixed & (fa >= 0)]
        return wet

    aperture_x = edge_wet(node_phi[:, :-1], node_phi[:, 1:])    # (nx+1, ny)
    aperture_y = edge_wet(node_phi[:-1, :], node_phi[1:, :])    # (nx, ny+1)

    active_mask = cell_class != EXTERIOR
    both_x = np.zeros_like(aperture_x, dtype=bool)
    both_x[1:-1, :] = active_mask[:-1, :] & active_mask[1:, :]
    aperture_x = np.where(both_x, np.maximum(aperture_x, APERTURE_FLOOR), aperture_x)
    both_y = np.zeros_like(aperture_y, dtype=bool)
    both_y[:, 1:-1] = active_mask[:, :-1] & active_mask[:, 1:]
    aperture_y = np.where(both_y, np.maximum(aperture_y, APERTURE_FLOOR), aperture_y)

    # Wet volume fractions.
    vol_frac = np.zeros((nx, ny))
    vol_frac[cell_class == INTERIOR] = 1.0
    xc = xlo + (np.arange(nx) + 0.5) * h
    yc = ylo + (np.arange(ny) + 0.5) * h

    band_idx = np.argwhere(cell_class == BAND)
    seg_p0, seg_p1, seg_cells = [], [], []
    for i, j in band_idx:
        corners = [(xn[i], yn[j]), (xn[i + 1], yn[j]), (xn[i + 1], yn[j + 1]), (xn[i], yn[j + 1])]
        phis = [node_phi[i, j], node_phi[i + 1, j], node_phi[i + 1, j + 1], node_phi[i, j + 1]]
        crossings = []
        for k in range(4):
            fa, fb = phis[k], phis[(k + 1) % 4]
            if (fa < 0) != (fb < 0):
                crossings.append(_edge_crossing(corners[k], corners[(k + 1) % 4], fa, fb))
        if len(crossings) > 2:
            raise ResolutionError(
                f"cell ({i}, {j}) has {len(crossings)} boundary crossings; refine the grid")
        if len(crossings) == 2:
            seg_p0.append(crossings[0])
            seg_p1.append(crossings[1])
            seg_cells.append((i, j))
            vol_frac[i, j] = _wet_polygon_area(corners, phis) / (h * h)
        else:
            # Band by tie-break only: use the center sign.
            vol_frac[i, j] = 1.0 if domain.phi(np.float64(xc[i]), np.float64(yc[j])) < 0 else 0.0

    if not seg_p0:
        raise DomainError("no boundary segments were extracted; domain degenerate")

    p0 = np.asarray(seg_p0)
    p1 = np.asarray(seg_p1)
    seg_mid = 0.5 * (p0 + p1)
    seg_weight = np.hypot(p1[:, 0] - p0[:, 0], p1[:, 1] - p0[:, 1])

    gx, gy, gxx, gyy, gxy = _phi_derivatives(domain, seg_mid[:, 0], seg_mid[:, 1], 0.5 * h)
    gnorm = np.hypot(gx, gy)
    if np.any(gnorm < GRAD_MIN):
        k = int(np.argmin(gnorm))
        raise SingularGradientError(
            f"|grad phi| = {gnorm[k]:.3e} at boundary point {tuple(seg_mid[k])}")
    seg_normal = np.stack([gx / gnorm, gy / gnorm], axis=1)
    seg_curvature = (gxx * gy * gy - 2.0 * gxy * gx * gy + gyy * gx * gx) / gnorm ** 3

    cell_vol = np.where(cell_class == BAND,
                        np.maximum(vol_frac, VOL_FRAC_FLOOR),
                        vol_frac) * (h * h)

    # Fluid velocity dofs: faces strictly between interior cells.
    interior = cell_class == INTERIOR
    ffx = np.zeros((nx + 1, ny), dtype=bool)
    ffx[1:-1, :] = interior[:-1, :] & interior[1:, :]
    ffy = np.zeros((nx, ny + 1), dtype=bool)
    ffy[:, 1:-1] = interior[:, :-1] & interior[:, 1:]

    _, ncomp = ndimage.label(interior)

    dx = seg_mid[:, 0].max() - seg_mid[:, 0].min()
    dy = seg_mid[:, 1].max() - seg_mid[:, 1].min()
    diameter = float(np.hypot(dx, dy))

    geom = GridGeometry(
        domain=domain, h=h, nx=nx, ny=ny, bbox=domain.bbox,
        cell_class=cell_class, vol_frac=vol_frac, cell_vol=cell_vol,
        aperture_x=aperture_x, aperture_y=aperture_y,
        seg_mid=seg_mid, seg_normal=seg_normal, seg_weight=seg_weight,
        seg_curvature=seg_curvature, seg_cell=np.asarray(seg_cells, dtype=int),
        kappa_max=0.0,
        _extras={"fluid_face_x": ffx, "fluid_face_y": ffy,
                 "n_components": int(ncomp), "diameter": diameter},
    )
    object.__setattr__(geom, "kappa_max", curvature_bound(geom))
    for arr in (cell_class, vol_frac, cell_vol, aperture_x, aperture_y,
                seg_mid, seg_normal, seg_weight, seg_curvature, ffx, ffy):
        arr.setflags(write=False)
    return geom


def curvature_bound(geom: GridGeometry) -> float:
    """Curvature bound kappa_max for the boundary-gradient inequality.

    The inequality d|grad w|^2/dnu <= 2*kappa*|grad w|^2 for Neumann fields w
    needs kappa to dominate the boundary curvature magnitude wherever the
    domain is non-convex, so the bound is taken over |curvature| and padded
    by 10%. Strictly positive: floored at 1/diameter when every sample
    vanishes.
    """
    kmax = float(np.max(np.abs(geom.seg_curvature), initial=0.0)) * KAPPA_PAD
    if kmax <= 0.0:
        kmax = 1.0 / geom.diameter
    return kmax


def volume_integral(values, geom: GridGeometry) -> float:
    """Integral over the domain: sum of cell values times wet cell volumes."""
    data = values.data if hasattr(values, "data") else np.asarray(values)
    if data.shape != (geom.nx, geom.ny):
        raise ValueError(f"field shape {data.shape} does not match grid ({geom.nx}, {geom.ny})")
    return float(np.sum(data * geom.cell_vol))


def surface_integral(boundary_values, geom: GridGeometry) -> float:
    """Boundary integral: sum of per-segment values times arc-length weights."""
    vals = np.asarray(boundary_values, dtype=float)
    if vals.shape != geom.seg_weight.shape:
        raise ValueError(f"{vals.shape[0] if vals.ndim else 0} values for "
                         f"{geom.seg_weight.shape[0]} boundary segments")
    return float(np.sum(vals * geom.seg_weight))
