"""Weighted perimeter Per_mu(E) by mutually validating estimators.

The distributional perimeter of a finite-perimeter set equals the integral
of f over the reduced boundary.  Three estimators realize this at desk
scale:

* ``perimeter_bv``: extract the sub-cell boundary of the occupancy field
  at level 1/2 (marching squares / cubes) and integrate f over the facets;
* ``perimeter_minkowski``: enlargement content (mu(E + B_h) - mu(E)) / h,
  Richardson-extrapolated over a schedule of radii, via a signed distance
  transform on grids or exact dilation of analytic regions;
* ``perimeter_graph``: the trace formula f(x', g(x')) sqrt(1 + |grad g|^2)
  for subgraph sets;
* ``perimeter_halfspace``: closed forms (product frames) or hyperplane
  quadrature for half-spaces.

Every estimate carries a declared, conservative error budget; inequality
tests must consume these budgets explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, ndimage

from .sets import (
    Ball,
    GridGeometry,
    HalfSpace,
    HalfSpaceRegion,
    IndicatorSet,
    Region,
    cell_masses,
    mu_measure,
)
from .symmetrize import HeightField
from .weights import IsotropicGaussian, ProductDensity, WeightedDensity

__all__ = [
    "PerimeterEstimate",
    "NoBoundaryError",
    "NonConvergentError",
    "InfiniteHeightError",
    "extract_boundary_2d",
    "perimeter_bv",
    "perimeter_minkowski",
    "perimeter_graph",
    "perimeter_halfspace",
]


class NoBoundaryError(ValueError):
    """Occupancy field is constant: no resolvable boundary."""


class NonConvergentError(RuntimeError):
    """Minkowski quotients oscillate too much to extrapolate."""


class InfiniteHeightError(ValueError):
    """Graph formula applied to a height field with infinite values."""


# calibration constants for declared budgets (validated in tests against
# closed-form anchors with a >= 4x safety margin)
BV_BUDGET_C = 0.6
GRAPH_BUDGET_C = 2.0


@dataclass(frozen=True)
class PerimeterEstimate:
    """Perimeter value with method tag, resolution and declared error budget."""

    value: float
    method: str
    resolution: float | None
    error_budget: float

    def __post_init__(self):
        if self.value < -1e-12:
            raise ValueError("perimeter must be non-negative")
        if self.error_budget < 0:
            raise ValueError("error budget must be positive")


# ---------------------------------------------------------------------------
# boundary extraction (marching squares, 2D) and relatives
# ---------------------------------------------------------------------------

_MS_SEGMENTS = {
    1: [("L", "B")],
    2: [("B", "R")],
    3: [("L", "R")],
    4: [("R", "T")],
    6: [("B", "T")],
    7: [("L", "T")],
    8: [("T", "L")],
    9: [("B", "T")],
    11: [("R", "T")],
    12: [("L", "R")],
    13: [("B", "R")],
    14: [("L", "B")],
}


def _pad_occupancy(E: IndicatorSet):
    """Add a ghost ring continuing the tail convention."""
    occ = E.occ
    geom = E.geom
    if E.tail.kind == "empty":
        return np.pad(occ, 1, constant_values=0.0)
    if E.tail.kind == "full":
        return np.pad(occ, 1, constant_values=1.0)
    padded_geom = GridGeometry(
        _inflate_box(geom.box, geom.spacing), tuple(d + 2 for d in geom.dims)
    )
    pts = padded_geom.centers_flat()
    v = np.asarray(E.tail.v, dtype=float)
    vals = (pts @ v >= E.tail.r).astype(float).reshape(padded_geom.dims)
    sl = tuple(slice(1, 1 + d) for d in geom.dims)
    vals[sl] = occ
    return vals


def _inflate_box(box, h):
    from .weights import Box

    return Box(tuple(box.lo_arr - h), tuple(box.hi_arr + h))


def extract_boundary_2d(E: IndicatorSet, level=0.5):
    """Level-set segments of the occupancy field (marching squares).

    Returns (p0, p1): arrays (m, 2) of segment endpoints in physical
    coordinates.  Fractional occupancies act as anti-aliasing, so for
    smooth sets the extracted polyline is sub-cell accurate.
    """
    occ = _pad_occupancy(E)
    geom = E.geom
    h = geom.spacing
    x0 = geom.box.lo_arr - 0.5 * h  # physical position of padded node (0, 0)

    a = occ[:-1, :-1]
    b = occ[1:, :-1]
    c = occ[1:, 1:]
    d = occ[:-1, 1:]
    case = (
        (a > level).astype(np.uint8)
        + 2 * (b > level).astype(np.uint8)
        + 4 * (c > level).astype(np.uint8)
        + 8 * (d > level).astype(np.uint8)
    )
    if not np.any((case > 0) & (case < 15)):
        raise NoBoundaryError("occupancy field has no level-1/2 boundary")

    ii, jj = np.meshgrid(np.arange(a.shape[0]), np.arange(a.shape[1]), indexing="ij")
    xA = x0[0] + ii * h[0]
    yA = x0[1] + jj * h[1]

    def _frac(p, q):
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (level - p) / (q - p)
        return np.clip(np.where(np.isfinite(f), f, 0.5), 0.0, 1.0)

    cross = {
        "B": (xA + _frac(a, b) * h[0], yA),
        "R": (xA + h[0], yA + _frac(b, c) * h[1]),
        "T": (xA + _frac(d, c) * h[0], yA + h[1]),
        "L": (xA, yA + _frac(a, d) * h[1]),
    }

    seg_p0, seg_p1 = [], []

    def _emit(mask, e0, e1):
        if not np.any(mask):
            return
        x0e, y0e = cross[e0]
        x1e, y1e = cross[e1]
        seg_p0.append(np.stack([x0e[mask], y0e[mask]], axis=-1))
        seg_p1.append(np.stack([x1e[mask], y1e[mask]], axis=-1))

    for code, segs in _MS_SEGMENTS.items():
        mask = case == code
        for e0, e1 in segs:
            _emit(mask, e0, e1)
    # saddle cases resolved by the cell-center average
    center = 0.25 * (a + b + c + d)
    for code, flip_pairs, keep_pairs in (
        (5, [("L", "T"), ("B", "R")], [("L", "B"), ("R", "T")]),
        (10, [("L", "B"), ("R", "T")], [("L", "T"), ("B", "R")]),
    ):
        mask = case == code
        hi = mask & (center > level)
        lo = mask & ~(center > level)
        for e0, e1 in flip_pairs:
            _emit(hi, e0, e1)
        for e0, e1 in keep_pairs:
            _emit(lo, e0, e1)

    p0 = np.concatenate(seg_p0, axis=0)
    p1 = np.concatenate(seg_p1, axis=0)
    return _drop_box_edge_facets(p0, p1, geom)


def _drop_box_edge_facets(p0, p1, geom, band_factor=0.51):
    """Remove facets hugging the box boundary.

    The truncation box carries f-mass below tail_tol near its faces, so the
    relative perimeter of the open box legitimately excludes these facets.
    """
    keep = np.ones(p0.shape[0], dtype=bool)
    for ax in range(geom.dim):
        band = band_factor * geom.spacing[ax]
        lo, hi = geom.box.lo[ax], geom.box.hi[ax]
        both_lo = (p0[:, ax] < lo + band) & (p1[:, ax] < lo + band)
        both_hi = (p0[:, ax] > hi - band) & (p1[:, ax] > hi - band)
        keep &= ~(both_lo | both_hi)
    return p0[keep], p1[keep]


def _boundary_crossings_1d(E: IndicatorSet, level=0.5):
    occ = _pad_occupancy(E)
    geom = E.geom
    h = geom.spacing[0]
    xs = geom.box.lo[0] - 0.5 * h + np.arange(occ.size) * h
    a, b = occ[:-1], occ[1:]
    mask = (a > level) != (b > level)
    if not np.any(mask):
        raise NoBoundaryError("occupancy field has no level-1/2 crossing")
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = (level - a[mask]) / (b[mask] - a[mask])
    return xs[:-1][mask] + np.clip(frac, 0, 1) * h


def perimeter_bv(w: WeightedDensity, E: IndicatorSet) -> PerimeterEstimate:
    """Weighted reduced-boundary integral over the extracted level-set.

    This realizes the distributional perimeter: the sup over test vector
    fields equals the weighted surface measure of the reduced boundary for
    finite-perimeter sets, and the latter is directly computable.
    """
    if float(np.max(E.occ)) - float(np.min(E.occ)) < 1e-12:
        raise NoBoundaryError("occupancy field is constant")
    geom = E.geom
    h = geom.cell_size
    if geom.dim == 1:
        xs = _boundary_crossings_1d(E)
        f = w.eval(xs[:, None])
        g = np.abs(w.grad(xs[:, None])[:, 0])
        value = float(np.sum(f))
        budget = BV_BUDGET_C * float(np.sum(g)) * h * h + 1e-12
        return PerimeterEstimate(value, "bv_boundary", h, budget)
    if geom.dim == 2:
        p0, p1 = extract_boundary_2d(E)
        mid = 0.5 * (p0 + p1)
        seg = np.linalg.norm(p1 - p0, axis=-1)
        f = w.eval(mid)
        value = float(np.sum(f * seg))
        budget = BV_BUDGET_C * h * h * float(np.sum(f)) + 1e-12
        return PerimeterEstimate(value, "bv_boundary", h, budget)
    if geom.dim == 3:
        from skimage import measure as _skmeasure

        occ = _pad_occupancy(E)
        verts, faces, _, _ = _skmeasure.marching_cubes(occ, level=0.5, spacing=tuple(geom.spacing))
        verts = verts + (geom.box.lo_arr - 0.5 * geom.spacing)
        tri = verts[faces]
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        areas = 0.5 * np.linalg.norm(cr, axis=-1)
        cent = tri.mean(axis=1)
        keep = np.ones(len(areas), dtype=bool)
        for ax in range(3):
            band = 0.51 * geom.spacing[ax]
            inside_band_lo = np.all(tri[:, :, ax] < geom.box.lo[ax] + band, axis=1)
            inside_band_hi = np.all(tri[:, :, ax] > geom.box.hi[ax] - band, axis=1)
            keep &= ~(inside_band_lo | inside_band_hi)
        f = w.eval(cent[keep])
        value = float(np.sum(f * areas[keep]))
        budget = BV_BUDGET_C * h * h * float(np.sum(f)) + 1e-12
        return PerimeterEstimate(value, "bv_boundary", h, budget)
    raise NotImplementedError("boundary extraction supports n in {1, 2, 3}")


# ---------------------------------------------------------------------------
# Minkowski enlargement content
# ---------------------------------------------------------------------------


def _signed_distance(occ, spacing):
    h = float(np.mean(spacing))
    inside = occ >= 0.5
    dist_out = ndimage.distance_transform_edt(~inside, sampling=tuple(spacing))
    dist_in = ndimage.distance_transform_edt(inside, sampling=tuple(spacing))
    d = np.where(inside, -(dist_in - 0.5 * h), dist_out - 0.5 * h)
    # sub-cell refinement from fractional occupancies at boundary cells
    frac_band = (occ > 0.0) & (occ < 1.0) & (np.abs(d) <= h)
    return np.where(frac_band, (0.5 - occ) * h, d)


def _mink_quotients_grid(w, E, h_schedule, refine=4):
    """Dilate on a ``refine``-times finer grid to tame half-cell EDT bias."""
    geom = E.geom
    if refine > 1:
        occ_f = ndimage.zoom(E.occ, refine, order=1, mode="nearest", grid_mode=True)
        geom_f = geom.refine(refine)
    else:
        occ_f, geom_f = E.occ, geom
    cell_f = geom_f.cell_size
    d = _signed_distance(occ_f, geom_f.spacing)
    W = cell_masses(w, geom_f)
    mu0 = mu_measure(w, E)
    from .sets import _tail_mass

    tail = _tail_mass(w, E.tail)
    qs = []
    for hh in h_schedule:
        occ_h = np.clip(0.5 + (hh - d) / cell_f, 0.0, 1.0)
        mu_h = float(np.sum(occ_h * W)) + tail
        qs.append((mu_h - mu0) / hh)
    return np.asarray(qs)


def _dilated_region_mass(w: WeightedDensity, region: Region, hh: float):
    if isinstance(region, HalfSpaceRegion):
        return w.halfspace_mass(np.asarray(region.v), region.r - hh)
    if isinstance(region, Ball):
        return _ball_mass(w, Ball(region.center, region.radius + hh))
    raise NotImplementedError("analytic dilation supports half-spaces and balls")


def _ball_mass(w: WeightedDensity, ball: Ball):
    center = np.asarray(ball.center, dtype=float)
    if isinstance(w, IsotropicGaussian) and np.allclose(center, w.a_vec) and w.dim == 2:
        return w.C * math.pi / w.c * (1.0 - math.exp(-w.c * ball.radius**2))
    if w.dim == 1:
        line = w.line_density(np.zeros(1), np.ones(1))
        return float(line.segment_masses(np.array([center[0] - ball.radius, center[0] + ball.radius]))[0])
    if w.dim == 2:
        def rad(t):
            t = np.atleast_1d(t)
            th = np.linspace(0.0, 2 * math.pi, 256, endpoint=False)
            out = np.empty_like(t)
            for i, ti in enumerate(t):
                pts = center + ti * np.stack([np.cos(th), np.sin(th)], axis=-1)
                out[i] = float(np.mean(w.eval(pts))) * 2 * math.pi * ti
            return out

        val = integrate.quad(lambda t: float(rad(t)[0]), 0.0, ball.radius, epsabs=1e-11, limit=200)[0]
        return float(val)
    raise NotImplementedError


def perimeter_minkowski(w: WeightedDensity, E, h_schedule=None, region: Region | None = None) -> PerimeterEstimate:
    """Enlargement content lim_h (mu(E + B_h) - mu(E)) / h, extrapolated to h -> 0.

    Grid sets use a signed distance transform with anti-aliased dilation;
    analytic regions (half-spaces, balls, 1D half-lines) use exact dilation
    so the quotient sequence is resolution independent.  The reported value
    is the intercept of a linear-in-h least squares fit, with the quotient
    spread folded into the budget.
    """
    analytic = region is not None
    if analytic:
        if h_schedule is None:
            h_schedule = np.array([0.04, 0.03, 0.02, 0.015, 0.01, 0.005])
        mu0 = _region_mass(w, region)
        qs = np.array([(_dilated_region_mass(w, region, hh) - mu0) / hh for hh in h_schedule])
        resolution = None
    else:
        cell = E.geom.cell_size
        if h_schedule is None:
            h_schedule = cell * np.array([2.0, 3.0, 4.0, 6.0, 8.0])
        h_schedule = np.asarray(h_schedule, dtype=float)
        if np.any(h_schedule < 2.0 * cell - 1e-12):
            raise ValueError("dilation radii must be at least 2 cell sizes")
        qs = _mink_quotients_grid(w, E, h_schedule)
        resolution = cell
    hs = np.asarray(h_schedule, dtype=float)
    diffs = np.diff(qs)
    scale = max(float(np.mean(np.abs(qs))), 1e-300)
    up = float(np.sum(np.clip(diffs, 0, None)))
    down = float(np.sum(np.clip(-diffs, 0, None)))
    if min(up, down) / scale > 0.2:
        raise NonConvergentError(f"quotient sequence oscillates: {qs.tolist()}")
    # exact quotients support a quadratic-in-h extrapolation; grid quotients
    # are noisy, so stick to the linear model there
    basis = [np.ones_like(hs), hs] + ([hs * hs] if analytic and hs.size >= 5 else [])
    A = np.stack(basis, axis=-1)
    coef, *_ = np.linalg.lstsq(A, qs, rcond=None)
    value = float(coef[0])
    resid = qs - A @ coef
    budget = 2.0 * float(np.max(np.abs(resid))) + 0.5 * abs(float(coef[1])) * float(np.min(hs)) + 1e-12
    est = PerimeterEstimate(max(value, 0.0), "minkowski", resolution, budget)
    est = _with_quotients(est, hs, qs)
    return est


def _with_quotients(est: PerimeterEstimate, hs, qs):
    object.__setattr__(est, "quotients", tuple(zip(map(float, hs), map(float, qs))))
    return est


def _region_mass(w: WeightedDensity, region: Region):
    if isinstance(region, HalfSpaceRegion):
        return w.halfspace_mass(np.asarray(region.v), region.r)
    if isinstance(region, Ball):
        return _ball_mass(w, region)
    raise NotImplementedError


# ---------------------------------------------------------------------------
# graph (trace) formula
# ---------------------------------------------------------------------------


def perimeter_graph(w: WeightedDensity, hf: HeightField, refine=4) -> PerimeterEstimate:
    """Quadrature of f(x', g(x')) sqrt(1 + |grad g|^2) over the graph base.

    The gradient uses central differences on the base grid; the f factor is
    sampled on a ``refine``-times finer base grid with g interpolated
    linearly, which keeps the quadrature error below the gradient error.
    """
    g = np.asarray(hf.values, dtype=float)
    if not np.all(np.isfinite(g)):
        raise InfiniteHeightError("height field takes infinite values on the base grid")
    if g.ndim != 1:
        raise NotImplementedError("graph perimeter supports 1D bases (n = 2)")
    xs = hf.base_axis(0)
    dx = xs[1] - xs[0]
    grad = np.gradient(g, dx)
    slope = np.sqrt(1.0 + grad**2)
    # refined midpoint quadrature
    xf = np.linspace(xs[0], xs[-1], (xs.size - 1) * refine + 1)
    xm = 0.5 * (xf[:-1] + xf[1:])
    gm = np.interp(xm, xs, g)
    sm = np.interp(xm, xs, slope)
    d = np.asarray(hf.direction, dtype=float)
    n = d.size
    from .weights import Frame

    frame = Frame.from_direction(d)
    B = frame.base_vectors
    pts = xm[:, None] * B[:, 0][None, :] + gm[:, None] * d[None, :]
    f = w.eval(pts)
    dxf = xf[1] - xf[0]
    value = float(np.sum(f * sm) * dxf)
    # gradient truncation (first term) dominates; midpoint quadrature adds
    # an O(dxf^2) term relative to the weighted length
    f_max = float(np.max(f)) if f.size else 0.0
    curv = np.abs(np.diff(grad))
    budget = GRAPH_BUDGET_C * (dx * f_max * float(np.sum(curv)) + dxf * dxf * value / max(dx, 1e-300)) + 1e-10
    return PerimeterEstimate(value, "graph_formula", dx, budget)


# ---------------------------------------------------------------------------
# half-space closed form
# ---------------------------------------------------------------------------


def perimeter_halfspace(w: WeightedDensity, hs: HalfSpace) -> PerimeterEstimate:
    """Per_mu(H(v, r)): the hyperplane integral of f over {x . v = r}.

    Product-structured weights in a frame containing v reduce to the
    boundary-factor value times the off-axis total masses; Gaussian kinds
    are closed-form in every direction, other kinds integrate numerically.
    """
    if math.isinf(hs.r):
        return PerimeterEstimate(0.0, "halfspace_closed_form", None, 1e-12)
    value = float(w.plane_integral(hs.v_arr, hs.r))
    return PerimeterEstimate(value, "halfspace_closed_form", None, max(1e-10, 1e-12 * abs(value)))
