"""Measurable sets as occupancy grids, plus measures and equal-measure half-spaces.

An :class:`IndicatorSet` stores per-cell occupancy fractions in [0, 1] over
the truncation box of a weighted density, together with a tail convention
describing the set outside the box.  Occupancies come from s x s subcell
supersampling of an analytic region description, or from a symmetrization
(which emits subcell-resolution occupancy directly).

Measure computations reduce to weighted sums occupancy * cell_mass, where
cell masses integrate the density over each cell (2x2 Gauss product rule).
Half-space restricted cell masses are computed by exact polygon clipping in
2D, so quantities like mu(E \\ H) are exact functionals of the occupancy
field; the step-wise monotonicity laws of the symmetrization flow are then
checked without grid-resampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .weights import Box, Frame, WeightedDensity

__all__ = [
    "GridGeometry",
    "HalfSpace",
    "TailConvention",
    "EMPTY_OUTSIDE",
    "FULL_OUTSIDE",
    "halfspace_outside",
    "IndicatorSet",
    "Region",
    "HalfSpaceRegion",
    "Ball",
    "BoxRegion",
    "Strip",
    "Subgraph",
    "Union",
    "Intersection",
    "Complement",
    "Difference",
    "rasterize",
    "cell_masses",
    "halfspace_cut_masses",
    "mu_measure",
    "symm_diff_measure",
    "half_space_equal_measure",
    "EmptyRegionError",
    "GridMismatchError",
]


class EmptyRegionError(ValueError):
    """Region intersected with the box has zero volume at this resolution."""


class GridMismatchError(ValueError):
    """Binary set operation on incompatible grids."""


@dataclass(frozen=True)
class GridGeometry:
    """Regular cell grid over a box; occupancies live at cell centers."""

    box: Box
    dims: tuple

    def __post_init__(self):
        h = self.spacing
        if h.size > 1:
            ratio = float(np.max(h) / np.min(h))
            if ratio > 1.01:
                raise ValueError(f"cells must be cubes within 1% (got aspect {ratio:.4f})")

    @property
    def dim(self):
        return len(self.dims)

    @property
    def spacing(self):
        return self.box.extents / np.asarray(self.dims, dtype=float)

    @property
    def cell_size(self):
        return float(np.mean(self.spacing))

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    def key(self):
        return (tuple(self.box.lo), tuple(self.box.hi), tuple(self.dims))

    def axis_centers(self, i):
        h = self.spacing[i]
        return self.box.lo[i] + (np.arange(self.dims[i]) + 0.5) * h

    def centers_mesh(self):
        axes = [self.axis_centers(i) for i in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    def centers_flat(self):
        mesh = self.centers_mesh()
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refine(self, k):
        return GridGeometry(self.box, tuple(int(d) * int(k) for d in self.dims))

    def subcell_centers_flat(self, s):
        return self.refine(s).centers_flat()


@dataclass(frozen=True)
class HalfSpace:
    """H(v, r) = {x : x . v >= r}; r may be +-inf (empty / whole space)."""

    v: tuple
    r: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("half-space normal must be a unit vector to 1e-12")

    @property
    def v_arr(self):
        return np.asarray(self.v, dtype=float)

    def contains(self, x):
        if math.isinf(self.r):
            shape = np.asarray(x, dtype=float).shape[:-1]
            return np.full(shape, self.r < 0)
        return np.asarray(x, dtype=float) @ self.v_arr >= self.r


@dataclass(frozen=True)
class TailConvention:
    """Declared behavior of a set outside the truncation box."""

    kind: str  # "empty" | "full" | "halfspace"
    v: tuple = None
    r: float = None


EMPTY_OUTSIDE = TailConvention("empty")
FULL_OUTSIDE = TailConvention("full")


def halfspace_outside(v, r):
    v = tuple(np.asarray(v, dtype=float) / np.linalg.norm(v))
    return TailConvention("halfspace", v, float(r))


# ---------------------------------------------------------------------------
# analytic region descriptions
# ---------------------------------------------------------------------------


class Region:
    """Analytic membership description used for rasterization."""

    def contains(self, x):
        raise NotImplementedError

    def translate(self, a):
        raise NotImplementedError

    def rotate(self, R):
        """Image of the region under the linear map x -> R x."""
        raise NotImplementedError

    def __or__(self, other):
        return Union(self, other)

    def __and__(self, other):
        return Intersection(self, other)

    def __sub__(self, other):
        return Difference(self, other)

    def __invert__(self):
        return Complement(self)


@dataclass(frozen=True)
class HalfSpaceRegion(Region):
    v: tuple
    r: float

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(np.asarray(self.v, dtype=float) / np.linalg.norm(self.v)))

    def contains(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.v) >= self.r

    def translate(self, a):
        return HalfSpaceRegion(self.v, self.r + float(np.asarray(a) @ np.asarray(self.v)))

    def rotate(self, R):
        return HalfSpaceRegion(tuple(np.asarray(R) @ np.asarray(self.v)), self.r)

    def as_halfspace(self):
        return HalfSpace(self.v, self.r)


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: float

    def contains(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        return np.sum(d * d, axis=-1) <= self.radius**2

    def translate(self, a):
        return Ball(tuple(np.asarray(self.center) + np.asarray(a)), self.radius)

    def rotate(self, R):
        return Ball(tuple(np.asarray(R) @ np.asarray(self.center)), self.radius)

    def dilate(self, h):
        return Ball(self.center, self.radius + h)


@dataclass(frozen=True)
class BoxRegion(Region):
    lo: tuple
    hi: tuple

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)

    def translate(self, a):
        a = np.asarray(a)
        return BoxRegion(tuple(np.asarray(self.lo) + a), tuple(np.asarray(self.hi) + a))

    def rotate(self, R):
        raise NotImplementedError("rotate a BoxRegion by composing half-spaces instead")


@dataclass(frozen=True)
class Strip(Region):
    """{x : a <= x . v <= b}."""

    v: tuple
    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(np.asarray(self.v, dtype=float) / np.linalg.norm(self.v)))

    def contains(self, x):
        t = np.asarray(x, dtype=float) @ np.asarray(self.v)
        return (t >= self.a) & (t <= self.b)

    def translate(self, a_vec):
        s = float(np.asarray(a_vec) @ np.asarray(self.v))
        return Strip(self.v, self.a + s, self.b + s)

    def rotate(self, R):
        return Strip(tuple(np.asarray(R) @ np.asarray(self.v)), self.a, self.b)


@dataclass(frozen=True)
class Subgraph(Region):
    """{(x', t) : t <= h(x')} for a height field along a frame direction.

    ``heights`` are samples over base coordinates; evaluation interpolates
    linearly and honors +-inf values.
    """

    frame: Frame
    base_lo: tuple
    base_hi: tuple
    heights: tuple  # flattened, shape implied by base_dims
    base_dims: tuple

    def _height_at(self, u):
        h = np.asarray(self.heights, dtype=float).reshape(self.base_dims)
        if len(self.base_dims) == 1:
            lo, hi = self.base_lo[0], self.base_hi[0]
            grid = np.linspace(lo, hi, self.base_dims[0])
            return np.interp(np.asarray(u).ravel(), grid, h)
        raise NotImplementedError("subgraph regions support 1D bases (n=2) only")

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        d = self.frame.direction
        B = self.frame.base_vectors
        t = x @ d
        u = x @ B[:, 0]
        hv = self._height_at(u).reshape(t.shape)
        return t <= hv

    def translate(self, a):
        raise NotImplementedError

    def rotate(self, R):
        raise NotImplementedError


@dataclass(frozen=True)
class Union(Region):
    left: Region
    right: Region

    def contains(self, x):
        return self.left.contains(x) | self.right.contains(x)

    def translate(self, a):
        return Union(self.left.translate(a), self.right.translate(a))

    def rotate(self, R):
        return Union(self.left.rotate(R), self.right.rotate(R))


@dataclass(frozen=True)
class Intersection(Region):
    left: Region
    right: Region

    def contains(self, x):
        return self.left.contains(x) & self.right.contains(x)

    def translate(self, a):
        return Intersection(self.left.translate(a), self.right.translate(a))

    def rotate(self, R):
        return Intersection(self.left.rotate(R), self.right.rotate(R))


@dataclass(frozen=True)
class Complement(Region):
    inner: Region

    def contains(self, x):
        return ~self.inner.contains(x)

    def translate(self, a):
        return Complement(self.inner.translate(a))

    def rotate(self, R):
        return Complement(self.inner.rotate(R))


@dataclass(frozen=True)
class Difference(Region):
    left: Region
    right: Region

    def contains(self, x):
        return self.left.contains(x) & ~self.right.contains(x)

    def translate(self, a):
        return Difference(self.left.translate(a), self.right.translate(a))

    def rotate(self, R):
        return Difference(self.left.rotate(R), self.right.rotate(R))


# ---------------------------------------------------------------------------
# indicator sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndicatorSet:
    """Occupancy-fraction grid over the truncation box with a tail convention."""

    occ: np.ndarray
    geom: GridGeometry
    subcell: int
    tail: TailConvention

    def __post_init__(self):
        if self.occ.shape != tuple(self.geom.dims):
            raise ValueError("occupancy shape does not match grid dims")
        if float(self.occ.min(initial=0.0)) < -1e-12 or float(self.occ.max(initial=0.0)) > 1 + 1e-12:
            raise ValueError("occupancy fractions must lie in [0, 1]")

    @property
    def dims(self):
        return self.geom.dims

    def refined(self):
        """Subcell-resolution view (broadcast occupancies; identical measures)."""
        if self.subcell <= 1:
            return self
        k = self.subcell
        occ = self.occ
        for ax in range(occ.ndim):
            occ = np.repeat(occ, k, axis=ax)
        return IndicatorSet(occ, self.geom.refine(k), 1, self.tail)

    def complemented(self):
        tail = self.tail
        if tail.kind == "empty":
            tail = FULL_OUTSIDE
        elif tail.kind == "full":
            tail = EMPTY_OUTSIDE
        else:
            tail = halfspace_outside(tuple(-np.asarray(tail.v)), -tail.r)  # approximate complement
        return IndicatorSet(1.0 - self.occ, self.geom, self.subcell, tail)

    @staticmethod
    def empty(geom: GridGeometry, subcell=1):
        return IndicatorSet(np.zeros(geom.dims), geom, subcell, EMPTY_OUTSIDE)

    @staticmethod
    def full(geom: GridGeometry, subcell=1):
        return IndicatorSet(np.ones(geom.dims), geom, subcell, FULL_OUTSIDE)


def _align(E: IndicatorSet, F: IndicatorSet):
    """Bring two sets over the same box to a common (nested) grid."""
    if E.geom.box != F.geom.box:
        raise GridMismatchError("sets live over different boxes")
    de, df = E.geom.dims, F.geom.dims
    if de == df:
        return E, F
    if all(b % a == 0 for a, b in zip(de, df)):
        k = df[0] // de[0]
        if all(b // a == k for a, b in zip(de, df)):
            Er = IndicatorSet(_broadcast(E.occ, k), E.geom.refine(k), 1, E.tail)
            return Er, F
    if all(a % b == 0 for a, b in zip(de, df)):
        k = de[0] // df[0]
        if all(a // b == k for a, b in zip(de, df)):
            Fr = IndicatorSet(_broadcast(F.occ, k), F.geom.refine(k), 1, F.tail)
            return E, Fr
    raise GridMismatchError(f"grids {de} and {df} are not nested refinements")


def _broadcast(occ, k):
    out = occ
    for ax in range(occ.ndim):
        out = np.repeat(out, k, axis=ax)
    return out


def grid_dims(box: Box, res: int):
    """Per-axis cell counts: ``res`` cells on the longest axis, cube cells."""
    ext = box.extents
    cell = float(np.max(ext)) / int(res)
    return tuple(max(1, int(round(e / cell))) for e in ext)


def rasterize(region: Region, w: WeightedDensity, dims, subcell=4, tail=EMPTY_OUTSIDE) -> IndicatorSet:
    """Occupancy fractions by s x s (x s) subcell center sampling.

    Boolean combinations are evaluated on analytic membership at subcell
    centers before aggregation, so unions/differences do not double-count
    partial cells.  An integer ``dims`` counts cells along the longest box
    axis; shorter axes get proportional counts so cells stay cubic.
    """
    if isinstance(dims, int):
        dims = grid_dims(w.box, dims)
    geom = GridGeometry(w.box, tuple(dims))
    s = int(subcell)
    fine = geom.refine(s)
    pts = fine.centers_flat()
    inside = region.contains(pts).astype(float).reshape(fine.dims)
    occ = _block_mean(inside, s)
    if not np.any(occ > 0):
        raise EmptyRegionError("region does not meet the truncation box at this resolution")
    return IndicatorSet(occ, geom, s, tail)


def _block_mean(arr, k):
    if k == 1:
        return arr
    shape = []
    for d in arr.shape:
        shape.extend([d // k, k])
    view = arr.reshape(shape)
    axes = tuple(range(1, 2 * arr.ndim, 2))
    return view.mean(axis=axes)


# ---------------------------------------------------------------------------
# cell mass caches
# ---------------------------------------------------------------------------

_GL2 = (-0.5 / math.sqrt(3.0), 0.5 / math.sqrt(3.0))  # 2-pt Gauss nodes on [-1/2, 1/2]


def cell_masses(w: WeightedDensity, geom: GridGeometry):
    """Per-cell integral of f over the cell (2x2 Gauss product rule), cached."""
    cache = w._caches.setdefault("cell_masses", {})
    key = geom.key()
    if key not in cache:
        h = geom.spacing
        axes = []
        for i in range(geom.dim):
            c = geom.axis_centers(i)
            axes.append(np.concatenate([c + _GL2[0] * h[i], c + _GL2[1] * h[i]]))
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = w.eval(pts).reshape([2 * d for d in geom.dims])
        acc = vals
        for ax in range(geom.dim):
            d = geom.dims[ax]
            a = np.take(acc, range(0, d), axis=ax)
            b = np.take(acc, range(d, 2 * d), axis=ax)
            acc = 0.5 * (a + b)
        cache[key] = acc * float(np.prod(h))
    return cache[key]


def _clip_square_quad(corners_x, corners_y, sd, fvals_fun):
    """Integrate f over {cell : x.v >= r} for cells cut by the line (2D).

    corners: (m, 4) arrays of cell corner coordinates in edge order;
    sd: (m, 4) signed distances x.v - r at those corners.
    Returns per-cell integrals via polygon clipping + degree-2 triangle Gauss.
    """
    m = corners_x.shape[0]
    poly_x = np.full((m, 8), np.nan)
    poly_y = np.full((m, 8), np.nan)
    count = np.zeros(m, dtype=int)
    for e in range(4):
        j = (e + 1) % 4
        ax, ay, asd = corners_x[:, e], corners_y[:, e], sd[:, e]
        bx, by, bsd = corners_x[:, j], corners_y[:, j], sd[:, j]
        keep = asd >= 0
        idx = np.where(keep)[0]
        poly_x[idx, count[idx]] = ax[idx]
        poly_y[idx, count[idx]] = ay[idx]
        count[idx] += 1
        crossing = (asd >= 0) != (bsd >= 0)
        idx = np.where(crossing)[0]
        tt = asd[idx] / (asd[idx] - bsd[idx])
        poly_x[idx, count[idx]] = ax[idx] + tt * (bx[idx] - ax[idx])
        poly_y[idx, count[idx]] = ay[idx] + tt * (by[idx] - ay[idx])
        count[idx] += 1
    out = np.zeros(m)
    max_v = int(count.max(initial=0))
    # fan triangulation from vertex 0; degree-5 7-point rule per triangle
    w7 = np.array([0.225,
                   0.132394152788506, 0.132394152788506, 0.132394152788506,
                   0.125939180544827, 0.125939180544827, 0.125939180544827])
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    for k in range(1, max_v - 1):
        valid = count >= k + 2
        idx = np.where(valid)[0]
        if idx.size == 0:
            continue
        x0, y0 = poly_x[idx, 0], poly_y[idx, 0]
        x1, y1 = poly_x[idx, k], poly_y[idx, k]
        x2, y2 = poly_x[idx, k + 1], poly_y[idx, k + 1]
        area = 0.5 * np.abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
        acc = np.zeros(idx.size)
        for wq, (l0, l1, l2) in zip(w7, bary):
            px = l0 * x0 + l1 * x1 + l2 * x2
            py = l0 * y0 + l1 * y1 + l2 * y2
            acc += wq * fvals_fun(px, py)
        out[idx] += acc * area
    return out


def halfspace_cut_masses(w: WeightedDensity, geom: GridGeometry, hs: HalfSpace):
    """Per-cell integral of f over cell /\\ H(v, r); exact clipping in 2D.

    In 1D the cut is an interval split; in 3D cut cells fall back to dense
    midpoint subsampling (8^3), which is accurate to ~1e-8 relative.
    """
    cache = w._caches.setdefault("cut_masses", {})
    key = (geom.key(), tuple(np.round(hs.v_arr, 15)), round(float(hs.r), 15))
    if key in cache:
        return cache[key]
    W = cell_masses(w, geom)
    if math.isinf(hs.r):
        out = W.copy() if hs.r < 0 else np.zeros_like(W)
        cache[key] = out
        return out
    v = hs.v_arr
    h = geom.spacing
    centers = geom.centers_flat()
    t = centers @ v
    half_reach = 0.5 * float(np.sum(np.abs(v) * h))
    full = t - hs.r >= half_reach
    cut = np.abs(t - hs.r) < half_reach
    out = np.where(full.reshape(geom.dims), W, 0.0)
    idx = np.where(cut)[0]
    if idx.size:
        if geom.dim == 2:
            cx, cy = centers[idx, 0], centers[idx, 1]
            dx, dy = 0.5 * h[0], 0.5 * h[1]
            corn_x = np.stack([cx - dx, cx + dx, cx + dx, cx - dx], axis=1)
            corn_y = np.stack([cy - dy, cy - dy, cy + dy, cy + dy], axis=1)
            sd = corn_x * v[0] + corn_y * v[1] - hs.r
            vals = _clip_square_quad(
                corn_x, corn_y, sd,
                lambda px, py: w.eval(np.stack([px, py], axis=-1)),
            )
        elif geom.dim == 1:
            cx = centers[idx, 0]
            lo = cx - 0.5 * h[0]
            hi = cx + 0.5 * h[0]
            if v[0] > 0:
                a = np.maximum(lo, hs.r)
                b = hi
            else:
                a = lo
                b = np.minimum(hi, -hs.r)
            vals = np.zeros(idx.size)
            for kk in range(idx.size):
                if b[kk] > a[kk]:
                    line = w.line_density(np.zeros(1), np.ones(1))
                    vals[kk] = float(line.segment_masses(np.array([a[kk], b[kk]]))[0])
        else:
            sub = 8
            vals = np.zeros(idx.size)
            offs = (np.arange(sub) + 0.5) / sub - 0.5
            mesh = np.meshgrid(*([offs] * geom.dim), indexing="ij")
            local = np.stack([m.ravel() for m in mesh], axis=-1) * h
            cellvol = float(np.prod(h)) / sub**geom.dim
            for kk, c in enumerate(idx):
                pts = centers[c] + local
                inside = pts @ v >= hs.r
                vals[kk] = float(np.sum(w.eval(pts[inside]))) * cellvol
        flat = out.ravel()
        flat[idx] = vals
        out = flat.reshape(geom.dims)
    cache[key] = out
    return out


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


def _tail_mass(w: WeightedDensity, tail: TailConvention):
    if tail.kind == "empty":
        return 0.0
    out_mass = max(0.0, w.total_mass().tail_bound)
    if tail.kind == "full":
        # analytic outside mass where available, else the declared bound
        try:
            exact = _analytic_outside(w)
        except Exception:
            exact = out_mass
        return exact
    # halfspace tails: between 0 and the full outside mass; use half with
    # the bound folded into downstream budgets (tails are <= tail_tol).
    return 0.0


def _analytic_outside(w: WeightedDensity):
    total_in = w.box_mass()
    if hasattr(w, "analytic_total"):
        return max(0.0, w.analytic_total() - total_in)
    if hasattr(w, "factors"):
        full = float(np.prod([g.total for g in w.factors]))
        return max(0.0, full - total_in)
    return max(0.0, w.total_mass().tail_bound)


def mu_measure(w: WeightedDensity, E: IndicatorSet):
    """mu(E): occupancy-weighted cell masses plus the declared tail term."""
    W = cell_masses(w, E.geom)
    return float(np.sum(E.occ * W)) + _tail_mass(w, E.tail)


def symm_diff_measure(w: WeightedDensity, E: IndicatorSet, F: IndicatorSet):
    """mu(E Delta F) via |occ_E - occ_F| weighting (exact voxel identity)."""
    E, F = _align(E, F)
    W = cell_masses(w, E.geom)
    return float(np.sum(np.abs(E.occ - F.occ) * W))


def set_minus_measure(w: WeightedDensity, E: IndicatorSet, F: IndicatorSet):
    """mu(E \\ F) = sum max(occ_E - occ_F, 0) * W."""
    E, F = _align(E, F)
    W = cell_masses(w, E.geom)
    return float(np.sum(np.maximum(E.occ - F.occ, 0.0) * W))


def minus_halfspace_measure(w: WeightedDensity, E: IndicatorSet, hs: HalfSpace):
    """mu(E \\ H) as an exact functional of the occupancy field."""
    W = cell_masses(w, E.geom)
    W_in = halfspace_cut_masses(w, E.geom, hs)
    return float(np.sum(E.occ * (W - W_in)))


def symm_diff_halfspace_measure(w: WeightedDensity, E: IndicatorSet, hs: HalfSpace):
    """mu(E Delta H) = mu(E \\ H) + mu(H \\ E), half-space side cut exactly."""
    W = cell_masses(w, E.geom)
    W_in = halfspace_cut_masses(w, E.geom, hs)
    return float(np.sum(E.occ * (W - W_in))) + float(np.sum((1.0 - E.occ) * W_in))


def half_space_equal_measure(w: WeightedDensity, E, v, mass_tol_factor=1e-9) -> HalfSpace:
    """Largest half-space H(v, r) with mu(H) = mu(E) (smallest such r).

    The bisection runs on the resolution-independent marginal
    m(r) = mu({x . v >= r}), so r does not inherit grid error.
    """
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    target = mu_measure(w, E) if isinstance(E, IndicatorSet) else float(E)
    total = w.total_mass()
    tol = mass_tol_factor * max(float(total), 1e-300)
    if target > float(total) + total.tail_bound + 1e3 * tol:
        raise ValueError(f"target mass {target} exceeds total mass {float(total)}")
    if target >= float(total) - tol:
        return HalfSpace(tuple(v), -math.inf)
    if target <= tol:
        return HalfSpace(tuple(v), math.inf)
    lo_r, hi_r = _bracket_halfspace(w, v, target)
    for _ in range(200):
        mid = 0.5 * (lo_r + hi_r)
        m = w.halfspace_mass(v, mid)
        if m > target:
            lo_r = mid
        else:
            hi_r = mid
        if abs(m - target) <= tol and (hi_r - lo_r) < 1e-12 * (1 + abs(mid)):
            break
    return HalfSpace(tuple(v), 0.5 * (lo_r + hi_r))


def _bracket_halfspace(w, v, target):
    span = float(np.linalg.norm(w.box.extents))
    center = 0.5 * (w.box.lo_arr + w.box.hi_arr)
    c = float(center @ v)
    lo, hi = c - span, c + span
    while w.halfspace_mass(v, lo) < target and lo > c - 50 * span:
        lo -= span
    while w.halfspace_mass(v, hi) > target and hi < c + 50 * span:
        hi += span
    return lo, hi


def rasterize_halfspace(w: WeightedDensity, hs: HalfSpace, dims, subcell=4) -> IndicatorSet:
    """Rasterize H(v, r) with the matching half-space tail convention."""
    if isinstance(dims, int):
        dims = grid_dims(w.box, dims)
    if math.isinf(hs.r):
        geom = GridGeometry(w.box, tuple(dims))
        return IndicatorSet.full(geom) if hs.r < 0 else IndicatorSet.empty(geom)
    region = HalfSpaceRegion(tuple(hs.v_arr), hs.r)
    return rasterize(region, w, dims, subcell=subcell, tail=halfspace_outside(hs.v_arr, hs.r))
