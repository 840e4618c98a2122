"""Weighted measures mu = f * L^n with evaluable densities.

A weight is a non-negative integrable density f on R^n, carried together
with a truncation box outside of which the remaining mass is certified to
be at most ``tail_tol``.  Every analytic kind exposes:

* pointwise evaluation ``f(x)`` and the gradient ``grad f(x)``,
* restrictions to lines (fiber densities) with CDF / quantile access,
* closed-form or quadrature masses of half-spaces and hyperplane integrals,
* the total mass as a value plus a certified tail interval.

Line restrictions are the workhorse: symmetrization, equal-measure
half-spaces and the graph perimeter formula all reduce to 1D integrals of
f along fibers.  For (possibly anisotropic, shifted) Gaussian kinds these
integrals are exact via erf; product kinds use per-factor closed forms on
axis fibers and adaptive quadrature elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erf, erfinv

__all__ = [
    "Box",
    "Frame",
    "MassEstimate",
    "OutOfRangeError",
    "UnsupportedDensityError",
    "Density1D",
    "Gaussian1D",
    "Logistic1D",
    "Uniform1D",
    "Exponential1D",
    "Mixture1D",
    "WeightedDensity",
    "IsotropicGaussian",
    "AnisotropicGaussian",
    "ProductDensity",
    "GridField",
    "GridSampled",
    "Perturbed",
    "logistic_product",
    "eval_density",
    "eval_grad",
    "fiber_cdf",
    "fiber_quantile",
    "total_mass",
]

_SQRT_PI = math.sqrt(math.pi)
_QUAD_TOL = 1e-10


class OutOfRangeError(ValueError):
    """Requested mass exceeds the available fiber or total mass."""


class UnsupportedDensityError(ValueError):
    """Operation is not available for this density kind / location."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned truncation box [lo_1,hi_1] x ... x [lo_n,hi_n]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("box lo/hi dimension mismatch")
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("box must have positive extent on every axis")

    @property
    def dim(self):
        return len(self.lo)

    @property
    def lo_arr(self):
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_arr(self):
        return np.asarray(self.hi, dtype=float)

    @property
    def extents(self):
        return self.hi_arr - self.lo_arr

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo_arr) & (x <= self.hi_arr), axis=-1)

    def chord(self, origin, direction):
        """Parameter interval [t0, t1] of the line origin + t*direction inside the box.

        Returns (0.0, 0.0) when the line misses the box.
        """
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        t0, t1 = -np.inf, np.inf
        for i in range(self.dim):
            d = direction[i]
            if abs(d) < 1e-300:
                if not (self.lo[i] - 1e-12 <= origin[i] <= self.hi[i] + 1e-12):
                    return 0.0, 0.0
                continue
            a = (self.lo[i] - origin[i]) / d
            b = (self.hi[i] - origin[i]) / d
            t0 = max(t0, min(a, b))
            t1 = min(t1, max(a, b))
        if not (t0 < t1):
            return 0.0, 0.0
        return float(t0), float(t1)


@dataclass(frozen=True)
class Frame:
    """Orthonormal frame with a distinguished fiber axis.

    ``matrix`` holds the basis vectors e_1 ... e_n as columns; fibers run
    along column ``axis`` and the remaining columns coordinatize the fiber
    base (the hyperplane orthogonal to the fiber direction).
    """

    matrix: tuple
    axis: int

    def __post_init__(self):
        q = self.matrix_arr
        n = q.shape[0]
        if q.shape != (n, n):
            raise ValueError("frame matrix must be square")
        if not np.allclose(q.T @ q, np.eye(n), atol=1e-12):
            raise ValueError("frame columns must be orthonormal to 1e-12")
        if not 0 <= self.axis < n:
            raise ValueError("fiber axis out of range")

    @property
    def matrix_arr(self):
        return np.asarray(self.matrix, dtype=float)

    @property
    def dim(self):
        return len(self.matrix)

    @property
    def direction(self):
        """Unit vector along the fibers."""
        return self.matrix_arr[:, self.axis].copy()

    @property
    def base_vectors(self):
        """(n, n-1) matrix whose columns span the fiber base."""
        q = self.matrix_arr
        cols = [i for i in range(q.shape[0]) if i != self.axis]
        return q[:, cols]

    def base_point(self, xp):
        """Embed base coordinates xp (scalar for n=2) into R^n."""
        xp = np.atleast_1d(np.asarray(xp, dtype=float))
        return self.base_vectors @ xp

    @staticmethod
    def standard(dim, axis=None):
        if axis is None:
            axis = dim - 1
        return Frame(tuple(map(tuple, np.eye(dim))), axis)

    @staticmethod
    def from_direction(v):
        """Frame whose fiber axis equals the unit vector v (Householder completion)."""
        v = np.asarray(v, dtype=float)
        n = v.size
        nv = np.linalg.norm(v)
        if abs(nv - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        v = v / nv
        e = np.zeros(n)
        e[n - 1] = 1.0
        w = e - v
        if np.linalg.norm(w) < 1e-14:
            q = np.eye(n)
        else:
            w = w / np.linalg.norm(w)
            q = np.eye(n) - 2.0 * np.outer(w, w)
        q[:, n - 1] = v  # kill rounding drift on the axis column
        return Frame(tuple(map(tuple, q)), n - 1)

    @staticmethod
    def rotation_2d(theta, axis=1):
        c, s = math.cos(theta), math.sin(theta)
        return Frame(((c, -s), (s, c)), axis)


class MassEstimate(float):
    """Mass value with a certified upper bound on the truncated tail.

    Behaves as a float equal to the in-box mass; the true total lies in
    ``[value, value + tail_bound]``.
    """

    def __new__(cls, value, tail_bound):
        obj = super().__new__(cls, value)
        obj.tail_bound = float(tail_bound)
        return obj

    def __repr__(self):
        return f"MassEstimate({float(self)!r}, tail_bound={self.tail_bound!r})"


# ---------------------------------------------------------------------------
# 1D densities
# ---------------------------------------------------------------------------


class Density1D:
    """One-dimensional density with CDF access.

    Subclasses provide vectorized ``eval``/``cdf``/``grad`` plus ``total``,
    ``support`` and an optional ``symmetry_center``.
    """

    total: float
    support: tuple  # (lo, hi), possibly infinite
    symmetry_center = None

    def eval(self, t):
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def grad(self, t):
        t = np.asarray(t, dtype=float)
        h = 1e-6 * max(1.0, float(np.max(np.abs(t))) if t.size else 1.0)
        return (self.eval(t + h) - self.eval(t - h)) / (2 * h)

    def finite_bracket(self):
        """Finite [a, b] with cdf(a) <= 1e-15*total and cdf(b) >= (1-1e-15)*total."""
        lo, hi = self.support
        if not math.isfinite(lo) or not math.isfinite(hi):
            a = -1.0 if not math.isfinite(lo) else lo
            b = 1.0 if not math.isfinite(hi) else hi
            while not math.isfinite(lo) and self.cdf(a) > 1e-15 * self.total:
                a = 2 * a - abs(b) - 1
            while not math.isfinite(hi) and self.cdf(b) < (1 - 1e-15) * self.total:
                b = 2 * b + abs(a) + 1
            return a, b
        return lo, hi

    def quantile(self, p):
        """Smallest t with cdf(t) = p (left end of any flat run)."""
        return _cdf_invert(self.cdf, self.total, self.support, self.finite_bracket(), p, largest=False)

    def quantile_upper(self, p):
        """Smallest c with total - cdf(c) = p (the largest half-line [c, oo))."""
        return _cdf_invert(self.cdf, self.total, self.support, self.finite_bracket(), self.total - p, largest=False)


def _cdf_invert(cdf, total, support, bracket, m, largest):
    """Invert a nondecreasing CDF at mass m, honoring support conventions.

    largest=False returns the smallest solution, largest=True the largest
    (the two differ only across zero-density runs).
    """
    tol = 1e-13 * max(total, 1.0)
    if m <= tol:
        if largest:
            # largest t with cdf(t)=0: the infimum of the support
            lo = support[0]
            return lo if math.isfinite(lo) else -math.inf
        return -math.inf if not math.isfinite(support[0]) else support[0]
    if m >= total - tol:
        if largest:
            return math.inf
        # smallest t carrying the full mass: supremum of support
        hi = support[1]
        return hi if math.isfinite(hi) else math.inf
    a, b = bracket
    fa, fb = cdf(a) - m, cdf(b) - m
    if fa > 0 or fb < 0:
        raise OutOfRangeError(f"mass {m} not attainable on this fiber (total {total})")
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = cdf(mid) - m
        if largest:
            if fm > 0:
                b = mid
            else:
                a = mid
        else:
            if fm >= 0:
                b = mid
            else:
                a = mid
        if b - a < 1e-14 * (1 + abs(a) + abs(b)):
            break
    return 0.5 * (a + b)


class Gaussian1D(Density1D):
    """f(t) = C * exp(-c (t-a)^2)."""

    def __init__(self, C=None, c=0.5, a=0.0, normalized=True):
        if C is None:
            C = math.sqrt(c / math.pi) if normalized else 1.0
        self.C, self.c, self.a = float(C), float(c), float(a)
        if self.c <= 0:
            raise ValueError("c must be positive")
        self.total = self.C * math.sqrt(math.pi / self.c)
        self.support = (-math.inf, math.inf)
        self.symmetry_center = self.a

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        return self.C * np.exp(-self.c * (t - self.a) ** 2)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return self.total * 0.5 * (1.0 + erf(math.sqrt(self.c) * (t - self.a)))

    def grad(self, t):
        t = np.asarray(t, dtype=float)
        return -2.0 * self.c * (t - self.a) * self.eval(t)

    def quantile(self, p):
        if p <= 0:
            return -math.inf
        if p >= self.total:
            return math.inf
        return self.a + erfinv(2.0 * p / self.total - 1.0) / math.sqrt(self.c)

    def quantile_upper(self, p):
        return self.quantile(self.total - p)

    def tail_above(self, t):
        return self.total * 0.5 * math.erfc(math.sqrt(self.c) * (t - self.a))


class Logistic1D(Density1D):
    """Standard logistic density f(t) = 1/(e^{t/2} + e^{-t/2})^2, rescaled.

    With scale s and location m: f(t) = f_std((t-m)/s)/s, so F(t) =
    1/(1 + e^{-(t-m)/s}) and the total mass is 1.
    """

    def __init__(self, scale=1.0, loc=0.0):
        self.scale, self.loc = float(scale), float(loc)
        self.total = 1.0
        self.support = (-math.inf, math.inf)
        self.symmetry_center = self.loc

    def eval(self, t):
        u = (np.asarray(t, dtype=float) - self.loc) / self.scale
        # sech^2(u/2)/4, computed stably for large |u|
        return 0.25 / (np.cosh(u / 2.0) ** 2) / self.scale

    def cdf(self, t):
        u = (np.asarray(t, dtype=float) - self.loc) / self.scale
        return 0.5 * (1.0 + np.tanh(u / 2.0))

    def grad(self, t):
        u = (np.asarray(t, dtype=float) - self.loc) / self.scale
        return -self.eval(t) * np.tanh(u / 2.0) / self.scale

    def quantile(self, p):
        if p <= 0:
            return -math.inf
        if p >= 1:
            return math.inf
        return self.loc + self.scale * math.log(p / (1.0 - p))

    def quantile_upper(self, p):
        return self.quantile(1.0 - p)

    def tail_above(self, t):
        u = (t - self.loc) / self.scale
        return 1.0 / (1.0 + math.exp(u))


class Uniform1D(Density1D):
    """f = height on [lo, hi], zero elsewhere."""

    def __init__(self, lo, hi, height=1.0):
        self.lo, self.hi, self.height = float(lo), float(hi), float(height)
        self.total = (self.hi - self.lo) * self.height
        self.support = (self.lo, self.hi)
        self.symmetry_center = 0.5 * (self.lo + self.hi)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lo) & (t <= self.hi), self.height, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(t - self.lo, 0.0, self.hi - self.lo) * self.height

    def grad(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def tail_above(self, t):
        return self.total - float(self.cdf(t))


class Exponential1D(Density1D):
    """f(t) = rate * e^{-rate (t - loc)} for t >= loc (asymmetric test density)."""

    def __init__(self, rate=1.0, loc=0.0):
        self.rate, self.loc = float(rate), float(loc)
        self.total = 1.0
        self.support = (self.loc, math.inf)

    def eval(self, t):
        u = np.asarray(t, dtype=float) - self.loc
        return np.where(u >= 0, self.rate * np.exp(-self.rate * np.maximum(u, 0.0)), 0.0)

    def cdf(self, t):
        u = np.asarray(t, dtype=float) - self.loc
        return np.where(u >= 0, 1.0 - np.exp(-self.rate * np.maximum(u, 0.0)), 0.0)

    def grad(self, t):
        return -self.rate * self.eval(t)

    def quantile(self, p):
        if p <= 0:
            return self.loc
        if p >= 1:
            return math.inf
        return self.loc - math.log(1.0 - p) / self.rate

    def tail_above(self, t):
        return 1.0 - float(self.cdf(t))


class Mixture1D(Density1D):
    """Convex-ish combination sum_i w_i * component_i (w_i > 0)."""

    def __init__(self, components, weights):
        self.components = list(components)
        self.weights = [float(w) for w in weights]
        if len(self.components) != len(self.weights):
            raise ValueError("components/weights length mismatch")
        self.total = sum(w * comp.total for comp, w in zip(self.components, self.weights))
        lo = min(c.support[0] for c in self.components)
        hi = max(c.support[1] for c in self.components)
        self.support = (lo, hi)

    def eval(self, t):
        return sum(w * c.eval(t) for c, w in zip(self.components, self.weights))

    def cdf(self, t):
        return sum(w * c.cdf(t) for c, w in zip(self.components, self.weights))

    def grad(self, t):
        return sum(w * c.grad(t) for c, w in zip(self.components, self.weights))

    def tail_above(self, t):
        return sum(w * c.tail_above(t) for c, w in zip(self.components, self.weights))


# ---------------------------------------------------------------------------
# line restrictions (fiber densities)
# ---------------------------------------------------------------------------


class LineDensity:
    """Density of mu restricted to a line t -> origin + t * direction.

    This is the 1D measure f * H^1 on the fiber; ``cdf`` integrates from
    t = -infinity, ``quantile_upper(p)`` returns the smallest c such that
    the half-line [c, oo) carries mass p (the paper-facing convention of
    the largest half-line), and ``quantile_lower(m)`` returns the largest
    t whose lower half-line carries mass m (the height function
    convention, so zero-density runs extend the returned value).
    """

    total: float
    support: tuple

    def eval(self, t):
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def upper_mass(self, t):
        return self.total - self.cdf(t)

    def finite_bracket(self):
        lo, hi = self.support
        a = lo if math.isfinite(lo) else -1.0
        b = hi if math.isfinite(hi) else 1.0
        while not math.isfinite(lo) and self.cdf(a) > 1e-15 * self.total:
            a = 2 * a - abs(b) - 1
        while not math.isfinite(hi) and self.cdf(b) < (1 - 1e-15) * self.total:
            b = 2 * b + abs(a) + 1
        return a, b

    def quantile_lower(self, m):
        return _cdf_invert(self.cdf, self.total, self.support, self.finite_bracket(), m, largest=True)

    def quantile_upper(self, p, tol_factor=1e-9):
        if p > self.total * (1 + 1e-9) + 1e-15:
            raise OutOfRangeError(f"requested mass {p} exceeds fiber mass {self.total}")
        p = min(p, self.total)
        return _cdf_invert(
            self.cdf, self.total, self.support, self.finite_bracket(), self.total - p, largest=False
        )

    def segment_masses(self, edges):
        """Masses of the intervals [edges[i], edges[i+1]] (vectorized)."""
        c = self.cdf(np.asarray(edges, dtype=float))
        return np.diff(c)


class ZeroLine(LineDensity):
    def __init__(self):
        self.total = 0.0
        self.support = (-math.inf, math.inf)

    def eval(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def cdf(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def quantile_lower(self, m):
        return math.inf  # whole line carries the (zero) mass

    def quantile_upper(self, p, tol_factor=1e-9):
        if p > 1e-300:
            raise OutOfRangeError("zero fiber cannot carry positive mass")
        return -math.inf


class GaussianLine(LineDensity):
    """Restriction of a Gaussian C exp(-sum c_i (x_i - a_i)^2) to a line.

    Along x(t) = p + t d the exponent is A t^2 + B t + D, so every mass
    computation reduces to erf.
    """

    def __init__(self, amplitude, A, B, D):
        self.C = float(amplitude)
        self.A, self.B, self.D = float(A), float(B), float(D)
        if self.A <= 0:
            raise ValueError("degenerate line restriction")
        self.t0 = -self.B / (2.0 * self.A)
        self.peak_log = self.B**2 / (4.0 * self.A) - self.D
        self.total = self.C * math.exp(self.peak_log) * math.sqrt(math.pi / self.A)
        self.support = (-math.inf, math.inf)

    @staticmethod
    def from_gaussian(C, c_vec, a_vec, origin, direction):
        c = np.asarray(c_vec, dtype=float)
        d = np.asarray(direction, dtype=float)
        q = np.asarray(origin, dtype=float) - np.asarray(a_vec, dtype=float)
        A = float(np.sum(c * d * d))
        B = 2.0 * float(np.sum(c * d * q))
        D = float(np.sum(c * q * q))
        if C <= 0:
            return ZeroLine()
        return GaussianLine(C, A, B, D)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        return self.C * np.exp(-(self.A * t * t + self.B * t + self.D))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return self.total * 0.5 * (1.0 + erf(math.sqrt(self.A) * (t - self.t0)))

    def quantile_lower(self, m):
        tol = 1e-13 * max(self.total, 1e-300)
        if m <= tol:
            return -math.inf
        if m >= self.total - tol:
            return math.inf
        return self.t0 + erfinv(2.0 * m / self.total - 1.0) / math.sqrt(self.A)

    def quantile_upper(self, p, tol_factor=1e-9):
        if p > self.total * (1 + 1e-9) + 1e-15:
            raise OutOfRangeError(f"requested mass {p} exceeds fiber mass {self.total}")
        p = min(p, self.total)
        if p <= 0:
            return math.inf
        if p >= self.total:
            return -math.inf
        return self.t0 + erfinv(1.0 - 2.0 * p / self.total) / math.sqrt(self.A)

    def segment_masses(self, edges):
        e = math.sqrt(self.A) * (np.asarray(edges, dtype=float) - self.t0)
        return self.total * 0.5 * np.diff(erf(e))


class SumLine(LineDensity):
    """Sum of line densities (used by Gaussian-with-bumps weights)."""

    def __init__(self, parts):
        self.parts = [p for p in parts if not isinstance(p, ZeroLine)]
        self.total = sum(p.total for p in self.parts)
        self.support = (-math.inf, math.inf)

    def eval(self, t):
        if not self.parts:
            return np.zeros_like(np.asarray(t, dtype=float))
        return sum(p.eval(t) for p in self.parts)

    def cdf(self, t):
        if not self.parts:
            return np.zeros_like(np.asarray(t, dtype=float))
        return sum(p.cdf(t) for p in self.parts)

    def segment_masses(self, edges):
        return sum(p.segment_masses(edges) for p in self.parts)


class ScaledShiftedLine(LineDensity):
    """prefactor * base1d evaluated at coordinate a0 + sign * t (axis fibers)."""

    def __init__(self, prefactor, base, a0, sign):
        self.k = float(prefactor)
        self.base = base
        self.a0 = float(a0)
        self.sign = int(sign)
        self.total = self.k * base.total
        lo, hi = base.support
        if self.sign > 0:
            self.support = (lo - self.a0 if math.isfinite(lo) else -math.inf,
                            hi - self.a0 if math.isfinite(hi) else math.inf)
        else:
            self.support = (self.a0 - hi if math.isfinite(hi) else -math.inf,
                            self.a0 - lo if math.isfinite(lo) else math.inf)

    def _coord(self, t):
        return self.a0 + self.sign * np.asarray(t, dtype=float)

    def eval(self, t):
        return self.k * self.base.eval(self._coord(t))

    def cdf(self, t):
        if self.k == 0.0:
            return np.zeros_like(np.asarray(t, dtype=float))
        c = self.base.cdf(self._coord(t))
        if self.sign > 0:
            return self.k * c
        return self.k * (self.base.total - c)


class QuadLine(LineDensity):
    """Adaptive-quadrature line restriction for kinds without closed forms.

    ``support`` is a finite interval outside of which the restricted density
    is below 1e-15 of its peak (derived from the truncation box chord plus a
    decay allowance).
    """

    def __init__(self, fun, t_lo, t_hi):
        self.fun = fun
        self.support = (float(t_lo), float(t_hi))
        if t_hi <= t_lo:
            self.total = 0.0
        else:
            self.total = float(integrate.quad(fun, t_lo, t_hi, epsabs=_QUAD_TOL, limit=200)[0])
        self._cache = {}

    def eval(self, t):
        return self.fun(np.asarray(t, dtype=float))

    def cdf(self, t):
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(arr)
        t_lo, t_hi = self.support
        for i, ti in enumerate(arr.ravel()):
            if ti <= t_lo:
                out.ravel()[i] = 0.0
            elif ti >= t_hi:
                out.ravel()[i] = self.total
            else:
                key = round(float(ti), 14)
                if key not in self._cache:
                    self._cache[key] = float(
                        integrate.quad(self.fun, t_lo, ti, epsabs=_QUAD_TOL, limit=200)[0]
                    )
                out.ravel()[i] = self._cache[key]
        return out if np.ndim(t) else float(out.ravel()[0])

    def segment_masses(self, edges):
        # 3-point Gauss-Legendre per segment: exact enough at grid pitch
        edges = np.asarray(edges, dtype=float)
        a, b = edges[:-1], edges[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        xg = math.sqrt(3.0 / 5.0)
        wsum = (5.0 * self.fun(mid - xg * half) + 8.0 * self.fun(mid) + 5.0 * self.fun(mid + xg * half)) / 9.0
        return wsum * (b - a)


# ---------------------------------------------------------------------------
# weighted densities on R^n
# ---------------------------------------------------------------------------


class WeightedDensity:
    """Base class: a density f >= 0 on R^n with truncation box and tail bound."""

    kind: str

    def __init__(self, dim, box, tail_tol):
        self.dim = int(dim)
        self.box = box
        self.tail_tol = float(tail_tol)
        self._caches = {}

    # -- mandatory surface -------------------------------------------------

    def eval(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def line_density(self, origin, direction) -> LineDensity:
        raise NotImplementedError

    def box_mass(self):
        """mu(truncation box), analytic where possible."""
        raise NotImplementedError

    def certified_tail_bound(self):
        """Certified upper bound on mu(R^n \\ box)."""
        raise NotImplementedError

    # -- common helpers ----------------------------------------------------

    def log_eval(self, x):
        v = self.eval(x)
        with np.errstate(divide="ignore"):
            return np.log(v)

    def total_mass(self):
        return MassEstimate(self.box_mass(), self.certified_tail_bound())

    def max_density(self):
        """Upper bound for f on the box (exact at unimodal peaks)."""
        raise NotImplementedError

    def plane_integral(self, v, r):
        """integral of f over the hyperplane {x . v = r}."""
        raise NotImplementedError

    def halfspace_mass(self, v, r):
        """mu(H(v, r)) = mu({x . v >= r}), resolution independent."""
        raise NotImplementedError

    def _check_tail(self):
        bound = self.certified_tail_bound()
        if bound > self.tail_tol * (1 + 1e-9):
            raise ValueError(
                f"truncation box too small: certified tail {bound:.3e} > tail_tol {self.tail_tol:.3e}"
            )

    def fiber_line(self, frame: Frame, xp):
        origin = frame.base_point(xp)
        return self.line_density(origin, frame.direction)


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"points must have last dimension {dim}")
    return x


class _GaussianBase(WeightedDensity):
    """Common machinery for f(x) = C exp(-sum_i c_i (x_i - a_i)^2)."""

    def __init__(self, dim, C, c_vec, a_vec, box=None, tail_tol=1e-8):
        self.C = float(C)
        self.c_vec = np.asarray(c_vec, dtype=float)
        self.a_vec = np.asarray(a_vec, dtype=float)
        if np.any(self.c_vec <= 0):
            raise ValueError("Gaussian decay rates must be positive")
        if self.C < 0:
            raise ValueError("amplitude must be non-negative")
        if box is None:
            box = self._auto_box(dim, tail_tol)
        super().__init__(dim, box, tail_tol)
        if self.C > 0:
            self._check_tail()

    def _auto_box(self, dim, tail_tol):
        # union bound over axes: per-axis two-sided tail <= tail_tol / dim
        los, his = [], []
        for i in range(dim):
            g = Gaussian1D(C=1.0, c=self.c_vec[i], a=self.a_vec[i], normalized=False)
            frac = tail_tol / (2.0 * dim)
            z = erfinv(1.0 - 2.0 * min(frac, 0.5 - 1e-16))
            half = float(z) / math.sqrt(self.c_vec[i])
            los.append(self.a_vec[i] - half)
            his.append(self.a_vec[i] + half)
        return Box(tuple(los), tuple(his))

    def _factors(self):
        return [
            Gaussian1D(C=1.0, c=self.c_vec[i], a=self.a_vec[i], normalized=False)
            for i in range(self.dim)
        ]

    def eval(self, x):
        x = _as_points(x, self.dim)
        q = (x - self.a_vec) ** 2 * self.c_vec
        return self.C * np.exp(-np.sum(q, axis=-1))

    def grad(self, x):
        x = _as_points(x, self.dim)
        f = self.eval(x)
        return -2.0 * self.c_vec * (x - self.a_vec) * f[..., None]

    def log_eval(self, x):
        x = _as_points(x, self.dim)
        if self.C == 0:
            return np.full(x.shape[:-1], -np.inf)
        return math.log(self.C) - np.sum((x - self.a_vec) ** 2 * self.c_vec, axis=-1)

    def line_density(self, origin, direction):
        return GaussianLine.from_gaussian(self.C, self.c_vec, self.a_vec, origin, direction)

    def analytic_total(self):
        return self.C * float(np.prod(np.sqrt(math.pi / self.c_vec)))

    def box_mass(self):
        if self.C == 0:
            return 0.0
        m = self.C
        for i, g in enumerate(self._factors()):
            m *= float(g.cdf(self.box.hi[i]) - g.cdf(self.box.lo[i]))
        return m

    def certified_tail_bound(self):
        if self.C == 0:
            return 0.0
        total = self.analytic_total()
        frac = 0.0
        for i, g in enumerate(self._factors()):
            frac += float(g.cdf(self.box.lo[i]) + g.tail_above(self.box.hi[i])) / g.total
        return total * frac

    def max_density(self):
        peak = np.clip(self.a_vec, self.box.lo_arr, self.box.hi_arr)
        return float(self.eval(peak))

    def plane_integral(self, v, r):
        if self.C == 0:
            return 0.0
        v = np.asarray(v, dtype=float)
        n = self.dim
        if n == 1:
            return float(self.eval(np.array([r * v[0]])))
        # orthonormal basis B of v-perp; exponent restricted to the plane is
        # u^T Q u + b . u + const with Q = B^T diag(c) B
        frame = Frame.from_direction(v / np.linalg.norm(v))
        B = frame.base_vectors
        M = np.diag(self.c_vec)
        p0 = r * v / np.linalg.norm(v) - self.a_vec
        Q = B.T @ M @ B
        b = 2.0 * B.T @ M @ p0
        const = float(p0 @ M @ p0)
        Qi = np.linalg.inv(Q)
        expo = -const + 0.25 * float(b @ Qi @ b)
        return self.C * math.exp(expo) * math.pi ** ((n - 1) / 2.0) / math.sqrt(np.linalg.det(Q))

    def halfspace_mass(self, v, r):
        if self.C == 0:
            return 0.0
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        # x . v is Gaussian with mean a.v and "variance" sum v_i^2/(2 c_i)
        mean = float(v @ self.a_vec)
        sig = math.sqrt(float(np.sum(v * v / (2.0 * self.c_vec))))
        z = (r - mean) / (sig * math.sqrt(2.0))
        return self.analytic_total() * 0.5 * math.erfc(z)


class IsotropicGaussian(_GaussianBase):
    """f(x) = C exp(-c |x - a|^2): the PS class in dimensions n >= 2."""

    kind = "isotropic_gaussian"

    def __init__(self, dim, C=None, c=0.5, a=None, box=None, tail_tol=1e-8):
        a = np.zeros(dim) if a is None else np.asarray(a, dtype=float)
        if C is None:
            C = (c / math.pi) ** (dim / 2.0)  # normalized to unit mass
        super().__init__(dim, C, np.full(dim, float(c)), a, box=box, tail_tol=tail_tol)
        self.c = float(c)

    @staticmethod
    def standard(dim, half_width=6.0, tail_tol=1e-8):
        """Normalized standard Gaussian (2 pi)^{-n/2} e^{-|x|^2/2} on [-L, L]^n."""
        box = Box((-half_width,) * dim, (half_width,) * dim)
        return IsotropicGaussian(dim, C=(2.0 * math.pi) ** (-dim / 2.0), c=0.5, box=box, tail_tol=tail_tol)

    def translated(self, a_new, box=None):
        a_new = np.asarray(a_new, dtype=float)
        shift = a_new - self.a_vec
        if box is None:
            box = Box(tuple(self.box.lo_arr + shift), tuple(self.box.hi_arr + shift))
        return IsotropicGaussian(self.dim, C=self.C, c=self.c, a=a_new, box=box, tail_tol=self.tail_tol)


class AnisotropicGaussian(_GaussianBase):
    """f(x) = C exp(-sum_i c_i (x_i - a_i)^2) with a diagonal rate vector."""

    kind = "anisotropic_gaussian"

    def __init__(self, dim, c_vec, C=None, a=None, box=None, tail_tol=1e-8):
        a = np.zeros(dim) if a is None else np.asarray(a, dtype=float)
        c_vec = np.asarray(c_vec, dtype=float)
        if C is None:
            C = float(np.prod(np.sqrt(c_vec / math.pi)))  # normalized
        super().__init__(dim, C, c_vec, a, box=box, tail_tol=tail_tol)


class ProductDensity(WeightedDensity):
    """f(x) = prod_i f_i(x_i) for 1D factors carried explicitly."""

    kind = "product_1d"

    def __init__(self, factors, box=None, tail_tol=1e-8):
        self.factors = list(factors)
        dim = len(self.factors)
        if box is None:
            box = self._auto_box(tail_tol)
        super().__init__(dim, box, tail_tol)
        self._check_tail()

    def _auto_box(self, tail_tol):
        los, his = [], []
        for g in self.factors:
            frac = tail_tol / (2.0 * len(self.factors))
            lo = g.quantile(frac * g.total) if hasattr(g, "quantile") else g.support[0]
            hi = g.quantile((1 - frac) * g.total) if hasattr(g, "quantile") else g.support[1]
            if not math.isfinite(lo):
                lo = g.support[0]
            if not math.isfinite(hi):
                hi = g.support[1]
            los.append(lo)
            his.append(hi)
        return Box(tuple(los), tuple(his))

    def eval(self, x):
        x = _as_points(x, self.dim)
        out = np.ones(x.shape[:-1])
        for i, g in enumerate(self.factors):
            out = out * g.eval(x[..., i])
        return out

    def grad(self, x):
        x = _as_points(x, self.dim)
        vals = [g.eval(x[..., i]) for i, g in enumerate(self.factors)]
        grads = [g.grad(x[..., i]) for i, g in enumerate(self.factors)]
        out = np.empty(x.shape)
        for i in range(self.dim):
            prod = grads[i]
            for j in range(self.dim):
                if j != i:
                    prod = prod * vals[j]
            out[..., i] = prod
        return out

    def line_density(self, origin, direction):
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        axis = int(np.argmax(np.abs(direction)))
        if abs(abs(direction[axis]) - 1.0) < 1e-12:
            pref = 1.0
            for i, g in enumerate(self.factors):
                if i != axis:
                    pref *= float(g.eval(origin[i]))
            if pref == 0.0:
                return ZeroLine()
            return ScaledShiftedLine(pref, self.factors[axis], origin[axis],
                                     1 if direction[axis] > 0 else -1)
        # generic direction: quadrature over the box chord with decay margin
        t0, t1 = self.box.chord(origin, direction)
        if t0 == t1 == 0.0 and not self.box.contains(origin):
            return ZeroLine()
        margin = 0.5 * float(np.max(self.box.extents))
        fun = lambda t: self.eval(origin + np.multiply.outer(np.asarray(t, dtype=float), direction))
        return QuadLine(fun, t0 - margin, t1 + margin)

    def box_mass(self):
        m = 1.0
        for i, g in enumerate(self.factors):
            m *= float(g.cdf(self.box.hi[i]) - g.cdf(self.box.lo[i]))
        return m

    def certified_tail_bound(self):
        total = float(np.prod([g.total for g in self.factors]))
        frac = 0.0
        for i, g in enumerate(self.factors):
            frac += (float(g.cdf(self.box.lo[i])) + float(g.tail_above(self.box.hi[i]))) / g.total
        return total * frac

    def max_density(self):
        m = 1.0
        for i, g in enumerate(self.factors):
            ts = np.linspace(self.box.lo[i], self.box.hi[i], 4097)
            m *= float(np.max(g.eval(ts)))
        return m

    def plane_integral(self, v, r):
        v = np.asarray(v, dtype=float)
        axis = int(np.argmax(np.abs(v)))
        if abs(abs(v[axis]) - 1.0) < 1e-12:
            coord = r * np.sign(v[axis])
            out = float(self.factors[axis].eval(coord))
            for i, g in enumerate(self.factors):
                if i != axis:
                    out *= g.total
            return out
        if self.dim != 2:
            raise UnsupportedDensityError("tilted plane integrals implemented for n=2 products only")
        frame = Frame.from_direction(v / np.linalg.norm(v))
        b = frame.base_vectors[:, 0]
        origin = r * v / np.linalg.norm(v)
        line = self.line_density(origin, b)
        return line.total

    def halfspace_mass(self, v, r):
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        axis = int(np.argmax(np.abs(v)))
        if abs(abs(v[axis]) - 1.0) < 1e-12:
            g = self.factors[axis]
            other = 1.0
            for i, gg in enumerate(self.factors):
                if i != axis:
                    other *= gg.total
            if v[axis] > 0:
                return other * (g.total - float(g.cdf(r)))
            return other * float(g.cdf(-r))
        if self.dim != 2:
            raise UnsupportedDensityError("tilted half-space masses implemented for n=2 products only")
        span = float(np.max(self.box.extents))
        lo = r
        hi = r + 1.5 * span
        val = integrate.quad(lambda s: self.plane_integral(v, s), lo, hi, epsabs=_QUAD_TOL, limit=200)[0]
        return float(val)


def logistic_product(scales, locs=None, box=None, tail_tol=1e-8):
    """Product of 1D logistic densities with the given per-axis scales."""
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    locs = np.zeros_like(scales) if locs is None else np.atleast_1d(np.asarray(locs, dtype=float))
    factors = [Logistic1D(scale=s, loc=m) for s, m in zip(scales, locs)]
    return ProductDensity(factors, box=box, tail_tol=tail_tol)


@dataclass(frozen=True)
class GridField:
    """Sampled density values at cell centers of a regular grid over a box."""

    box: Box
    values: np.ndarray  # shape = dims

    @property
    def dims(self):
        return self.values.shape

    def spacing(self):
        return self.box.extents / np.asarray(self.dims, dtype=float)


class GridSampled(WeightedDensity):
    """Density given by samples at cell centers; linear interpolation off-center.

    All tail mass is declared, not certified: evaluation outside the box is 0.
    """

    kind = "grid_sampled"

    def __init__(self, field: GridField, tail_tol=0.0):
        if np.any(field.values < 0):
            raise ValueError("density samples must be non-negative")
        super().__init__(field.box.dim, field.box, tail_tol)
        self.field = field
        self._h = field.spacing()

    def _to_index(self, x):
        return (np.asarray(x, dtype=float) - self.box.lo_arr) / self._h - 0.5

    def eval(self, x):
        from scipy.ndimage import map_coordinates

        x = _as_points(x, self.dim)
        idx = self._to_index(x)
        flat = idx.reshape(-1, self.dim).T
        vals = map_coordinates(self.field.values, flat, order=1, mode="nearest")
        out = vals.reshape(x.shape[:-1])
        inside = self.box.contains(x)
        return np.where(inside, out, 0.0)

    def grad(self, x):
        x = _as_points(x, self.dim)
        idx = self._to_index(x)
        band = (idx < 0.5) | (idx > np.asarray(self.field.dims) - 1.5)
        if np.any(band):
            raise UnsupportedDensityError("gradient unavailable on the grid boundary layer")
        out = np.empty(x.shape)
        for i in range(self.dim):
            step = np.zeros(self.dim)
            step[i] = self._h[i]
            out[..., i] = (self.eval(x + step) - self.eval(x - step)) / (2.0 * self._h[i])
        return out

    def line_density(self, origin, direction):
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        t0, t1 = self.box.chord(origin, direction)
        if t0 == t1:
            return ZeroLine()
        fun = lambda t: self.eval(origin + np.multiply.outer(np.asarray(t, dtype=float), direction))
        return QuadLine(fun, t0, t1)

    def box_mass(self):
        return float(np.sum(self.field.values)) * float(np.prod(self._h))

    def certified_tail_bound(self):
        return self.tail_tol

    def max_density(self):
        return float(np.max(self.field.values))

    def plane_integral(self, v, r):
        raise UnsupportedDensityError("plane integrals are not provided for grid_sampled kinds")

    def halfspace_mass(self, v, r):
        raise UnsupportedDensityError("use grid cut masses for grid_sampled half-space masses")


class Perturbed(WeightedDensity):
    """Multiplicative Gaussian-bump perturbation of a base density.

    f(x) = f_base(x) * (1 + sum_i amp_i * exp(-|x - p_i|^2 / (2 s_i^2)))
    with every amp_i > -1, which keeps f non-negative.  When the base is
    Gaussian every term is again a Gaussian, so line restrictions and box
    masses stay closed-form.
    """

    kind = "perturbed"

    def __init__(self, base: WeightedDensity, bumps, tail_tol=None):
        self.base = base
        self.bumps = [(np.asarray(p, dtype=float), float(s), float(a)) for (p, s, a) in bumps]
        if any(a <= -1.0 for (_, _, a) in self.bumps):
            raise ValueError("bump amplitudes must exceed -1")
        amp_sum = sum(abs(a) for (_, _, a) in self.bumps)
        tol = tail_tol if tail_tol is not None else base.tail_tol * (1.0 + amp_sum)
        super().__init__(base.dim, base.box, tol)

    def _bump_vals(self, x):
        x = _as_points(x, self.dim)
        out = np.ones(x.shape[:-1])
        for (p, s, a) in self.bumps:
            out = out + a * np.exp(-np.sum((x - p) ** 2, axis=-1) / (2.0 * s * s))
        return out

    def eval(self, x):
        return self.base.eval(x) * self._bump_vals(x)

    def grad(self, x):
        x = _as_points(x, self.dim)
        g = self.base.grad(x) * self._bump_vals(x)[..., None]
        f = self.base.eval(x)
        for (p, s, a) in self.bumps:
            bump = a * np.exp(-np.sum((x - p) ** 2, axis=-1) / (2.0 * s * s))
            g = g + f[..., None] * bump[..., None] * (-(x - p) / (s * s))
        return g

    def _gaussian_terms(self):
        """Per-term (C, c_vec, a_vec) if the base is Gaussian, else None."""
        if not isinstance(self.base, _GaussianBase):
            return None
        terms = [(self.base.C, self.base.c_vec, self.base.a_vec)]
        for (p, s, a) in self.bumps:
            c_b = np.full(self.dim, 1.0 / (2.0 * s * s))
            c_new = self.base.c_vec + c_b
            # product of two Gaussians: complete the square componentwise
            mu = (self.base.c_vec * self.base.a_vec + c_b * p) / c_new
            log_amp = -float(np.sum(self.base.c_vec * self.base.a_vec**2 + c_b * p**2 - c_new * mu**2))
            terms.append((a * self.base.C * math.exp(log_amp), c_new, mu))
        return terms

    def line_density(self, origin, direction):
        terms = self._gaussian_terms()
        if terms is not None:
            return SumLine([GaussianLine.from_gaussian(C, c, a, origin, direction) for (C, c, a) in terms])
        t0, t1 = self.box.chord(origin, direction)
        if t0 == t1:
            return ZeroLine()
        margin = 0.5 * float(np.max(self.box.extents))
        fun = lambda t: self.eval(origin + np.multiply.outer(np.asarray(t, dtype=float), direction))
        return QuadLine(fun, t0 - margin, t1 + margin)

    def _term_densities(self):
        terms = self._gaussian_terms()
        if terms is None:
            raise UnsupportedDensityError("perturbed masses need a Gaussian base")
        outs = []
        for (C, c, a) in terms:
            g = _GaussianBase(self.dim, abs(C), c, a, box=self.box, tail_tol=np.inf)
            outs.append((math.copysign(1.0, C), g))
        return outs

    def box_mass(self):
        return sum(s * g.box_mass() for s, g in self._term_densities())

    def certified_tail_bound(self):
        return sum(g.certified_tail_bound() for _, g in self._term_densities())

    def max_density(self):
        amp = 1.0 + sum(max(a, 0.0) for (_, _, a) in self.bumps)
        return self.base.max_density() * amp

    def plane_integral(self, v, r):
        return sum(s * g.plane_integral(v, r) for s, g in self._term_densities())

    def halfspace_mass(self, v, r):
        return sum(s * g.halfspace_mass(v, r) for s, g in self._term_densities())


# ---------------------------------------------------------------------------
# operation-level API (spec surface)
# ---------------------------------------------------------------------------


def eval_density(w: WeightedDensity, x):
    """f(x); exact closed forms for analytic kinds, interpolation for grids."""
    return w.eval(x)


def eval_grad(w: WeightedDensity, x):
    """grad f(x); closed forms for analytic kinds, central differences for grids."""
    return w.grad(x)


def fiber_cdf(w: WeightedDensity, frame: Frame, xp, t):
    """Mass of the fiber half-line (-oo, t] through base point xp along the frame axis."""
    line = w.fiber_line(frame, xp)
    return float(line.cdf(float(t))) if np.ndim(t) == 0 else line.cdf(t)


def fiber_quantile(w: WeightedDensity, frame: Frame, xp, p):
    """Smallest c whose fiber half-line [c, oo) carries mass p (largest half-line)."""
    line = w.fiber_line(frame, xp)
    return line.quantile_upper(float(p))


def total_mass(w: WeightedDensity) -> MassEstimate:
    """mu(box) together with the certified tail bound."""
    return w.total_mass()
