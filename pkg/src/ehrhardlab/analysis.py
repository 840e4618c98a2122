"""Characterization toolkit: 1D PS criteria, product structure, quadratic log-profiles.

Four families of checks, each mirroring a mechanism of the characterization
of perimeter-symmetrization (PS) weights:

* 1D symmetry: a PS weight on the line with positive continuous density is
  symmetric about its median (equal tail masses force equal densities).
* I-function subadditivity: with I = f o F^{-1}, half-lines minimize the
  enlargement perimeter iff f(F^{-1}(p+q)) <= f(F^{-1}(p)) + f(F^{-1}(q)).
* Product structure: half-space minimality in a frame forces the
  separation of variables d_axis f = K(c) f with K independent of the
  base point; integrating K reconstructs the axis factor.
* Quadratic log-profiles: product structure in all frames forces the
  even log-profile g to satisfy 2g(sqrt(k) a) + 2g(a) =
  g((sqrt(k)-1)a) + g((sqrt(k)+1)a) and g(ka) = k^2 g(a), hence
  g(a) = -c a^2 with c > 0 for integrability.

The violation search closes the loop: for anisotropic Gaussian weights a
certified perimeter increase under some symmetrization direction exists,
while the isotropic Gaussian (and its translates) admits none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .perimeter import perimeter_bv, perimeter_minkowski
from .sets import Ball, HalfSpaceRegion, Region, Strip, Union, rasterize
from .symmetrize import symmetrize
from .weights import Density1D, Frame, GridSampled, UnsupportedDensityError, WeightedDensity

__all__ = [
    "PSReport",
    "ProductReport",
    "QuadraticFit",
    "NotEvenError",
    "symmetry_test_1d",
    "i_subadditivity_test",
    "ps_test_1d",
    "product_structure_test",
    "log_profile_recursion_check",
    "log_density_profile",
    "SearchRecord",
    "SearchResult",
    "violation_search",
    "default_families",
]


class NotEvenError(ValueError):
    """Profile fails the evenness precondition of the recursion check."""


@dataclass(frozen=True)
class PSReport:
    """1D perimeter-symmetrization criteria with witness values."""

    median: float
    symmetry_verdict: str  # PASS | FAIL
    symmetry_worst: tuple  # (t, f(m - t), f(m + t), relative deviation)
    subadd_verdict: str
    subadd_worst: tuple  # (p, q, I(p+q) - I(p) - I(q))

    @property
    def is_ps(self):
        return self.symmetry_verdict == "PASS" and self.subadd_verdict == "PASS"


@dataclass(frozen=True)
class ProductReport:
    """Separation-of-variables diagnosis in a frame."""

    verdict: str  # product | not_product | degenerate
    levels: tuple
    k_means: tuple  # weighted mean of d_axis f / f per level
    dispersions: tuple  # weighted stddev over the base per level
    threshold: float
    roundtrip_rel_error: float | None
    axis_factor: tuple | None  # B(c) samples on `levels`
    base_factor: tuple | None  # A(x') samples on the base grid

    @property
    def max_dispersion(self):
        return max(self.dispersions) if self.dispersions else math.inf


@dataclass(frozen=True)
class QuadraticFit:
    """Residuals of the log-profile functional equations plus the -c a^2 fit."""

    alphas: tuple
    samples: tuple
    c: float
    max_recursion_residual: float
    max_base_residual: float

    @property
    def integrable(self):
        return self.c > 0


# ---------------------------------------------------------------------------
# 1D PS criteria
# ---------------------------------------------------------------------------


def _check_no_interior_zeros(w1: Density1D, a, b, n=4097):
    ts = np.linspace(a, b, n)
    f = np.asarray(w1.eval(ts), dtype=float)
    pos = f > 0
    if not np.any(pos):
        raise UnsupportedDensityError("density vanishes identically on its bracket")
    i0, i1 = np.argmax(pos), n - 1 - np.argmax(pos[::-1])
    if np.any(f[i0 : i1 + 1] <= 0):
        raise UnsupportedDensityError("density has interior zeros; 1D criteria need positive support")


def symmetry_test_1d(w1: Density1D, n_grid=2048, tol=1e-6):
    """Check f(m - t) = f(m + t) about the median m = F^{-1}(total / 2).

    PASS iff the maximum relative deviation (against the larger of the two
    values) stays below ``tol`` wherever f is above 1e-12 of its peak.
    """
    a, b = w1.finite_bracket()
    _check_no_interior_zeros(w1, a, b)
    m = w1.quantile(0.5 * w1.total)
    span = max(b - m, m - a)
    ts = np.linspace(0.0, span, n_grid)
    left = np.asarray(w1.eval(m - ts), dtype=float)
    right = np.asarray(w1.eval(m + ts), dtype=float)
    fmax = max(float(left.max()), float(right.max()), 1e-300)
    denom = np.maximum(np.maximum(left, right), 1e-12 * fmax)
    rel = np.abs(left - right) / denom
    rel[np.maximum(left, right) < 1e-12 * fmax] = 0.0
    worst = int(np.argmax(rel))
    verdict = "PASS" if float(rel[worst]) <= tol else "FAIL"
    return m, verdict, (float(ts[worst]), float(left[worst]), float(right[worst]), float(rel[worst]))


def i_subadditivity_test(w1: Density1D, n_grid=400, tol=1e-9):
    """Scan the triangular (p, q) grid for I(p+q) > I(p) + I(q) violations.

    I = f o F^{-1} is evaluated on the lattice k * total / (n_grid + 1), so
    p, q and p + q all live on the same precomputed quantile array.
    """
    total = w1.total
    ks = np.arange(1, n_grid + 1)
    masses = ks * (total / (n_grid + 1))
    qs = np.array([w1.quantile(p) for p in masses])
    I = np.asarray(w1.eval(qs), dtype=float)
    i_idx = np.arange(1, n_grid + 1)
    sum_idx = i_idx[:, None] + i_idx[None, :]
    valid = sum_idx <= n_grid
    Ipq = np.where(valid, I[np.clip(sum_idx - 1, 0, n_grid - 1)], -np.inf)
    D = Ipq - (I[:, None] + I[None, :])
    D = np.where(valid, D, -np.inf)
    i, j = np.unravel_index(int(np.argmax(D)), D.shape)
    worst = float(D[i, j])
    verdict = "PASS" if worst <= tol else "FAIL"
    return verdict, (float(masses[i]), float(masses[j]), worst)


def ps_test_1d(w1: Density1D, symmetry_tol=1e-6, subadd_grid=400, subadd_tol=1e-9) -> PSReport:
    """Full 1D PS report: symmetry about the median plus I-subadditivity."""
    m, sym_verdict, sym_worst = symmetry_test_1d(w1, tol=symmetry_tol)
    sub_verdict, sub_worst = i_subadditivity_test(w1, n_grid=subadd_grid, tol=subadd_tol)
    return PSReport(float(m), sym_verdict, sym_worst, sub_verdict, sub_worst)


# ---------------------------------------------------------------------------
# product structure
# ---------------------------------------------------------------------------


def product_structure_test(w: WeightedDensity, frame: Frame, levels=None, base_n=33,
                           threshold=None) -> ProductReport:
    """Test d_axis f(x', c) = K(c) f(x', c) with K independent of the base point.

    K-hat is the logarithmic axis derivative at sampled (x', c); the verdict
    is ``product`` iff the f-weighted dispersion of K-hat over x' stays below
    the threshold at every level.  The axis factor B is reconstructed by
    trapezoid integration of the mean K-hat and the base factor A as f at
    the reference level, giving the f = A * B round trip.
    """
    if threshold is None:
        threshold = 1e-3 if isinstance(w, GridSampled) else 1e-6
    d = frame.direction
    B = frame.base_vectors
    center = 0.5 * (w.box.lo_arr + w.box.hi_arr)
    R = 0.5 * float(np.min(w.box.extents))
    span = 0.95 * R / math.sqrt(w.dim)
    if levels is None:
        levels = np.linspace(-span, span, 33)
    levels = np.asarray(levels, dtype=float)
    us = np.linspace(-span, span, base_n)
    grids = np.meshgrid(*([us] * (w.dim - 1)), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=-1) if w.dim > 1 else np.zeros((1, 0))
    base_pts = U @ B.T if w.dim > 1 else np.zeros((1, w.dim))
    pts = center[None, None, :] + base_pts[:, None, :] + levels[None, :, None] * d[None, None, :]
    flat = pts.reshape(-1, w.dim)
    f = w.eval(flat).reshape(pts.shape[:2])
    if np.any(f < 1e-300):
        return ProductReport("degenerate", tuple(levels), (), (), threshold, None, None, None)
    grad = w.grad(flat)
    k_hat = (grad @ d).reshape(pts.shape[:2]) / f
    wsum = f.sum(axis=0)
    k_mean = (k_hat * f).sum(axis=0) / wsum
    disp = np.sqrt(((k_hat - k_mean[None, :]) ** 2 * f).sum(axis=0) / wsum)
    verdict = "product" if float(disp.max()) <= threshold else "not_product"
    # FTC reconstruction from the mean profile
    ref = levels.size // 2
    logB = _cumtrapz(k_mean, levels)
    logB = logB - logB[ref]
    Bfac = np.exp(logB)
    Afac = f[:, ref].copy()
    recon = Afac[:, None] * Bfac[None, :]
    roundtrip = float(np.max(np.abs(recon - f) / f))
    return ProductReport(
        verdict,
        tuple(map(float, levels)),
        tuple(map(float, k_mean)),
        tuple(map(float, disp)),
        threshold,
        roundtrip,
        tuple(map(float, Bfac)),
        tuple(map(float, Afac)),
    )


def _cumtrapz(y, x):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


# ---------------------------------------------------------------------------
# quadratic log-profile functional equations
# ---------------------------------------------------------------------------


def log_density_profile(w: WeightedDensity, direction, center=None):
    """g(alpha) = log f(center + alpha * d) - log f(center) along a unit direction."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    if center is None:
        center = getattr(w, "a_vec", np.zeros(w.dim))
    center = np.asarray(center, dtype=float)
    g0 = float(w.log_eval(center[None, :])[0])

    def g(alpha):
        alpha = np.asarray(alpha, dtype=float)
        pts = center[None, :] + np.atleast_1d(alpha)[:, None] * d[None, :]
        vals = w.log_eval(pts) - g0
        return vals if alpha.ndim else float(vals[0])

    return g


def log_profile_recursion_check(g, k_list=range(1, 10), alpha_grid=None,
                                even_tol=1e-9) -> QuadraticFit:
    """Evaluate the two functional-equation residual families and fit g ~ -c a^2.

    The recursion 2g(sqrt(k) a) + 2g(a) = g((sqrt(k)-1)a) + g((sqrt(k)+1)a)
    holds for rotation-invariant product structures; together with
    g(k a) = k^2 g(a) it pins g to a quadratic, and integrability demands a
    positive coefficient.
    """
    if alpha_grid is None:
        alpha_grid = np.linspace(0.05, 1.0, 40)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    g0 = float(np.asarray(g(np.zeros(1)))[0])

    def gs(a):
        return np.asarray(g(np.asarray(a, dtype=float))) - g0

    vals = gs(alpha_grid)
    scale = max(float(np.max(np.abs(vals))), 1e-30)
    even_dev = float(np.max(np.abs(vals - gs(-alpha_grid))))
    if even_dev > even_tol * max(scale, 1.0):
        raise NotEvenError(f"profile is not even: max |g(a) - g(-a)| = {even_dev:.3e}")
    rec_res = 0.0
    base_res = 0.0
    for k in k_list:
        sk = math.sqrt(float(k))
        lhs = 2.0 * gs(sk * alpha_grid) + 2.0 * vals
        rhs = gs((sk - 1.0) * alpha_grid) + gs((sk + 1.0) * alpha_grid)
        rec_res = max(rec_res, float(np.max(np.abs(lhs - rhs))))
        base_res = max(base_res, float(np.max(np.abs(gs(k * alpha_grid) - k * k * vals))))
    a2 = alpha_grid**2
    c = -float(np.sum(vals * a2) / np.sum(a2 * a2))
    return QuadraticFit(tuple(map(float, alpha_grid)), tuple(map(float, vals)),
                        c, rec_res, base_res)


# ---------------------------------------------------------------------------
# violation search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchRecord:
    family: str
    params: tuple
    direction: tuple
    resolution: int
    margin: float
    combined_budget: float
    margin_2x: float | None = None
    combined_budget_2x: float | None = None
    margin_minkowski: float | None = None
    minkowski_budget: float | None = None
    certified: bool = False


@dataclass
class SearchResult:
    found: bool
    record: SearchRecord | None
    evaluations: int
    best_uncertified: SearchRecord | None = None
    winning_set: object = None  # IndicatorSet of the certified violation


def _dir2(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def default_families(scale=1.0):
    """Parametric set families with declared parameter boxes (2D)."""
    s = scale

    def halfspaces():
        for theta in np.linspace(0.0, math.pi, 8, endpoint=False):
            for r in (-0.8 * s, -0.3 * s, 0.0, 0.3 * s, 0.8 * s):
                yield (theta, r), HalfSpaceRegion(tuple(_dir2(theta)), r)

    def strips():
        for theta in np.linspace(0.0, math.pi, 4, endpoint=False):
            for c in (-0.5 * s, 0.0, 0.5 * s):
                for width in (0.6 * s, 1.2 * s):
                    yield (theta, c, width), Strip(tuple(_dir2(theta)), c - width / 2, c + width / 2)

    def two_balls():
        for d in (0.8 * s, 1.6 * s):
            for phi in np.linspace(0.0, math.pi, 4, endpoint=False):
                for r1 in (0.4 * s, 0.8 * s):
                    for r2 in (0.4 * s, 0.8 * s):
                        u = _dir2(phi)
                        yield (d, phi, r1, r2), Union(Ball(tuple(d * u), r1), Ball(tuple(-d * u), r2))

    def wedges():
        for t1 in np.linspace(0.0, 2 * math.pi, 4, endpoint=False):
            for dt in (math.pi / 3, 2 * math.pi / 3):
                for r in (0.0, 0.5 * s):
                    yield (t1, dt, r), HalfSpaceRegion(tuple(_dir2(t1)), 0.0) & HalfSpaceRegion(
                        tuple(_dir2(t1 + dt)), r
                    )

    return {
        "tilted_halfspace": halfspaces,
        "strip": strips,
        "two_balls": two_balls,
        "wedge": wedges,
    }


def _margin_bv(w, region, v, res, subcell):
    E = rasterize(region, w, res, subcell=subcell)
    S = symmetrize(w, E, v)
    pe = perimeter_bv(w, E)
    ps = perimeter_bv(w, S)
    return ps.value - pe.value, pe.error_budget + ps.error_budget, E, S


def _margin_minkowski(w, region, v, res, subcell):
    E = rasterize(region, w, res, subcell=subcell)
    S = symmetrize(w, E, v)
    pe = perimeter_minkowski(w, E)
    ps = perimeter_minkowski(w, S)
    return ps.value - pe.value, pe.error_budget + ps.error_budget


def violation_search(w: WeightedDensity, directions=None, families=None, res=128,
                     subcell=4, budget=2000, refine_rounds=2, margin_factor=5.0) -> SearchResult:
    """Search set families and directions for Per(S_v(E)) > Per(E) violations.

    A candidate counts as a certified violation only when the bv margin
    exceeds ``margin_factor`` times the combined budget, reproduces at twice
    the resolution, and the Minkowski estimator confirms it beyond its own
    budgets.  Absence of a certificate is evidence, not proof, that the
    weight is a PS measure.
    """
    if directions is None:
        directions = [tuple(_dir2(k * math.pi / 8.0)) for k in range(8)]
    if families is None:
        families = default_families()
    evals = 0
    best = None  # (excess, margin, combined, family, params, v)
    for fam_name in sorted(families):
        for params, region in families[fam_name]():
            for v in directions:
                if evals >= budget:
                    break
                try:
                    margin, combined, _, _ = _margin_bv(w, region, np.asarray(v), res, subcell)
                except Exception:
                    continue
                evals += 1
                excess = margin - margin_factor * combined
                cand = (excess, margin, combined, fam_name, params, tuple(v))
                if best is None or cand[0] > best[0]:
                    best = cand
    if best is None:
        return SearchResult(False, None, evals)
    # local refinement on the leader (coordinate perturbations of params + angle)
    excess, margin, combined, fam_name, params, v = best
    region = _rebuild_region(fam_name, params)
    for _ in range(refine_rounds):
        improved = False
        theta_v = math.atan2(v[1], v[0])
        for dthv in (-0.1, 0.0, 0.1):
            for dparams in _param_perturbations(fam_name, params):
                reg = _rebuild_region(fam_name, dparams)
                vv = _dir2(theta_v + dthv)
                try:
                    m, cb, _, _ = _margin_bv(w, reg, vv, res, subcell)
                except Exception:
                    continue
                evals += 1
                if m - margin_factor * cb > excess:
                    excess, margin, combined = m - margin_factor * cb, m, cb
                    fam_name, params, v = fam_name, dparams, tuple(vv)
                    region = reg
                    improved = True
        if not improved:
            break
    record = SearchRecord(fam_name, tuple(params), tuple(v), res, margin, combined)
    if excess <= 0:
        return SearchResult(False, None, evals, best_uncertified=record)
    # certification: reproduce at 2x resolution and under the second estimator
    v_arr = np.asarray(v)
    margin2, combined2, E2, S2 = _margin_bv(w, region, v_arr, 2 * res, subcell)
    mk_margin, mk_budget = _margin_minkowski(w, region, v_arr, 2 * res, subcell)
    certified = (
        margin > margin_factor * combined
        and margin2 > margin_factor * combined2
        and mk_margin > margin_factor * mk_budget
    )
    record = SearchRecord(fam_name, tuple(params), tuple(v), res, margin, combined,
                          margin2, combined2, mk_margin, mk_budget, certified)
    if not certified:
        return SearchResult(False, None, evals, best_uncertified=record)
    return SearchResult(True, record, evals, winning_set=E2)


def _rebuild_region(fam_name, params):
    if fam_name == "tilted_halfspace":
        theta, r = params
        return HalfSpaceRegion(tuple(_dir2(theta)), r)
    if fam_name == "strip":
        theta, c, width = params
        return Strip(tuple(_dir2(theta)), c - width / 2, c + width / 2)
    if fam_name == "two_balls":
        d, phi, r1, r2 = params
        u = _dir2(phi)
        return Union(Ball(tuple(d * u), r1), Ball(tuple(-d * u), r2))
    if fam_name == "wedge":
        t1, dt, r = params
        return HalfSpaceRegion(tuple(_dir2(t1)), 0.0) & HalfSpaceRegion(tuple(_dir2(t1 + dt)), r)
    raise KeyError(fam_name)


def _param_perturbations(fam_name, params):
    params = tuple(params)
    yield params
    steps = {
        "tilted_halfspace": (0.1, 0.1),
        "strip": (0.1, 0.1, 0.1),
        "two_balls": (0.15, 0.1, 0.08, 0.08),
        "wedge": (0.1, 0.1, 0.1),
    }[fam_name]
    for i, st in enumerate(steps):
        for sgn in (-1.0, 1.0):
            p = list(params)
            p[i] += sgn * st
            yield tuple(p)
