"""File formats: density spec JSON, grid-field and indicator-set binaries.

* Density spec: JSON object {kind, params, dim, box, tail_tol}.
* GridField: magic "EHGF", version u32, n, dims[n], box bounds as
  binary64[2n], then row-major IEEE-754 binary64 little-endian samples.
* IndicatorSet: magic "EHIS", version u32, n, dims[n], subcell u8,
  tail-convention tag u8 (+ v, r as binary64 when half-space), then
  occupancy as binary64 row-major little-endian.

All integers are little-endian u32 unless stated otherwise.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .sets import (
    Ball,
    BoxRegion,
    EMPTY_OUTSIDE,
    FULL_OUTSIDE,
    GridGeometry,
    HalfSpaceRegion,
    IndicatorSet,
    Strip,
    TailConvention,
    Union,
    halfspace_outside,
)
from .weights import (
    AnisotropicGaussian,
    Box,
    Density1D,
    Exponential1D,
    Gaussian1D,
    GridField,
    GridSampled,
    IsotropicGaussian,
    Logistic1D,
    Mixture1D,
    Perturbed,
    ProductDensity,
    Uniform1D,
    WeightedDensity,
)

__all__ = [
    "density_to_spec",
    "density_from_spec",
    "load_density",
    "save_density",
    "write_grid_field",
    "read_grid_field",
    "write_indicator_set",
    "read_indicator_set",
    "parse_set_spec",
]

_GF_MAGIC = b"EHGF"
_IS_MAGIC = b"EHIS"
_VERSION = 1

_TAIL_TAGS = {"empty": 0, "full": 1, "halfspace": 2}
_TAIL_NAMES = {v: k for k, v in _TAIL_TAGS.items()}


# ---------------------------------------------------------------------------
# density specs (JSON)
# ---------------------------------------------------------------------------


def _factor_to_spec(g: Density1D):
    if isinstance(g, Gaussian1D):
        return {"kind": "gaussian", "C": g.C, "c": g.c, "a": g.a}
    if isinstance(g, Logistic1D):
        return {"kind": "logistic", "scale": g.scale, "loc": g.loc}
    if isinstance(g, Uniform1D):
        return {"kind": "uniform", "lo": g.lo, "hi": g.hi, "height": g.height}
    if isinstance(g, Exponential1D):
        return {"kind": "exponential", "rate": g.rate, "loc": g.loc}
    if isinstance(g, Mixture1D):
        return {
            "kind": "mixture",
            "weights": list(g.weights),
            "components": [_factor_to_spec(c) for c in g.components],
        }
    raise TypeError(f"unsupported 1D factor {type(g).__name__}")


def _factor_from_spec(spec):
    kind = spec["kind"]
    if kind == "gaussian":
        return Gaussian1D(C=spec["C"], c=spec["c"], a=spec["a"])
    if kind == "logistic":
        return Logistic1D(scale=spec["scale"], loc=spec.get("loc", 0.0))
    if kind == "uniform":
        return Uniform1D(spec["lo"], spec["hi"], spec.get("height", 1.0))
    if kind == "exponential":
        return Exponential1D(spec["rate"], spec.get("loc", 0.0))
    if kind == "mixture":
        return Mixture1D([_factor_from_spec(c) for c in spec["components"]], spec["weights"])
    raise ValueError(f"unknown 1D factor kind {kind!r}")


def density_to_spec(w: WeightedDensity) -> dict:
    box = [list(w.box.lo), list(w.box.hi)]
    common = {"dim": w.dim, "box": box, "tail_tol": w.tail_tol}
    if isinstance(w, IsotropicGaussian):
        return {"kind": "isotropic_gaussian",
                "params": {"C": w.C, "c": w.c, "a": list(w.a_vec)}, **common}
    if isinstance(w, AnisotropicGaussian):
        return {"kind": "anisotropic_gaussian",
                "params": {"C": w.C, "c": list(w.c_vec), "a": list(w.a_vec)}, **common}
    if isinstance(w, ProductDensity):
        return {"kind": "product_1d",
                "params": {"factors": [_factor_to_spec(g) for g in w.factors]}, **common}
    if isinstance(w, Perturbed):
        return {"kind": "perturbed",
                "params": {
                    "base": density_to_spec(w.base),
                    "bumps": [{"center": list(p), "sigma": s, "amplitude": a} for (p, s, a) in w.bumps],
                }, **common}
    if isinstance(w, GridSampled):
        raise TypeError("grid_sampled densities are stored as EHGF files; reference the path instead")
    raise TypeError(f"unsupported density {type(w).__name__}")


def density_from_spec(spec: dict, base_dir: Path | None = None) -> WeightedDensity:
    kind = spec["kind"]
    box = Box(tuple(spec["box"][0]), tuple(spec["box"][1])) if "box" in spec and spec["box"] else None
    tail_tol = spec.get("tail_tol", 1e-8)
    params = spec.get("params", {})
    if kind == "isotropic_gaussian":
        return IsotropicGaussian(spec["dim"], C=params.get("C"), c=params.get("c", 0.5),
                                 a=params.get("a"), box=box, tail_tol=tail_tol)
    if kind == "anisotropic_gaussian":
        return AnisotropicGaussian(spec["dim"], params["c"], C=params.get("C"),
                                   a=params.get("a"), box=box, tail_tol=tail_tol)
    if kind == "product_1d":
        factors = [_factor_from_spec(f) for f in params["factors"]]
        return ProductDensity(factors, box=box, tail_tol=tail_tol)
    if kind == "logistic_product":
        factors = [Logistic1D(scale=s, loc=m) for s, m in
                   zip(params["scales"], params.get("locs", [0.0] * len(params["scales"])))]
        return ProductDensity(factors, box=box, tail_tol=tail_tol)
    if kind == "perturbed":
        base = density_from_spec(params["base"], base_dir)
        bumps = [(b["center"], b["sigma"], b["amplitude"]) for b in params["bumps"]]
        return Perturbed(base, bumps, tail_tol=tail_tol)
    if kind == "grid_sampled":
        path = Path(params["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return GridSampled(read_grid_field(path), tail_tol=tail_tol)
    raise ValueError(f"unknown density kind {kind!r}")


def load_density(path) -> WeightedDensity:
    path = Path(path)
    spec = json.loads(path.read_text())
    return density_from_spec(spec, base_dir=path.parent)


def save_density(w: WeightedDensity, path):
    Path(path).write_text(json.dumps(density_to_spec(w), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# binary grid formats
# ---------------------------------------------------------------------------


def write_grid_field(field: GridField, path):
    n = field.box.dim
    with open(path, "wb") as fh:
        fh.write(_GF_MAGIC)
        fh.write(struct.pack("<II", _VERSION, n))
        fh.write(struct.pack(f"<{n}I", *field.dims))
        bounds = []
        for i in range(n):
            bounds.extend([field.box.lo[i], field.box.hi[i]])
        fh.write(struct.pack(f"<{2*n}d", *bounds))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_grid_field(path) -> GridField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _GF_MAGIC:
            raise ValueError(f"bad magic {magic!r} (expected EHGF)")
        version, n = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported EHGF version {version}")
        dims = struct.unpack(f"<{n}I", fh.read(4 * n))
        bounds = struct.unpack(f"<{2*n}d", fh.read(16 * n))
        lo = tuple(bounds[0::2])
        hi = tuple(bounds[1::2])
        count = int(np.prod(dims))
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).copy()
    return GridField(Box(lo, hi), values)


def write_indicator_set(E: IndicatorSet, path):
    n = E.geom.dim
    with open(path, "wb") as fh:
        fh.write(_IS_MAGIC)
        fh.write(struct.pack("<II", _VERSION, n))
        fh.write(struct.pack(f"<{n}I", *E.geom.dims))
        fh.write(struct.pack("<BB", int(E.subcell), _TAIL_TAGS[E.tail.kind]))
        bounds = []
        for i in range(n):
            bounds.extend([E.geom.box.lo[i], E.geom.box.hi[i]])
        fh.write(struct.pack(f"<{2*n}d", *bounds))
        if E.tail.kind == "halfspace":
            fh.write(struct.pack(f"<{n}d", *E.tail.v))
            fh.write(struct.pack("<d", E.tail.r))
        fh.write(np.ascontiguousarray(E.occ, dtype="<f8").tobytes())


def read_indicator_set(path) -> IndicatorSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _IS_MAGIC:
            raise ValueError(f"bad magic {magic!r} (expected EHIS)")
        version, n = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported EHIS version {version}")
        dims = struct.unpack(f"<{n}I", fh.read(4 * n))
        subcell, tail_tag = struct.unpack("<BB", fh.read(2))
        bounds = struct.unpack(f"<{2*n}d", fh.read(16 * n))
        lo, hi = tuple(bounds[0::2]), tuple(bounds[1::2])
        tail_kind = _TAIL_NAMES[tail_tag]
        if tail_kind == "halfspace":
            v = struct.unpack(f"<{n}d", fh.read(8 * n))
            (r,) = struct.unpack("<d", fh.read(8))
            tail = halfspace_outside(v, r)
        elif tail_kind == "full":
            tail = FULL_OUTSIDE
        else:
            tail = EMPTY_OUTSIDE
        count = int(np.prod(dims))
        occ = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).copy()
    geom = GridGeometry(Box(lo, hi), dims)
    return IndicatorSet(occ, geom, int(subcell), tail)


# ---------------------------------------------------------------------------
# CLI set-spec strings
# ---------------------------------------------------------------------------


def _parse_vec(token, dim=None):
    if token.startswith("e") and token[1:].isdigit():
        i = int(token[1:]) - 1
        n = dim if dim else max(2, i + 1)
        v = np.zeros(n)
        v[i] = 1.0
        return v
    if token.startswith("-e") and token[2:].isdigit():
        i = int(token[2:]) - 1
        n = dim if dim else max(2, i + 1)
        v = np.zeros(n)
        v[i] = -1.0
        return v
    return np.asarray([float(x) for x in token.split(",")], dtype=float)


def parse_set_spec(spec: str, dim: int):
    """Parse a --set string into a Region.

    Grammar (terms joined by '+'; each term contributes to a union):
      halfspace:<v>:<r>   ball:<cx,cy[,cz]>:<r>   box:<lo..>:<hi..>
      strip:<v>:<a>:<b>   Set difference uses '~' prefix on a term.
      <v> is 'e1', '-e2', or comma-separated components.
    """
    region = None
    for term in spec.split("+"):
        term = term.strip()
        negate = term.startswith("~")
        if negate:
            term = term[1:]
        parts = term.split(":")
        kind = parts[0]
        if kind == "halfspace":
            v = _parse_vec(parts[1], dim)
            r = float(parts[2])
            sub = HalfSpaceRegion(tuple(v / np.linalg.norm(v)), r)
        elif kind == "ball":
            center = _parse_vec(parts[1], dim)
            sub = Ball(tuple(center), float(parts[2]))
        elif kind == "box":
            lo = _parse_vec(parts[1], dim)
            hi = _parse_vec(parts[2], dim)
            sub = BoxRegion(tuple(lo), tuple(hi))
        elif kind == "strip":
            v = _parse_vec(parts[1], dim)
            sub = Strip(tuple(v / np.linalg.norm(v)), float(parts[2]), float(parts[3]))
        else:
            raise ValueError(f"unknown set term {kind!r}")
        if region is None:
            if negate:
                raise ValueError("first set term cannot be subtracted")
            region = sub
        else:
            region = (region - sub) if negate else Union(region, sub)
    if region is None:
        raise ValueError("empty set spec")
    return region
