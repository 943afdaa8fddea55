"""Grid-sampled scalar fields, discrete calculus and ball/sphere quadrature.

Fields live on uniform node-centered boxes. Two families of quadrature are
provided:

* node-centered rules (``ball_integral``, ``sphere_integral_sq`` with the
  default ``"shell"`` method) that count nodes whose centers fall inside the
  region, and
* cell-centered rules (``cell_ball_integral`` with fractional coverage,
  ``sphere_integral_sq(..., method="interp")``) used by the Weiss density,
  where O(h/r) biases of the node rules are too large at resolvable radii.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .errors import GeometryError, ResolutionError, SpecMismatchError

_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Uniform box grid with ``cells[i] + 1`` nodes along axis ``i``."""

    dim: int
    origin: tuple[float, ...]
    cells: tuple[int, ...]
    h: float

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        object.__setattr__(self, "h", float(self.h))
        if self.dim < 1:
            raise ValueError("grid dimension must be >= 1")
        if len(self.origin) != self.dim or len(self.cells) != self.dim:
            raise ValueError("origin and cells must have length dim")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if any(c < 1 for c in self.cells):
            raise ValueError("cells_per_axis must be positive")

    @classmethod
    def cube(cls, half_width: float, cells: int, dim: int = 2, center=None) -> "GridSpec":
        """Grid on ``center + [-half_width, half_width]^dim``."""
        center = np.zeros(dim) if center is None else np.asarray(center, float)
        h = 2.0 * half_width / cells
        return cls(dim, tuple(center - half_width), (cells,) * dim, h)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(self.h * c for c in self.cells)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.extent)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(o + self.h * np.arange(c + 1) for o, c in zip(self.origin, self.cells))

    @cached_property
    def cell_axes(self) -> tuple[np.ndarray, ...]:
        return tuple(o + self.h * (np.arange(c) + 0.5) for o, c in zip(self.origin, self.cells))

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def node_coords(self, index) -> np.ndarray:
        return np.asarray(self.origin) + self.h * np.asarray(index, dtype=float)

    def node_points(self) -> np.ndarray:
        """All node coordinates as an ``(N, dim)`` array in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def nearest_node(self, point) -> tuple[int, ...]:
        idx = np.rint((np.asarray(point, float) - np.asarray(self.origin)) / self.h).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.cells))
        return tuple(int(i) for i in idx)

    def contains_point(self, point, tol: float = _GEOM_TOL) -> bool:
        p = np.asarray(point, float)
        eps = tol * max(self.h, 1.0)
        return bool(np.all(p >= np.asarray(self.origin) - eps) and np.all(p <= self.upper + eps))

    def contains_ball(self, center, r: float) -> bool:
        c = np.asarray(center, float)
        eps = _GEOM_TOL * max(self.h, 1.0)
        return bool(
            np.all(c - r >= np.asarray(self.origin) - eps) and np.all(c + r <= self.upper + eps)
        )

    def distance_to_boundary(self, point) -> float:
        p = np.asarray(point, float)
        return float(min(np.min(p - np.asarray(self.origin)), np.min(self.upper - p)))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "origin": list(self.origin), "extent": list(self.extent),
                "cells_per_axis": list(self.cells), "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        dim = int(d["dim"])
        cells = [int(c) for c in d["cells_per_axis"]]
        if "h" in d:
            h = float(d["h"])
        else:
            h = float(d["extent"][0]) / cells[0]
        spec = cls(dim, tuple(d["origin"]), tuple(cells), h)
        if "extent" in d:
            ext = [float(e) for e in d["extent"]]
            if not np.allclose(ext, spec.extent, rtol=1e-9, atol=1e-12):
                raise ValueError("extent must equal h * cells_per_axis on every axis")
        return spec


def face_mask(spec: GridSpec) -> np.ndarray:
    """Boolean node mask of the box faces."""
    mask = np.zeros(spec.shape, dtype=bool)
    for ax in range(spec.dim):
        sl = [slice(None)] * spec.dim
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = -1
        mask[tuple(sl)] = True
    return mask


@dataclass
class ScalarField:
    """Node values of a candidate solution together with its Dirichlet mask."""

    spec: GridSpec
    values: np.ndarray
    boundary_mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise SpecMismatchError(
                f"values shape {self.values.shape} does not match grid {self.spec.shape}")
        if self.boundary_mask is None:
            self.boundary_mask = face_mask(self.spec)
        else:
            self.boundary_mask = np.asarray(self.boundary_mask, dtype=bool)
            if self.boundary_mask.shape != self.spec.shape:
                raise SpecMismatchError("boundary_mask shape does not match grid")

    @classmethod
    def from_function(cls, spec: GridSpec, fn, boundary_mask=None) -> "ScalarField":
        """Sample ``fn(*coordinate_arrays)`` at every node."""
        vals = np.broadcast_to(np.asarray(fn(*spec.mesh()), dtype=float), spec.shape)
        return cls(spec, np.array(vals), boundary_mask)

    def copy(self) -> "ScalarField":
        return ScalarField(self.spec, self.values.copy(), self.boundary_mask.copy())

    @property
    def h(self) -> float:
        return self.spec.h

    @cached_property
    def interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.spec.axes, self.values, method="linear",
                                       bounds_error=False, fill_value=None)

    def sample(self, points) -> np.ndarray:
        """Multilinear interpolation at ``points`` (shape ``(m, dim)``)."""
        pts = np.atleast_2d(np.asarray(points, float))
        return self.interpolator(pts)

    @cached_property
    def cell_energy(self) -> np.ndarray:
        return cell_gradient_energy(self)

    @cached_property
    def cell_positive(self) -> np.ndarray:
        return cell_positive_fraction(self)


@dataclass
class QField:
    """Positive Hölder coefficient sampled on the nodes of ``spec``."""

    spec: GridSpec
    values: np.ndarray
    lambda_bound: float
    holder_exponent: float = 1.0
    holder_seminorm: float | None = None
    _sampled_seminorm: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        self.values = np.broadcast_to(np.asarray(self.values, float), self.spec.shape).copy()
        lam = float(self.lambda_bound)
        if not 0 < self.holder_exponent <= 1:
            raise ValueError("holder_exponent must lie in (0, 1]")
        if np.any(self.values <= 0):
            raise ValueError("Q must be positive")
        if np.any(self.values < 1.0 / lam - 1e-12) or np.any(self.values > lam + 1e-12):
            raise ValueError(f"Q values violate 1/Lambda <= Q <= Lambda with Lambda={lam}")
        self._sampled_seminorm = _sampled_holder(self.spec, self.values, self.holder_exponent)
        if self.holder_seminorm is None:
            self.holder_seminorm = self._sampled_seminorm
        elif self.holder_seminorm < self._sampled_seminorm - 1e-12:
            raise ValueError("holder_seminorm is below the sampled Hölder quotient")

    @classmethod
    def constant(cls, spec: GridSpec, q: float = 1.0, lambda_bound: float | None = None) -> "QField":
        lam = max(q, 1.0 / q) if lambda_bound is None else lambda_bound
        return cls(spec, np.full(spec.shape, float(q)), lam, 1.0, 0.0)

    @classmethod
    def from_function(cls, spec: GridSpec, fn, lambda_bound: float, alpha: float = 1.0) -> "QField":
        vals = np.broadcast_to(np.asarray(fn(*spec.mesh()), float), spec.shape)
        return cls(spec, vals, lambda_bound, alpha)

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.values) == 0.0)

    def at(self, point) -> float:
        if self.is_constant:
            return float(self.values.flat[0])
        interp = RegularGridInterpolator(self.spec.axes, self.values, bounds_error=False,
                                         fill_value=None)
        return float(interp(np.atleast_2d(np.asarray(point, float)))[0])


def _sampled_holder(spec: GridSpec, values: np.ndarray, alpha: float) -> float:
    """Max Hölder quotient over axis-neighbor pairs and a deterministic far-pair sample."""
    if np.ptp(values) == 0.0:
        return 0.0
    best = 0.0
    for ax in range(spec.dim):
        d = np.abs(np.diff(values, axis=ax))
        best = max(best, float(d.max()) / spec.h ** alpha)
    pts = spec.node_points()
    flat = values.ravel()
    m = len(flat)
    idx = np.linspace(0, m - 1, num=min(m, 400)).astype(int)
    p = pts[idx]
    v = flat[idx]
    dist = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    quot = np.abs(v[:, None] - v[None, :]) / dist ** alpha
    return max(best, float(quot.max()))


def _require_ball(spec: GridSpec, center, r: float, min_cells: float) -> np.ndarray:
    c = np.asarray(center, float)
    if c.shape != (spec.dim,):
        raise GeometryError(f"center must have length {spec.dim}")
    if r < min_cells * spec.h * (1 - 1e-12):
        raise ResolutionError(f"under-resolved: r={r:g} < {min_cells:g}h={min_cells * spec.h:g}")
    if not spec.contains_ball(c, r):
        raise GeometryError(f"ball B_{r:g}({c.tolist()}) exits the grid box")
    return c


def _node_window(spec: GridSpec, c: np.ndarray, r: float):
    """Index slices of the smallest node sub-box containing B_r(c), plus its coordinates."""
    lo = np.maximum(np.floor((c - r - np.asarray(spec.origin)) / spec.h).astype(int) - 1, 0)
    hi = np.minimum(np.ceil((c + r - np.asarray(spec.origin)) / spec.h).astype(int) + 1,
                    np.asarray(spec.cells))
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    coords = [spec.axes[i][sl[i]] for i in range(spec.dim)]
    return sl, coords


def _dist2(coords, c) -> np.ndarray:
    grids = np.meshgrid(*[x - ci for x, ci in zip(coords, c)], indexing="ij")
    return sum(g * g for g in grids)


def gradient_sq(u: ScalarField, node) -> float:
    """Central-difference |Du|^2 at an interior node."""
    idx = tuple(int(i) for i in node)
    spec = u.spec
    if len(idx) != spec.dim:
        raise GeometryError("node index has wrong length")
    if any(i <= 0 or i >= c for i, c in zip(idx, spec.cells)):
        raise GeometryError("interior required")
    total = 0.0
    for ax in range(spec.dim):
        up = list(idx)
        dn = list(idx)
        up[ax] += 1
        dn[ax] -= 1
        d = (u.values[tuple(up)] - u.values[tuple(dn)]) / (2 * spec.h)
        total += d * d
    return float(total)


def ball_integral(spec: GridSpec, f, center, r: float) -> float:
    """Sum of ``f * h^n`` over nodes strictly inside B_r(center)."""
    c = _require_ball(spec, center, r, 2.0)
    f = np.broadcast_to(np.asarray(f, float), spec.shape)
    sl, coords = _node_window(spec, c, r)
    inside = _dist2(coords, c) < r * r
    return float(np.sum(f[sl][inside]) * spec.h ** spec.dim)


def sphere_points(dim: int, count: int) -> np.ndarray:
    """Deterministic quasi-uniform points on the unit sphere S^{dim-1}."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        t = (np.arange(count) + 0.5) * (2 * np.pi / count)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5 ** 0.5) * i
        s = np.sqrt(1 - z * z)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    from scipy.stats import norm, qmc
    pts = norm.ppf(qmc.Halton(d=dim, scramble=False).random(count + 1)[1:])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sphere_area(dim: int, r: float = 1.0) -> float:
    return dim * unit_ball_volume(dim) * r ** (dim - 1)


def unit_ball_volume(dim: int) -> float:
    """omega_n via the Gamma-function closed form."""
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def sphere_integral_sq(u: ScalarField, center, r: float, method: str = "shell") -> float:
    """Integral of u^2 over the sphere of radius ``r``.

    ``"shell"`` sums u^2 h^n / h over nodes with r - h/2 <= |x - c| < r + h/2.
    ``"interp"`` averages the multilinear interpolant over quasi-uniform
    sphere points and multiplies by the exact sphere area.
    """
    spec = u.spec
    c = _require_ball(spec, center, r, 2.0)
    if method == "shell":
        h = spec.h
        rr = r + h / 2
        if not spec.contains_ball(c, rr):
            sl, coords = _node_window(spec, c, r)
        else:
            sl, coords = _node_window(spec, c, rr)
        d = np.sqrt(_dist2(coords, c))
        shell = (d >= r - h / 2) & (d < r + h / 2)
        return float(np.sum(u.values[sl][shell] ** 2) * h ** (spec.dim - 1))
    if method == "interp":
        pts = c + r * sphere_points(spec.dim, _sphere_count(spec.dim, r / spec.h))
        vals = u.sample(pts)
        return float(np.mean(vals ** 2) * sphere_area(spec.dim, r))
    raise ValueError(f"unknown sphere quadrature method {method!r}")


def _sphere_count(dim: int, r_over_h: float) -> int:
    if dim == 1:
        return 2
    if dim == 2:
        return max(64, int(math.ceil(8 * math.pi * r_over_h)))
    # ~ (2 / h)^(dim-1) points per unit area, capped for memory
    area = sphere_area(dim, r_over_h)
    return int(min(max(256, 4 * area), 60000))


def cell_gradient_energy(u: ScalarField) -> np.ndarray:
    """Per-cell |Du|^2 from edge differences, each edge shared among its cells.

    Summing ``cell_gradient_energy * h^n`` over all cells reproduces the edge
    energy sum ``sum_edges (u_a - u_b)^2 h^(n-2)``.
    """
    spec = u.spec
    out = np.zeros(spec.cells)
    for ax in range(spec.dim):
        d = (np.diff(u.values, axis=ax) / spec.h) ** 2
        for other in range(spec.dim):
            if other == ax:
                continue
            d = 0.5 * (np.take(d, range(d.shape[other] - 1), axis=other)
                       + np.take(d, range(1, d.shape[other]), axis=other))
        out += d
    return out


def signed_extension(values: np.ndarray) -> np.ndarray:
    """Extend a nonnegative field linearly across its zero set by one node.

    Zero nodes with two consecutive positive nodes along an axis receive the
    (clipped nonpositive) linear extrapolation, averaged over such axes.
    Exact for truncated linear fields away from corners.
    """
    vals = np.asarray(values, float)
    ext = np.zeros_like(vals)
    cnt = np.zeros_like(vals)
    zero = vals <= 0
    dim = vals.ndim
    for ax in range(dim):
        n = vals.shape[ax]
        if n < 3:
            continue
        for s in (1, -1):
            sl0 = [slice(None)] * dim
            sl1 = [slice(None)] * dim
            sl2 = [slice(None)] * dim
            if s == 1:
                sl0[ax], sl1[ax], sl2[ax] = slice(0, n - 2), slice(1, n - 1), slice(2, n)
            else:
                sl0[ax], sl1[ax], sl2[ax] = slice(2, n), slice(1, n - 1), slice(0, n - 2)
            p1 = vals[tuple(sl1)]
            p2 = vals[tuple(sl2)]
            ok = zero[tuple(sl0)] & (p1 > 0) & (p2 > 0)
            ext[tuple(sl0)] += np.where(ok, 2 * p1 - p2, 0.0)
            cnt[tuple(sl0)] += ok
    out = vals.copy()
    m = cnt > 0
    out[m] = np.minimum(ext[m] / cnt[m], 0.0)
    return out


def _sub_offsets(dim: int, sub: int | None) -> np.ndarray:
    if sub is None:
        sub = 4 if dim <= 2 else 2
    t = (np.arange(sub) + 0.5) / sub
    return np.array(list(itertools.product(t, repeat=dim)))


def cell_positive_fraction(u: ScalarField, sub: int | None = None) -> np.ndarray:
    """Fraction of each cell where the extended multilinear interpolant is positive."""
    spec = u.spec
    v = signed_extension(u.values)
    corners = list(itertools.product((0, 1), repeat=spec.dim))
    corner_vals = [v[tuple(slice(ci, ci + c) for ci, c in zip(cr, spec.cells))] for cr in corners]
    offs = _sub_offsets(spec.dim, sub)
    frac = np.zeros(spec.cells)
    for t in offs:
        acc = np.zeros(spec.cells)
        for cr, cv in zip(corners, corner_vals):
            w = 1.0
            for ti, ci in zip(t, cr):
                w *= ti if ci else (1 - ti)
            acc += w * cv
        frac += acc > 0
    return frac / len(offs)


def cell_ball_weights(spec: GridSpec, center, r: float, sub: int | None = None):
    """Fractional coverage of cells by B_r(center) on the window around the ball.

    Returns ``(slices, weights)`` with ``slices`` indexing cell arrays.
    """
    c = np.asarray(center, float)
    lo = np.maximum(np.floor((c - r - np.asarray(spec.origin)) / spec.h).astype(int) - 1, 0)
    hi = np.minimum(np.ceil((c + r - np.asarray(spec.origin)) / spec.h).astype(int) + 1,
                    np.asarray(spec.cells))
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    coords = [spec.cell_axes[i][sl[i]] for i in range(spec.dim)]
    offs = (_sub_offsets(spec.dim, sub) - 0.5) * spec.h
    w = np.zeros(tuple(len(x) for x in coords))
    for o in offs:
        w += _dist2(coords, c - o) < r * r
    return sl, w / len(offs)


def cell_ball_integral(spec: GridSpec, cell_values, center, r: float, min_cells: float = 2.0) -> float:
    """Integral of a cell-centered quantity over B_r with fractional cell coverage."""
    c = _require_ball(spec, center, r, min_cells)
    sl, w = cell_ball_weights(spec, c, r)
    return float(np.sum(np.asarray(cell_values)[sl] * w) * spec.h ** spec.dim)


def rescale(u: ScalarField, y, r: float, out_spec: GridSpec) -> ScalarField:
    """Graph dilation ``x -> u(y + r x) / r`` resampled onto ``out_spec``."""
    if r <= 0:
        raise ValueError("dilation factor must be positive")
    y = np.asarray(y, float)
    if out_spec.dim != u.spec.dim:
        raise SpecMismatchError("dimension mismatch")
    lo = y + r * np.asarray(out_spec.origin)
    hi = y + r * out_spec.upper
    if not (u.spec.contains_point(lo) and u.spec.contains_point(hi)):
        raise GeometryError("image of the output box exits the source box")
    pts = y + r * out_spec.node_points()
    pts = np.clip(pts, np.asarray(u.spec.origin), u.spec.upper)
    vals = u.sample(pts).reshape(out_spec.shape) / r
    return ScalarField(out_spec, vals)


def free_boundary_points(u: ScalarField) -> np.ndarray:
    """Midpoints of grid edges whose endpoints straddle {u > 0} and {u = 0}.

    Ordered lexicographically by (lower-node flat index, axis).
    """
    spec = u.spec
    pos = u.values > 0
    keys = []
    pts = []
    for ax in range(spec.dim):
        a = np.take(pos, range(spec.shape[ax] - 1), axis=ax)
        b = np.take(pos, range(1, spec.shape[ax]), axis=ax)
        idx = np.argwhere(a != b)
        if len(idx) == 0:
            continue
        flat = np.ravel_multi_index(idx.T, spec.shape)
        mid = np.asarray(spec.origin) + spec.h * idx.astype(float)
        mid[:, ax] += 0.5 * spec.h
        keys.append(np.stack([flat, np.full(len(flat), ax)], axis=1))
        pts.append(mid)
    if not pts:
        return np.zeros((0, spec.dim))
    keys = np.concatenate(keys)
    pts = np.concatenate(pts)
    order = np.lexsort((keys[:, 1], keys[:, 0]))
    return pts[order]


def hausdorff_distance(a, b) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff_distance needs two nonempty sets")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))


# --- serialization -----------------------------------------------------------

def save_field(u: ScalarField, path, fmt: str = "bin") -> tuple[Path, Path]:
    """Write values (row-major float64 little-endian, or CSV) plus a JSON sidecar."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if fmt == "bin":
        u.values.astype("<f8").tofile(path)
    elif fmt == "csv":
        np.savetxt(path, u.values.ravel(), fmt="%.17g")
    else:
        raise ValueError(f"unknown field format {fmt!r}")
    meta = {"format": fmt, "grid": u.spec.to_dict(), "order": "row-major",
            "dtype": "float64-le" if fmt == "bin" else "decimal",
            "boundary_mask": "box-faces" if np.array_equal(u.boundary_mask, face_mask(u.spec))
            else np.flatnonzero(u.boundary_mask.ravel()).tolist()}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_field(path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    spec = GridSpec.from_dict(meta["grid"])
    if meta["format"] == "bin":
        vals = np.fromfile(path, dtype="<f8")
    else:
        vals = np.loadtxt(path, dtype=float, ndmin=1)
    vals = vals.reshape(spec.shape)
    mask = None
    if meta.get("boundary_mask", "box-faces") != "box-faces":
        mask = np.zeros(int(np.prod(spec.shape)), dtype=bool)
        mask[np.asarray(meta["boundary_mask"], dtype=int)] = True
        mask = mask.reshape(spec.shape)
    return ScalarField(spec, vals, mask)
