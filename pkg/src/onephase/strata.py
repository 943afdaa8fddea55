"""Quantitative symmetry and effective stratum membership.

A field is compared in B_r(x0) with 1-homogeneous fields about x0 that are
invariant along a k-dimensional subspace L. For fixed L the best such field
is |z| g(z / |z|), z the component of x - x0 orthogonal to L, and g is the
least-squares coefficient per direction of L-perp: along each direction it
averages u over the plane slice, weighted by the slice measure.

The deviation is reported scale-invariantly as

    r^(-n-2) int_{B_r(x0)} |u - u~|^2

so that it is unchanged under the graph dilation u(x0 + r .) / r.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .errors import GeometryError, ResolutionError
from .field import (GridSpec, ScalarField, _dist2, _node_window, _require_ball,
                    free_boundary_points, hausdorff_distance, sphere_points)

MIN_SCALE_CELLS = 8.0


@dataclass(frozen=True)
class SymmetryQuery:
    center: tuple[float, ...]
    r: float
    k: int
    eps: float = 0.05
    plane_samples: int = 64

    def __post_init__(self):
        n = len(self.center)
        if not 0 <= self.k <= n:
            raise ValueError(f"symmetry order k={self.k} outside 0..{n}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.plane_samples < 1:
            raise ValueError("plane_samples must be >= 1")


@dataclass
class SymmetryResult:
    distance: float
    point: np.ndarray
    plane: np.ndarray  # (k, n) orthonormal rows
    model: ScalarField
    k: int
    r: float

    def __post_init__(self):
        if self.k and not np.allclose(self.plane @ self.plane.T, np.eye(self.k), atol=1e-10):
            raise ValueError("best_plane vectors are not orthonormal")


def _direction_bins(m: int, r_over_h: float) -> np.ndarray | None:
    """Quasi-uniform directions on S^(m-1) used to bin the homogeneous coefficient."""
    if m == 0:
        return None
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        count = max(16, int(math.ceil(math.pi * r_over_h)))
    else:
        count = int(min(max(64, 2 * r_over_h ** (m - 1)), 4000))
    return sphere_points(m, count)


def _ball_nodes(u: ScalarField, x0, r: float):
    spec = u.spec
    sl, coords = _node_window(spec, np.asarray(x0, float), r)
    inside = _dist2(coords, x0) < r * r
    grids = np.meshgrid(*coords, indexing="ij")
    pts = np.stack([g[inside] for g in grids], axis=1)
    return pts, u.values[sl][inside], sl, inside


def _fit(disp: np.ndarray, vals: np.ndarray, perp: np.ndarray, r_over_h: float):
    """Least-squares homogeneous coefficient on L-perp; returns (fitted values, g, bins)."""
    m = perp.shape[0]
    if m == 0:
        return np.zeros_like(vals), None, None
    z = disp @ perp.T
    s = np.linalg.norm(z, axis=1)
    dirs = _direction_bins(m, r_over_h)
    ok = s > 0
    idx = np.zeros(len(s), dtype=int)
    if m == 1:
        idx[ok] = (z[ok, 0] < 0).astype(int)
    else:
        idx[ok] = cKDTree(dirs).query(z[ok] / s[ok, None])[1]
    num = np.bincount(idx[ok], weights=vals[ok] * s[ok], minlength=len(dirs))
    den = np.bincount(idx[ok], weights=s[ok] ** 2, minlength=len(dirs))
    g = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return s * g[idx], g, dirs


def _complement(plane: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of ``plane``."""
    k = plane.shape[0]
    if k == 0:
        return np.eye(n)
    if k == n:
        return np.zeros((0, n))
    q, _ = np.linalg.qr(np.concatenate([plane.T, np.eye(n)], axis=1))
    return q[:, k:n].T


def _vdc(i: int, base: int = 2) -> float:
    x, f = 0.0, 1.0 / base
    while i:
        i, d = divmod(i, base)
        x += d * f
        f /= base
    return x


@lru_cache(maxsize=64)
def _halton_frames(n: int, k: int, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros((0, k, n))
    raw = qmc.Halton(d=n * k, scramble=False).random(count + 1)[1:]
    gauss = norm.ppf(np.clip(raw, 1e-12, 1 - 1e-12)).reshape(count, n, k)
    out = np.empty((count, k, n))
    for i, a in enumerate(gauss):
        q, _ = np.linalg.qr(a)
        out[i] = q.T
    return out


def plane_samples(n: int, k: int, count: int, seeds=()) -> list[np.ndarray]:
    """Deterministic k-subspaces: seed planes, coordinate planes, then a Halton sequence.

    The list for ``count`` is a prefix of the list for any larger count.
    """
    if k == 0:
        return [np.zeros((0, n))]
    if k == n:
        return [np.eye(n)]
    if n == 2:
        # van der Corput angles: nested and uniform on the projective line
        ang = [0.0, 0.5 * math.pi] + [math.pi * _vdc(i) for i in range(1, count)]
        out = [np.asarray(s, float).reshape(1, 2) / np.linalg.norm(s) for s in seeds]
        out += [np.array([[math.cos(a), math.sin(a)]]) for a in ang]
        return out[:max(count, len(seeds) + 1)]
    out = []
    for s in seeds:
        q, _ = np.linalg.qr(np.atleast_2d(np.asarray(s, float)).T)
        out.append(q.T[:k])
    for axes in itertools.combinations(range(n), k):
        out.append(np.eye(n)[list(axes)])
    out.extend(_halton_frames(n, k, max(count - len(out), 0)))
    return out[:max(count, len(seeds) + 1)]


def homogeneous_projection(u: ScalarField, x0, r: float) -> ScalarField:
    """Best 1-homogeneous approximant about x0 in L^2(B_r), extended to the whole grid.

    Per sampled direction theta, g(theta) = int_0^r u(x0 + s theta) s^n ds / int_0^r s^(n+1) ds
    along a ray; directions in between take the nearest sample.
    """
    spec = u.spec
    x0 = _require_ball(spec, x0, r, MIN_SCALE_CELLS)
    n = spec.dim
    dirs = sphere_points(n, _ray_count(n, r / spec.h))
    steps = int(math.ceil(2 * r / spec.h))
    s = (np.arange(steps) + 0.5) * (r / steps)
    pts = x0[None, None, :] + s[None, :, None] * dirs[:, None, :]
    vals = u.sample(pts.reshape(-1, n)).reshape(len(dirs), steps)
    g = (vals * s ** n).sum(axis=1) / (s ** (n + 1)).sum()
    disp = spec.node_points() - x0
    rad = np.linalg.norm(disp, axis=1)
    idx = np.zeros(len(rad), dtype=int)
    ok = rad > 0
    if n == 1:
        idx[ok] = (disp[ok, 0] < 0).astype(int)
    else:
        idx[ok] = cKDTree(dirs).query(disp[ok] / rad[ok, None])[1]
    return ScalarField(spec, (rad * g[idx]).reshape(spec.shape), u.boundary_mask.copy())


def _ray_count(n: int, r_over_h: float) -> int:
    if n == 1:
        return 2
    if n == 2:
        return max(64, int(math.ceil(4 * math.pi * r_over_h)))
    return int(min(max(256, 4 * r_over_h ** (n - 1)), 20000))


def symmetry_distance(u: ScalarField, q: SymmetryQuery, seeds=()) -> SymmetryResult:
    """Smallest sampled deviation of u from k-symmetric fields about ``q.center``.

    ``seeds`` are extra candidate planes (rows spanning them) tried first,
    e.g. best-fit planes from :mod:`onephase.jones`.
    """
    spec = u.spec
    n = spec.dim
    if len(q.center) != n:
        raise GeometryError("query center has the wrong dimension")
    if q.k > n:
        raise ValueError("k out of range")
    x0 = _require_ball(spec, q.center, q.r, MIN_SCALE_CELLS)
    pts, vals, sl, inside = _ball_nodes(u, x0, q.r)
    disp = pts - x0
    scale = spec.h ** n / q.r ** (n + 2)
    best = None
    for plane in plane_samples(n, q.k, q.plane_samples, seeds):
        fitted, _, _ = _fit(disp, vals, _complement(plane, n), q.r / spec.h)
        d = float(np.sum((vals - fitted) ** 2)) * scale
        if best is None or d < best[0] - 1e-15:
            best = (d, plane)
    dist, plane = best
    return SymmetryResult(dist, x0, plane, _model(u, x0, q.r, plane), q.k, q.r)


def _model(u: ScalarField, x0, r: float, plane: np.ndarray) -> ScalarField:
    spec = u.spec
    n = spec.dim
    pts, vals, _, _ = _ball_nodes(u, x0, r)
    perp = _complement(plane, n)
    _, g, dirs = _fit(pts - x0, vals, perp, r / spec.h)
    if g is None:
        return ScalarField(spec, np.zeros(spec.shape), u.boundary_mask.copy())
    z = (spec.node_points() - x0) @ perp.T
    s = np.linalg.norm(z, axis=1)
    idx = np.zeros(len(s), dtype=int)
    ok = s > 0
    if perp.shape[0] == 1:
        idx[ok] = (z[ok, 0] < 0).astype(int)
    else:
        idx[ok] = cKDTree(dirs).query(z[ok] / s[ok, None])[1]
    return ScalarField(spec, (s * g[idx]).reshape(spec.shape), u.boundary_mask.copy())


def center_sweep(u: ScalarField, q: SymmetryQuery, offset: float | None = None) -> SymmetryResult:
    """Minimum of :func:`symmetry_distance` over the center and its +-offset axis shifts."""
    off = 2 * u.spec.h if offset is None else offset
    c = np.asarray(q.center, float)
    best = None
    for shift in [np.zeros(len(c))] + [s * e for e in np.eye(len(c)) for s in (off, -off)]:
        cc = c + shift
        if not u.spec.contains_ball(cc, q.r):
            continue
        res = symmetry_distance(u, SymmetryQuery(tuple(cc), q.r, q.k, q.eps, q.plane_samples))
        if best is None or res.distance < best.distance:
            best = res
    if best is None:
        raise GeometryError("no admissible center in the sweep")
    return best


def scale_ladder(spec: GridSpec, x, r: float, scale_factor: float = 0.5) -> list[float]:
    """Scales s_top * rho^j in [r, s_top], s_top = min(1, distance to the box), s >= 8h."""
    if not 0 < scale_factor < 1:
        raise ValueError("scale_factor must lie in (0, 1)")
    top = min(1.0, spec.distance_to_boundary(x))
    out = []
    s = top
    floor = max(r, MIN_SCALE_CELLS * spec.h)
    while s >= floor * (1 - 1e-12):
        out.append(s)
        s *= scale_factor
    return out


@dataclass
class StratumRecord:
    point: tuple[float, ...]
    k: int
    eps: float
    r: float
    member: bool
    best_scale: float
    distance: float

    def row(self) -> list:
        return [*self.point, self.k, self.eps, self.r, int(self.member), self.best_scale,
                self.distance]


def _near_free_boundary(u: ScalarField, x) -> None:
    fb = free_boundary_points(u)
    if len(fb) == 0 or cKDTree(fb).query(np.asarray(x, float))[0] > 2 * u.spec.h + 1e-12:
        raise GeometryError("point is not within 2h of the free boundary")


def symmetry_profile(u: ScalarField, x, scales, max_order: int, plane_samples: int = 64,
                     seeds=()) -> np.ndarray:
    """Distances D[j, i] to j-symmetric fields at scale i, cumulatively maximized in j.

    Every j-symmetric field is also i-symmetric for i < j, so true distances
    are nondecreasing in j; the envelope restores that order under sampling.
    """
    x = tuple(float(v) for v in x)
    D = np.zeros((max_order + 1, len(scales)))
    for j in range(max_order + 1):
        for i, s in enumerate(scales):
            D[j, i] = symmetry_distance(u, SymmetryQuery(x, s, j, 1.0, plane_samples), seeds).distance
    return np.maximum.accumulate(D, axis=0)


def stratum_record(u: ScalarField, x, k: int, eps: float, r: float, scale_factor: float = 0.5,
                   plane_samples: int = 64, seeds=(), profile: np.ndarray | None = None,
                   scales=None) -> StratumRecord:
    """Membership of x in the effective stratum S^k_{eps,r} with its witness scale."""
    n = u.spec.dim
    if not 0 <= k <= n - 1:
        raise ValueError(f"k={k} outside 0..{n - 1}")
    _near_free_boundary(u, x)
    if scales is None:
        scales = scale_ladder(u.spec, x, r, scale_factor)
    if not scales:
        raise ResolutionError("no resolvable scale in [r, min(1, d(x, box))]")
    if profile is None:
        profile = symmetry_profile(u, x, scales, k + 1, plane_samples, seeds)
    d = profile[k + 1]
    i = int(np.argmin(d))
    return StratumRecord(tuple(float(v) for v in x), k, eps, r, bool(np.all(d > eps)),
                         float(scales[i]), float(d[i]))


def stratum_member(u: ScalarField, x, k: int, eps: float, r: float, scale_factor: float = 0.5,
                   plane_samples: int = 64) -> bool:
    """True iff u is not (k+1, eps)-symmetric at x on any ladder scale in [r, min(1, d)]."""
    return stratum_record(u, x, k, eps, r, scale_factor, plane_samples).member


def stratum_scan(u: ScalarField, points, k: int, eps: float, r: float, scale_factor: float = 0.5,
                 plane_samples: int = 64) -> list[StratumRecord]:
    return [stratum_record(u, x, k, eps, r, scale_factor, plane_samples) for x in points]


def write_scan_csv(records, path) -> Path:
    path = Path(path)
    records = list(records)
    dim = len(records[0].point) if records else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(dim)] + ["k", "eps", "r", "member", "best_scale",
                                                     "distance"])
        for rec in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rec.row()])
    return path


def fb_symmetry_audit(u: ScalarField, result: SymmetryResult, inner: float = 0.75) -> float:
    """Hausdorff distance, relative to r, between the free boundaries of u and its model.

    Both sets are restricted to B_{inner r}; identical emptiness gives 0,
    one-sided emptiness gives inf. Model values below h times its largest
    slope count as zero, so least-squares leakage of order 1e-9 into the
    zero phase does not erase the model's free boundary.
    """
    c, r = result.point, result.r
    a = free_boundary_points(u)
    mv = result.model.values
    rad = np.linalg.norm(u.spec.node_points() - c, axis=1).reshape(u.spec.shape)
    slope = float(np.max(np.divide(mv, rad, out=np.zeros_like(mv), where=rad > 0)))
    cut = np.where(mv < u.spec.h * slope, 0.0, mv)
    b = free_boundary_points(ScalarField(u.spec, cut, result.model.boundary_mask))
    a = a[np.linalg.norm(a - c, axis=1) < inner * r] if len(a) else a
    b = b[np.linalg.norm(b - c, axis=1) < inner * r] if len(b) else b
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.inf
    return hausdorff_distance(a, b) / r
