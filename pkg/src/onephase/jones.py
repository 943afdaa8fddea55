"""Discrete measures and Jones beta_2 numbers.

beta^k(x, r)^2 = inf over affine k-planes V of r^(-k-2) int_{B_r(x)} d(z, V)^2 dmu(z).

The infimum is attained by the plane through the center of mass X spanned by
the top k eigenvectors of the mass-averaged second-moment form; its value is
r^(-k-2) mu(B_r(x)) (lambda_{k+1} + ... + lambda_n).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .errors import GeometryError

BALL_TOL = 1e-12


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        self.weights = np.asarray(self.weights, float).ravel()
        if self.points.size == 0:
            self.points = self.points.reshape(0, self.points.shape[-1] if self.points.ndim == 2 else 0)
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights differ in length")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be positive and finite")

    @classmethod
    def counting(cls, points) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(points, float))
        return cls(pts, np.ones(len(pts)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    def in_ball(self, x, r: float) -> np.ndarray:
        d = np.linalg.norm(self.points - np.asarray(x, float), axis=1)
        return d <= r * (1 + BALL_TOL)

    def mass(self, x, r: float) -> float:
        return float(self.weights[self.in_ball(x, r)].sum())

    def transformed(self, rotation=None, shift=None, scale: float = 1.0,
                    weight_scale: float = 1.0) -> "DiscreteMeasure":
        p = self.points
        if rotation is not None:
            p = p @ np.asarray(rotation, float).T
        p = scale * p
        if shift is not None:
            p = p + np.asarray(shift, float)
        return DiscreteMeasure(p, self.weights * weight_scale)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i}" for i in range(self.dim)] + ["weight"])
            for p, wt in zip(self.points, self.weights):
                w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])
        return path

    @classmethod
    def read_csv(cls, path) -> "DiscreteMeasure":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty measure file")
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[-1].strip() != "weight":
            raise ValueError(f"{path}: last column must be 'weight'")
        try:
            data = np.array([[float(v) for v in r] for r in body], float)
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric entry ({exc})") from None
        if data.size == 0:
            return cls(np.zeros((0, len(header) - 1)), np.zeros(0))
        if data.shape[1] != len(header):
            raise ValueError(f"{path}: ragged rows")
        return cls(data[:, :-1], data[:, -1])


def second_moment(mu: DiscreteMeasure, x, r: float):
    """Center of mass X and mass-averaged second moment M of mu restricted to B_r(x)."""
    sel = mu.in_ball(x, r)
    w = mu.weights[sel]
    if w.sum() <= 0:
        raise GeometryError("no mass in ball")
    p = mu.points[sel]
    m = w.sum()
    X = (w[:, None] * p).sum(axis=0) / m
    d = p - X
    M = (w[:, None, None] * d[:, :, None] * d[:, None, :]).sum(axis=0) / m
    return X, 0.5 * (M + M.T)


@dataclass
class BetaResult:
    beta_sq: float
    point: np.ndarray
    vectors: np.ndarray  # (k, n)
    eigenvalues: np.ndarray
    mass: float
    k: int
    r: float

    def to_dict(self) -> dict:
        return {"beta_sq": self.beta_sq, "k": self.k, "r": self.r, "mass": self.mass,
                "plane": {"point": self.point.tolist(), "vectors": self.vectors.tolist()},
                "eigenvalues": self.eigenvalues.tolist()}


def beta_number(mu: DiscreteMeasure, x, r: float, k: int) -> BetaResult:
    """beta^k_{mu,2}(x, r)^2 from the eigendecomposition of the second moment.

    An empty ball gives beta_sq = 0 with an empty plane.
    """
    n = mu.dim
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside 0..{n}")
    if r <= 0:
        raise ValueError("radius must be positive")
    mass = mu.mass(x, r)
    if mass <= 0:
        return BetaResult(0.0, np.zeros(0), np.zeros((0, n)), np.zeros(n), 0.0, k, r)
    X, M = second_moment(mu, x, r)
    lam, vec = np.linalg.eigh(M)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vec = vec[:, order]
    tail = float(lam[k:].sum())
    beta = r ** (-k - 2) * mass * tail
    return BetaResult(beta, X, vec[:, :k].T.copy(), lam, mass, k, r)


def plane_energy(mu: DiscreteMeasure, x, r: float, point, vectors) -> float:
    """r^(-k-2) sum w d(p, V)^2 over B_r(x) for the affine plane point + span(vectors)."""
    sel = mu.in_ball(x, r)
    vectors = np.atleast_2d(np.asarray(vectors, float)).reshape(-1, mu.dim)
    k = vectors.shape[0]
    d = mu.points[sel] - np.asarray(point, float)
    if k:
        d = d - (d @ vectors.T) @ vectors
    return float(r ** (-k - 2) * np.sum(mu.weights[sel] * np.sum(d * d, axis=1)))


# oracle zoom: shrink factors after an improving and a non-improving round
_ZOOM_HIT, _ZOOM_MISS = 0.7, 0.3


def _frames(n: int, k: int, count: int, start: int = 0) -> np.ndarray:
    """Low-discrepancy orthonormal k-frames (Halton -> Gaussian -> QR)."""
    raw = qmc.Halton(d=n * k, scramble=False).random(start + count + 1)[start + 1:]
    g = norm.ppf(np.clip(raw, 1e-12, 1 - 1e-12)).reshape(count, n, k)
    q, _ = np.linalg.qr(g)
    return np.transpose(q, (0, 2, 1))


def _batch_energy(p: np.ndarray, w: np.ndarray, offsets: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Energies for every (frame, offset) pair, shape (frames, offsets)."""
    d = p[None, :, :] - offsets[:, None, :]                      # (o, m, n)
    sq = np.sum(d * d, axis=2)                                     # (o, m)
    proj = np.einsum("omn,fkn->fomk", d, frames)                   # (f, o, m, k)
    res = sq[None] - np.sum(proj * proj, axis=3)
    return np.einsum("fom,m->fo", np.maximum(res, 0.0), w)


def _data_frames(p: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    """Frames spanned by k cyclically consecutive chords from X; rank-deficient ones dropped."""
    d = p - X
    m = len(d)
    if m < k:
        return np.empty((0, k, p.shape[1]))
    g = np.stack([d[(np.arange(m) + j) % m] for j in range(k)], axis=2)   # (m, n, k)
    q, rr = np.linalg.qr(g)
    diag = np.abs(np.diagonal(rr, axis1=1, axis2=2))
    ok = np.all(diag > 1e-12 * max(1.0, float(np.abs(d).max())), axis=1)
    return np.transpose(q[ok], (0, 2, 1))


def _gauss(d: int, count: int, start: int = 0) -> np.ndarray:
    raw = qmc.Halton(d=d, scramble=False).random(start + count + 1)[start + 1:]
    return norm.ppf(np.clip(raw, 1e-12, 1 - 1e-12))


def beta_bruteforce(mu: DiscreteMeasure, x, r: float, k: int, samples: int = 10_000,
                    zoom_rounds: int = 0) -> float:
    """Oracle: minimum of the plane energy over sampled affine k-planes.

    Round 0 pairs low-discrepancy orientations, plus the spans of chords
    from the center of mass to the data, with offsets at the data points in
    the ball and their center of mass. Each of ``zoom_rounds``
    further rounds samples orientations and offsets in a shrinking
    neighborhood of the incumbent plane. The eigen solution is never
    consulted and every candidate is evaluated exactly, so the result is an
    upper bound for the infimum. ``samples`` is the total plane budget.
    """
    n = mu.dim
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside 0..{n}")
    sel = mu.in_ball(x, r)
    if not sel.any() or k == n:
        return 0.0
    p = mu.points[sel]
    w = mu.weights[sel]
    X = (w[:, None] * p).sum(axis=0) / w.sum()
    offsets = np.concatenate([X[None], p])
    scale = r ** (-k - 2)
    if k == 0:
        d = p[None] - offsets[:, None]
        return float(scale * np.min(np.sum(w * np.sum(d * d, axis=2), axis=1)))
    budget = max(samples // (zoom_rounds + 1), len(offsets))
    frames = np.concatenate([_frames(n, k, max(1, budget // len(offsets))), _data_frames(p, X, k)])
    e = _batch_energy(p, w, offsets, frames)
    fi, oi = np.unravel_index(np.argmin(e), e.shape)
    best, frame, off = float(e[fi, oi]), frames[fi], offsets[oi]
    side = max(2, int(math.sqrt(budget)))
    spread = 0.5
    for i in range(zoom_rounds):
        # fresh perturbations each round; X stays a candidate offset throughout
        dframes = _gauss(n * k, side, start=2 * i * side).reshape(side, k, n)
        doffs = _gauss(n, side, start=(2 * i + 1) * side)
        cand = frame[None] + spread * dframes
        q, _ = np.linalg.qr(np.transpose(cand, (0, 2, 1)))
        cand = np.concatenate([frame[None], np.transpose(q, (0, 2, 1))])
        offs = np.concatenate([off[None], X[None], off[None] + spread * r * doffs])
        e = _batch_energy(p, w, offs, cand)
        fi, oi = np.unravel_index(np.argmin(e), e.shape)
        if e[fi, oi] < best:
            best, frame, off = float(e[fi, oi]), cand[fi], offs[oi]
            spread *= _ZOOM_HIT
        else:
            spread *= _ZOOM_MISS
    return scale * best


def dini_sum(mu: DiscreteMeasure, x, r: float, k: int, levels: int) -> float:
    """ln 2 * sum_j sum_{z in B_r(x)} w_z beta^k(z, s_j)^2 with s_j = 2 r 2^-j."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    sel = np.flatnonzero(mu.in_ball(x, r))
    total = 0.0
    for j in range(levels):
        s = 2 * r * 2.0 ** (-j)
        for i in sel:
            total += mu.weights[i] * beta_number(mu, mu.points[i], s, k).beta_sq
    return math.log(2) * total


@dataclass
class DropEstimate:
    beta_sq: float
    drop_integral: float
    ratio: float
    r: float
    k: int

    def to_dict(self) -> dict:
        return {"beta_sq": self.beta_sq, "drop_integral": self.drop_integral,
                "ratio": self.ratio, "r": self.r, "k": self.k}


def beta_drop_estimate(u, Q, mu: DiscreteMeasure, x, r: float, k: int, c0: float = 1.0) -> DropEstimate:
    """beta^2(x, r) against r^-k int_{B_r(x)} (W_8r - W_r + c0 [Q]_a (8r)^a) dmu.

    ``ratio`` is beta^2 / rhs (inf when rhs <= 0 < beta^2, 0 when both vanish).
    Needs B_{9r}(x) inside the grid of ``u``.
    """
    from .weiss import weiss_density
    x = np.asarray(x, float)
    beta = beta_number(mu, x, r, k).beta_sq
    sel = np.flatnonzero(mu.in_ball(x, r))
    allowance = c0 * float(Q.holder_seminorm) * (8 * r) ** Q.holder_exponent
    rhs = sum(mu.weights[i] * (weiss_density(u, Q, mu.points[i], 8 * r)
                               - weiss_density(u, Q, mu.points[i], r) + allowance) for i in sel)
    rhs = float(rhs) / r ** k
    if rhs > 0:
        ratio = beta / rhs
    else:
        ratio = 0.0 if beta <= 1e-15 else math.inf
    return DropEstimate(float(beta), rhs, ratio, float(r), k)


@dataclass
class ReifenbergReport:
    k: int
    delta: float
    levels: int
    packing_sum: float
    dini_max: float
    worst_pair: tuple
    tested_pairs: int
    satisfied: bool
    ball_count: int
    per_pair: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"k": self.k, "delta": self.delta, "levels": self.levels,
                "ball_count": self.ball_count, "packing_sum": self.packing_sum,
                "dini_max": self.dini_max, "worst_pair": list(self.worst_pair),
                "tested_pairs": self.tested_pairs, "condition_satisfied": self.satisfied}


def check_disjoint(centers: np.ndarray, radii: np.ndarray, tol: float = 1e-12) -> None:
    """Raise if any two closed balls overlap (touching is allowed)."""
    if len(centers) < 2:
        return
    tree = cKDTree(centers)
    rmax = float(radii.max())
    for i, j in sorted(tree.query_pairs(2 * rmax)):
        if np.linalg.norm(centers[i] - centers[j]) < radii[i] + radii[j] - tol:
            raise GeometryError(f"balls {i} and {j} overlap")


def discrete_reifenberg_check(balls, k: int, delta: float, levels: int = 6,
                              test_radii=(1.0, 0.5, 0.25)) -> ReifenbergReport:
    """Dini condition for the packing measure sum r_q^k delta_q of disjoint balls.

    Test pairs (x, r): every ball center with each radius in ``test_radii``
    plus the origin at radius 1. Reports the largest dini_sum / r^k.
    """
    balls = list(balls)
    if not balls:
        return ReifenbergReport(k, delta, levels, 0.0, 0.0, (), 0, True, 0)
    centers = np.array([np.asarray(c, float) for c, _ in balls])
    radii = np.array([float(r) for _, r in balls])
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    check_disjoint(centers, radii)
    mu = DiscreteMeasure(centers, radii ** k)
    pairs = [(np.zeros(mu.dim), 1.0)] + [(c, t) for c in centers for t in test_radii]
    worst, worst_pair, rows = -1.0, (), []
    for c, t in pairs:
        val = dini_sum(mu, c, t, k, levels) / t ** k
        rows.append((c.tolist(), t, val))
        if val > worst:
            worst, worst_pair = val, (c.tolist(), t)
    return ReifenbergReport(k, delta, levels, float(mu.weights[mu.in_ball(np.zeros(mu.dim), 1.0)].sum()),
                            worst, worst_pair, len(pairs), bool(worst <= delta), len(balls), rows)


def read_balls_csv(path) -> list[tuple[np.ndarray, float]]:
    """Rows ``x0, ..., x_{n-1}, radius`` with a header line."""
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][-1].strip() != "radius":
        raise ValueError(f"{path}: expected header ending in 'radius'")
    out = []
    for r in rows[1:]:
        vals = [float(v) for v in r]
        out.append((np.array(vals[:-1]), vals[-1]))
    return out


__all__ = ["DiscreteMeasure", "second_moment", "BetaResult", "beta_number", "plane_energy",
           "beta_bruteforce", "dini_sum",
           "DropEstimate", "beta_drop_estimate", "ReifenbergReport", "discrete_reifenberg_check",
           "check_disjoint", "read_balls_csv"]
