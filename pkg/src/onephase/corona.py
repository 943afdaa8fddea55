"""Good/bad ball trees, their alternation, and the packing cover they produce.

Scales inside a tree rooted at B_{r_A}(a) are r_A * rho^j. Every quantity
the constructions assert (covering, disjointness, packing, density drops) is
re-checked by the ``verify_*`` functions from the density oracle, never from
values stored during construction.

Densities come from a :class:`DensityOracle`: ``W(i, r)`` is the Weiss
density of the field at probe point ``i`` and radius ``r``.
"""

from __future__ import annotations

import enum
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import AuditFailure, ConfigError, ResolutionError
from .field import QField, ScalarField
from .jones import DiscreteMeasure, second_moment

logger = logging.getLogger(__name__)

_TOL = 1e-12


# ---------------------------------------------------------------- config ---

@dataclass(frozen=True)
class TreeConfig:
    rho: float = 0.1
    eta: float = 1e-3
    gamma: float = 5e-3
    eta_prime: float = 5e-3
    E: float | None = None
    R: float = 0.05
    k: int = 1
    eps: float = 0.05
    c_packing_budget: float = 1e3
    density_tol: float = 0.0
    enforce_smallness: bool = True

    def __post_init__(self):
        if not 0 < self.rho <= 0.1:
            raise ConfigError(f"rho={self.rho} must lie in (0, 1/10]")
        if not 0 < self.eta < self.rho / 2:
            raise ConfigError(f"eta={self.eta} must satisfy 0 < eta < rho/2={self.rho / 2}")
        if not (self.gamma > 0 and self.eta_prime > 0):
            raise ConfigError("gamma and eta_prime must be positive")
        if not 0 < self.R <= 1:
            raise ConfigError(f"R={self.R} must lie in (0, 1]")
        if self.k < 1:
            raise ConfigError("k must be >= 1 (bad balls carry a (k-1)-plane)")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not self.c_packing_budget > 0:
            raise ConfigError("c_packing_budget must be positive")
        if self.density_tol < 0:
            raise ConfigError("density_tol must be nonnegative")

    @classmethod
    def defaults(cls, rho: float = 0.1, **kw) -> "TreeConfig":
        eta = kw.pop("eta", 1e-2 * rho)
        return cls(rho=rho, eta=eta, gamma=kw.pop("gamma", 5 * eta),
                   eta_prime=kw.pop("eta_prime", 5 * eta), **kw)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    def with_E(self, E: float) -> "TreeConfig":
        d = self.to_dict()
        d["E"] = float(E)
        return TreeConfig(**d)


# --------------------------------------------------------------- density ---

class DensityOracle:
    """Weiss densities at a fixed set of probe points."""

    points: np.ndarray

    def W(self, i: int, r: float) -> float:
        raise NotImplementedError

    def ball(self, center, r: float) -> np.ndarray:
        """Indices of probe points in the closed ball."""
        return self._tree.query_ball_point(np.asarray(center, float), r * (1 + _TOL) + _TOL)

    def prefetch(self, pairs) -> None:
        """Hint that (point, radius) pairs are about to be read."""

    def sup_W(self, center, ball_r: float, probe_r: float) -> float:
        """max of W(j, probe_r) over probe points j in B_{ball_r}(center); -inf if none."""
        idx = sorted(self.ball(center, ball_r))
        self.prefetch((j, probe_r) for j in idx)
        return max((self.W(j, probe_r) for j in idx), default=-math.inf)

    def _init_points(self, points) -> None:
        self.points = np.atleast_2d(np.asarray(points, float))
        self._tree = cKDTree(self.points) if len(self.points) else None

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "points": len(self.points)}


class FieldDensity(DensityOracle):
    """Densities of a grid field, cached per (point, radius).

    Radii below ``4h`` are snapped up to ``4h`` under ``policy="snap"`` (the
    count is reported) and rejected under ``policy="strict"``.
    """

    def __init__(self, u: ScalarField, Q: QField, points, policy: str = "snap", threads: int = 1):
        from .weiss import MIN_RADIUS_CELLS, weiss_density
        if policy not in ("snap", "strict"):
            raise ConfigError(f"unknown probe policy {policy!r}")
        self._init_points(points)
        self.u, self.Q = u, Q
        self.policy = policy
        self.threads = max(1, int(threads))
        self.r_min = MIN_RADIUS_CELLS * u.spec.h
        self._weiss = weiss_density
        self._cache: dict[tuple[int, float], float] = {}
        self._lock = threading.Lock()
        self.snapped: set[tuple[int, float]] = set()

    def _radius(self, i: int, r: float) -> float:
        if r >= self.r_min * (1 - 1e-12):
            return r
        if self.policy == "strict":
            raise ResolutionError(
                f"unresolvable ball: probe radius {r:.3g} at point {i} is below 4h={self.r_min:.3g}")
        with self._lock:
            self.snapped.add((i, round(r, 15)))
        return self.r_min

    def W(self, i: int, r: float) -> float:
        rr = round(self._radius(i, r), 15)
        key = (int(i), rr)
        val = self._cache.get(key)
        if val is None:
            val = self._weiss(self.u, self.Q, self.points[i], rr)
            with self._lock:
                self._cache[key] = val
        return val

    def prefetch(self, pairs) -> None:
        """Evaluate (point, radius) pairs in parallel; a no-op when single-threaded."""
        if self.threads == 1:
            return
        todo = sorted({(int(i), float(r)) for i, r in pairs})
        with ThreadPoolExecutor(self.threads) as ex:
            list(ex.map(lambda p: self.W(*p), todo))

    def describe(self) -> dict:
        return {"kind": "field", "points": len(self.points), "policy": self.policy,
                "min_radius": self.r_min, "snapped_probes": len(self.snapped),
                "evaluations": len(self._cache)}


class SyntheticDensity(DensityOracle):
    """Densities from a closed-form ``fn(point, r)``."""

    def __init__(self, points, fn, name: str = "synthetic"):
        self._init_points(points)
        self.fn = fn
        self.name = name

    def W(self, i: int, r: float) -> float:
        return float(self.fn(self.points[i], r))

    def describe(self) -> dict:
        return {"kind": "synthetic", "name": self.name, "points": len(self.points)}


def plateau_density(high_points, e_low: float, e_high: float):
    """W_r(x) = e_low + (e_high - e_low) max(0, 1 - d(x, H) / r), nondecreasing in r."""
    H = np.atleast_2d(np.asarray(high_points, float))
    tree = cKDTree(H) if len(H) else None

    def fn(x, r):
        if tree is None:
            return e_low
        d = tree.query(np.asarray(x, float))[0]
        return e_low + (e_high - e_low) * max(0.0, 1.0 - d / r)

    return fn


# ----------------------------------------------------------------- balls ---

class Kind(str, enum.Enum):
    GOOD = "Good"
    BAD = "Bad"
    STOP = "Stop"


@dataclass
class Plane:
    point: np.ndarray
    vectors: np.ndarray  # (k-1, n)

    def distance(self, pts) -> np.ndarray:
        d = np.atleast_2d(pts) - self.point
        if len(self.vectors):
            d = d - (d @ self.vectors.T) @ self.vectors
        return np.linalg.norm(d, axis=1)

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "vectors": self.vectors.tolist()}


@dataclass
class Ball:
    center: np.ndarray
    radius: float
    kind: Kind
    scale_index: int = 0
    index: int | None = None
    witness: Plane | None = None
    density: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    certificate: float | None = None

    def to_dict(self) -> dict:
        d = {"center": np.asarray(self.center).tolist(), "radius": self.radius,
             "kind": self.kind.value, "scale_index": self.scale_index, "point_index": self.index,
             "density": {repr(k): v for k, v in sorted(self.density.items())},
             "flags": list(self.flags), "certificate": self.certificate}
        if self.witness is not None:
            d["witness_plane"] = self.witness.to_dict()
        return d


@dataclass
class CoverTree:
    root: Ball
    kind: Kind
    levels: dict = field(default_factory=dict)  # scale -> {"G": [...], "B": [...], "S": [...]}
    leaves: list = field(default_factory=list)
    stops: list = field(default_factory=list)

    def leaf_packing(self, k: int) -> float:
        return float(sum(b.radius ** k for b in self.leaves))

    def stop_packing(self, k: int) -> float:
        return float(sum(b.radius ** k for b in self.stops))


# ------------------------------------------------------------ primitives ---

def maximal_net(candidates, spacing: float, order=None) -> list[int]:
    """Greedy net: accept candidates (lexicographic order) at distance >= spacing from all accepted.

    Returns positions into ``candidates``. Every rejected point lies within
    ``spacing`` of an accepted one.
    """
    pts = np.atleast_2d(np.asarray(candidates, float))
    if pts.size == 0 or len(pts) == 0:
        return []
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if order is None:
        order = np.lexsort(pts.T[::-1])
    accepted: list[int] = []
    acc_pts = np.empty((0, pts.shape[1]))
    for i in order:
        if len(acc_pts) and np.min(np.sum((acc_pts - pts[i]) ** 2, axis=1)) < spacing ** 2 * (1 - 1e-12):
            continue
        accepted.append(int(i))
        acc_pts = np.vstack([acc_pts, pts[i]])
    return sorted(accepted, key=lambda j: tuple(pts[j]))


def _net_indices(oracle: DensityOracle, idx, spacing: float) -> list[int]:
    idx = sorted(set(int(i) for i in idx))
    if not idx:
        return []
    pos = maximal_net(oracle.points[idx], spacing)
    return [idx[p] for p in pos]


def _within(oracle: DensityOracle, idx, centers_radii) -> set:
    """Subset of ``idx`` lying in the union of closed balls."""
    out = set()
    for c, r in centers_radii:
        out.update(oracle.ball(c, r))
    return out & set(idx)


def _fit_plane(pts: np.ndarray, dim: int, m: int, fallback_center) -> Plane:
    """Total-least-squares m-plane through the mean of ``pts`` (via the second moment)."""
    if len(pts) == 0:
        return Plane(np.asarray(fallback_center, float), np.eye(dim)[:m])
    X, M = second_moment(DiscreteMeasure.counting(pts), pts.mean(axis=0), np.inf)
    lam, vec = np.linalg.eigh(M)
    vec = vec[:, np.argsort(lam)[::-1]]
    return Plane(X, vec[:, :m].T.copy())


def classify_ball(oracle: DensityOracle, center, r: float, cfg: TreeConfig,
                  domain=None) -> tuple[Kind, Plane | None, dict]:
    """Good iff W_{gamma rho r} >= E - eta' on all probe points in B_r(center).

    A Bad ball gets a witness (k-1)-plane fit to {W_{2 eta r} >= E - eta/2} in
    B_r; ``dichotomy_violated`` is flagged when a high point is farther than
    rho r from it.
    """
    if cfg.E is None:
        raise ConfigError("TreeConfig.E must be set before classifying balls")
    idx = sorted(oracle.ball(center, r))
    if domain is not None:
        idx = sorted(set(idx) & set(oracle.ball(*domain)))
    tol = cfg.density_tol
    r_good = cfg.gamma * cfg.rho * r
    info: dict = {"probe_good": r_good, "points": len(idx), "flags": []}
    oracle.prefetch((j, r_good) for j in idx)
    if all(oracle.W(j, r_good) >= cfg.E - cfg.eta_prime - tol for j in idx):
        return Kind.GOOD, None, info
    r_high = 2 * cfg.eta * r
    oracle.prefetch((j, r_high) for j in idx)
    high = [j for j in idx if oracle.W(j, r_high) >= cfg.E - cfg.eta / 2 - tol]
    n = oracle.points.shape[1]
    plane = _fit_plane(oracle.points[high], n, cfg.k - 1, center)
    if not high:
        info["flags"].append("witness_empty")
    elif np.any(plane.distance(oracle.points[high]) > cfg.rho * r * (1 + 1e-9)):
        info["flags"].append("dichotomy_violated")
        logger.debug("dichotomy violated in B_%.4g(%s): eta too large or grid too coarse",
                       r, np.asarray(center).tolist())
    info["probe_high"] = r_high
    info["high_points"] = len(high)
    return Kind.BAD, plane, info


def _make_ball(oracle, i, r, kind, scale, plane=None, info=None) -> Ball:
    b = Ball(oracle.points[i].copy(), float(r), kind, scale, int(i), plane)
    if info:
        b.flags = list(info.get("flags", []))
        b.density = {info[key]: oracle.W(i, info[key]) for key in ("probe_good", "probe_high") if key in info}
    return b


# ----------------------------------------------------------------- trees ---

def _check_root(oracle, root: Ball, kind: Kind, cfg: TreeConfig, domain):
    k, plane, _ = classify_ball(oracle, root.center, root.radius, cfg, domain)
    if k is not kind:
        raise ValueError(f"root ball is {k.value}, expected {kind.value}")
    return plane


def build_good_tree(root: Ball, oracle: DensityOracle, cfg: TreeConfig, domain=None,
                    check_root: bool = True) -> CoverTree:
    """Good tree: Vitali nets of good-ball neighborhoods down to scale R; bad balls become leaves."""
    domain = domain or (root.center, root.radius)
    if check_root:
        _check_root(oracle, root, Kind.GOOD, cfg, domain)
    tree = CoverTree(root, Kind.GOOD)
    base = set(oracle.ball(root.center, root.radius)) & set(oracle.ball(*domain))
    goods = [(root.center, root.radius)]
    bads: list[tuple] = []
    r_prev = root.radius
    j = 0
    while goods:
        j += 1
        r = root.radius * cfg.rho ** j
        cand = _within(oracle, base, [(c, r_prev) for c, _ in goods])
        cand -= _within(oracle, cand, bads)
        J = _net_indices(oracle, cand, 2 * r / 5)
        level = {"G": [], "B": [], "S": []}
        if r <= cfg.R * (1 + 1e-12):
            level["S"] = [_make_ball(oracle, z, r, Kind.STOP, root.scale_index + j) for z in J]
            tree.stops.extend(level["S"])
            tree.levels[root.scale_index + j] = level
            break
        for z in J:
            kind, plane, info = classify_ball(oracle, oracle.points[z], r, cfg, domain)
            ball = _make_ball(oracle, z, r, kind, root.scale_index + j, plane, info)
            level["G" if kind is Kind.GOOD else "B"].append(ball)
        tree.levels[root.scale_index + j] = level
        tree.leaves.extend(level["B"])
        bads.extend((b.center, b.radius) for b in level["B"])
        goods = [(b.center, b.radius) for b in level["G"]]
        r_prev = r
    return tree


def build_bad_tree(root: Ball, oracle: DensityOracle, cfg: TreeConfig, domain=None,
                   check_root: bool = True) -> CoverTree:
    """Bad tree: stop balls of radius eta r_{i-1} away from witness planes, nets near them."""
    domain = domain or (root.center, root.radius)
    if root.witness is None or check_root:
        plane = _check_root(oracle, root, Kind.BAD, cfg, domain)
        if root.witness is None:
            root.witness = plane
    tree = CoverTree(root, Kind.BAD)
    base = set(oracle.ball(root.center, root.radius)) & set(oracle.ball(*domain))
    bads = [root]
    r_prev = root.radius
    j = 0
    while bads:
        j += 1
        r = root.radius * cfg.rho ** j
        stop_r = cfg.eta * r_prev
        level = {"G": [], "B": [], "S": []}
        scale = root.scale_index + j
        if r <= cfg.R * (1 + 1e-12):
            cand = _within(oracle, base, [(b.center, r_prev) for b in bads])
            J = _net_indices(oracle, cand, 2 * stop_r / 5)
            level["S"] = [_make_ball(oracle, z, stop_r, Kind.STOP, scale) for z in J]
            tree.stops.extend(level["S"])
            tree.levels[scale] = level
            break
        far, near = set(), set()
        for b in bads:
            inside = sorted(set(oracle.ball(b.center, r_prev)) & base)
            if not inside:
                continue
            d = b.witness.distance(oracle.points[inside])
            close = d <= 2 * cfg.rho * r_prev * (1 + 1e-12)
            near.update(np.asarray(inside)[close].tolist())
            far.update(np.asarray(inside)[~close].tolist())
        S = _net_indices(oracle, far, 2 * stop_r / 5)
        level["S"] = [_make_ball(oracle, z, stop_r, Kind.STOP, scale) for z in S]
        for z in _net_indices(oracle, near, 2 * r / 5):
            kind, plane, info = classify_ball(oracle, oracle.points[z], r, cfg, domain)
            ball = _make_ball(oracle, z, r, kind, scale, plane, info)
            level["G" if kind is Kind.GOOD else "B"].append(ball)
        tree.levels[scale] = level
        tree.stops.extend(level["S"])
        tree.leaves.extend(level["G"])
        bads = level["B"]
        r_prev = r
    return tree


def attach_certificates(balls, oracle: DensityOracle) -> None:
    """Record sup_{B_{2r}(s)} W_{2r} over probe points for every ball."""
    for b in balls:
        b.certificate = oracle.sup_W(b.center, 2 * b.radius, 2 * b.radius)


# ----------------------------------------------------------- alternation ---

@dataclass
class AlternationLedger:
    generations: list = field(default_factory=list)
    c1: float = 0.0
    c2: float = 0.0
    smallness: float = 0.0
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"generations": self.generations, "c1": self.c1, "c2": self.c2,
                "two_c1_c2_rho": self.smallness, "flags": self.flags}


def alternate_trees(domain: Ball, oracle: DensityOracle, cfg: TreeConfig):
    """Grow good trees in good leaves and bad trees in bad leaves until no leaves remain.

    Returns (stops, ledger, trees).
    """
    if cfg.E is None:
        raise ConfigError("TreeConfig.E must be set")
    dom = (domain.center, domain.radius)
    kind, plane, info = classify_ball(oracle, domain.center, domain.radius, cfg, dom)
    root = Ball(np.asarray(domain.center, float), domain.radius, kind, 0, None, plane,
                flags=list(info["flags"]))
    leaves = [root]
    stops: list[Ball] = []
    trees: list[CoverTree] = []
    ledger = AlternationLedger()
    for fl in root.flags:
        ledger.flags[fl] = ledger.flags.get(fl, 0) + 1
    limit = math.ceil(math.log(domain.radius / cfg.R) / math.log(1 / cfg.rho)) + 2 if \
        domain.radius > cfg.R else 2
    gen = 0
    while leaves:
        if gen > limit:
            raise AuditFailure(f"alternation stalled after {gen} generations (limit {limit})")
        kinds = {b.kind for b in leaves}
        if len(kinds) != 1:
            raise AuditFailure("alternation parity broken: mixed leaf kinds in one generation")
        kind = kinds.pop()
        packing = float(sum(b.radius ** cfg.k for b in leaves))
        ledger.generations.append({"generation": gen, "leaf_kind": kind.value,
                                   "leaves": len(leaves), "leaf_packing": packing})
        new_leaves = []
        for leaf in leaves:
            if kind is Kind.GOOD:
                t = build_good_tree(leaf, oracle, cfg, dom, check_root=False)
                ledger.c1 = max(ledger.c1, t.leaf_packing(cfg.k) / leaf.radius ** cfg.k)
            else:
                t = build_bad_tree(leaf, oracle, cfg, dom, check_root=False)
                ledger.c2 = max(ledger.c2, t.leaf_packing(cfg.k) / (2 * cfg.rho * leaf.radius ** cfg.k))
            for b in (b for lv in t.levels.values() for part in lv.values() for b in part):
                for f in b.flags:
                    ledger.flags[f] = ledger.flags.get(f, 0) + 1
            trees.append(t)
            stops.extend(t.stops)
            new_leaves.extend(t.leaves)
        leaves = new_leaves
        gen += 1
    ledger.smallness = 2 * ledger.c1 * ledger.c2 * cfg.rho
    packs = [g["leaf_packing"] for g in ledger.generations]
    ledger.flags["geometric_decay"] = all(
        packs[i + 2] <= max(ledger.smallness, 0.0) * packs[i] * (1 + 1e-9) + 1e-300
        for i in range(len(packs) - 2))
    if cfg.enforce_smallness and ledger.smallness > 0.5:
        raise AuditFailure(
            f"rho-smallness fails: 2 c1 c2 rho = {ledger.smallness:.3g} > 1/2 "
            f"(c1={ledger.c1:.3g}, c2={ledger.c2:.3g}, rho={cfg.rho})")
    return stops, ledger, trees


# --------------------------------------------------------- verification ---

def verify_covering(points: np.ndarray, balls) -> tuple[bool, list[int]]:
    """Indices of ``points`` not inside any closed ball."""
    balls = list(balls)
    if len(points) == 0:
        return True, []
    if not balls:
        return False, list(range(len(points)))
    centers = np.array([np.asarray(b.center, float) for b in balls])
    radii = np.array([b.radius for b in balls])
    tree = cKDTree(centers)
    rmax = radii.max()
    missed = []
    for i, p in enumerate(points):
        cand = tree.query_ball_point(p, rmax * (1 + 1e-12))
        if not any(np.linalg.norm(centers[c] - p) <= radii[c] * (1 + 1e-12) + 1e-15 for c in cand):
            missed.append(i)
    return not missed, missed


def verify_disjoint_fifths(balls) -> tuple[bool, list]:
    """Pairs of balls whose r/5 shrinks intersect."""
    balls = list(balls)
    bad = []
    if len(balls) < 2:
        return True, bad
    c = np.array([np.asarray(b.center, float) for b in balls])
    r = np.array([b.radius for b in balls]) / 5
    tree = cKDTree(c)
    for i, j in sorted(tree.query_pairs(2 * r.max())):
        if np.linalg.norm(c[i] - c[j]) < r[i] + r[j] - 1e-12:
            bad.append((i, j))
    return not bad, bad


def verify_good_tree(tree: CoverTree, oracle: DensityOracle, cfg: TreeConfig, domain) -> dict:
    """Leaf kinds, r/5 disjointness, centered density and covering for one good tree."""
    dom_idx = set(oracle.ball(*domain)) & set(oracle.ball(tree.root.center, tree.root.radius))
    pts = oracle.points[sorted(dom_idx)]
    cov, missed = verify_covering(pts, tree.stops + tree.leaves)
    disj, pairs = verify_disjoint_fifths(tree.stops + tree.leaves)
    centered = all(oracle.W(b.index, cfg.gamma * b.radius) >= cfg.E - cfg.eta_prime - cfg.density_tol
                   for b in tree.stops + tree.leaves)
    stop_radii = all(cfg.rho * cfg.R * (1 - 1e-9) <= b.radius <= cfg.R * (1 + 1e-9) for b in tree.stops)
    return {"leaves_bad": all(b.kind is Kind.BAD for b in tree.leaves), "covering": cov,
            "missed": len(missed), "disjoint_fifths": disj, "overlaps": len(pairs),
            "centered_density": centered, "stop_radius_range": stop_radii}


def verify_bad_tree(tree: CoverTree, oracle: DensityOracle, cfg: TreeConfig, domain) -> dict:
    dom_idx = set(oracle.ball(*domain)) & set(oracle.ball(tree.root.center, tree.root.radius))
    pts = oracle.points[sorted(dom_idx)]
    cov, missed = verify_covering(pts, tree.stops + tree.leaves)
    certs = []
    for b in tree.stops:
        if b.radius > cfg.R * (1 + 1e-12):
            certs.append(oracle.sup_W(b.center, 2 * b.radius, 2 * b.radius) <= cfg.E - cfg.eta / 2)
    return {"leaves_good": all(b.kind is Kind.GOOD for b in tree.leaves), "covering": cov,
            "missed": len(missed), "stop_certificates": all(certs), "certified_stops": len(certs)}


# ---------------------------------------------------------------- covers ---

@dataclass
class CoverReport:
    covering: bool
    packing: bool
    energy_drop: bool
    packing_sum: float
    budget: float
    E: float
    R: float
    domain: dict
    balls: int
    certified: int
    missed: int = 0
    failed_certificates: int = 0
    ledger: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    tree_checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.covering and self.packing and self.energy_drop

    def to_dict(self) -> dict:
        return {"checks": {"covering": self.covering, "packing": self.packing,
                           "energy_drop": self.energy_drop},
                "passed": self.passed, "packing_sum": self.packing_sum, "budget": self.budget,
                "E": self.E, "R": self.R, "domain": self.domain, "balls": self.balls,
                "certified_balls": self.certified, "missed_points": self.missed,
                "failed_certificates": self.failed_certificates, "ledger": self.ledger,
                "tree_checks": self.tree_checks, "oracle": self.oracle, "config": self.config}


@dataclass
class Cover:
    balls: list
    report: CoverReport

    def to_dict(self) -> dict:
        return {"balls": [b.to_dict() for b in self.balls], "report": self.report.to_dict()}


def root_density(oracle: DensityOracle, center, radius: float) -> float:
    """E = sup over probe points in B_{2 radius}(center) of W_{2 radius}."""
    val = oracle.sup_W(center, 2 * radius, 2 * radius)
    return 0.0 if val == -math.inf else val


def verify_cover(balls, oracle: DensityOracle, domain, cfg: TreeConfig, R_abs: float) -> dict:
    """Checks (A) covering, (B) packing <= budget r^k, (C) drop certificates for r_x > R."""
    center, radius = domain
    pts_idx = sorted(oracle.ball(center, radius))
    cov, missed = verify_covering(oracle.points[pts_idx], balls)
    packing_sum = float(sum(b.radius ** cfg.k for b in balls))
    budget = cfg.c_packing_budget * radius ** cfg.k
    failed, certified = 0, 0
    for b in balls:
        if b.radius > R_abs * (1 + 1e-12):
            certified += 1
            if oracle.sup_W(b.center, 2 * b.radius, 2 * b.radius) > cfg.E - cfg.eta / 2:
                failed += 1
    return {"covering": cov, "missed": len(missed), "packing": bool(np.isfinite(packing_sum)
                                                                    and packing_sum <= budget),
            "packing_sum": packing_sum, "budget": budget, "energy_drop": failed == 0,
            "certified": certified, "failed_certificates": failed}


def key_packing_cover(oracle: DensityOracle, domain, cfg: TreeConfig, verify_trees: bool = True) -> Cover:
    """Alternate trees in ``domain = (center, radius)`` and clamp r_x = max(R, r_s).

    ``cfg.R`` is relative to the domain radius; ``cfg.E`` defaults to the
    root density sup_{B_{2r}} W_{2r}.
    """
    center = np.asarray(domain[0], float)
    radius = float(domain[1])
    if cfg.E is None:
        cfg = cfg.with_E(root_density(oracle, center, radius))
    R_abs = cfg.R * radius
    acfg = TreeConfig(**{**cfg.to_dict(), "R": R_abs}) if radius <= 1 else None
    if acfg is None:
        raise ConfigError("domain radius must be <= 1 so that absolute R stays in (0, 1]")
    dom_ball = Ball(center, radius, Kind.GOOD)
    inside = sorted(oracle.ball(center, radius))
    if not inside:
        rep = CoverReport(True, True, True, 0.0, cfg.c_packing_budget * radius ** cfg.k, cfg.E, R_abs,
                          {"center": center.tolist(), "radius": radius}, 0, 0,
                          oracle=oracle.describe(), config=cfg.to_dict())
        return Cover([], rep)
    stops, ledger, trees = alternate_trees(dom_ball, oracle, acfg)
    balls = []
    for s in stops:
        b = Ball(s.center, max(R_abs, s.radius), Kind.STOP, s.scale_index, s.index)
        balls.append(b)
    attach_certificates([b for b in balls if b.radius > R_abs * (1 + 1e-12)], oracle)
    checks = verify_cover(balls, oracle, (center, radius), acfg, R_abs)
    tree_checks = {}
    if verify_trees:
        agg: dict = {}
        for t in trees:
            res = (verify_good_tree if t.kind is Kind.GOOD else verify_bad_tree)(
                t, oracle, acfg, (center, radius))
            for key, val in res.items():
                if isinstance(val, bool):
                    agg[key] = agg.get(key, True) and val
        tree_checks = agg
    rep = CoverReport(checks["covering"], checks["packing"], checks["energy_drop"],
                      checks["packing_sum"], checks["budget"], cfg.E, R_abs,
                      {"center": center.tolist(), "radius": radius}, len(balls),
                      checks["certified"], checks["missed"], checks["failed_certificates"],
                      ledger.to_dict(), oracle.describe(), cfg.to_dict(), tree_checks)
    return Cover(balls, rep)


def field_cover(u: ScalarField, Q: QField, points, domain, cfg: TreeConfig,
                policy: str = "snap", threads: int = 1, refine: bool = False):
    """Cover of stratum samples of a grid field; ``refine`` runs :func:`refine_cover`."""
    oracle = FieldDensity(u, Q, points, policy=policy, threads=threads)
    if refine:
        return refine_cover(oracle, domain, cfg), oracle
    return key_packing_cover(oracle, domain, cfg), oracle


@dataclass
class RefinedCover:
    balls: list
    generations: list
    E: float
    R: float
    k: int
    bound: float

    @property
    def count(self) -> int:
        return len(self.balls)

    def summary(self) -> dict:
        n = len(self.balls)
        return {"balls": n, "R": self.R, "count_times_R_k": n * self.R ** self.k,
                "packing_sum": float(sum(b.radius ** self.k for b in self.balls)),
                "generations": len(self.generations), "generation_bound": self.bound,
                "all_radii_R": all(abs(b.radius - self.R) <= 1e-12 * self.R for b in self.balls)}

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "E": self.E, "k": self.k,
                "generations": self.generations, "balls": [b.to_dict() for b in self.balls]}


def refine_cover(oracle: DensityOracle, domain, cfg: TreeConfig) -> RefinedCover:
    """Re-cover every ball with r_x > R until all radii equal R.

    Generation i requires sup W_{2 r_x} <= E - i eta/2 on every remaining big
    ball; more than 2 + 2E/eta generations means the drop accounting failed.
    """
    center = np.asarray(domain[0], float)
    radius = float(domain[1])
    if cfg.E is None:
        cfg = cfg.with_E(root_density(oracle, center, radius))
    E = cfg.E
    R_abs = cfg.R * radius
    bound = 2 + 2 * max(E, 0.0) / cfg.eta
    first = key_packing_cover(oracle, (center, radius), cfg)
    if not first.report.passed:
        raise AuditFailure(f"key packing cover failed its checks: {first.report.to_dict()['checks']}")
    current = first.balls
    generations = [_gen_record(1, current, R_abs, cfg.k, first.report)]
    i = 1
    while any(b.radius > R_abs * (1 + 1e-12) for b in current):
        i += 1
        if i > bound:
            raise AuditFailure(f"drop accounting violated: generation {i} exceeds bound {bound:.4g}")
        nxt = [b for b in current if b.radius <= R_abs * (1 + 1e-12)]
        for b in current:
            if b.radius <= R_abs * (1 + 1e-12):
                continue
            sub_E = b.certificate if b.certificate is not None else root_density(oracle, b.center, b.radius)
            if sub_E > E - (i - 1) * cfg.eta / 2 + 1e-12:
                raise AuditFailure(f"drop accounting violated at generation {i}: "
                                   f"sup W = {sub_E:.6g} > E - (i-1) eta/2")
            sub_cfg = TreeConfig(**{**cfg.to_dict(), "E": sub_E, "R": R_abs / b.radius})
            sub = key_packing_cover(oracle, (b.center, b.radius), sub_cfg)
            if not sub.report.passed:
                raise AuditFailure(f"sub-cover in B_{b.radius:.4g}({b.center.tolist()}) failed checks")
            nxt.extend(sub.balls)
        current = nxt
        generations.append(_gen_record(i, current, R_abs, cfg.k, None))
    return RefinedCover(current, generations, E, R_abs, cfg.k, bound)


def _gen_record(i, balls, R_abs, k, report) -> dict:
    big = [b for b in balls if b.radius > R_abs * (1 + 1e-12)]
    rec = {"generation": i, "balls": len(balls), "big_balls": len(big),
           "packing_sum": float(sum(b.radius ** k for b in balls)),
           "max_radius": max((b.radius for b in balls), default=0.0)}
    if report is not None:
        rec["checks"] = report.to_dict()["checks"]
    return rec
