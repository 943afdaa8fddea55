"""Nodal coordinate descent for the discretized one-phase functional.

The discrete energy is

    J_h(u) = sum_edges (u_a - u_b)^2 h^(n-2) + sum_nodes Q^2 h^n 1{u > 0}

and fixing every node except one leaves ``h^(n-2) 2n (v - m)^2 + Q^2 h^n 1{v>0}``
(up to a constant) with ``m`` the neighbor mean, whose argmin over ``v >= 0``
is closed form. Red-black Gauss-Seidel sweeps of that update never increase
J_h.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .errors import ConfigError, DivergenceError, SpecMismatchError
from .field import GridSpec, QField, ScalarField, cell_gradient_energy, face_mask, free_boundary_points

logger = logging.getLogger(__name__)


@dataclass
class Problem:
    spec: GridSpec
    Q: QField
    boundary_data: ScalarField
    max_sweeps: int = 20000
    energy_tol: float = 1e-12

    def __post_init__(self):
        if self.Q.spec != self.spec or self.boundary_data.spec != self.spec:
            raise SpecMismatchError("Problem components must share one grid")
        if not self.energy_tol > 0:
            raise ConfigError("energy_tol must be positive")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be >= 1")
        mask = self.boundary_data.boundary_mask
        if np.any(self.boundary_data.values[mask] < 0):
            raise ConfigError("boundary data must be nonnegative")
        if not np.all(mask[face_mask(self.spec)]):
            raise ConfigError("every box-face node must be a Dirichlet node")


@dataclass
class SolveReport:
    final_energy: float
    sweeps_used: int
    energy_history: list[float]
    harmonic_residual: float
    nondegeneracy: tuple[float, float]
    lipschitz: float = float("nan")
    converged: bool = False
    seed: str = "harmonic-extension"
    stages: list[dict] = field(default_factory=list)
    monotone: bool = field(init=False)

    def __post_init__(self):
        e = self.energy_history
        self.monotone = all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(e, e[1:]))

    def to_dict(self) -> dict:
        return {
            "final_energy": self.final_energy,
            "sweeps_used": self.sweeps_used,
            "converged": self.converged,
            "energy_monotone": self.monotone,
            "harmonic_residual": self.harmonic_residual,
            "nondegeneracy": {"lower_ratio": self.nondegeneracy[0],
                              "upper_ratio": self.nondegeneracy[1]},
            "lipschitz": self.lipschitz,
            "seed": self.seed,
            "stages": self.stages,
        }


def _node_weights(spec: GridSpec) -> np.ndarray:
    """Trapezoid node volumes: h^n inside, halved once per box face touched."""
    w = np.ones(spec.shape)
    for ax in range(spec.dim):
        sl = [slice(None)] * spec.dim
        sl[ax] = 0
        w[tuple(sl)] *= 0.5
        sl[ax] = -1
        w[tuple(sl)] *= 0.5
    return w * spec.h ** spec.dim


def energy(u: ScalarField, Q: QField, region: np.ndarray | None = None) -> float:
    """Discrete Alt-Caffarelli energy.

    Without ``region`` the whole box is integrated (edges and nodes on the box
    faces carry trapezoid half weights). With a boolean node ``region``,
    edges count when both endpoints lie in it and nodes with weight h^n.
    """
    if u.spec != Q.spec:
        raise SpecMismatchError("u and Q live on different grids")
    spec = u.spec
    pos = u.values > 0
    if region is None:
        grad = float(np.sum(cell_gradient_energy(u))) * spec.h ** spec.dim
        ind = float(np.sum(Q.values ** 2 * pos * _node_weights(spec)))
        return grad + ind
    region = np.asarray(region, bool)
    grad = 0.0
    for ax in range(spec.dim):
        d = np.diff(u.values, axis=ax) ** 2
        both = np.take(region, range(spec.shape[ax] - 1), axis=ax) & np.take(
            region, range(1, spec.shape[ax]), axis=ax)
        grad += float(np.sum(d[both]))
    grad *= spec.h ** (spec.dim - 2)
    ind = float(np.sum(Q.values[region & pos] ** 2)) * spec.h ** spec.dim
    return grad + ind


def nodal_update(m, q, h: float, n: int):
    """Exact argmin over v >= 0 of h^(n-2) 2n (v - m)^2 + q^2 h^n 1{v > 0}."""
    thr = np.asarray(q, float) * h / np.sqrt(2 * np.asarray(n))
    m = np.asarray(m, float)
    out = np.where(m > thr, m, 0.0)
    return float(out) if out.ndim == 0 else out


def local_energy(v, m, q, h: float, n: int):
    """The one-node energy minimized by :func:`nodal_update` (constant dropped)."""
    v = np.asarray(v, float)
    return h ** (n - 2) * 2 * n * (v - m) ** 2 + q * q * h ** n * (v > 0)


def harmonic_extension(data: ScalarField) -> ScalarField:
    """Discrete harmonic function matching ``data`` on its Dirichlet nodes."""
    spec = data.spec
    mask = data.boundary_mask
    free = ~mask
    nfree = int(free.sum())
    vals = np.where(mask, data.values, 0.0)
    if nfree == 0:
        return ScalarField(spec, vals, mask.copy())
    index = -np.ones(spec.shape, dtype=np.int64)
    index[free] = np.arange(nfree)
    rows, cols, entries = [], [], []
    rhs = np.zeros(nfree)
    free_idx = np.argwhere(free)
    me = index[free]
    rows.append(me)
    cols.append(me)
    entries.append(np.full(nfree, 2.0 * spec.dim))
    for ax in range(spec.dim):
        for s in (1, -1):
            nb = free_idx.copy()
            nb[:, ax] += s
            nb_t = tuple(nb.T)
            nb_free = free[nb_t]
            rows.append(me[nb_free])
            cols.append(index[nb_t][nb_free])
            entries.append(-np.ones(int(nb_free.sum())))
            rhs += np.where(nb_free, 0.0, vals[nb_t])
    A = sp.csr_matrix((np.concatenate(entries), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nfree, nfree))
    if nfree <= 300_000:
        x = spla.spsolve(A.tocsc(), rhs)
    else:
        x, info = spla.cg(A, rhs, rtol=1e-12, maxiter=20000)
        if info != 0:
            logger.warning("harmonic extension CG did not converge (info=%d)", info)
    vals[free] = x
    return ScalarField(spec, vals, mask.copy())


def _interior(spec: GridSpec) -> tuple[slice, ...]:
    return tuple(slice(1, c) for c in spec.cells)


def _neighbor_sum(v: np.ndarray, dim: int) -> np.ndarray:
    inner = tuple(slice(1, -1) for _ in range(dim))
    s = np.zeros(tuple(n - 2 for n in v.shape))
    for ax in range(dim):
        up = list(inner)
        dn = list(inner)
        up[ax] = slice(2, None)
        dn[ax] = slice(0, -2)
        s += v[tuple(up)] + v[tuple(dn)]
    return s


def _initial(p: Problem, seed):
    spec = p.spec
    mask = p.boundary_data.boundary_mask
    if isinstance(seed, ScalarField):
        if seed.spec != spec:
            raise SpecMismatchError("seed lives on a different grid")
        v, name = seed.values.copy(), "field"
    elif seed == "harmonic-extension":
        v, name = harmonic_extension(p.boundary_data).values, seed
    elif seed == "zero":
        v, name = np.zeros(spec.shape), seed
    else:
        raise ConfigError(f"unknown seed {seed!r}")
    v = np.maximum(v, 0.0)
    v[mask] = p.boundary_data.values[mask]
    if not np.all(np.isfinite(v)):
        raise DivergenceError("divergence: non-finite values in the initial iterate")
    return v, name


def _sweeps(v, p: Problem, q_scale: float, history: list | None, record_every: int = 1):
    """Red-black sweeps with coefficient ``q_scale * Q`` until energy stagnates.

    The energy is tracked incrementally from the exact local changes and
    recomputed from scratch every ``_RESYNC`` sweeps to shed roundoff.
    Returns (sweeps, converged, energy).
    """
    spec = p.spec
    n = spec.dim
    h = spec.h
    mask = p.boundary_data.boundary_mask
    inner = _interior(spec)
    q = p.Q.values[inner] * q_scale
    q2w = q * q * h ** n
    thr = q * h / math.sqrt(2 * n)
    kin = h ** (n - 2) * 2 * n
    parity = np.indices(tuple(c - 1 for c in spec.cells)).sum(axis=0) % 2
    free = ~mask[inner]
    colors = [free & (parity == 0), free & (parity == 1)]
    view = v[inner]
    qf = QField(spec, p.Q.values * q_scale, p.Q.lambda_bound * max(q_scale, 1 / q_scale),
                p.Q.holder_exponent, float("inf")) if q_scale != 1.0 else p.Q
    e = energy(ScalarField(spec, v, mask), qf)
    if history is not None:
        history.append(e)
    converged = False
    sweeps = 0
    for sweeps in range(1, p.max_sweeps + 1):
        e_old = e
        for color in colors:
            m = _neighbor_sum(v, n) / (2 * n)
            new = np.where(m > thr, m, 0.0)
            old = view
            delta = kin * ((new - m) ** 2 - (old - m) ** 2) + q2w * ((new > 0).astype(float) - (old > 0))
            e += float(np.sum(delta, where=color))
            np.copyto(view, new, where=color)
        if not np.all(np.isfinite(view)):
            raise DivergenceError("divergence: non-finite values after sweep %d" % sweeps)
        if sweeps % _RESYNC == 0:
            e = energy(ScalarField(spec, v, mask), qf)
        stalled = abs(e_old - e) < p.energy_tol
        if stalled:
            e = energy(ScalarField(spec, v, mask), qf)
        if history is not None and (sweeps % record_every == 0 or stalled):
            history.append(e)
        if stalled:
            converged = True
            break
    return sweeps, converged, e


_RESYNC = 64
DEFAULT_CONTINUATION = (1.75,)


def minimize(p: Problem, seed="harmonic-extension", record_every: int = 1, continuation=None):
    """Red-black Gauss-Seidel descent of J_h from ``seed``.

    ``seed`` is ``"harmonic-extension"`` (default), ``"zero"``, or a
    :class:`ScalarField` (e.g. a prolongated coarse solution).

    The discrete problem has many local minima whose free boundaries sit at
    slopes anywhere in roughly [Q/2, 2Q]. ``continuation`` lists factors
    kappa; for each one the iterate is first relaxed with ``kappa * Q``
    before the final descent with ``Q`` itself. These stages only produce a
    better starting point: ``energy_history`` covers the final stage, which
    is monotone. The default applies ``DEFAULT_CONTINUATION`` to string
    seeds and nothing to field seeds.
    """
    v, seed_name = _initial(p, seed)
    if continuation is None:
        continuation = () if isinstance(seed, ScalarField) else DEFAULT_CONTINUATION
    stages = []
    for kappa in continuation:
        if not kappa > 0:
            raise ConfigError("continuation factors must be positive")
        used, conv, e = _sweeps(v, p, float(kappa), None)
        stages.append({"q_factor": float(kappa), "sweeps": used, "converged": conv, "energy": e})
    history: list[float] = []
    sweeps, converged, _ = _sweeps(v, p, 1.0, history, record_every)
    stages.append({"q_factor": 1.0, "sweeps": sweeps, "converged": converged, "energy": history[-1]})

    mask = p.boundary_data.boundary_mask
    u = ScalarField(p.spec, v.copy(), mask.copy())
    try:
        nd = nondegeneracy_audit(u)
    except ValueError:
        nd = (float("nan"), float("nan"))
    report = SolveReport(final_energy=history[-1], sweeps_used=sum(s["sweeps"] for s in stages),
                         energy_history=history, harmonic_residual=harmonic_residual(u),
                         nondegeneracy=nd, lipschitz=lipschitz_bound(u), converged=converged,
                         seed=seed_name, stages=stages)
    if not report.monotone:
        logger.error("energy history is not monotone; this indicates a solver defect")
    return u, report


def prolongate(coarse: ScalarField, fine_spec: GridSpec) -> ScalarField:
    """Multilinear prolongation of a coarse solution onto a finer grid of the same box."""
    pts = np.clip(fine_spec.node_points(), np.asarray(coarse.spec.origin), coarse.spec.upper)
    return ScalarField(fine_spec, coarse.sample(pts).reshape(fine_spec.shape))


def solve_cascade(p: Problem, levels: int = 3, seed="harmonic-extension"):
    """Nested iteration: solve on successively halved grids, prolongate upward.

    Only the box faces are treated as Dirichlet nodes on coarse levels, so
    the problem must use the default face mask.
    """
    spec = p.spec
    if levels <= 1 or any(c % 2 ** (levels - 1) for c in spec.cells) or not np.array_equal(
            p.boundary_data.boundary_mask, face_mask(spec)):
        return minimize(p, seed)
    coarse_fields = []
    for lev in range(levels - 1, 0, -1):
        f = 2 ** lev
        cspec = GridSpec(spec.dim, spec.origin, tuple(c // f for c in spec.cells), spec.h * f)
        sl = tuple(slice(None, None, f) for _ in range(spec.dim))
        coarse_fields.append((cspec, sl))
    current = None
    for cspec, sl in coarse_fields:
        cq = QField(cspec, p.Q.values[sl], p.Q.lambda_bound, p.Q.holder_exponent,
                    max(p.Q.holder_seminorm, 0.0) if p.Q.is_constant else None)
        cdata = ScalarField(cspec, p.boundary_data.values[sl])
        cp = Problem(cspec, cq, cdata, p.max_sweeps, p.energy_tol)
        cseed = seed if current is None else _with_data(prolongate(current, cspec), cdata)
        current, _ = minimize(cp, cseed)
    fine_seed = _with_data(prolongate(current, spec), p.boundary_data)
    return minimize(p, fine_seed)


def _with_data(u: ScalarField, data: ScalarField) -> ScalarField:
    vals = u.values.copy()
    vals[data.boundary_mask] = data.values[data.boundary_mask]
    return ScalarField(u.spec, vals, data.boundary_mask.copy())


def harmonic_residual(u: ScalarField) -> float:
    """Max |sum of neighbors - 2n u| over free nodes whose whole stencil is positive."""
    spec = u.spec
    inner = _interior(spec)
    v = u.values
    pos = v > 0
    ok = pos[inner] & ~u.boundary_mask[inner]
    for ax in range(spec.dim):
        up = list(inner)
        dn = list(inner)
        up[ax] = slice(2, None)
        dn[ax] = slice(0, -2)
        ok &= pos[tuple(up)] & pos[tuple(dn)]
    if not ok.any():
        return 0.0
    lap = _neighbor_sum(v, spec.dim) - 2 * spec.dim * v[inner]
    return float(np.max(np.abs(lap[ok])))


def nondegeneracy_audit(u: ScalarField) -> tuple[float, float]:
    """min and max of u(y) / d(y, free boundary) over positive nodes at distance >= 4h."""
    fb = free_boundary_points(u)
    if len(fb) == 0:
        raise ValueError("empty free boundary")
    pts = u.spec.node_points()
    vals = u.values.ravel()
    pos = vals > 0
    d, _ = cKDTree(fb).query(pts[pos])
    far = d >= 4 * u.spec.h
    if not far.any():
        return float("nan"), float("nan")
    ratio = vals[pos][far] / d[far]
    return float(ratio.min()), float(ratio.max())


def lipschitz_bound(u: ScalarField) -> float:
    """Max central-difference gradient magnitude over interior nodes."""
    spec = u.spec
    inner = _interior(spec)
    g2 = np.zeros(tuple(c - 1 for c in spec.cells))
    for ax in range(spec.dim):
        up = list(inner)
        dn = list(inner)
        up[ax] = slice(2, None)
        dn[ax] = slice(0, -2)
        g2 += ((u.values[tuple(up)] - u.values[tuple(dn)]) / (2 * spec.h)) ** 2
    return float(np.sqrt(g2.max())) if g2.size else 0.0
