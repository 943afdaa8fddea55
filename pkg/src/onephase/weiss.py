"""Weiss density, almost-monotonicity defects and density-based classification.

For a point ``y`` and radius ``r``

    W_r(u, y) = r^-n int_{B_r} |Du|^2 + Q(y)^2 r^-n |{u > 0} cap B_r|
                - r^(-n-1) int_{dB_r} u^2

with the coefficient frozen at the center. The two volume terms use the
cell-centered rules from :mod:`onephase.field` (edge energy per cell,
fractional ball coverage, positivity of the linearly extended interpolant);
the sphere term averages the interpolant over quasi-uniform sphere points.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, ResolutionError, SpecMismatchError
from .field import (GridSpec, QField, ScalarField, _require_ball, cell_ball_weights,
                    rescale, sphere_integral_sq, unit_ball_volume)

MIN_RADIUS_CELLS = 4.0
# Relative quadrature error of W at r = 8h is a few percent on tilted
# half-planes and decays like h/r; margin = MARGIN_C * (h / r) * (Q^2 omega_n / 2).
MARGIN_C = 0.5
# Allowance for monotonicity audits: W_r - W_s >= -MONO_C * h / s.
# Worst scaled defect over 20 random 128^2 minimizers was -0.44.
MONO_C = 1.0


@dataclass(frozen=True)
class WeissTerms:
    dirichlet: float
    volume: float
    boundary: float
    q_center: float

    @property
    def value(self) -> float:
        return self.dirichlet + self.q_center ** 2 * self.volume - self.boundary


def weiss_terms(u: ScalarField, Q: QField, y, r: float) -> WeissTerms:
    """The three normalized pieces of W_r(u, y); ``volume`` excludes Q(y)^2."""
    spec = u.spec
    c = _require_ball(spec, y, r, MIN_RADIUS_CELLS)
    n = spec.dim
    sl, w = cell_ball_weights(spec, c, r)
    cell_vol = spec.h ** n
    dirichlet = float(np.sum(u.cell_energy[sl] * w)) * cell_vol / r ** n
    volume = float(np.sum(u.cell_positive[sl] * w)) * cell_vol / r ** n
    boundary = sphere_integral_sq(u, c, r, method="interp") / r ** (n + 1)
    return WeissTerms(dirichlet, volume, boundary, Q.at(c))


def weiss_density(u: ScalarField, Q: QField, y, r: float) -> float:
    """W_r(u, y) with Q frozen at ``y``. Requires r >= 4h and B_r(y) inside the grid."""
    if u.spec != Q.spec:
        raise SpecMismatchError("u and Q live on different grids")
    return weiss_terms(u, Q, y, r).value


def half_plane_density(q: float, dim: int) -> float:
    """Q^2 omega_n / 2, the value of W at a flat free-boundary point."""
    return q * q * unit_ball_volume(dim) / 2


def density_drop(u: ScalarField, Q: QField, y, r_small: float, r_large: float) -> float:
    """W_{r_large} - W_{r_small}; nonnegative up to quadrature for constant Q."""
    return weiss_density(u, Q, y, r_large) - weiss_density(u, Q, y, r_small)


@dataclass
class WeissProfile:
    center: tuple[float, ...]
    radii: list[float]
    W: list[float]
    defects: list[float]
    c0: float = 1.0
    holder_seminorm: float = 0.0
    holder_exponent: float = 1.0
    tolerances: list[float] = field(default_factory=list)
    violations: list[int] = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly ascending")
        if len(self.W) != len(self.radii) or len(self.defects) != max(len(self.radii) - 1, 0):
            raise ValueError("profile lengths do not match")

    @property
    def monotone(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "radii": self.radii,
            "W": self.W,
            "defects": self.defects,
            "c0": self.c0,
            "holder_seminorm": self.holder_seminorm,
            "holder_exponent": self.holder_exponent,
            "tolerances": self.tolerances,
            "violations": self.violations,
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["radius", "W", "defect"])
            for i, (r, val) in enumerate(zip(self.radii, self.W)):
                w.writerow([repr(r), repr(val), repr(self.defects[i - 1]) if i else ""])
        return path


def weiss_profile(u: ScalarField, Q: QField, y, radii, c0: float = 1.0,
                  tol_mono: float | None = None) -> WeissProfile:
    """W at each radius and the almost-monotonicity defects between neighbors.

    defect_j = W_{r_{j+1}} - W_{r_j} + c0 [Q]_alpha r_{j+1}^alpha. A defect
    below ``-tol`` is recorded in ``violations``; ``tol`` defaults to
    ``MONO_C * h / r_j``.
    """
    radii = [float(r) for r in radii]
    W = [weiss_density(u, Q, y, r) for r in radii]
    alpha = Q.holder_exponent
    hold = float(Q.holder_seminorm)
    defects, tols, bad = [], [], []
    for j in range(len(radii) - 1):
        d = W[j + 1] - W[j] + c0 * hold * radii[j + 1] ** alpha
        t = tol_mono if tol_mono is not None else MONO_C * u.spec.h / radii[j]
        defects.append(d)
        tols.append(t)
        if d < -t:
            bad.append(j)
    return WeissProfile(tuple(float(v) for v in np.asarray(y, float)), radii, W, defects, c0,
                        hold, alpha, tols, bad)


def scale_invariance_check(u: ScalarField, Q: QField, y, r: float) -> float:
    """|W_r(u, y) - W_1(u_{y,r}, 0)| with the dilated field on a grid of spacing h/r.

    The dilated coefficient is Q(y + r x); only its value at the origin
    enters the density.
    """
    y = np.asarray(y, float)
    lhs = weiss_density(u, Q, y, r)
    spec = u.spec
    cells = int(round(2 * r / spec.h))
    if cells < 2 * MIN_RADIUS_CELLS:
        raise ResolutionError("under-resolved: dilated grid too coarse")
    out = GridSpec(spec.dim, tuple([-1.0] * spec.dim), tuple([cells] * spec.dim), 2.0 / cells)
    ur = rescale(u, y, r, out)
    qr = QField.constant(out, Q.at(y), Q.lambda_bound)
    rhs = weiss_density(ur, qr, np.zeros(spec.dim), 1.0)
    return abs(lhs - rhs)


class Label(str, enum.Enum):
    REGULAR = "Regular"
    SINGULAR = "Singular"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class PointClass:
    label: Label
    W0_estimate: float
    threshold: float
    margin: float
    radius: float
    point: tuple[float, ...] = ()

    def __post_init__(self):
        expected = _label(self.W0_estimate, self.threshold, self.margin)
        if expected is not self.label:
            raise ValueError(f"label {self.label} inconsistent with W0 and threshold")

    def to_dict(self) -> dict:
        return {"point": list(self.point), "label": self.label.value,
                "W0_estimate": self.W0_estimate, "threshold": self.threshold,
                "margin": self.margin, "radius": self.radius}


def _label(w0: float, threshold: float, margin: float) -> Label:
    if w0 < threshold - margin:
        return Label.REGULAR
    if w0 > threshold + margin:
        return Label.SINGULAR
    return Label.UNRESOLVED


def classify_point(u: ScalarField, Q: QField, y, radii, eps0: float = 0.05, c0: float = 1.0,
                   margin_c: float = MARGIN_C) -> PointClass:
    """Regular / Singular / Unresolved from the density at the smallest radius.

    W0 is estimated by W at the smallest radius minus the almost-monotonicity
    allowance c0 [Q]_alpha r^alpha; the label keeps a quadrature margin
    around the threshold Q(y)^2 (omega_n / 2)(1 + eps0).
    """
    radii = sorted(float(r) for r in radii)
    h = u.spec.h
    if len(radii) < 3 or radii[-1] < 4 * radii[0]:
        raise ValueError("need at least 3 radii spanning a factor >= 4")
    if radii[0] < MIN_RADIUS_CELLS * h * (1 - 1e-12):
        raise ResolutionError(f"under-resolved: smallest radius {radii[0]:g} < 4h")
    if not eps0 >= 0:
        raise ValueError("eps0 must be nonnegative")
    y = np.asarray(y, float)
    if not u.spec.contains_ball(y, radii[-1]):
        raise GeometryError("largest probe ball exits the grid box")
    r0 = radii[0]
    q = Q.at(y)
    w0 = weiss_density(u, Q, y, r0) - c0 * float(Q.holder_seminorm) * r0 ** Q.holder_exponent
    base = half_plane_density(q, u.spec.dim)
    threshold = base * (1 + eps0)
    margin = margin_c * (h / r0) * base
    return PointClass(_label(w0, threshold, margin), w0, threshold, margin, r0,
                      tuple(float(v) for v in y))


def dyadic_radii(r_min: float, r_max: float) -> list[float]:
    """r_min, 2 r_min, ... up to r_max."""
    out = []
    r = r_min
    while r <= r_max * (1 + 1e-12):
        out.append(r)
        r *= 2
    return out


def admissible_radius(spec: GridSpec, y, r: float) -> bool:
    return r >= MIN_RADIUS_CELLS * spec.h * (1 - 1e-12) and spec.contains_ball(y, r)


__all__ = ["WeissTerms", "weiss_terms", "weiss_density", "half_plane_density", "density_drop",
           "WeissProfile", "weiss_profile", "scale_invariance_check", "Label", "PointClass",
           "classify_point", "dyadic_radii", "admissible_radius", "MARGIN_C", "MONO_C"]
