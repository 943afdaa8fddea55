"""Analytic model fields and boundary-data generators."""

from __future__ import annotations

import numpy as np

from .field import GridSpec, ScalarField


def _unit(v, dim):
    v = np.asarray(v if v is not None else np.eye(dim)[0], float)
    return v / np.linalg.norm(v)


def half_plane(spec: GridSpec, q0: float = 1.0, normal=None, offset: float = 0.0) -> ScalarField:
    """``q0 * max(x . normal - offset, 0)``: the blow-up at a regular point."""
    nu = _unit(normal, spec.dim)
    return ScalarField.from_function(
        spec, lambda *x: q0 * np.maximum(sum(c * xi for c, xi in zip(nu, x)) - offset, 0.0))


def radial_cone(spec: GridSpec, center=None, slope: float = 1.0) -> ScalarField:
    """``slope * |x - center|`` (1-homogeneous, not a minimizer)."""
    c = np.zeros(spec.dim) if center is None else np.asarray(center, float)
    return ScalarField.from_function(
        spec, lambda *x: slope * np.sqrt(sum((xi - ci) ** 2 for xi, ci in zip(x, c))))


def quadratic(spec: GridSpec, center=None) -> ScalarField:
    """``|x - center|^2``."""
    c = np.zeros(spec.dim) if center is None else np.asarray(center, float)
    return ScalarField.from_function(spec, lambda *x: sum((xi - ci) ** 2 for xi, ci in zip(x, c)))


def saddle_positive(spec: GridSpec) -> ScalarField:
    """``max(x1^2 - x2^2, 0)``, a synthetic non-minimizer with a crossing free boundary."""
    return ScalarField.from_function(spec, lambda *x: np.maximum(x[0] ** 2 - x[1] ** 2, 0.0))


def random_fourier(spec: GridSpec, seed: int, modes: int = 3, amplitude: float = 1.0,
                   offset: float = 0.0) -> ScalarField:
    """Positive part of a random low-frequency trigonometric field.

    Used as Dirichlet data; only the face values matter to the solver.
    """
    rng = np.random.default_rng(seed)
    lo = np.asarray(spec.origin)
    ext = np.asarray(spec.extent)
    waves = rng.normal(size=(modes, spec.dim)) * (np.pi / ext)
    phases = rng.uniform(0, 2 * np.pi, size=modes)
    amps = rng.normal(size=modes) * amplitude

    def fn(*x):
        acc = np.full(np.shape(x[0]), float(offset))
        for w, ph, a in zip(waves, phases, amps):
            acc = acc + a * np.cos(sum(wi * (xi - li) for wi, xi, li in zip(w, x, lo)) + ph)
        return np.maximum(acc, 0.0)

    return ScalarField.from_function(spec, fn)


def random_front(spec: GridSpec, seed: int, slope_range=(0.5, 2.0), amplitude: float = 0.15,
                 modes: int = 3, shift: float = 0.3) -> ScalarField:
    """Tilted ramp plus a small random trigonometric wobble, truncated at 0.

    The ramp ``slope * (x . nu - c)`` with random unit ``nu`` and
    ``|c| <= shift * half-width`` forces a free boundary through the middle of the box.
    """
    rng = np.random.default_rng(seed)
    nu = rng.normal(size=spec.dim)
    nu /= np.linalg.norm(nu)
    mid = np.asarray(spec.origin) + 0.5 * np.asarray(spec.extent)
    c = rng.uniform(-shift, shift) * 0.5 * min(spec.extent)
    slope = rng.uniform(*slope_range)
    # two truncated draws differ by a signed wobble
    wob = [random_fourier(spec, int(rng.integers(2 ** 31)), modes=modes).values for _ in range(2)]
    half = 0.5 * min(spec.extent)
    ramp = slope * (sum(ni * (xi - mi) for ni, xi, mi in zip(nu, spec.mesh(), mid)) - c)
    return ScalarField(spec, np.maximum(ramp + amplitude * half * (wob[0] - wob[1]), 0.0))


def constant(spec: GridSpec, value: float) -> ScalarField:
    return ScalarField(spec, np.full(spec.shape, float(value)))


GENERATORS = {
    "half_plane": half_plane,
    "radial_cone": radial_cone,
    "quadratic": quadratic,
    "saddle_positive": saddle_positive,
    "random_fourier": random_fourier,
    "random_front": random_front,
    "constant": constant,
}


def generate(name: str, spec: GridSpec, **params) -> ScalarField:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown field generator {name!r}; choose from {sorted(GENERATORS)}")
    return gen(spec, **params)
