import numpy as np
import pytest

from onephase.field import GridSpec, QField, ScalarField, free_boundary_points
from onephase.models import half_plane, random_front
from onephase.solver import Problem, solve_cascade

RANDOM_RUNS = 20
INNER = 0.5


def solve_random(seed: int, cells: int = 128):
    spec = GridSpec.cube(1.0, cells)
    Q = QField.constant(spec, 1.0)
    data = random_front(spec, seed)
    u, rep = solve_cascade(Problem(spec, Q, ScalarField(spec, data.values)))
    return u, Q, rep


def inner_free_boundary(u, inner: float = INNER, count: int | None = None):
    fb = free_boundary_points(u)
    fb = fb[np.all(np.abs(fb) <= inner, axis=1)]
    if count is not None and len(fb) > count:
        fb = fb[np.unique(np.linspace(0, len(fb) - 1, count).round().astype(int))]
    return fb


@pytest.fixture(scope="session")
def random_minimizers():
    """20 converged constant-Q minimizers with a free boundary near the origin."""
    runs, seed = [], 0
    while len(runs) < RANDOM_RUNS:
        u, Q, rep = solve_random(seed)
        if len(inner_free_boundary(u)):
            runs.append((seed, u, Q, rep))
        seed += 1
    return runs


@pytest.fixture(scope="session")
def half_plane_b2():
    """Exact half-plane on [-2, 2]^2 with h = 1/64."""
    spec = GridSpec.cube(2.0, 256)
    return half_plane(spec), QField.constant(spec, 1.0)


def synthetic_instances():
    """Five closed-form stratum samples: name -> (points, W(x, r), k, TreeConfig overrides)."""
    from onephase.corona import plateau_density

    t = np.linspace(-1, 1, 401)
    line = np.c_[t, np.zeros_like(t)]
    ang = np.linspace(0, 2 * np.pi, 600, endpoint=False)
    circle = 0.6 * np.c_[np.cos(ang), np.sin(ang)]
    g = np.linspace(-0.8, 0.8, 41)
    sheet = np.array([[a, b, 0.0] for a in g for b in g])
    axis = np.c_[g, np.zeros_like(g), np.zeros_like(g)]
    band = line[np.abs(line[:, 0]) <= 0.02]
    return {
        "line_point_spike": (line, plateau_density([[0, 0]], 0.5, 1.0), 1, dict(R=0.01, eta=0.02)),
        "line_band": (line, plateau_density(band, 0.5, 1.0), 1, dict(R=0.002)),
        "circle_flat": (circle, lambda x, r: 1.0, 1, dict(R=0.02)),
        "sheet_ridge": (sheet, plateau_density(axis, 0.5, 1.0), 2, dict(R=0.01, eta=0.02)),
        "circle_spike": (circle, plateau_density(circle[:1], 0.5, 1.0), 1, dict(R=0.01, eta=0.02)),
    }


def half_plane_oracle(u, Q, inner: float = 0.5):
    from onephase.corona import FieldDensity

    fb = free_boundary_points(u)
    fb = fb[np.linalg.norm(fb, axis=1) <= inner]
    return FieldDensity(u, Q, fb)


# one summary line per acceptance criterion, filled from test outcomes
_CRITERIA: dict[int, list] = {}


def pytest_runtest_logreport(report):
    import re

    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or not (report.when == "call" or report.failed):
        return
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA.setdefault(int(m[1]), []).append((report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok = all(p for p, _ in _CRITERIA[n])
        details = "; ".join(d for _, d in _CRITERIA[n] if d)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {details}")
