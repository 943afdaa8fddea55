import csv

import numpy as np
import pytest

from onephase.errors import GeometryError
from onephase.field import GridSpec, ScalarField, free_boundary_points
from onephase.jones import DiscreteMeasure, beta_number
from onephase.models import constant, half_plane, quadratic, radial_cone, random_front
from onephase.strata import (SymmetryQuery, center_sweep, fb_symmetry_audit, homogeneous_projection,
                             plane_samples, scale_ladder, stratum_member, stratum_record,
                             stratum_scan, symmetry_distance, write_scan_csv)

TILT = (np.cos(0.3), np.sin(0.3))


@pytest.fixture(scope="module")
def grid():
    return GridSpec.cube(1.0, 128)


def ball_nodes(spec, c, r):
    pts = spec.node_points()
    return np.linalg.norm(pts - np.asarray(c), axis=1) < r


class TestProjection:
    def test_half_plane_fixed(self, grid):
        u = half_plane(grid, normal=TILT)
        v = homogeneous_projection(u, (0, 0), 0.5)
        inside = ball_nodes(grid, (0, 0), 0.5)
        err = np.abs(v.values.ravel() - u.values.ravel())[inside].max()
        assert err <= 3 * grid.h

    def test_quadratic_coefficient(self, grid):
        v = homogeneous_projection(quadratic(grid), (0, 0), 1.0)
        pts = grid.node_points()
        rad = np.linalg.norm(pts, axis=1)
        sel = (rad > 0.1) & (rad < 1.0)
        assert np.allclose(v.values.ravel()[sel] / rad[sel], 0.8, atol=0.01)

    def test_zero(self, grid):
        assert np.all(homogeneous_projection(constant(grid, 0.0), (0, 0), 0.5).values == 0)

    def test_idempotent(self, grid):
        u = ScalarField.from_function(grid, lambda x, y: np.maximum(x + 0.4 * y * y, 0))
        v = homogeneous_projection(u, (0, 0), 0.5)
        w = homogeneous_projection(v, (0, 0), 0.5)
        inside = ball_nodes(grid, (0, 0), 0.5)
        assert np.abs(w.values.ravel() - v.values.ravel())[inside].max() <= 2 * grid.h


class TestDistance:
    def test_half_plane_symmetric(self, grid):
        u = half_plane(grid, normal=TILT)
        res = symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 1))
        assert res.distance <= 1e-4
        assert abs(res.plane[0] @ np.asarray(TILT)) <= 0.05

    def test_cone_not_translation_invariant(self, grid):
        u = radial_cone(grid)
        d0 = symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 0)).distance
        d1 = symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 1, plane_samples=256)).distance
        assert d0 <= 1e-6
        assert d1 > d0 + 0.1

    def test_zero_field(self, grid):
        u = constant(grid, 0.0)
        for k in (0, 1, 2):
            assert symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, k)).distance == 0

    def test_more_samples_never_worse(self, grid):
        u = ScalarField.from_function(grid, lambda x, y: np.maximum(x + 0.7 * y + 0.5 * x * y, 0))
        ds = [symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 1, plane_samples=m)).distance
              for m in (4, 16, 64, 256)]
        assert all(b <= a + 1e-15 for a, b in zip(ds, ds[1:]))

    def test_samples_nested(self):
        for n, k in [(2, 1), (3, 1), (3, 2), (4, 2)]:
            short = plane_samples(n, k, 10)
            long = plane_samples(n, k, 40)
            assert all(np.allclose(a, b) for a, b in zip(short, long))
            for p in long:
                assert np.allclose(p @ p.T, np.eye(k), atol=1e-10)

    def test_beta_plane_seed(self, grid):
        u = half_plane(grid, normal=(np.cos(1.234), np.sin(1.234)))
        fb = free_boundary_points(u)
        plane = beta_number(DiscreteMeasure.counting(fb), (0, 0), 0.5, 1).vectors
        seeded = symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 1, plane_samples=2), seeds=[plane])
        plain = symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 1, plane_samples=2))
        assert seeded.distance <= plain.distance
        assert seeded.distance <= 1e-4

    def test_center_sweep_not_worse(self, grid):
        u = half_plane(grid, offset=grid.h)
        q = SymmetryQuery((0.0, 0.0), 0.5, 0)
        assert center_sweep(u, q).distance <= symmetry_distance(u, q).distance

    def test_query_validation(self):
        with pytest.raises(ValueError):
            SymmetryQuery((0.0, 0.0), 0.5, 3)
        with pytest.raises(ValueError):
            SymmetryQuery((0.0, 0.0), 0.5, 1, eps=0)

    def test_fb_audit(self, grid):
        u = half_plane(grid, normal=TILT)
        res = symmetry_distance(u, SymmetryQuery((0.0, 0.0), 0.5, 1))
        assert fb_symmetry_audit(u, res) <= 0.05


class TestMembership:
    def test_half_plane_lower_order(self, grid):
        u = half_plane(grid)
        x = (grid.h / 2, 0.0)
        assert not stratum_member(u, x, 0, 0.05, 0.25)

    def test_half_plane_top_stratum(self, grid):
        u = half_plane(grid)
        assert stratum_member(u, (grid.h / 2, 0.0), 1, 0.05, 0.25)

    def test_cone_vertex(self, grid):
        assert stratum_member(radial_cone(grid), (grid.h / 2, 0.0), 0, 0.01, 0.25)

    def test_far_from_free_boundary(self, grid):
        with pytest.raises(GeometryError):
            stratum_member(half_plane(grid), (0.5, 0.0), 1, 0.05, 0.25)

    def test_ladder_top_anchored(self, grid):
        s = scale_ladder(grid, (0.0, 0.0), 0.2)
        assert s == [1.0, 0.5, 0.25]
        assert scale_ladder(grid, (0.6, 0.0), 0.05)[0] == pytest.approx(0.4)

    def test_monotone_in_parameters(self):
        spec = GridSpec.cube(1.0, 64)
        u = random_front(spec, 11, amplitude=0.3)
        fb = free_boundary_points(u)
        fb = fb[np.all(np.abs(fb) <= 0.4, axis=1)][::7][:6]
        assert len(fb)
        for x in fb:
            for k in (0, 1):
                for eps, r in [(0.002, 0.125), (0.01, 0.125), (0.01, 0.25)]:
                    if stratum_member(u, x, k, eps, r):
                        assert stratum_member(u, x, k, eps / 2, r)
                        assert stratum_member(u, x, k, eps, 2 * r)
            assert stratum_member(u, x, 0, 0.005, 0.25) <= stratum_member(u, x, 1, 0.005, 0.25)

    def test_scan_csv(self, grid, tmp_path):
        u = half_plane(grid)
        pts = [(grid.h / 2, 0.0), (grid.h / 2, 0.1)]
        recs = stratum_scan(u, pts, 1, 0.05, 0.25)
        path = write_scan_csv(recs, tmp_path / "s.csv")
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["x0", "x1", "k", "eps", "r", "member", "best_scale", "distance"]
        assert len(rows) == 3 and rows[1][5] == "1"
        rec = stratum_record(u, pts[0], 1, 0.05, 0.25)
        assert rec.member and rec.distance > 0.05
