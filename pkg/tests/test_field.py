import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onephase.errors import GeometryError, ResolutionError, SpecMismatchError
from onephase.field import (GridSpec, QField, ScalarField, ball_integral, cell_ball_integral,
                            free_boundary_points, gradient_sq, hausdorff_distance, load_field,
                            rescale, save_field, sphere_integral_sq, unit_ball_volume)
from onephase.models import half_plane, quadratic


def unit_grid(cells=128, half=1.0, dim=2):
    return GridSpec.cube(half, cells, dim)


class TestGridSpec:
    def test_extent_matches_cells(self):
        spec = GridSpec.cube(2.0, 64)
        assert spec.extent == (4.0, 4.0)
        assert spec.h == pytest.approx(1 / 16)

    def test_roundtrip_dict(self):
        spec = GridSpec(3, (0, -1, 2), (4, 5, 6), 0.5)
        assert GridSpec.from_dict(spec.to_dict()) == spec

    def test_inconsistent_extent_rejected(self):
        d = GridSpec.cube(1.0, 8).to_dict()
        d["extent"] = [3.0, 2.0]
        with pytest.raises(ValueError):
            GridSpec.from_dict(d)

    @pytest.mark.parametrize("kw", [dict(dim=0, origin=(), cells=(), h=1.0),
                                    dict(dim=1, origin=(0,), cells=(4,), h=0.0),
                                    dict(dim=1, origin=(0,), cells=(0,), h=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GridSpec(**kw)


class TestGradientSq:
    def test_zero_field(self):
        spec = unit_grid(16)
        assert gradient_sq(ScalarField(spec, np.zeros(spec.shape)), (8, 8)) == 0

    def test_linear_field(self):
        spec = unit_grid(16)
        u = ScalarField.from_function(spec, lambda x, y: x)
        assert gradient_sq(u, (5, 9)) == pytest.approx(1.0)

    def test_half_plane_stencil(self):
        spec = unit_grid(32)
        u = half_plane(spec, q0=1.7)
        assert gradient_sq(u, (24, 10)) == pytest.approx(1.7 ** 2)

    def test_boundary_node_rejected(self):
        spec = unit_grid(8)
        with pytest.raises(GeometryError, match="interior required"):
            gradient_sq(ScalarField(spec, np.zeros(spec.shape)), (0, 3))


class TestBallIntegral:
    def test_disk_area(self):
        spec = GridSpec.cube(1.25, 320)  # h = 1/128
        h = spec.h
        area = ball_integral(spec, 1.0, (0, 0), 1.0)
        assert abs(area - math.pi) / math.pi <= 2 * h

    def test_zero(self):
        assert ball_integral(unit_grid(64), 0.0, (0, 0), 0.5) == 0

    def test_half_disk(self):
        spec = GridSpec.cube(1.25, 320)
        f = (spec.mesh()[0] > 0).astype(float)
        assert ball_integral(spec, f, (0, 0), 1.0) == pytest.approx(math.pi / 2, rel=2 * spec.h)

    def test_errors(self):
        spec = unit_grid(64)
        with pytest.raises(GeometryError):
            ball_integral(spec, 1.0, (0.9, 0), 0.5)
        with pytest.raises(ResolutionError, match="under-resolved"):
            ball_integral(spec, 1.0, (0, 0), spec.h)

    def test_refinement_improves(self):
        errs = []
        for cells in (160, 320, 640):  # h = 1/64, 1/128, 1/256 on [-1.25, 1.25]
            spec = GridSpec.cube(1.25, cells)
            errs.append(abs(ball_integral(spec, 1.0, (0.013, -0.007), 1.0) / math.pi - 1))
        assert errs[2] < errs[0]
        assert max(errs) <= 2 / 64

    def test_cell_rule_sharper(self):
        spec = unit_grid(128)
        cells = np.ones(tuple(spec.cells))
        val = cell_ball_integral(spec, cells, (0.01, 0.02), 0.5)
        assert val == pytest.approx(math.pi / 4, rel=1e-3)


class TestSphere:
    def test_zero(self):
        spec = unit_grid(64, 1.5)
        assert sphere_integral_sq(ScalarField(spec, np.zeros(spec.shape)), (0, 0), 1.0) == 0

    @pytest.mark.parametrize("method", ["shell", "interp"])
    def test_circumference(self, method):
        spec = GridSpec.cube(1.25, 320)
        u = ScalarField(spec, np.ones(spec.shape))
        assert sphere_integral_sq(u, (0, 0), 1.0, method) == pytest.approx(2 * math.pi, rel=4 * spec.h)

    @pytest.mark.parametrize("method", ["shell", "interp"])
    def test_half_plane_moment(self, method):
        spec = GridSpec.cube(1.25, 320)
        u = ScalarField.from_function(spec, lambda x, y: np.maximum(y, 0))
        assert sphere_integral_sq(u, (0, 0), 1.0, method) == pytest.approx(math.pi / 2, rel=4 * spec.h)

    def test_ball_volume(self):
        assert unit_ball_volume(2) == pytest.approx(math.pi)
        assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


class TestRescale:
    def test_identity(self):
        spec = unit_grid(32)
        u = quadratic(spec)
        assert np.allclose(rescale(u, (0, 0), 1.0, spec).values, u.values)

    def test_half_plane_invariant(self):
        spec = unit_grid(64, 2.0)
        u = half_plane(spec, normal=(1, 1))
        out = unit_grid(32)
        y = np.array([0.5, -0.5])
        v = rescale(u, y, 0.5, out)
        assert np.max(np.abs(v.values - half_plane(out, normal=(1, 1)).values)) <= 2 * spec.h

    def test_quadratic(self):
        spec = unit_grid(64)
        v = rescale(quadratic(spec), (0, 0), 0.5, spec)
        assert np.max(np.abs(v.values - quadratic(spec).values / 2)) <= 2 * spec.h ** 2

    def test_exits_box(self):
        spec = unit_grid(16)
        with pytest.raises(GeometryError):
            rescale(quadratic(spec), (0.5, 0), 1.0, spec)

    def test_composition(self):
        spec = unit_grid(128, 1.0)
        u = ScalarField.from_function(spec, lambda x, y: np.maximum(x + 0.3 * y * y - 0.1, 0))
        out = unit_grid(32)
        a = rescale(rescale(u, (0, 0), 0.5, spec), (0, 0), 0.5, out)
        b = rescale(u, (0, 0), 0.25, out)
        assert np.max(np.abs(a.values - b.values)) <= 2 * spec.h


class TestFreeBoundary:
    def test_positive_everywhere(self):
        spec = unit_grid(8)
        assert len(free_boundary_points(ScalarField(spec, np.ones(spec.shape)))) == 0

    def test_zero(self):
        spec = unit_grid(8)
        assert len(free_boundary_points(ScalarField(spec, np.zeros(spec.shape)))) == 0

    def test_half_plane_line(self):
        spec = unit_grid(16)
        fb = free_boundary_points(half_plane(spec))
        assert len(fb) == spec.shape[1]
        assert np.allclose(fb[:, 0], spec.h / 2)
        assert np.all(np.diff(fb[:, 1]) > 0)


class TestHausdorff:
    def test_examples(self):
        assert hausdorff_distance([(0, 0)], [(0, 0)]) == 0
        assert hausdorff_distance([(0, 0)], [(1, 0)]) == 1
        assert hausdorff_distance([(0, 0), (2, 0)], [(1, 0)]) == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            hausdorff_distance([], [(0, 0)])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=8),
           st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=8))
    def test_symmetric_nonnegative(self, a, b):
        d = hausdorff_distance(a, b)
        assert d >= 0
        assert d == hausdorff_distance(b, a)
        assert hausdorff_distance(a, a) == 0


class TestQField:
    def test_bounds(self):
        spec = unit_grid(8)
        with pytest.raises(ValueError):
            QField.constant(spec, 5.0, lambda_bound=2.0)

    def test_holder_dominates_samples(self):
        spec = unit_grid(16)
        Q = QField.from_function(spec, lambda x, y: 1 + 0.2 * x, lambda_bound=2.0, alpha=1.0)
        assert Q.holder_seminorm >= 0.2 - 1e-12


class TestSerialization:
    @pytest.mark.parametrize("fmt", ["bin", "csv"])
    def test_roundtrip(self, tmp_path, fmt):
        spec = GridSpec(2, (-1, 0), (6, 4), 0.25)
        u = ScalarField.from_function(spec, lambda x, y: x * x + y)
        path, sidecar = save_field(u, tmp_path / f"u.{fmt}", fmt)
        v = load_field(path)
        assert v.spec == spec
        assert np.array_equal(v.values, u.values)
        assert np.array_equal(v.boundary_mask, u.boundary_mask)

    def test_shape_mismatch(self):
        spec = unit_grid(4)
        with pytest.raises(SpecMismatchError):
            ScalarField(spec, np.zeros((3, 3)))
