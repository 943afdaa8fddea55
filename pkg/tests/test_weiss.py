import csv
import math

import numpy as np
import pytest

from onephase.errors import GeometryError, ResolutionError, SpecMismatchError
from onephase.field import GridSpec, QField
from onephase.models import constant, half_plane, radial_cone, saddle_positive
from onephase.weiss import (MONO_C, Label, PointClass, classify_point, density_drop, dyadic_radii,
                            half_plane_density, scale_invariance_check, weiss_density,
                            weiss_profile, weiss_terms)

from conftest import inner_free_boundary

HALF = math.pi / 2


@pytest.fixture(scope="module")
def b2():
    spec = GridSpec.cube(2.0, 256)
    return spec, QField.constant(spec, 1.0)


class TestDensity:
    # diagonal fronts cut cells worst: +3.2% at r = 16h, +1.4% at 32h
    @pytest.mark.parametrize("normal,radii", [((1, 0), (0.25, 0.5, 1.0)),
                                              ((np.cos(0.3), np.sin(0.3)), (0.25, 0.5, 1.0)),
                                              ((1, 1), (0.5, 1.0))])
    def test_half_plane_value(self, b2, normal, radii):
        spec, Q = b2
        u = half_plane(spec, normal=normal)
        for r in radii:
            assert weiss_density(u, Q, (0, 0), r) == pytest.approx(HALF, rel=0.03)

    def test_half_plane_q_scaling(self, b2):
        spec, _ = b2
        Q = QField.constant(spec, 2.0)
        u = half_plane(spec, q0=2.0)
        assert weiss_density(u, Q, (0, 0), 0.5) == pytest.approx(4 * HALF, rel=0.03)
        assert half_plane_density(2.0, 2) == pytest.approx(2 * math.pi)

    def test_zero(self, b2):
        spec, Q = b2
        assert weiss_density(constant(spec, 0.0), Q, (0.3, -0.2), 0.5) == 0

    def test_half_plane_profile_flat(self, b2):
        spec, Q = b2
        u = half_plane(spec)
        vals = [weiss_density(u, Q, (0, 0), r) for r in (0.25, 0.5, 1.0)]
        assert max(vals) - min(vals) <= 2 * spec.h

    def test_terms_add_up(self, b2):
        spec, Q = b2
        u = half_plane(spec)
        t = weiss_terms(u, Q, (0, 0), 0.5)
        assert t.value == pytest.approx(t.dirichlet + t.volume - t.boundary)
        # each piece of the half-plane density is pi/2, pi/2 and pi/2
        for part in (t.dirichlet, t.volume, t.boundary):
            assert part == pytest.approx(HALF, rel=0.03)

    def test_translation_consistency(self, b2):
        spec, Q = b2
        a = weiss_density(half_plane(spec), Q, (0, 0), 0.5)
        b = weiss_density(half_plane(spec, offset=0.3), Q, (0.3, 0.1), 0.5)
        c = weiss_density(half_plane(spec, offset=0.3 + spec.h / 3), Q, (0.3 + spec.h / 3, 0.1), 0.5)
        assert abs(a - b) <= 2 * spec.h
        assert abs(a - c) <= 2 * spec.h

    def test_errors(self, b2):
        spec, Q = b2
        u = half_plane(spec)
        with pytest.raises(ResolutionError):
            weiss_density(u, Q, (0, 0), 2 * spec.h)
        with pytest.raises(GeometryError):
            weiss_density(u, Q, (1.5, 0), 1.0)
        other = GridSpec.cube(2.0, 128)
        with pytest.raises(SpecMismatchError):
            weiss_density(u, QField.constant(other), (0, 0), 0.5)

    def test_drop_nonnegative_for_cone(self, b2):
        spec, Q = b2
        assert density_drop(radial_cone(spec), Q, (0, 0), 0.25, 1.0) == pytest.approx(0, abs=0.02)


class TestProfile:
    def test_half_plane(self, b2):
        spec, Q = b2
        prof = weiss_profile(half_plane(spec), Q, (0, 0), [0.25, 0.5, 1.0])
        assert prof.monotone
        assert all(d >= -t for d, t in zip(prof.defects, prof.tolerances))

    def test_cone_constant(self, b2):
        spec, Q = b2
        prof = weiss_profile(radial_cone(spec), Q, (0, 0), [0.125, 0.25, 0.5, 1.0])
        assert max(abs(d) for d in prof.defects) <= 0.02
        assert prof.monotone

    def test_holder_allowance(self, b2):
        spec, _ = b2
        Q = QField.from_function(spec, lambda x, y: 1 + 0.05 * x, lambda_bound=2.0)
        prof = weiss_profile(half_plane(spec), Q, (0, 0), [0.25, 0.5], c0=3.0)
        raw = prof.W[1] - prof.W[0]
        assert prof.defects[0] == pytest.approx(raw + 3.0 * Q.holder_seminorm * 0.5)

    def test_ascending_required(self, b2):
        spec, Q = b2
        with pytest.raises(ValueError):
            weiss_profile(half_plane(spec), Q, (0, 0), [0.5, 0.25])

    def test_csv(self, b2, tmp_path):
        spec, Q = b2
        prof = weiss_profile(half_plane(spec), Q, (0, 0), [0.25, 0.5])
        rows = list(csv.reader(prof.write_csv(tmp_path / "p.csv").open()))
        assert rows[0] == ["radius", "W", "defect"]
        assert rows[1][2] == "" and float(rows[2][2]) == pytest.approx(prof.defects[0])

    @pytest.mark.slow
    def test_random_minimizers_monotone(self, random_minimizers):
        for _, u, Q, _ in random_minimizers:
            h = u.spec.h
            for y in inner_free_boundary(u, count=8):
                prof = weiss_profile(u, Q, y, dyadic_radii(4 * h, 0.5))
                assert prof.monotone, (y, prof.defects)
                assert all(d >= -MONO_C * h / s for d, s in zip(prof.defects, prof.radii))


class TestScaleInvariance:
    def test_identity(self):
        spec = GridSpec.cube(1.0, 128)
        u = half_plane(spec, normal=(1, 2))
        assert scale_invariance_check(u, QField.constant(spec), (0, 0), 1.0) <= 1e-12

    def test_half_plane(self, b2):
        spec, Q = b2
        for normal in [(1, 0), (1, 1), (np.cos(0.3), np.sin(0.3))]:
            u = half_plane(spec, normal=normal)
            assert scale_invariance_check(u, Q, (0, 0), 0.5) <= 2 * spec.h

    def test_under_resolved(self, b2):
        spec, Q = b2
        with pytest.raises(ResolutionError):
            scale_invariance_check(half_plane(spec), Q, (0, 0), 3 * spec.h)


class TestClassify:
    def test_half_plane_regular(self, b2):
        spec, Q = b2
        pc = classify_point(half_plane(spec), Q, (0, 0), [0.25, 0.5, 1.0])
        assert pc.label is Label.REGULAR
        assert pc.threshold == pytest.approx(HALF * 1.05)

    def test_saddle_not_regular(self):
        spec = GridSpec.cube(3.0, 192)
        pc = classify_point(saddle_positive(spec), QField.constant(spec), (0, 0), [0.5, 1.0, 2.0])
        assert pc.label in (Label.SINGULAR, Label.UNRESOLVED)
        assert pc.W0_estimate > HALF * 1.05

    def test_eps0_monotone(self, b2):
        spec, Q = b2
        u = half_plane(spec, normal=(1, 1))
        order = {Label.REGULAR: 0, Label.UNRESOLVED: 1, Label.SINGULAR: 2}
        labels = [classify_point(u, Q, (0, 0), [0.25, 0.5, 1.0], e).label for e in (0, 0.02, 0.05, 0.2, 1)]
        ranks = [order[lab] for lab in labels]
        assert ranks == sorted(ranks, reverse=True)

    def test_radii_validation(self, b2):
        spec, Q = b2
        u = half_plane(spec)
        with pytest.raises(ValueError):
            classify_point(u, Q, (0, 0), [0.25, 0.5])
        with pytest.raises(ValueError):
            classify_point(u, Q, (0, 0), [0.25, 0.3, 0.5])
        with pytest.raises(ResolutionError):
            classify_point(u, Q, (0, 0), [spec.h, 2 * spec.h, 4 * spec.h])

    def test_pointclass_consistency(self):
        with pytest.raises(ValueError):
            PointClass(Label.REGULAR, 2.0, 1.6, 0.1, 0.25)
        assert PointClass(Label.UNRESOLVED, 1.65, 1.6, 0.1, 0.25).to_dict()["label"] == "Unresolved"

    def test_dyadic(self):
        assert dyadic_radii(0.125, 1.0) == [0.125, 0.25, 0.5, 1.0]
