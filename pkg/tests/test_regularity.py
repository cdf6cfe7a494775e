import math

import numpy as np
import pytest

from kolmo.errors import EpsilonSearchFailed, NotBoundaryPoint, VertexTimeNotZero
from kolmo.geometry import (
    Ball,
    Complement,
    HalfSpace,
    Intersection,
    KolmogorovCylinder,
    LCone,
    PointSet,
    SpatialBall,
)
from kolmo.kernel import DilationGroup, KernelEngine
from kolmo.regularity import (
    ball_limit_test,
    classify,
    cone_test,
    polar_witness,
    wiener_diagnostic,
)
from kolmo.walk import WalkConfig

from conftest import heat_spec, kolmo_spec, tdeg_spec


@pytest.fixture(scope="module")
def heat_engine():
    return KernelEngine(heat_spec(1))


@pytest.fixture(scope="module")
def heat_cylinder(heat_engine):
    return KolmogorovCylinder(heat_engine, ((0.0,), 0.0), 0.25, 1.0)


CFG = WalkConfig(dt=1e-3, n_samples=1200, seed=11)


class TestWienerDiagnostic:
    def test_bottom_center_regular(self, heat_engine, heat_cylinder):
        rep = wiener_diagnostic(heat_engine, heat_cylinder, ((0.0,), 0.0),
                                config=CFG, n_range=range(2, 15))
        assert rep.verdict == "Regular"
        assert rep.wiener_sum > 2.0
        cums = [c for _, _, c, _ in rep.wiener_partial_sums]
        assert all(b >= a for a, b in zip(cums, cums[1:]))

    def test_top_center_inconclusive_with_zero_sums(self, heat_engine, heat_cylinder):
        rep = wiener_diagnostic(heat_engine, heat_cylinder, ((0.0,), 1.0),
                                config=CFG, n_range=range(2, 15))
        assert rep.verdict == "Inconclusive"
        assert rep.wiener_sum == 0.0

    def test_interior_point_rejected(self, heat_engine, heat_cylinder):
        with pytest.raises(NotBoundaryPoint):
            wiener_diagnostic(heat_engine, heat_cylinder, ((0.0,), 0.5), config=CFG)

    def test_far_point_rejected(self, heat_engine, heat_cylinder):
        with pytest.raises(NotBoundaryPoint):
            wiener_diagnostic(heat_engine, heat_cylinder, ((5.0,), 0.5), config=CFG)

    def test_sum_monotone_under_larger_complement(self, heat_engine):
        # same seeds, bigger complement => every shell estimate is >= pointwise
        big = KolmogorovCylinder(heat_engine, ((0.0,), 0.0), 0.25, 1.0)
        from kolmo.geometry import Box

        small = Intersection((big, Box((-0.1, -10.0), (0.1, 10.0))))
        r_big = wiener_diagnostic(heat_engine, big, ((0.0,), 0.0), config=CFG,
                                  n_range=range(2, 12))
        r_small = wiener_diagnostic(heat_engine, small, ((0.0,), 0.0), config=CFG,
                                    n_range=range(2, 12))
        for (_, eb, _, _), (_, es, _, _) in zip(
            r_big.wiener_partial_sums, r_small.wiener_partial_sums
        ):
            assert es >= eb


class TestBallLimit:
    def test_halfspace_complement_is_certain(self, heat_engine):
        # U = {t > 0}: the whole past is complement, every walk is in it at once
        U = HalfSpace(0.0, "future")
        out = ball_limit_test(heat_engine, U, ((0.0,), 0.0), [0.4, 0.2, 0.1],
                              WalkConfig(dt=1e-4, n_samples=600, seed=3))
        for _, est in out:
            assert est.value == 1.0

    def test_nested_radii_monotone_under_common_seed(self, heat_engine, heat_cylinder):
        out = ball_limit_test(heat_engine, heat_cylinder, ((0.5,), 0.5),
                              [0.4, 0.2, 0.1, 0.05], CFG)
        vals = [est.value for _, est in out]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_polar_point_insensitive(self, heat_engine):
        U = Ball((0.0, 0.0), 0.8)
        p = ((0.31,), 0.42)
        U_minus = Intersection((U, Complement(PointSet(p))))
        z0 = ((0.8,), 0.0)
        a = ball_limit_test(heat_engine, U, z0, [0.4, 0.2], CFG)
        b = ball_limit_test(heat_engine, U_minus, z0, [0.4, 0.2], CFG)
        for (_, ea), (_, eb) in zip(a, b):
            assert ea.value == eb.value

    def test_radii_validation(self, heat_engine, heat_cylinder):
        with pytest.raises(ValueError):
            ball_limit_test(heat_engine, heat_cylinder, ((0.0,), 0.0), [0.1, 0.2], CFG)


class TestConeTest:
    def test_upper_half_ball_admits_cone(self, heat_engine):
        U = Intersection((Ball((0.0, 0.0), 1.0), HalfSpace(0.0, "future")))
        cone = cone_test(heat_engine, U, ((0.0,), 0.0))
        assert cone is not None
        assert cone.lambda_admissible > 0

    def test_punctured_ball_admits_no_cone(self, heat_engine):
        U = Intersection((Ball((0.0, 0.0), 1.0), Complement(PointSet(((0.0,), 0.0)))))
        assert cone_test(heat_engine, U, ((0.0,), 0.0)) is None

    def test_vertex_time_enforced(self, heat_engine, heat_cylinder):
        with pytest.raises(VertexTimeNotZero):
            cone_test(heat_engine, heat_cylinder, ((0.0,), 1.0))

    def test_degenerate_case_matches_cubic_cone(self):
        # theta=1, B=0: the found cone is the set {(x0 + r^3 x, -r^2 T)}
        eng = KernelEngine(tdeg_spec(1))
        U = HalfSpace(0.0, "future")
        cone = cone_test(eng, U, ((0.3,), 0.0))
        assert cone is not None
        X, ts = cone.sample_points(6, 12)
        r = np.sqrt(-ts / cone.T)
        U_back = (X - 0.3) / r[:, None] ** 3
        assert np.all(cone.base.contains_many(U_back))

    def test_dilation_covariance(self, heat_engine):
        # if a cone is found for U, the scaled grid finds the scaled cone for
        # the scaled domain
        group = DilationGroup(heat_engine.spec)
        U = Intersection((Ball((0.0, 0.0), 1.0), HalfSpace(0.0, "future")))
        grid = [(0.2, 0.0, 0.3)]
        cone = cone_test(heat_engine, U, ((0.0,), 0.0), search_grid=grid)
        assert cone is not None
        for r in (0.5, 2.0):
            U_scaled = Intersection(
                (Ball((0.0, 0.0), r), HalfSpace(0.0, "future"))
            )
            # delta(r) scales the ball domain radius by ~r (heat exponents)
            grid_scaled = [(r * r * 0.2, 0.0, 0.3 * r)]
            cone_s = cone_test(heat_engine, U_scaled, ((0.0,), 0.0),
                               search_grid=grid_scaled)
            assert cone_s is not None
            assert cone_s.T == pytest.approx(r * r * cone.T)


class TestPolarWitness:
    def test_heat_epsilons_closed_form(self, heat_engine):
        # Gamma(z0; zeta_eps) = (4 pi eps)^(-1/2), so eps_n = (4 pi 16^n)^(-1)
        w = polar_witness(heat_engine, ((0.0,), 0.0), 10)
        for n, eps in enumerate(w.epsilons, start=1):
            assert eps == pytest.approx(1.0 / (4 * math.pi * 16.0**n), rel=1e-9)

    def test_levels_met_exactly(self, heat_engine):
        w = polar_witness(heat_engine, ((0.3,), 0.7), 12)
        for n, lg in enumerate(w.log_gamma_at_z0, start=1):
            assert lg >= n * math.log(4.0)
        # direct kernel evaluation agrees for the heat operator
        for n, pole in enumerate(w.poles(), start=1):
            assert heat_engine.log_gamma(((0.3,), 0.7), pole) >= n * math.log(4.0) - 1e-9

    def test_epsilons_decrease(self):
        eng = KernelEngine(kolmo_spec())
        w = polar_witness(eng, ((0.2, -0.4), 0.5), 8)
        assert all(a > b for a, b in zip(w.epsilons, w.epsilons[1:]))

    def test_series_finite_away_from_pole(self, heat_engine, rng):
        w = polar_witness(heat_engine, ((0.0,), 0.0), 10)
        for _ in range(20):
            x = float(rng.uniform(-2, 2))
            t = float(rng.uniform(-2, 2))
            if abs(x) < 1e-3 and abs(t) < 1e-3:
                x += 0.5
            val = w.evaluate(((x,), t))
            assert math.isfinite(val)

    def test_series_vanishes_below_all_poles(self, heat_engine):
        w = polar_witness(heat_engine, ((0.0,), 0.0), 6)
        t_below = -w.epsilons[0] - 0.1
        assert w.evaluate(((0.0,), t_below)) == 0.0

    def test_truncated_series_lower_bound_at_pole(self, heat_engine):
        w = polar_witness(heat_engine, ((0.0,), 0.0), 10)
        assert w.lower_bound_at_z0() == 2046.0
        assert w.evaluate(((0.0,), 0.0)) >= 2046.0


class TestClassify:
    def test_cylinder_bottom_regular(self, heat_engine, heat_cylinder):
        rep = classify(heat_engine, heat_cylinder, ((0.0,), 0.0), CFG)
        assert rep.verdict == "Regular"

    def test_cylinder_top_irregular(self, heat_engine, heat_cylinder):
        rep = classify(heat_engine, heat_cylinder, ((0.0,), 1.0), CFG)
        assert rep.verdict == "Irregular"
        assert rep.attainment[-1][1] < 0.15

    def test_cone_below_regular_via_cone(self, heat_engine):
        group = DilationGroup(heat_engine.spec)
        cone_set = LCone(group, (0.0,), 0.5, SpatialBall((0.0,), 0.6))
        U = Intersection((Complement(cone_set), Ball((0.0, 0.0), 1.5)))
        rep = classify(heat_engine, U, ((0.0,), 0.0), CFG)
        assert rep.verdict == "Regular"
        assert rep.cone_found is not None

    def test_punctured_ball_irregular(self, heat_engine):
        U = Intersection((Ball((0.0, 0.0), 0.8), Complement(PointSet(((0.0,), 0.0)))))
        rep = classify(heat_engine, U, ((0.0,), 0.0), CFG)
        assert rep.verdict == "Irregular"
        assert rep.cone_found is None
        assert all(est.value <= 0.01 for _, est in rep.ball_limit_series)

    def test_deterministic_given_seed(self, heat_engine, heat_cylinder):
        a = classify(heat_engine, heat_cylinder, ((0.5,), 0.5), CFG)
        b = classify(heat_engine, heat_cylinder, ((0.5,), 0.5), CFG)
        assert a.to_dict() == b.to_dict()

    def test_report_serializable(self, heat_engine, heat_cylinder):
        import json

        rep = classify(heat_engine, heat_cylinder, ((0.0,), 0.0), CFG)
        blob = json.dumps(rep.to_dict())
        assert "Regular" in blob
