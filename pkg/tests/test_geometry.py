import math

import numpy as np
import pytest

from kolmo.geometry import (
    Ball,
    Box,
    Complement,
    HalfSpace,
    Intersection,
    KolmogorovCylinder,
    LCone,
    PointSet,
    ShellFamily,
    SpatialBall,
    SpatialBox,
    Union,
    domain_from_dict,
    domain_to_dict,
)
from kolmo.kernel import DilationGroup, KernelEngine

from conftest import heat_spec, kolmo_spec, tdeg_spec


class TestCSGDomains:
    def test_ball_contains_origin(self):
        b = Ball((0.0, 0.0), 1.0)
        assert b.contains(((0.0,), 0.0))
        assert not Complement(b).contains(((0.0,), 0.0))

    def test_box_strict_inequalities(self):
        box = Box((0.0, 0.0), (1.0, 1.0))
        assert box.contains(((0.5,), 0.5))
        assert not box.contains(((0.0,), 0.5))
        assert not box.contains(((0.5,), 1.0))

    def test_halfspace_sides(self):
        past = HalfSpace(0.5, "past")
        assert past.contains(((3.0,), 0.0)) and not past.contains(((3.0,), 1.0))
        fut = HalfSpace(0.5, "future")
        assert fut.contains(((3.0,), 1.0)) and not fut.contains(((3.0,), 0.0))

    def test_point_set_is_singleton(self):
        p = PointSet(((1.0, 2.0), 3.0))
        assert p.contains(((1.0, 2.0), 3.0))
        assert not p.contains(((1.0, 2.0), 3.0000001))

    def test_de_morgan_pointwise(self, rng):
        a = Ball((0.0, 0.0, 0.0), 1.0)
        b = Box((-0.5, -0.5, -0.5), (0.7, 0.9, 0.4))
        lhs = Complement(Union((a, b)))
        rhs = Intersection((Complement(a), Complement(b)))
        X = rng.uniform(-1.5, 1.5, size=(2000, 2))
        t = rng.uniform(-1.5, 1.5, size=2000)
        assert np.array_equal(lhs.contains_many(X, t), rhs.contains_many(X, t))

    def test_operators_sugar(self):
        a = Ball((0.0, 0.0), 1.0)
        b = HalfSpace(0.0, "future")
        assert (a & b).contains(((0.1,), 0.1))
        assert (a | b).contains(((5.0,), 9.0))
        assert (~a).contains(((9.0,), 0.0))

    def test_json_round_trip(self, rng):
        eng = KernelEngine(kolmo_spec())
        dom = Union(
            (
                Intersection(
                    (
                        Ball((0.0, 0.0, 0.0), 2.0),
                        Complement(Box((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))),
                    )
                ),
                KolmogorovCylinder(eng, ((0.0, 0.0), 0.0), 0.5, 1.0),
                HalfSpace(-2.0, "past"),
            )
        )
        clone = domain_from_dict(domain_to_dict(dom), eng)
        X = rng.uniform(-2, 2, size=(3000, 2))
        t = rng.uniform(-3, 2, size=3000)
        assert np.array_equal(dom.contains_many(X, t), clone.contains_many(X, t))


class TestKolmogorovCylinder:
    def test_heat_case_degenerates_to_euclidean(self, rng):
        # theta=0, B=0: membership is |x - x0| < sqrt(r) and t0 < t < T
        eng = KernelEngine(heat_spec(2))
        x0 = np.array([0.3, -0.2])
        r, t0, T = 0.49, 0.1, 1.2
        cyl = KolmogorovCylinder(eng, (x0, t0), r, T)
        X = rng.uniform(-1.5, 1.5, size=(10_000, 2))
        t = rng.uniform(-0.5, 1.7, size=10_000)
        want = (np.linalg.norm(X - x0, axis=1) < math.sqrt(r)) & (t > t0) & (t < T)
        assert np.array_equal(cyl.contains_many(X, t), want)

    def test_midpoint_inside(self):
        eng = KernelEngine(heat_spec(1))
        cyl = KolmogorovCylinder(eng, ((0.5,), 0.0), 0.25, 1.0)
        assert cyl.contains(((0.5,), 0.5))

    def test_boundary_parts(self):
        eng = KernelEngine(heat_spec(1))
        x0, t0, r, T = 0.0, 0.0, 0.25, 1.0
        cyl = KolmogorovCylinder(eng, ((x0,), t0), r, T)
        assert cyl.parabolic_boundary_part(((x0,), t0)) == "bottom"
        assert cyl.parabolic_boundary_part(((x0,), T)) == "top"
        mid = 0.5 * (t0 + T)
        assert cyl.parabolic_boundary_part(((x0 + math.sqrt(r),), mid)) == "lateral"
        assert cyl.parabolic_boundary_part(((x0,), mid)) == "not_on_boundary"
        # the rim at the top belongs to the parabolic boundary
        assert cyl.parabolic_boundary_part(((x0 + math.sqrt(r),), T)) == "lateral"

    def test_bounding_box_contains_samples(self, rng):
        eng = KernelEngine(kolmo_spec())
        cyl = KolmogorovCylinder(eng, ((0.2, -0.1), -0.3), 0.8, 0.9)
        lo, hi = cyl.bounding_box()
        X = rng.uniform(-3, 3, size=(20_000, 2))
        t = rng.uniform(-1, 1.5, size=20_000)
        inside = cyl.contains_many(X, t)
        pts = np.column_stack([X[inside], t[inside]])
        assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)


class TestLCone:
    def test_vertex_membership(self):
        group = DilationGroup(tdeg_spec(1))
        cone = LCone(group, (0.5,), 1.0, SpatialBox((1.0,), (2.0,)))
        assert cone.contains(((0.5,), 0.0))
        assert not cone.contains(((0.6,), 0.0))

    def test_cubic_scaling_example(self):
        # theta=1, B=0, N=1, K=[1,2], T=1: (x0 + 1.5 * 0.5^3, -0.25) is inside
        group = DilationGroup(tdeg_spec(1))
        x0 = 0.7
        cone = LCone(group, (x0,), 1.0, SpatialBox((1.0,), (2.0,)))
        assert cone.contains(((x0 + 1.5 * 0.125,), -0.25))
        assert not cone.contains(((x0 + 2.5 * 0.125,), -0.25))

    def test_future_points_excluded(self):
        group = DilationGroup(heat_spec(2))
        cone = LCone(group, (0.0, 0.0), 2.0, SpatialBall((0.0, 0.0), 1.0))
        assert not cone.contains(((0.0, 0.0), 0.1))
        assert not cone.contains(((0.0, 0.0), -2.5))

    def test_generated_points_are_members(self, rng):
        for spec in (heat_spec(2), tdeg_spec(1), kolmo_spec()):
            group = DilationGroup(spec)
            base = SpatialBall(tuple(0.5 * np.ones(spec.N)), 0.4)
            cone = LCone(group, rng.normal(size=spec.N), 1.3, base)
            X, t = cone.sample_points(10, 64)
            assert np.all(cone.contains_many(X, t))
            assert np.all((t >= -1.3) & (t <= 0.0))


class TestShellFamily:
    def test_threshold_arithmetic(self):
        eng = KernelEngine(heat_spec(1))
        shells = ShellFamily(eng, ((0.0,), 0.0), 0.5)
        # band n=2 in log Gamma is [2 ln 2 * ln 2, 3 ln 3 * ln 2]
        assert shells.log_threshold(2) == pytest.approx(2 * math.log(2) * math.log(2))
        assert shells.log_threshold(3) == pytest.approx(3 * math.log(3) * math.log(2))
        assert shells.log_threshold(1) == 0.0

    def test_pole_belongs_to_every_shell(self):
        eng = KernelEngine(kolmo_spec())
        shells = ShellFamily(eng, ((0.3, -0.1), 0.2), 0.5)
        for n in (1, 2, 5, 17):
            assert shells.shell_membership(n, ((0.3, -0.1), 0.2))

    def test_wrong_time_side_excluded(self):
        eng = KernelEngine(heat_spec(1))
        shells = ShellFamily(eng, ((0.0,), 0.0), 0.5, orientation="pole_at_field")
        # Gamma(z0; z) = 0 for z in the future of z0
        assert not shells.shell_membership(2, ((0.0,), 0.5))
        shells_c = ShellFamily(eng, ((0.0,), 0.0), 0.5, orientation="pole_at_center")
        assert not shells_c.shell_membership(2, ((0.0,), -0.5))

    def test_band_membership_heat_closed_form(self):
        # 1D heat: Gamma(z0; (x, -s)) = (4 pi s)^(-1/2) exp(-x^2 / (4 s))
        eng = KernelEngine(heat_spec(1))
        shells = ShellFamily(eng, ((0.0,), 0.0), 0.5)
        n = 3
        lo, hi = shells.log_threshold(3), shells.log_threshold(4)
        s = 1e-4
        for x in np.linspace(0.0, 0.05, 40):
            lg = -0.5 * math.log(4 * math.pi * s) - x * x / (4 * s)
            want = lo <= lg <= hi
            assert shells.shell_membership(n, ((x,), -s)) == want

    def test_interior_points_in_at_most_one_shell(self, rng):
        eng = KernelEngine(kolmo_spec())
        shells = ShellFamily(eng, ((0.0, 0.0), 0.0), 0.5)
        X = rng.normal(scale=0.2, size=(400, 2))
        t = -(10.0 ** rng.uniform(-6, -0.5, size=400))
        counts = np.zeros(400)
        for n in range(2, 30):
            mem = np.array(
                [shells.shell_membership(n, ((x[0], x[1]), tv)) for x, tv in zip(X, t)]
            )
            counts += mem
        assert np.max(counts) <= 1

    def test_excludes_domain_points(self):
        eng = KernelEngine(heat_spec(1))
        U = HalfSpace(-1.0, "future")  # everything above t=-1
        shells = ShellFamily(eng, ((0.0,), 0.0), 0.5, complement_of=U)
        free = ShellFamily(eng, ((0.0,), 0.0), 0.5)
        z = ((0.0,), -1e-4)
        n = next(n for n in range(1, 30) if free.shell_membership(n, z))
        assert not shells.shell_membership(n, z)

    def test_max_depth_bounds_shell(self, rng):
        eng = KernelEngine(heat_spec(1))
        shells = ShellFamily(eng, ((0.0,), 0.0), 0.5)
        n = 4
        s_max = shells.max_depth(n)
        # kernel peak at depth s is (4 pi s)^(-1/2); shell requires >= threshold
        assert (4 * math.pi * s_max) ** -0.5 == pytest.approx(
            math.exp(shells.log_threshold(n)), rel=1e-9
        )
        for _ in range(100):
            x = rng.normal(scale=0.3)
            s = s_max * float(rng.uniform(1.0 + 1e-9, 3.0))
            assert not shells.shell_membership(n, ((x,), -s))
