import numpy as np
import pytest

from conftest import Q8_DEFECT_A, Q8_DEFECT_B, q8_loop
from liftbv.covers import get_target
from liftbv.errors import NearJumpError
from liftbv.liftcore import (BVRecord, LiftConfig, bv_measure, cylinder_lift,
                             jump_traces, lift_pa_field, loop_monodromy,
                             normalize, sbv_check)
from liftbv.synth import (make_pa_map, smooth_angle_gradnorm)
from liftbv.transversal import Homotopy


def angle_integral_oracle(a, b, n=20000):
    """Arc-integrated angle difference along a path avoiding the origin.

    Connects a to b counterclockwise along the circle through direction
    interpolation; returns the total signed angle increment.
    """
    ta = np.arctan2(a[1], a[0])
    tb = np.arctan2(b[1], b[0])
    d = tb - ta
    while d <= -np.pi:
        d += 2 * np.pi
    while d > np.pi:
        d -= 2 * np.pi
    return d


class TestCylinderLift:
    def test_constant_path(self, circle_analytic, constant16_lift):
        u, lf = constant16_lift
        t = get_target("circle")
        h = Homotopy(u, lf.u_star)
        x = np.array([0.25, -0.3])
        w = cylinder_lift(h, lf.ss, circle_analytic, t, x, lf.w_anchor)
        assert np.allclose(w, lf.w_anchor, atol=1e-9)

    def test_vortex_cut_gap_is_two_pi(self, vortex32_lift, circle_analytic):
        u, lf = vortex32_lift
        t = get_target("circle")
        h = Homotopy(u, lf.u_star)
        # two points just either side of a jump facet
        f = max(lf.facets, key=lambda f: f.measure)
        mid = 0.5 * (f.verts[0] + f.verts[-1])
        eps = 1e-3
        wp = cylinder_lift(h, lf.ss, circle_analytic, t,
                           mid + eps * f.normal, lf.w_anchor)
        wm = cylinder_lift(h, lf.ss, circle_analytic, t,
                           mid - eps * f.normal, lf.w_anchor)
        gap = float(np.abs(wp - wm).max())
        # oracle: the two sides are joined by an arc of total turning
        # ~ 2 pi minus the small arc between the offset points
        base = angle_integral_oracle(u.eval(mid + eps * f.normal),
                                     u.eval(mid - eps * f.normal))
        assert gap == pytest.approx(2 * np.pi - abs(base), abs=0.05)

    def test_on_jump_set_rejected(self, vortex32_lift, circle_analytic):
        u, lf = vortex32_lift
        t = get_target("circle")
        h = Homotopy(u, lf.u_star)
        f = max(lf.facets, key=lambda f: f.measure)
        mid = 0.5 * (f.verts[0] + f.verts[-1])
        with pytest.raises(NearJumpError):
            cylinder_lift(h, lf.ss, circle_analytic, t, mid, lf.w_anchor)

    def test_subdivision_independence(self, circle_analytic):
        u = make_pa_map("vortex", 24)
        lf1 = lift_pa_field(u, circle_analytic,
                            cfg=LiftConfig(trials=8, seed=2, normalize=False))
        lf2 = lift_pa_field(u, circle_analytic,
                            cfg=LiftConfig(trials=8, seed=2, normalize=False,
                                           step_cap=0.25))
        assert float(np.max(np.abs(lf1.vertex_lifts
                                   - lf2.vertex_lifts))) < 1e-8

    def test_two_anchors_differ_by_global_deck(self, circle_analytic):
        t = get_target("circle")
        u = make_pa_map("vortex", 24)
        base = lift_pa_field(u, circle_analytic,
                             cfg=LiftConfig(trials=8, seed=2,
                                            normalize=False))
        g = t.deck_from_payload(3)
        moved = lift_pa_field(u, circle_analytic,
                              cfg=LiftConfig(trials=8, seed=2,
                                             normalize=False,
                                             anchor_offset=g))
        diff = moved.vertex_lifts - base.vertex_lifts
        assert np.allclose(diff, 6 * np.pi, atol=1e-8)


class TestLiftPaField:
    def test_constant(self, constant16_lift):
        _, lf = constant16_lift
        assert len(lf.facets) == 0
        assert lf.bv.total == 0.0

    def test_smooth_empty_complex(self, smooth32_lift):
        u, lf = smooth32_lift
        assert len(lf.facets) == 0
        # |Dv| agrees with the closed-form angle-gradient integral
        n = 512
        xs = np.linspace(-1, 1, n, endpoint=False) + 1.0 / n
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        oracle = smooth_angle_gradnorm(
            np.stack([X1.ravel(), X2.ravel()], axis=1)).mean() * 4.0
        assert lf.bv.total == pytest.approx(oracle, rel=0.02)

    def test_vortex_single_generator_curve(self, vortex32_lift):
        _, lf = vortex32_lift
        assert len(lf.facets) > 0
        assert {f.label.name for f in lf.facets} == {"g"}
        cut_len = sum(f.measure for f in lf.facets)
        assert lf.bv.jump == pytest.approx(2 * np.pi * cut_len, rel=0.05)

    def test_lifting_identity(self, vortex32_lift, circle_analytic):
        from liftbv.liftcore import lifting_identity_residual
        _, lf = vortex32_lift
        assert lifting_identity_residual(lf) <= 1e-6

    def test_pi_of_vertex_lifts(self, vortex32_lift, circle_analytic):
        from liftbv.scaffold import eval_retraction_guarded
        u, lf = vortex32_lift
        t = get_target("circle")
        vals, ok, _ = eval_retraction_guarded(circle_analytic, lf.y, u.values)
        pv = np.atleast_2d(t.project_cover(lf.vertex_lifts))
        assert float(np.max(np.linalg.norm(pv[ok] - vals[ok], axis=1))) <= 1e-6


class TestJumpTraces:
    def test_vortex_facet(self, vortex32_lift):
        u, lf = vortex32_lift
        t = get_target("circle")
        f = max((f for f in lf.facets), key=lambda f: f.measure)
        res = jump_traces(lf, t, f)
        assert res["label"].name == "g"
        assert res["max_geo_jump"] == pytest.approx(2 * np.pi, abs=1e-3)

    def test_identical_side_limits_dropped(self, smooth32_lift,
                                           circle_analytic):
        # a spurious carrier in a smooth region has equal one-sided limits,
        # a trivial deck label, and is dropped from the complex
        from liftbv.liftcore import build_jump_complex
        u, lf = smooth32_lift
        fake = [(0, np.array([[0.1, 0.1], [0.2, 0.15]]), False)]
        facets = build_jump_complex(u, circle_analytic, get_target("circle"),
                                    lf.y, lf.u_star, lf.w_anchor, fake)
        assert facets == []

    def test_q8_labels_per_curve(self, q8_lift32):
        _, lf = q8_lift32
        by_side = {}
        for f in lf.facets:
            if f.core:
                continue
            mx = 0.5 * (f.verts[0][0] + f.verts[-1][0])
            by_side.setdefault("A" if mx < -0.05 else "B",
                               set()).add(f.label.name)
        assert by_side["A"] == {"i"}
        assert by_side["B"] == {"j"}


class TestBVMeasure:
    def test_constant_zero(self, constant16_lift):
        _, lf = constant16_lift
        rec = bv_measure(lf)
        assert rec.ac == rec.jump == rec.total == 0.0

    def test_identity_by_construction(self, vortex32_lift):
        _, lf = vortex32_lift
        rec = bv_measure(lf)
        assert rec.total == rec.ac + rec.jump
        assert rec.cantor == 0.0

    def test_circle_geodesic_equals_ambient(self, vortex32_lift):
        # for the circle the cover coordinates are arclength coordinates
        _, lf = vortex32_lift
        assert lf.bv.geodesic_jump == pytest.approx(lf.bv.jump, rel=1e-12)


class TestNormalize:
    def test_window_reduction(self, circle_analytic):
        t = get_target("circle")
        u = make_pa_map("smooth", 12)
        g = t.deck_from_payload(5)
        lf = lift_pa_field(u, circle_analytic,
                           cfg=LiftConfig(trials=4, seed=3, normalize=False,
                                          anchor_offset=g))
        assert np.median(lf.vertex_lifts) > np.pi  # shifted out of window
        lfn = normalize(lf, t)
        med = float(np.median(lfn.vertex_lifts))
        assert -np.pi <= med <= np.pi
        # measures unchanged
        assert bv_measure(lfn).total == pytest.approx(
            bv_measure(lf).total, abs=1e-12)

    def test_compact_cover_identity(self, q8_lift32):
        _, lf = q8_lift32
        t = get_target("so3_mod_v4")
        lfn = normalize(lf, t)
        assert np.array_equal(lfn.vertex_lifts, lf.vertex_lifts)

    def test_labels_conjugated_consistently(self, circle_analytic):
        # abelian target: labels untouched by normalization
        u = make_pa_map("vortex", 16)
        lf = lift_pa_field(u, circle_analytic,
                           cfg=LiftConfig(trials=8, seed=2, normalize=False))
        lfn = normalize(lf, get_target("circle"))
        assert [f.label for f in lfn.facets] == [f.label for f in lf.facets]


class TestLoopMonodromy:
    def test_contractible_loop(self, vortex32_lift):
        _, lf = vortex32_lift
        th = np.linspace(0, 2 * np.pi, 32)
        loop = np.stack([0.8 + 0.1 * np.cos(th), 0.8 + 0.1 * np.sin(th)],
                        axis=1)
        assert loop_monodromy(lf, loop).is_identity()

    def test_vortex_core_loop(self, vortex32_lift):
        _, lf = vortex32_lift
        th = np.linspace(0, 2 * np.pi, 64)
        loop = np.stack([0.55 * np.cos(th), 0.55 * np.sin(th)], axis=1)
        assert loop_monodromy(lf, loop).name == "g"
        assert loop_monodromy(lf, loop[::-1]).name == "g^-1"

    def test_matches_direct_path_lift(self, vortex32_lift, circle_analytic):
        from liftbv.liftcore import _lift_linear_paths, _rho_guard
        u, lf = vortex32_lift
        t = get_target("circle")
        th = np.linspace(0, 2 * np.pi, 256, endpoint=True)
        loop = 0.62 * np.stack([np.cos(th), np.sin(th)], axis=1)
        guard = _rho_guard(circle_analytic, lf.y)
        z = u.eval(loop)
        vals, ok, _ = guard(z[:1])
        w0 = np.asarray(t.fiber_lift(vals[0])).ravel()
        w = w0.copy()
        for i in range(1, loop.shape[0]):
            out, st = _lift_linear_paths(t, guard, z[i:i + 1], z[i - 1], w)
            assert st[0] == 0
            w = out[0]
        direct = t.nearest_deck(w0, w)
        assert loop_monodromy(lf, loop) == direct

    def test_q8_order_sensitivity(self, q8_lift32):
        _, lf = q8_lift32
        lab = {
            "A": loop_monodromy(lf, q8_loop([Q8_DEFECT_A])).name,
            "B": loop_monodromy(lf, q8_loop([Q8_DEFECT_B])).name,
            "AB": loop_monodromy(lf, q8_loop([Q8_DEFECT_A, Q8_DEFECT_B])).name,
            "BA": loop_monodromy(lf, q8_loop([Q8_DEFECT_B, Q8_DEFECT_A])).name,
        }
        assert lab == {"A": "i", "B": "j", "AB": "k", "BA": "-k"}


class TestSO3:
    def test_smooth_field_lifts_cleanly(self, so3_analytic):
        u = make_pa_map("so3_smooth", 12)
        lf = lift_pa_field(u, so3_analytic, cfg=LiftConfig(trials=8, seed=6))
        assert len(lf.facets) == 0
        assert lf.diagnostics["checks"]["lift_identity"] <= 1e-6
        assert sbv_check(lf)["passed"]
        # compact cover: normalization is the identity
        lfn = normalize(lf, get_target("so3"))
        assert np.array_equal(lfn.vertex_lifts, lf.vertex_lifts)


class TestD1:
    def test_winding_path_lifts(self, circle_analytic):
        from liftbv.polygeom import PiecewiseAffineMap, kuhn_triangulate
        tri = kuhn_triangulate((np.array([-1.0]), np.array([1.0])), [64])
        th = 2.5 * np.sin(np.pi * tri.vertices[:, 0]) + 1.2 * tri.vertices[:, 0]
        vals = np.stack([np.cos(th), np.sin(th)], axis=1)
        u = PiecewiseAffineMap(tri, vals)
        lf = lift_pa_field(u, circle_analytic,
                           cfg=LiftConfig(trials=8, seed=2))
        assert lf.diagnostics["checks"]["lift_identity"] <= 1e-6
        # ac part equals the 1-d angle variation oracle
        assert lf.bv.ac == pytest.approx(float(np.abs(np.diff(th)).sum()),
                                         rel=1e-3)
        # any point jumps are whole deck elements
        for f in lf.facets:
            k = round(f.max_geo_jump / (2 * np.pi))
            assert f.max_geo_jump == pytest.approx(2 * np.pi * k, abs=1e-6)


class TestSBV:
    def test_pass(self, vortex32_lift):
        _, lf = vortex32_lift
        rep = sbv_check(lf)
        assert rep["passed"]
        assert rep["cantor"] == 0.0

    def test_constant_trivially_passes(self, constant16_lift):
        _, lf = constant16_lift
        assert sbv_check(lf)["passed"]

    def test_corrupted_record_fails(self, vortex32_lift):
        import dataclasses
        _, lf = vortex32_lift

        @dataclasses.dataclass
        class Corrupt(BVRecord):
            @property
            def total(self):
                return self.ac + self.jump + 0.5

        bad = dataclasses.replace(lf)
        bad.bv = Corrupt(lf.bv.ac, lf.bv.jump, lf.bv.geodesic_jump)
        assert not sbv_check(bad)["identity_ok"]
