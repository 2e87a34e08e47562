import numpy as np
import pytest

from liftbv.errors import SelectionFailure
from liftbv.polygeom import PiecewiseAffineMap, kuhn_triangulate
from liftbv.synth import make_pa_map
from liftbv.transversal import (Homotopy, averaged_bounds, coarea_bound_check,
                                coupling_integral, draw_shifts,
                                grad_l1_of_projection, in_forbidden_set,
                                select_shift, singular_sets)

U_STAR = np.array([1.0, 0.0])
BOX2 = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
BOX3 = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


def vortex_t_oracle(u, u_star, y, s_cap=1e6):
    """Closed-form T_y length for the circle vortex: per-triangle solve of
    u(x) on the ray from u_star through y (the singular point is the
    origin)."""
    tri = u.tri
    J = u.gradients()
    V0 = u.values[tri.simplices[:, 0]]
    X0 = tri.vertices[tri.simplices[:, 0]]
    total = 0.0
    for si in range(tri.n_simplices):
        A = J[si]
        b = V0[si] - A @ X0[si]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        Ainv = np.linalg.inv(A)
        p0 = Ainv @ (u_star + (y - u_star) - b)
        vel = Ainv @ (y - u_star)
        V = tri.simplex_coords(si)
        M = np.vstack([np.ones(3), V.T])
        Minv = np.linalg.inv(M)
        lam0 = Minv @ np.concatenate([[1.0], p0])
        lamv = Minv[:, 1:] @ vel
        t0, t1 = 0.0, s_cap
        ok = True
        for i in range(3):
            a_, v_ = lam0[i], lamv[i]
            if abs(v_) < 1e-15:
                if a_ < -1e-12:
                    ok = False
                    break
                continue
            if v_ > 0:
                t0 = max(t0, -a_ / v_)
            else:
                t1 = min(t1, -a_ / v_)
        if ok and t1 > t0:
            total += (t1 - t0) * np.linalg.norm(vel)
    return total


class TestSingularSets:
    def test_vortex_matches_oracle(self, circle_analytic):
        u = make_pa_map("vortex", 32)
        y = np.array([0.03, 0.017])
        ss = singular_sets(u, U_STAR, circle_analytic, y)
        assert ss.certificate
        oracle = vortex_t_oracle(u, U_STAR, y)
        assert ss.measure_t == pytest.approx(oracle, rel=1e-9)
        assert all(m.dim <= 1 for m in ss.t_members)
        assert all(m.dim <= 0 for m in ss.s_members)
        assert len(ss.s_members) >= 1

    def test_constant_field_empty(self, circle_analytic):
        u = make_pa_map("constant", 8)
        ss = singular_sets(u, U_STAR, circle_analytic, np.array([0.02, 0.01]))
        assert ss.certificate
        assert len(ss.t_members) == 0
        assert ss.measure_t == 0.0

    def test_vertex_hit_rejected(self, circle_analytic):
        # rig a field with one vertex value equal to the shift, so that
        # u(vertex) - y lands exactly on the singular point
        tri = kuhn_triangulate(BOX2, [4, 4])
        y = np.array([0.05, 0.02])
        vals = np.tile([0.8, 0.3], (tri.n_vertices, 1))
        vals[7] = y
        u = PiecewiseAffineMap(tri, vals)
        ss = singular_sets(u, U_STAR, circle_analytic, y)
        assert not ss.certificate

    def test_shadow_consistency(self, circle_analytic):
        # random points of each T_y member admit a homotopy parameter
        # mapping them onto the shifted singular set
        u = make_pa_map("vortex", 24)
        y = np.array([-0.02, 0.04])
        ss = singular_sets(u, U_STAR, circle_analytic, y)
        rng = np.random.default_rng(0)
        checked = 0
        for m in ss.t_members:
            if m.dim != 1:
                continue
            lam = rng.dirichlet(np.ones(m.verts.shape[0]), size=50)
            pts = lam @ m.verts
            vals = u.eval(pts)
            # distance from u(x) to the ray {u_* + s (y - u_*) : s >= 1}
            dirv = y - U_STAR
            s = ((vals - U_STAR) @ dirv) / (dirv @ dirv)
            s = np.maximum(s, 1.0)
            proj = U_STAR + s[:, None] * dirv
            assert float(np.max(np.linalg.norm(vals - proj, axis=1))) <= 1e-6
            checked += 1
        assert checked > 0

    def test_dimension_genericity_over_seeds(self, circle_analytic):
        u = make_pa_map("vortex", 12)
        ys = draw_shifts(circle_analytic.sigma, 100, 2024, 2)
        for y in ys:
            ss = singular_sets(u, U_STAR, circle_analytic, y,
                               build_hreps=False)
            if not ss.certificate:
                continue
            assert all(m.dim <= 1 for m in ss.t_members)
            assert all(m.dim <= 0 for m in ss.s_members)

    def test_members_lie_in_fm_polytopes(self, circle_analytic):
        u = make_pa_map("vortex", 16)
        y = np.array([0.02, -0.03])
        ss = singular_sets(u, U_STAR, circle_analytic, y, build_hreps=True)
        for m in ss.t_members:
            assert m.poly is not None
            assert np.atleast_1d(m.poly.contains(m.verts, tol=1e-7)).all()

    def test_torus_exact_path(self, torus_analytic):
        u = make_pa_map("torus_smooth", 8)
        t = torus_analytic.target
        ss = singular_sets(u, t.base_point(), torus_analytic,
                           np.array([0.01, -0.02, 0.015, 0.005]))
        assert ss.certificate
        for m in ss.t_members:
            assert m.dim <= 1


class TestForbiddenSet:
    def test_top_level_clear(self, circle_analytic):
        u = make_pa_map("vortex", 16)
        h = Homotopy(u, U_STAR)
        y = np.array([0.03, 0.01])
        assert not in_forbidden_set(h, circle_analytic, y, 1.0,
                                    np.array([0.3, 0.3]))

    def test_t_y_points_forbidden_at_zero(self, circle_analytic):
        u = make_pa_map("vortex", 16)
        h = Homotopy(u, U_STAR)
        y = np.array([0.03, 0.01])
        ss = singular_sets(u, U_STAR, circle_analytic, y)
        m = next(m for m in ss.t_members if m.dim == 1)
        x = m.verts.mean(axis=0)
        assert in_forbidden_set(h, circle_analytic, y, 0.0, x)

    def test_far_points_clear(self, circle_analytic):
        u = make_pa_map("vortex", 16)
        h = Homotopy(u, U_STAR)
        y = np.array([0.03, 0.01])
        assert not in_forbidden_set(h, circle_analytic, y, 0.0,
                                    np.array([0.9, 0.9]))


class TestSelectShift:
    def test_constant_first_draw(self, circle_analytic):
        u = make_pa_map("constant", 8)
        y, ss, diag = select_shift(u, U_STAR, circle_analytic, trials=4,
                                   seed=1)
        assert diag["accepted_index"] == 0
        assert ss.measure_t == 0.0

    def test_vortex_median_rule(self, circle_analytic):
        u = make_pa_map("vortex", 64)
        y, ss, diag = select_shift(u, U_STAR, circle_analytic, trials=64,
                                   seed=9)
        row = diag["scores"][diag["accepted_index"]]
        assert row["certificate"]
        assert row["score"] <= 2.0 * diag["median"] + 1e-9
        # independent oracle for the accepted draw's T_y measure
        oracle = vortex_t_oracle(u, U_STAR, y)
        assert row["t_measure"] == pytest.approx(oracle, rel=1e-9)

    def test_selection_failure_on_rigged_draw(self, circle_analytic):
        # single trial whose draw lands exactly on a vertex value, so the
        # certificate cannot hold
        y0 = draw_shifts(circle_analytic.sigma, 1, 31, 2)[0]
        tri = kuhn_triangulate(BOX2, [2, 2])
        vals = np.tile([0.7, 0.1], (tri.n_vertices, 1))
        vals[4] = y0
        u = PiecewiseAffineMap(tri, vals)
        with pytest.raises(SelectionFailure):
            select_shift(u, U_STAR, circle_analytic, trials=1, seed=31)


class TestCoarea:
    # frozen oracle values for the identity instance, Frobenius convention:
    # lhs = 4c/3, rhs = 16 sqrt(2) c / 3 with c = (sqrt2 + asinh 1)/2
    LHS_EXACT = 1.5303914329284254
    RHS_EXACT = 8.657201280747897

    def test_constant_map(self):
        r = coarea_bound_check(np.zeros((2, 2)), np.array([0.3, 0.1]),
                               np.array([0.3, 0.1]), BOX2, resolution=32)
        assert r["lhs"] == pytest.approx(0.0, abs=1e-12)
        assert r["holds"]

    def test_identity_instance(self):
        r = coarea_bound_check(np.eye(2), np.zeros(2), np.zeros(2), BOX2,
                               resolution=192)
        assert r["holds"]
        assert r["lhs"] == pytest.approx(self.LHS_EXACT, rel=5e-3)
        assert r["rhs"] == pytest.approx(self.RHS_EXACT, rel=5e-3)

    def test_random_maps_hold(self):
        rng = np.random.default_rng(17)
        for i in range(10):
            d = 2 if i % 2 == 0 else 3
            A = rng.normal(size=(2, d))
            b = rng.normal(size=2) * 0.5
            vs = rng.normal(size=2) * 0.5
            r = coarea_bound_check(A, b, vs, BOX2 if d == 2 else BOX3,
                                   resolution=48 if d == 2 else 28)
            assert r["holds"]


class TestAveragedBounds:
    def test_means_bounded_by_references(self, circle_analytic):
        u = make_pa_map("vortex", 16)
        ab = averaged_bounds(u, U_STAR, circle_analytic, n_shifts=40, seed=3)
        assert ab["n_effective"] >= 38
        # the projected-gradient mean is a bounded multiple of |grad u|
        assert ab["mean_grad"] <= 3.0 * ab["grad_u_l1"]
        # the slice-measure mean is bounded by the coupling integral
        assert ab["mean_t_measure"] <= 3.0 * ab["coupling"]

    def test_grad_score_positive(self, circle_analytic):
        u = make_pa_map("smooth", 12)
        g = grad_l1_of_projection(u, circle_analytic, np.array([0.01, 0.02]))
        assert np.isfinite(g) and g > 0

    def test_coupling_integral_constant_field(self, circle_analytic):
        u = make_pa_map("constant", 8)
        assert coupling_integral(u, U_STAR) == pytest.approx(0.0, abs=1e-12)
