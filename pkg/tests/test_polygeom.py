import numpy as np
import pytest

from liftbv.errors import InvalidArgumentError
from liftbv.polygeom import (HPolytope, PiecewiseAffineMap, PolyChain,
                             fm_project, haus_measure, hull_measure,
                             kuhn_triangulate)


class TestKuhn:
    def test_unit_square_two_triangles(self):
        tri = kuhn_triangulate((np.zeros(2), np.ones(2)), [1, 1])
        assert tri.n_simplices == 2

    def test_unit_cube_six_tets(self):
        tri = kuhn_triangulate((np.zeros(3), np.ones(3)), [1, 1, 1])
        assert tri.n_simplices == 6

    def test_zero_resolution_rejected(self):
        with pytest.raises(InvalidArgumentError):
            kuhn_triangulate((np.zeros(2), np.ones(2)), [0, 1])

    def test_dimension_limit(self):
        with pytest.raises(InvalidArgumentError):
            kuhn_triangulate((np.zeros(4), np.ones(4)), [1, 1, 1, 1])

    @pytest.mark.parametrize("res", [(1, 1), (3, 5), (16, 16), (64, 64)])
    def test_tiling_and_facets_2d(self, res):
        tri = kuhn_triangulate((np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
                               res)
        rep = tri.validate()
        assert rep["volume_ok"]
        assert rep["facets_ok"]

    @pytest.mark.parametrize("res", [(1, 1, 1), (2, 3, 4), (6, 6, 6)])
    def test_tiling_and_facets_3d(self, res):
        tri = kuhn_triangulate((np.zeros(3), np.ones(3)), res)
        rep = tri.validate()
        assert rep["volume_ok"]
        assert rep["facets_ok"]

    def test_boundary_facets_counted_once(self):
        tri = kuhn_triangulate((np.zeros(2), np.ones(2)), [2, 2])
        counts = tri.facet_counts()
        boundary = [c for c in counts.values() if c == 1]
        # 2 boundary edges per side per cell row: 8 cells on the boundary
        assert len(boundary) == 8


class TestFMProject:
    def test_box_shadow(self):
        box = HPolytope.from_box([-1, -1], [1, 1])
        p = fm_project(box, 1)
        v = np.sort(p.vertices().ravel())
        assert np.allclose(v, [-1.0, 1.0])

    def test_simplex_shadow(self):
        simp = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        p = fm_project(simp, 1)
        v = np.sort(p.vertices().ravel())
        assert np.allclose(v, [0.0, 1.0], atol=1e-12)

    def test_empty_preserved(self):
        empty = HPolytope([[1, 0], [-1, 0]], [-1, -1])  # x <= -1 and x >= 1
        assert empty.is_empty()
        p = fm_project(empty, 1)
        assert p.is_empty()

    def test_emptiness_cached_consistently(self):
        p = HPolytope([[1, 0], [-1, 0]], [1, 1])
        assert p.is_empty() == p.is_empty() == False  # noqa: E712

    def test_axis_validation(self):
        box = HPolytope.from_box([0], [1])
        with pytest.raises(InvalidArgumentError):
            fm_project(box, 0)  # ambient dimension 1

    def test_sampling_commutes(self):
        # random bounded polytope: box cut by random halfspaces
        rng = np.random.default_rng(5)
        for trial in range(5):
            n = rng.integers(2, 4)
            A = [np.eye(n), -np.eye(n)]
            b = [np.ones(n), np.ones(n)]
            for _ in range(4):
                a = rng.normal(size=n)
                a /= np.linalg.norm(a)
                A.append(a.reshape(1, -1))
                b.append(np.array([rng.uniform(0.1, 0.9)]))
            P = HPolytope(np.vstack(A), np.concatenate(b))
            axis = int(rng.integers(0, n))
            Q = fm_project(P, axis)
            # sample points of P by rejection
            pts = rng.uniform(-1, 1, size=(10000, n))
            inside = P.contains(pts)
            shadow = np.delete(pts[inside], axis, axis=1)
            if shadow.shape[0]:
                assert Q.contains(shadow).all()
            # every vertex of the projection is the shadow of some point of P
            for v in Q.vertices():
                lifted = HPolytope(
                    np.insert(P.A, 0, 0.0, axis=1)[:, :0], np.zeros(0))
                # solve: find x in P with deleted-coordinate image = v
                rows = np.delete(np.eye(n), axis, axis=0)
                sect = HPolytope(P.A, P.b, Aeq=rows, beq=v)
                assert not sect.is_empty(tol=1e-9)


class TestHausMeasure:
    def test_segment_length(self):
        seg = HPolytope([[1, 0], [-1, 0]], [3, 0], Aeq=[[4, -3]], beq=[0])
        assert haus_measure(seg, 1) == pytest.approx(5.0, abs=1e-12)

    def test_triangle_area(self):
        tri = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        assert haus_measure(tri, 2) == pytest.approx(0.5, abs=1e-12)

    def test_point_counting(self):
        assert haus_measure(HPolytope.from_point([2.0, 3.0]), 0) == 1.0

    def test_dimension_mismatch(self):
        tri = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        with pytest.raises(InvalidArgumentError):
            haus_measure(tri, 1)

    def test_box_volume_3d(self):
        box = HPolytope.from_box([0, 0, 0], [2, 3, 4])
        assert haus_measure(box, 3) == pytest.approx(24.0, rel=1e-9)

    def test_additive_over_decomposition(self):
        # split [0,2]x[0,1] into two unit squares
        whole = HPolytope.from_box([0, 0], [2, 1])
        left = HPolytope.from_box([0, 0], [1, 1])
        right = HPolytope.from_box([1, 0], [2, 1])
        assert haus_measure(whole, 2) == pytest.approx(
            haus_measure(left, 2) + haus_measure(right, 2), rel=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(7)
        tri = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        area = haus_measure(tri, 2)
        for _ in range(10):
            th = rng.uniform(0, 2 * np.pi)
            R = np.array([[np.cos(th), -np.sin(th)],
                          [np.sin(th), np.cos(th)]])
            rot = HPolytope(tri.A @ R.T, tri.b)
            assert haus_measure(rot, 2) == pytest.approx(area, rel=1e-9)

    def test_rotation_invariance_segment_3d(self):
        rng = np.random.default_rng(9)
        verts = np.array([[0.0, 0, 0], [3.0, 4.0, 0]])
        base = hull_measure(verts, 1)
        for _ in range(10):
            Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            assert hull_measure(verts @ Q.T, 1) == pytest.approx(base,
                                                                 rel=1e-9)


class TestPolyChain:
    def test_mixed_dimension_rejected(self):
        seg = HPolytope([[1, 0], [-1, 0]], [1, 0], Aeq=[[0, 1]], beq=[0])
        pt = HPolytope.from_point([0.5, 0.5])
        with pytest.raises(InvalidArgumentError):
            PolyChain([seg, pt])

    def test_total_measure(self):
        a = HPolytope([[1, 0], [-1, 0]], [1, 0], Aeq=[[0, 1]], beq=[0])
        b = HPolytope([[1, 0], [-1, 0]], [3, -1], Aeq=[[0, 1]], beq=[0])
        chain = PolyChain([a, b])
        assert chain.total_measure() == pytest.approx(3.0, rel=1e-12)


class TestPAMap:
    def test_affine_reproduction(self):
        tri = kuhn_triangulate((np.array([-1., -1.]), np.array([1., 1.])),
                               [4, 4])
        A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
        b = np.array([0.1, -0.2, 0.3])
        vals = tri.vertices @ A.T + b
        u = PiecewiseAffineMap(tri, vals)
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, size=(200, 2))
        assert np.allclose(u.eval(x), x @ A.T + b, atol=1e-12)
        J = u.gradients()
        assert np.allclose(J, np.tile(A, (tri.n_simplices, 1, 1)), atol=1e-12)
        assert u.grad_l1() == pytest.approx(4 * np.linalg.norm(A), rel=1e-12)

    def test_vertex_values_reproduced(self):
        tri = kuhn_triangulate((np.zeros(2), np.ones(2)), [3, 3])
        rng = np.random.default_rng(1)
        vals = rng.normal(size=(tri.n_vertices, 2))
        u = PiecewiseAffineMap(tri, vals)
        assert np.allclose(u.eval(tri.vertices), vals, atol=1e-12)

    def test_constant_zero_variation(self):
        tri = kuhn_triangulate((np.zeros(2), np.ones(2)), [5, 5])
        u = PiecewiseAffineMap(tri, np.ones((tri.n_vertices, 3)))
        assert u.grad_l1() == 0.0
