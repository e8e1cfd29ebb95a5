import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freqdispatch import nadir_hull as nh
from freqdispatch.sfr import nadir_deviation

from oracles import halfspace_vertices, jarvis_hull, match_vertex_sets

# thermal-side aggregates of a mid-size system; the (H, D) box spans
# zero-to-full converter contributions
SYS = dict(T=8.0, R=20.0, F=4.5, dP=0.1, f0=50.0)
BOX = dict(h_bounds=(3.0, 7.0), d_bounds=(1.0, 5.0))


def default_cfg(n=5000, seed=0):
    return nh.ChaConfig(n_samples=n, seed=seed, **BOX)


def exact_feasible(f_max_lim):
    def fn(H, D):
        return nadir_deviation(H, D, SYS["T"], SYS["R"], SYS["F"], SYS["dP"], SYS["f0"]) <= f_max_lim
    return fn


class TestSampleFeasible:
    def test_vacuous_limit_returns_all(self):
        cfg = default_cfg()
        pts = nh.sample_feasible(cfg, **SYS, f_max_lim=np.inf)
        assert len(pts) == cfg.n_samples

    def test_unattainable_limit_raises(self):
        with pytest.raises(nh.EmptyRegionError):
            nh.sample_feasible(default_cfg(), **SYS, f_max_lim=0.0)

    def test_every_returned_point_recheck(self):
        pts = nh.sample_feasible(default_cfg(), **SYS, f_max_lim=0.5)
        dev = nadir_deviation(pts[:, 0], pts[:, 1], SYS["T"], SYS["R"], SYS["F"], SYS["dP"], SYS["f0"])
        assert np.all(dev <= 0.5)

    def test_deterministic_and_prefix_nested(self):
        a = nh.sample_points(default_cfg(n=1000, seed=3))
        b = nh.sample_points(default_cfg(n=4000, seed=3))
        assert np.array_equal(a, b[:1000])


class TestQuickhull:
    def test_unit_square_with_interior_points(self):
        rng = np.random.default_rng(0)
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        pts = np.vstack([corners, rng.uniform(0.05, 0.95, size=(100, 2))])
        poly = nh.quickhull2d(pts)
        assert not poly.degenerate
        assert match_vertex_sets(poly.vertices, corners, tol=0)

    def test_ccw_orientation(self):
        rng = np.random.default_rng(1)
        poly = nh.quickhull2d(rng.normal(size=(200, 2)))
        assert poly.signed_area() > 0

    def test_collinear_degenerate(self):
        poly = nh.quickhull2d(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
        assert poly.degenerate
        assert match_vertex_sets(poly.vertices, np.array([[0.0, 0.0], [2.0, 2.0]]), tol=0)

    def test_all_identical_degenerate(self):
        poly = nh.quickhull2d(np.array([[3.0, 4.0]] * 5))
        assert poly.degenerate
        assert len(poly.vertices) == 1

    def test_accepts_point2_list(self):
        pts = [nh.Point2(0, 0), nh.Point2(1, 0), nh.Point2(0.5, 1), nh.Point2(0.5, 0.3)]
        poly = nh.quickhull2d(pts)
        assert len(poly.vertices) == 3

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_gift_wrapping_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(5, 500)
        pts = rng.normal(size=(n, 2)) * rng.uniform(0.1, 10)
        poly = nh.quickhull2d(pts)
        assert match_vertex_sets(poly.vertices, jarvis_hull(pts), tol=0)

    def test_large_cloud_performance(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(size=(50_000, 2))
        import time
        t0 = time.perf_counter()
        poly = nh.quickhull2d(pts)
        assert time.perf_counter() - t0 < 0.1
        assert not poly.degenerate


class TestHalfspaces:
    def test_unit_square_halfspaces(self):
        poly = nh.quickhull2d(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
        hs = nh.polygon_to_halfspaces(poly)
        assert len(hs) == 4
        expected = {(1, 0, 0), (0, 1, 0), (-1, 0, 1), (0, -1, 1)}
        got = {tuple(np.round(row, 12)) for row in hs.coeffs}
        assert got == expected

    def test_centroid_strictly_inside(self):
        rng = np.random.default_rng(2)
        poly = nh.quickhull2d(rng.normal(size=(300, 2)))
        hs = nh.polygon_to_halfspaces(poly)
        c = poly.centroid()
        assert np.all(hs.coeffs[:, 0] * c[0] + hs.coeffs[:, 1] * c[1] + hs.coeffs[:, 2] > 0)

    def test_unit_normals(self):
        rng = np.random.default_rng(3)
        poly = nh.quickhull2d(rng.normal(size=(100, 2)))
        hs = nh.polygon_to_halfspaces(poly)
        norms = np.hypot(hs.coeffs[:, 0], hs.coeffs[:, 1])
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_vertices_on_their_edges(self):
        rng = np.random.default_rng(4)
        poly = nh.quickhull2d(rng.uniform(size=(500, 2)) * 10)
        hs = nh.polygon_to_halfspaces(poly)
        vals = poly.vertices @ hs.coeffs[:, :2].T + hs.coeffs[:, 2]
        # every vertex sits on exactly its two incident edges
        on_edge = np.abs(vals) <= 1e-9
        assert np.all(on_edge.sum(axis=1) == 2)
        assert np.all(vals >= -1e-9)

    def test_round_trip_vertex_recovery(self):
        rng = np.random.default_rng(6)
        poly = nh.quickhull2d(rng.normal(size=(400, 2)))
        hs = nh.polygon_to_halfspaces(poly)
        recovered = halfspace_vertices(hs.coeffs)
        assert match_vertex_sets(recovered, poly.vertices, tol=1e-9)

    def test_degenerate_rejected(self):
        poly = nh.quickhull2d(np.array([[0.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(nh.DegeneratePolygonError):
            nh.polygon_to_halfspaces(poly)


class TestClassify:
    def test_hull_vertices_classify_true(self):
        rng = np.random.default_rng(7)
        poly = nh.quickhull2d(rng.normal(size=(200, 2)))
        hs = nh.polygon_to_halfspaces(poly)
        for v in poly.vertices:
            assert nh.classify(hs, v)

    def test_point_outside_box_false(self):
        poly = nh.quickhull2d(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
        hs = nh.polygon_to_halfspaces(poly)
        assert not nh.classify(hs, nh.Point2(5.0, 5.0))

    def test_one_sided_agreement_with_exact(self):
        hs = nh.build_nadir_halfspaces(default_cfg(), **SYS, f_max_lim=0.5)
        rng = np.random.default_rng(8)
        pts = rng.uniform((3.0, 1.0), (7.0, 5.0), size=(2000, 2))
        inside = nh.classify_many(hs, pts)
        exact = exact_feasible(0.5)(pts[:, 0], pts[:, 1])
        assert not np.any(inside & ~exact)


class TestClassificationError:
    def test_vacuous_region_no_false_safe(self):
        hs = nh.build_nadir_halfspaces(default_cfg(n=20_000), **SYS, f_max_lim=np.inf)
        report = nh.classification_error(hs, lambda H, D: np.ones_like(H, bool), 10_000, 9, **BOX)
        assert report.false_safe_count == 0
        # only box-edge effects: the hull of uniform draws misses a sliver
        assert report.error_rate < 0.02

    def test_paper_scale_zero_false_safe(self):
        hs = nh.build_nadir_halfspaces(default_cfg(n=50_000), **SYS, f_max_lim=0.5)
        report = nh.classification_error(hs, exact_feasible(0.5), 10_000, 10, **BOX)
        assert report.false_safe_count == 0

    def test_error_rate_nonincreasing_in_training_size(self):
        rates = []
        for n in (10_000, 20_000, 50_000):
            hs = nh.build_nadir_halfspaces(default_cfg(n=n, seed=5), **SYS, f_max_lim=0.5)
            report = nh.classification_error(hs, exact_feasible(0.5), 10_000, 11, **BOX)
            assert report.false_safe_count == 0
            rates.append(report.error_rate)
        assert rates[0] >= rates[1] >= rates[2]


class TestSimplify:
    def test_stays_inside_original(self):
        rng = np.random.default_rng(21)
        poly = nh.quickhull2d(rng.normal(size=(3000, 2)))
        simp = nh.simplify_polygon(poly, max_vertices=8)
        assert len(simp.vertices) <= 8
        hs = nh.polygon_to_halfspaces(poly)
        assert np.all(nh.classify_many(hs, simp.vertices))

    def test_vertices_are_subset_of_input(self):
        rng = np.random.default_rng(22)
        poly = nh.quickhull2d(rng.normal(size=(500, 2)))
        simp = nh.simplify_polygon(poly, max_vertices=6)
        orig = {tuple(v) for v in poly.vertices}
        assert all(tuple(v) in orig for v in simp.vertices)

    def test_no_op_below_budget(self):
        square = nh.quickhull2d(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
        simp = nh.simplify_polygon(square, max_vertices=12)
        assert match_vertex_sets(simp.vertices, square.vertices, tol=0)


class TestBuild:
    def test_hyperplane_count_within_budget(self):
        hs = nh.build_nadir_halfspaces(default_cfg(n=50_000), **SYS, f_max_lim=0.5)
        assert 3 <= len(hs) <= 12
        assert hs.meta is not None and hs.meta.n_hyperplanes == len(hs)

    def test_build_time_within_budget(self):
        hs = nh.build_nadir_halfspaces(default_cfg(n=50_000), **SYS, f_max_lim=0.5)
        assert hs.meta.wall_time_s <= 0.1

    def test_deterministic_bit_identical(self):
        a = nh.build_nadir_halfspaces(default_cfg(seed=13), **SYS, f_max_lim=0.5)
        b = nh.build_nadir_halfspaces(default_cfg(seed=13), **SYS, f_max_lim=0.5)
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_empty_region_propagates(self):
        with pytest.raises(nh.EmptyRegionError):
            nh.build_nadir_halfspaces(default_cfg(), **SYS, f_max_lim=1e-9)

    def test_hull_minimality(self):
        hs = nh.build_nadir_halfspaces(default_cfg(n=2000), **SYS, f_max_lim=0.5)
        pts = nh.sample_feasible(default_cfg(n=2000), **SYS, f_max_lim=0.5)
        poly = nh.quickhull2d(pts)
        verts = poly.vertices
        for i in range(len(verts)):
            reduced = nh.quickhull2d(np.delete(verts, i, axis=0))
            if reduced.degenerate:
                continue
            sub = nh.polygon_to_halfspaces(reduced)
            # the removed vertex is itself a training sample left outside
            assert not nh.classify(sub, verts[i] + 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 60))
def test_quickhull_oracle_property(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, size=(n, 2))
    poly = nh.quickhull2d(pts)
    if poly.degenerate:
        return
    assert match_vertex_sets(poly.vertices, jarvis_hull(pts), tol=0)
