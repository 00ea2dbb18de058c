"""
IS-CD query points and the shared detector interface.
"""
import numpy as np
import pytest

from app.exceptions import DegenerateMeshError, EmptyInputError
from app.models.convex import GjkConfig
from app.models.geometry import Pose, TriMesh, random_quaternion
from app.services.detectors import DETECTORS, build_detector
from app.services.geometry.oracle import exact_collide, point_mesh_distance, points_inside
from app.services.iscd import IsCdConfig, iscd_boolean, query_points
from app.services.locc import init_params
from conftest import translated


def random_queries(rng, ids, n, spread=0.08):
    return [
        (ids[rng.integers(len(ids))], Pose(random_quaternion(rng), rng.uniform(-spread, spread, 3)),
         ids[rng.integers(len(ids))], Pose(random_quaternion(rng), rng.uniform(-spread, spread, 3)))
        for _ in range(n)
    ]


class TestIsCd:

    def test_query_points_are_prefix_consistent(self, objects):
        mesh = objects["torus_fat"].mesh
        np.testing.assert_array_equal(query_points(mesh, 100, 0)[:10], query_points(mesh, 10, 0))

    def test_query_points_lie_on_or_in_the_body(self, objects):
        mesh = objects["cup_mug"].mesh
        points = query_points(mesh, 300, 0)
        distance, _ = point_mesh_distance(points, mesh)
        on_surface = distance < 1e-12
        assert np.all(on_surface | points_inside(points, mesh))
        assert on_surface.sum() < len(points)

    def test_never_reports_a_false_collision(self, objects, rng):
        m1, m2 = objects["bowl_deep"].mesh, objects["l_block"].mesh
        cfg = IsCdConfig(points=200)
        for _ in range(25):
            q1 = Pose(random_quaternion(rng), rng.uniform(-0.06, 0.06, 3))
            q2 = Pose(random_quaternion(rng), rng.uniform(-0.06, 0.06, 3))
            if iscd_boolean(m1, q1, m2, q2, cfg):
                assert exact_collide(m1, q1, m2, q2)

    def test_more_points_only_add_collisions(self, objects, rng):
        m1, m2 = objects["capsule"].mesh, objects["t_block"].mesh
        for _ in range(20):
            q1 = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            q2 = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            verdicts = [iscd_boolean(m1, q1, m2, q2, IsCdConfig(points=k)) for k in (10, 100, 1000)]
            assert verdicts == sorted(verdicts)

    def test_open_mesh_is_refused(self, cube):
        sheet = TriMesh("sheet", [[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        with pytest.raises(DegenerateMeshError):
            iscd_boolean(cube.mesh, Pose.identity(), sheet, Pose.identity(), IsCdConfig(points=10))


class TestDetectorInterface:

    def test_registry(self, objects):
        assert set(DETECTORS) == {"exact", "gjk", "iscd", "locc"}
        with pytest.raises(ValueError):
            build_detector("ray-marcher", objects)

    def test_names_and_params(self, objects, tiny_locc):
        assert build_detector("exact", objects).name == "exact"
        gjk = build_detector("gjk", objects, cfg=GjkConfig(max_iterations=5, max_decomposition=4, max_triangles_per_hull=32))
        assert gjk.name == "ucf-gjk"
        assert gjk.params == "iters=5;parts=4;tris=32"
        assert build_detector("gjk", objects, hull_only=True).name == "gjk-hull"
        assert build_detector("iscd", objects, cfg=IsCdConfig(points=100)).params == "points=100"
        locc = build_detector("locc", objects, params=init_params(tiny_locc), cfg=tiny_locc)
        assert locc.name == "locc"
        assert locc.params == "K=64;M=3;H=8;F=4"

    def test_exact_detector_is_the_oracle(self, objects, rng):
        detector = build_detector("exact", objects)
        ids = sorted(objects)
        for id1, q1, id2, q2 in random_queries(rng, ids, 15):
            assert detector.collide(id1, q1, id2, q2) == exact_collide(objects[id1].mesh, q1, objects[id2].mesh, q2)

    def test_broad_phase_short_circuits(self, objects):
        detector = build_detector("exact", objects)
        far = [("box_cube", translated(), "cone", translated(x=1.0))] * 3
        result = detector.collide_batch(far)
        assert result.verdicts.tolist() == [False, False, False]
        assert result.narrow_count == 0
        assert result.elapsed == 0.0

    def test_collide_batch_keeps_query_order(self, objects):
        detector = build_detector("gjk", objects, hull_only=True)
        queries = [
            ("box_cube", translated(), "box_cube", translated(x=0.05)),
            ("box_cube", translated(), "box_cube", translated(x=0.5)),
            ("sphere_ball", translated(), "box_cube", translated(z=0.05)),
            ("sphere_ball", translated(), "box_cube", translated(x=0.065, y=0.065)),
        ]
        result = detector.collide_batch(queries)
        assert result.verdicts.tolist() == [True, False, True, False]
        assert result.narrow_count == 3
        assert [detector.collide(*q) for q in queries] == result.verdicts.tolist()

    def test_empty_batch(self, objects):
        with pytest.raises(EmptyInputError):
            build_detector("exact", objects).collide_batch([])

    def test_geometric_contact(self, objects):
        detector = build_detector("exact", objects)
        info = detector.contact("box_cube", translated(), "box_cube", translated(x=0.05), samples=1000)
        assert info.depth > 0.0
        assert info.normal[0] < -0.9
        assert detector.contact("box_cube", translated(), "box_cube", translated(x=0.2)) is None

    def test_gjk_contact_on_hulls(self, objects):
        detector = build_detector("gjk", objects, hull_only=True)
        info = detector.contact("box_cube", translated(), "box_cube", translated(z=0.055), samples=1000)
        assert 0.0 < info.depth <= 0.005 + 1e-9
        assert info.normal[2] < -0.9

    def test_locc_detector(self, objects, tiny_locc, rng):
        detector = build_detector("locc", objects, params=init_params(tiny_locc, seed=2), cfg=tiny_locc)
        queries = random_queries(rng, ["box_cube", "cone", "torus_ring"], 6, spread=0.03)
        probabilities = [detector.probability(*q) for q in queries]
        assert all(0.0 < p < 1.0 for p in probabilities)
        assert [detector.narrow_phase(*q) for q in queries] == [p > 0.5 for p in probabilities]
        batch = detector.narrow_batch(detector.prepare(queries))
        assert batch.tolist() == [p > 0.5 for p in probabilities]
        assert len(detector.cache) == len({q[0] for q in queries} | {q[2] for q in queries})

    def test_locc_contact_carries_pose_gradients(self, objects, tiny_locc):
        detector = build_detector("locc", objects, params=init_params(tiny_locc, seed=2), cfg=tiny_locc)
        q1, q2 = translated(), translated(x=0.03)
        info = detector.contact("box_cube", q1, "box_cube", q2)
        if detector.collide("box_cube", q1, "box_cube", q2):
            g1, g2 = info.gradients
            assert g1.shape == (7,) and g2.shape == (7,)
            assert info.score > 0.5
        else:
            assert info is None
