"""
Mesh IO, poses, the exact oracle and the bundled object library.
"""
import numpy as np
import pytest

from app.exceptions import DegenerateMeshError, EmptyInputError, MeshParseError
from app.models.geometry import Aabb, Obb, Pose, quat_from_axis_angle, random_quaternion
from app.services.geometry.mesh import aabb_of, load_mesh, parse_obj, sample_surface, write_obj
from app.services.geometry.oracle import (
    closest_points,
    closest_points_all_pairs,
    collision_verdict,
    exact_collide,
    min_abs_sd,
    penetration_probe,
    point_mesh_distance,
    points_inside,
)
from app.services.geometry.primitives import box, load_object_dir, object_entry, object_set
from app.services.gjk import write_decomposition
from conftest import translated

CUBE_OBJ = """
# unit cube, quads
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


class TestMeshIO:

    def test_parse_quads_into_closed_mesh(self):
        mesh = parse_obj(CUBE_OBJ, "unit")
        assert len(mesh.vertices) == 8
        assert len(mesh.triangles) == 12
        assert mesh.closed

    def test_face_tokens_with_slashes_and_negative_indices(self):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n"
        mesh = parse_obj(text, "tri")
        assert mesh.triangles.tolist() == [[0, 1, 2]]
        assert not mesh.closed

    def test_zero_face_index_is_rejected(self):
        with pytest.raises(MeshParseError):
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", "bad")

    def test_out_of_range_face_index_is_rejected(self):
        with pytest.raises(MeshParseError):
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", "bad")

    def test_degenerate_triangle_reports_its_index(self):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n"
        with pytest.raises(DegenerateMeshError) as info:
            parse_obj(text, "flat")
        assert info.value.triangle_index == 1

    def test_no_vertices(self):
        with pytest.raises(MeshParseError):
            parse_obj("# nothing\n", "empty")

    def test_write_then_load_is_exact(self, tmp_path, objects):
        mesh = objects["torus_ring"].mesh
        path = tmp_path / "torus_ring.obj"
        write_obj(mesh, path)
        loaded = load_mesh(path)
        assert loaded.id == "torus_ring"
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)


class TestSampling:

    def test_samples_lie_on_the_surface(self, cube):
        cloud = sample_surface(cube.mesh, 300, seed=5)
        distances, _ = point_mesh_distance(cloud.points, cube.mesh)
        assert cloud.k == 300
        assert distances.max() < 1e-12

    def test_prefix_consistent(self, cube):
        small = sample_surface(cube.mesh, 10, seed=9).points
        large = sample_surface(cube.mesh, 200, seed=9).points
        np.testing.assert_array_equal(large[:10], small)

    def test_area_weighted(self, objects):
        # box_long: the four long faces carry 0.0256 of 0.0288 m^2 of area
        mesh = objects["box_long"].mesh
        points = sample_surface(mesh, 4000, seed=0).points
        on_ends = np.isclose(np.abs(points[:, 0]), 0.08)
        assert abs(on_ends.mean() - 0.0032 / 0.0288) < 0.03

    def test_zero_count_rejected(self, cube):
        with pytest.raises(ValueError):
            sample_surface(cube.mesh, 0, seed=0)


class TestPose:

    def test_compose_with_inverse_is_identity(self, rng):
        pose = Pose(random_quaternion(rng), rng.normal(size=3))
        points = rng.normal(size=(5, 3))
        np.testing.assert_allclose(pose.inverse().compose(pose).apply(points), points, atol=1e-12)
        np.testing.assert_allclose(pose.apply_inverse(pose.apply(points)), points, atol=1e-12)

    def test_quaternion_is_canonicalised(self):
        pose = Pose([-2.0, 0.0, 0.0, 0.0], [0, 0, 0])
        np.testing.assert_array_equal(pose.rotation, [1.0, 0.0, 0.0, 0.0])

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Pose([0, 0, 0, 0], [0, 0, 0])

    def test_vector_round_trip(self, rng):
        pose = Pose(random_quaternion(rng), [0.1, -0.2, 0.3])
        again = Pose.from_vector(pose.as_vector())
        np.testing.assert_allclose(again.as_vector(), pose.as_vector())

    def test_obb_separating_axis(self):
        box_a = Aabb([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5])
        turned = Pose(quat_from_axis_angle([0, 0, 1], np.pi / 4), [1.2, 0, 0])
        assert Obb(box_a, Pose.identity()).overlaps(Obb(box_a, turned))
        far = Pose(quat_from_axis_angle([0, 0, 1], np.pi / 4), [1.25, 0, 0])
        assert not Obb(box_a, Pose.identity()).overlaps(Obb(box_a, far))


class TestExactOracle:

    def test_separated_touching_and_overlapping_cubes(self, cube):
        m = cube.mesh
        assert not exact_collide(m, translated(), m, translated(x=0.07))
        assert exact_collide(m, translated(), m, translated(x=0.06))
        assert exact_collide(m, translated(), m, translated(x=0.05))

    def test_full_containment_counts(self, cube):
        big = object_entry(*box("big", (0.3, 0.3, 0.3))).mesh
        verdict = collision_verdict(cube.mesh, translated(), big, translated(z=0.01))
        assert verdict.colliding
        assert not verdict.surface_contact
        assert verdict.containment_checked

    def test_symmetric(self, objects, rng):
        a, b = objects["torus_ring"].mesh, objects["capsule"].mesh
        for _ in range(10):
            qa = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            qb = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            assert exact_collide(a, qa, b, qb) == exact_collide(b, qb, a, qa)

    def test_pruned_distance_matches_all_pairs(self, objects, rng):
        a, b = objects["l_block"].mesh, objects["cone"].mesh
        qa = Pose(random_quaternion(rng), [0, 0, 0])
        qb = Pose(random_quaternion(rng), [0.2, 0.05, 0])
        d = closest_points(a, qa, b, qb)[2]
        d_ref = closest_points_all_pairs(a, qa, b, qb)[2]
        assert d == pytest.approx(d_ref, abs=1e-12)

    def test_closest_points_between_cubes(self, cube):
        p1, p2, d = closest_points(cube.mesh, translated(), cube.mesh, translated(x=0.1))
        assert d == pytest.approx(0.04, abs=1e-12)
        assert p1[0] == pytest.approx(0.03)
        assert p2[0] == pytest.approx(0.07)

    def test_nested_boxes_have_zero_distance(self):
        small = object_entry(*box("small", (0.05, 0.05, 0.05))).mesh
        big = object_entry(*box("big", (0.4, 0.4, 0.4))).mesh
        for m1, m2 in ((small, big), (big, small)):
            assert exact_collide(m1, translated(), m2, translated())
            p1, p2, d = closest_points(m1, translated(), m2, translated())
            assert d == 0.0
            np.testing.assert_array_equal(p1, p2)
            assert points_inside(p1[None], big)[0]

    def test_distance_is_invariant_under_a_common_rigid_motion(self, objects, rng):
        a, b = objects["l_block"].mesh, objects["cone"].mesh
        for _ in range(5):
            qa = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            qb = Pose(random_quaternion(rng), rng.uniform(0.15, 0.25, 3))
            motion = Pose(random_quaternion(rng), rng.uniform(-1.0, 1.0, 3))
            d = closest_points(a, qa, b, qb)[2]
            moved = closest_points(a, motion.compose(qa), b, motion.compose(qb))[2]
            assert d > 0.0
            assert moved == pytest.approx(d, abs=1e-7)

    def test_points_inside(self, cube):
        inside = points_inside(np.array([[0, 0, 0], [0.029, 0.01, -0.02], [0.031, 0, 0]]), cube.mesh)
        assert inside.tolist() == [True, True, False]

    def test_points_inside_non_convex_bowl(self, objects):
        bowl = objects["bowl_wide"].mesh
        lo = aabb_of(bowl).min
        # the hollow above the bottom is outside, the bottom plate is inside
        assert not points_inside(np.array([[0.0, 0.0, lo[2] + 0.03]]), bowl)[0]
        assert points_inside(np.array([[0.0, 0.0, lo[2] + 0.003]]), bowl)[0]

    def test_penetration_depth_and_normal(self, cube):
        sample = penetration_probe(cube.mesh, translated(), cube.mesh, translated(x=0.05), samples=2000)
        assert 0.005 < sample.depth <= 0.01 + 1e-9
        assert sample.normal[0] < -0.9

    def test_disjoint_pair_has_no_penetration_normal(self, cube):
        sample = penetration_probe(cube.mesh, translated(), cube.mesh, translated(x=0.2), samples=200)
        assert sample.depth == 0.0
        assert sample.normal is None

    def test_min_abs_sd(self, cube):
        scene = [(cube.mesh, translated()), (cube.mesh, translated(x=0.07)), (cube.mesh, translated(x=0.2))]
        assert min_abs_sd(scene, [(0, 1), (1, 2)], samples=200) == pytest.approx(0.01, abs=1e-12)
        with pytest.raises(EmptyInputError):
            min_abs_sd(scene, [])


class TestObjectLibrary:

    def test_bundled_set(self, objects):
        assert len(objects) >= 20
        for entry in objects.values():
            assert entry.mesh.closed
            np.testing.assert_allclose(aabb_of(entry.mesh).center, 0.0, atol=1e-12)
            assert len(entry.decomposition) >= 1

    def test_convexity_flags(self, objects):
        assert objects["box_cube"].convex
        assert objects["sphere_ball"].convex
        assert not objects["bowl_wide"].convex
        assert not objects["torus_ring"].convex

    def test_decomposition_covers_the_mesh(self, objects):
        for key in ("l_block", "u_block", "bowl_wide"):
            entry = objects[key]
            points = sample_surface(entry.mesh, 200, seed=1).points
            lo = entry.decomposition.vertices.min(axis=0) - 1e-9
            hi = entry.decomposition.vertices.max(axis=0) + 1e-9
            assert np.all((points >= lo) & (points <= hi))

    def test_export_and_reload_directory(self, tmp_path, objects):
        for key in ("u_block", "box_cube"):
            write_obj(objects[key].mesh, tmp_path / f"{key}.obj")
        write_decomposition(objects["u_block"].decomposition, tmp_path / "u_block.hulls")
        loaded = load_object_dir(tmp_path)
        assert sorted(loaded) == ["box_cube", "u_block"]
        assert len(loaded["u_block"].decomposition) == len(objects["u_block"].decomposition)
        assert len(loaded["box_cube"].decomposition) == 1
        assert object_set(tmp_path).keys() == loaded.keys()

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyInputError):
            load_object_dir(tmp_path)
