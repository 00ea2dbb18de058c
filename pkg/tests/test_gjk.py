"""
UCF-GJK over hulls and decompositions.
"""
import numpy as np
import pytest

from app.exceptions import DegenerateHullError, EmptyInputError
from app.models.convex import ConvexSet, GjkConfig
from app.models.geometry import Pose, random_quaternion
from app.services.geometry.oracle import closest_points, exact_collide
from app.services.gjk import (
    batch_boolean,
    cap_hull,
    coarsen,
    convex_hull,
    gjk_boolean,
    gjk_distance,
    load_decomposition,
    prepare_set,
    set_boolean,
    ucf_gjk,
    write_decomposition,
)
from conftest import translated

NEAR_CONTACT = 2e-3


@pytest.fixture(scope="module")
def cube_hull(objects):
    return convex_hull(objects["box_cube"].mesh)


class TestHulls:

    def test_cube_hull_keeps_the_corners(self, cube_hull):
        assert len(cube_hull.vertices) == 8
        assert cube_hull.triangle_count == 12

    def test_coplanar_points_are_degenerate(self):
        with pytest.raises(DegenerateHullError):
            convex_hull(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float))

    def test_cap_hull(self, objects):
        sphere = convex_hull(objects["sphere_ball"].mesh)
        assert sphere.triangle_count > 64
        capped = cap_hull(sphere, 16)
        assert capped.triangle_count <= 16
        assert len(capped.vertices) >= 4

    def test_coarsen_merges_parts(self, objects):
        bowl = objects["bowl_wide"].decomposition
        assert len(bowl) > 2
        coarse = coarsen(bowl, 2)
        assert len(coarse) == 2
        lo, hi = bowl.vertices.min(axis=0), bowl.vertices.max(axis=0)
        np.testing.assert_allclose(coarse.vertices.min(axis=0), lo)
        np.testing.assert_allclose(coarse.vertices.max(axis=0), hi)

    def test_prepare_set_applies_both_caps(self, objects):
        cfg = GjkConfig(max_iterations=9, max_decomposition=4, max_triangles_per_hull=16)
        prepared = prepare_set(objects["torus_ring"].decomposition, cfg)
        assert len(prepared) <= 4
        assert all(h.triangle_count <= 16 for h in prepared.hulls)

    def test_decomposition_file_round_trip(self, tmp_path, objects):
        source = objects["t_block"].decomposition
        path = tmp_path / "t_block.hulls"
        write_decomposition(source, path)
        loaded = load_decomposition(path)
        assert loaded.source_id == "t_block"
        assert len(loaded) == len(source)
        for a, b in zip(loaded.hulls, source.hulls):
            np.testing.assert_array_equal(a.vertices, b.vertices)

    def test_config_ranges(self):
        with pytest.raises(ValueError):
            GjkConfig(max_iterations=3)
        with pytest.raises(ValueError):
            GjkConfig(max_decomposition=32)


class TestGjk:

    def test_separated_touching_overlapping(self, cube_hull):
        cfg = GjkConfig()
        assert not gjk_boolean(cube_hull, translated(), cube_hull, translated(x=0.07), cfg)
        assert gjk_boolean(cube_hull, translated(), cube_hull, translated(x=0.06), cfg)
        assert gjk_boolean(cube_hull, translated(), cube_hull, translated(x=0.05), cfg)

    def test_distance_is_a_lower_bound(self, cube_hull):
        d = gjk_distance(cube_hull, translated(), cube_hull, translated(x=0.07, y=0.01), GjkConfig())
        assert 0.0 < d <= 0.01 + 1e-12

    def test_fixed_iteration_count_batches(self, cube_hull):
        a = np.stack([Pose.identity().apply(cube_hull.vertices)] * 3)
        b = np.stack([translated(x=x).apply(cube_hull.vertices) for x in (0.03, 0.2, 0.061)])
        result = ucf_gjk(a, b, 9)
        assert result.colliding.tolist() == [True, False, False]
        assert np.all(result.lower <= result.upper + 1e-15)

    def test_more_iterations_never_add_collisions(self, objects, rng):
        h1 = convex_hull(objects["capsule"].mesh)
        h2 = convex_hull(objects["prism_hex"].mesh)
        poses = [(Pose(random_quaternion(rng), rng.uniform(-0.06, 0.06, 3)),
                  Pose(random_quaternion(rng), rng.uniform(-0.06, 0.06, 3))) for _ in range(40)]
        a = np.stack([q1.apply(h1.vertices) for q1, _ in poses])
        b = np.stack([q2.apply(h2.vertices) for _, q2 in poses])
        previous = None
        for iterations in range(4, 10):
            verdicts = ucf_gjk(a, b, iterations).colliding
            if previous is not None:
                assert not np.any(verdicts & ~previous)
            previous = verdicts

    def test_no_false_negatives_on_convex_objects(self, objects, rng):
        m1, m2 = objects["sphere_ball"].mesh, objects["box_flat"].mesh
        h1, h2 = convex_hull(m1), convex_hull(m2)
        for _ in range(30):
            q1 = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            q2 = Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))
            if exact_collide(m1, q1, m2, q2):
                assert gjk_boolean(h1, q1, h2, q2, GjkConfig(max_iterations=4))

    @pytest.mark.parametrize("trials", [
        pytest.param(100, id="quick"),
        pytest.param(1_000, marks=pytest.mark.slow, id="full"),
    ])
    def test_full_budget_matches_the_exact_oracle(self, objects, trials):
        rng = np.random.default_rng(21)
        keys = ("box_cube", "box_flat", "prism_hex")
        checked = collisions = 0
        while checked < trials:
            k1, k2 = rng.choice(keys, size=2)
            m1, m2 = objects[k1].mesh, objects[k2].mesh
            q1 = Pose(random_quaternion(rng), [0, 0, 0])
            q2 = Pose(random_quaternion(rng), rng.uniform(-0.09, 0.09, 3))
            exact = exact_collide(m1, q1, m2, q2)
            # near-contact band: a fixed budget only certifies gaps it can resolve
            if not exact and closest_points(m1, q1, m2, q2)[2] < NEAR_CONTACT:
                continue
            verdict = ucf_gjk(q1.apply(m1.vertices)[None], q2.apply(m2.vertices)[None], 9).colliding[0]
            assert bool(verdict) == exact
            checked += 1
            collisions += exact
        assert 0 < collisions < trials


class TestDecompositions:

    def test_set_boolean_sees_into_the_bowl_hollow(self, objects):
        bowl = objects["bowl_wide"].decomposition
        ball = ConvexSet((convex_hull(objects["sphere_ball"].mesh),), "sphere_ball")
        single = ConvexSet((convex_hull(objects["bowl_wide"].mesh),), "bowl_wide")
        # a small ball resting in the hollow: the single hull collides, the decomposition does not
        small = ConvexSet((convex_hull(objects["sphere_ball"].mesh.vertices * 0.25),), "pebble")
        cfg = GjkConfig()
        pose = translated(z=0.0)
        assert set_boolean(single, Pose.identity(), small, pose, cfg)
        assert not set_boolean(bowl, Pose.identity(), small, pose, cfg)
        assert set_boolean(bowl, Pose.identity(), ball, translated(x=0.1), cfg)

    def test_too_many_parts(self, objects):
        bowl = objects["bowl_wide"].decomposition
        with pytest.raises(DegenerateHullError):
            set_boolean(bowl, Pose.identity(), bowl, translated(x=0.5), GjkConfig(max_decomposition=2))

    def test_batch_matches_single_queries(self, objects, rng):
        s1, s2 = objects["u_block"].decomposition, objects["t_block"].decomposition
        cfg = GjkConfig()
        pairs = [(s1, Pose(random_quaternion(rng), [0, 0, 0]), s2, Pose(random_quaternion(rng), rng.uniform(-0.08, 0.08, 3)))
                 for _ in range(12)]
        batch = batch_boolean(pairs, cfg, threads=2)
        assert batch.verdicts == [set_boolean(*pair, cfg) for pair in pairs]
        assert batch.elapsed >= 0.0

    def test_empty_batch(self):
        with pytest.raises(EmptyInputError):
            batch_boolean([], GjkConfig())
