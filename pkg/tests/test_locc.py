"""
Shape encoder, cell selection, predictor and pose gradients.
"""
import json

import numpy as np
import pytest

from app.exceptions import CheckpointError, EmptyInputError
from app.models.geometry import Aabb, Obb, PointCloud, Pose, random_quaternion
from app.models.locc import ShapeEmbedding
from app.services.geometry.mesh import aabb_of, sample_surface
from app.services.locc import (
    EmbeddingCache,
    assign_cells,
    cell_centers,
    encode_shape,
    full_forward,
    half_diagonal,
    init_params,
    load_checkpoint,
    pose_gradient,
    predict_collision,
    predict_many,
    predict_with_selection,
    save_checkpoint,
    select_cells,
)
from conftest import translated


@pytest.fixture
def params(tiny_locc):
    return init_params(tiny_locc, seed=5)


@pytest.fixture
def embed(objects, params, tiny_locc):
    def build(key):
        mesh = objects[key].mesh
        return encode_shape(sample_surface(mesh, tiny_locc.points, 0), aabb_of(mesh), params, tiny_locc)
    return build


class TestGrid:

    def test_boundary_points_go_to_the_lower_cell(self):
        box = Aabb([0, 0, 0], [1, 1, 1])
        points = np.array([[0, 0, 0], [1 / 3, 0, 0], [0.34, 0, 0], [1, 1, 1]])
        assert assign_cells(points, box, 3).tolist() == [0, 0, 9, 26]

    def test_flat_axis_maps_to_index_zero(self):
        box = Aabb([0, 0, 0], [1, 1, 0])
        assert assign_cells(np.array([[0.9, 0.9, 0.0]]), box, 3).tolist() == [(2 * 3 + 2) * 3]

    def test_cell_centers_follow_cell_order(self):
        box = Aabb([-0.1, 0, 0.2], [0.3, 0.2, 0.5])
        assert assign_cells(cell_centers(box, 4), box, 4).tolist() == list(range(64))

    def test_half_diagonal(self):
        box = Aabb([0, 0, 0], [3, 6, 6])
        assert half_diagonal(box, 3) == pytest.approx(1.5)


class TestEncoder:

    def test_init_is_deterministic(self, tiny_locc):
        a, b = init_params(tiny_locc, seed=1), init_params(tiny_locc, seed=1)
        assert sorted(a.arrays) == sorted(b.arrays)
        for name in a.arrays:
            np.testing.assert_array_equal(a[name], b[name])
        assert "dec.head.w" in a
        assert "dec.head.w" not in init_params(tiny_locc.model_copy(update={"variant": "global"}))

    def test_embedding_shapes(self, embed, tiny_locc):
        e = embed("cone")
        assert e.grid.shape == (3, 3, 3, tiny_locc.cell_features)
        assert e.global_feature.shape == (tiny_locc.global_dim,)
        assert e.cell_features().shape == (27, tiny_locc.cell_features)

    def test_global_variant_has_no_grid(self, objects, tiny_locc):
        cfg = tiny_locc.model_copy(update={"variant": "global"})
        mesh = objects["cone"].mesh
        e = encode_shape(sample_surface(mesh, cfg.points, 0), aabb_of(mesh), init_params(cfg), cfg)
        assert e.grid is None
        assert e.global_feature.shape == (cfg.global_dim,)

    def test_empty_cloud(self, cube, params, tiny_locc):
        cloud = PointCloud(np.zeros((0, 3)), "box_cube", np.zeros(0))
        with pytest.raises(EmptyInputError):
            encode_shape(cloud, aabb_of(cube.mesh), params, tiny_locc)


def _bare(aabb: Aabb) -> ShapeEmbedding:
    return ShapeEmbedding(None, np.zeros(1), aabb, "box")


def _random_box(rng) -> Aabb:
    extents = rng.uniform(0.02, 0.2, 3)
    return Aabb(-extents / 2, extents / 2)


def _intersecting_cells(aabb: Aabb, pose: Pose, m: int, other: Obb) -> np.ndarray:
    """Cells whose box overlaps `other`, by an exact box-box separating-axis test."""
    size = aabb.cell_size(m)
    return np.array([Obb(Aabb(c - size / 2, c + size / 2), pose).overlaps(other, tolerance=0.0)
                     for c in cell_centers(aabb, m)])


class TestSelection:

    @pytest.mark.parametrize("trials", [
        pytest.param(200, id="quick"),
        pytest.param(10_000, marks=pytest.mark.slow, id="full"),
    ])
    def test_margin_never_misses_an_intersecting_cell(self, trials):
        rng = np.random.default_rng(77)
        for _ in range(trials):
            m = int(rng.integers(2, 5))
            b1, b2 = _random_box(rng), _random_box(rng)
            q1 = Pose(random_quaternion(rng), [0, 0, 0])
            q2 = Pose(random_quaternion(rng), rng.uniform(-0.12, 0.12, 3))
            obb1, obb2 = Obb(b1, q1), Obb(b2, q2)
            selection = select_cells(_bare(b1), q1, _bare(b2), q2, m)
            if not obb1.overlaps(obb2, tolerance=0.0):
                continue
            assert np.all(selection.mask1[_intersecting_cells(b1, q1, m, obb2)])
            assert np.all(selection.mask2[_intersecting_cells(b2, q2, m, obb1)])

    def test_each_side_uses_its_own_cell_margin(self):
        big = Aabb([-0.3, -0.3, -0.3], [0.3, 0.3, 0.3])
        small = Aabb([-0.015, -0.015, -0.015], [0.015, 0.015, 0.015])
        selection = select_cells(_bare(big), translated(), _bare(small), translated(0.29, 0.29, 0.29), 3)
        assert selection.epsilon1 == pytest.approx(np.sqrt(3) * 0.1)
        assert selection.epsilon2 == pytest.approx(np.sqrt(3) * 0.005)
        # the corner cell's center is 0.13 from the small box: beyond epsilon2, within epsilon1
        assert np.nonzero(selection.mask1)[0].tolist() == [26]
        assert selection.mask2.all()

    def test_far_apart_selects_nothing(self, embed):
        selection = select_cells(embed("box_cube"), translated(), embed("cone"), translated(x=1.0), 3)
        assert selection.empty

    def test_overlapping_boxes_select_cells(self, embed):
        selection = select_cells(embed("box_cube"), translated(), embed("box_cube"), translated(x=0.05), 3)
        assert selection.mask1.any() and selection.mask2.any()
        assert not selection.mask1.all()


class TestPredictor:

    def test_probability_range_and_batching(self, embed, params, tiny_locc, rng):
        e = {key: embed(key) for key in ("box_cube", "cone", "capsule")}
        queries = []
        for _ in range(5):
            a, b = rng.choice(sorted(e), size=2)
            queries.append((e[a], Pose(random_quaternion(rng), [0, 0, 0]),
                            e[b], Pose(random_quaternion(rng), rng.uniform(-0.05, 0.05, 3))))
        single = [predict_collision(*q, params, tiny_locc) for q in queries]
        assert all(0.0 < p < 1.0 for p in single)
        np.testing.assert_allclose(predict_many(queries, params, tiny_locc), single, rtol=1e-9)

    def test_empty_batch(self, params, tiny_locc):
        with pytest.raises(EmptyInputError):
            predict_many([], params, tiny_locc)

    def test_pose_gradient_matches_finite_differences(self, embed, params, tiny_locc):
        e1, e2 = embed("box_cube"), embed("cone")
        q1 = Pose(random_quaternion(np.random.default_rng(3)), [0.0, 0.0, 0.0])
        q2 = Pose(random_quaternion(np.random.default_rng(4)), [0.03, 0.01, -0.02])
        g1, g2 = pose_gradient(e1, q1, e2, q2, params, tiny_locc)
        selection = select_cells(e1, q1, e2, q2, tiny_locc.grid)
        eps = 1e-6
        for gradient, which in ((g1, 0), (g2, 1)):
            numeric = np.zeros(7)
            for i in range(7):
                vectors = [q1.as_vector(), q2.as_vector()]
                up, down = [v.copy() for v in vectors], [v.copy() for v in vectors]
                up[which][i] += eps
                down[which][i] -= eps
                numeric[i] = (predict_with_selection(e1, up[0], e2, up[1], selection, params, tiny_locc)
                              - predict_with_selection(e1, down[0], e2, down[1], selection, params, tiny_locc)) / (2 * eps)
            np.testing.assert_allclose(gradient, numeric, rtol=1e-4, atol=1e-9)

    def test_full_forward_matches_cached_path(self, objects, params, tiny_locc):
        cache = EmbeddingCache()
        q1, q2 = translated(), translated(x=0.04)
        p = full_forward(objects["box_cube"].mesh, q1, objects["capsule"].mesh, q2, params, tiny_locc, cache)
        e1 = cache.get(objects["box_cube"].mesh, params, tiny_locc)
        e2 = cache.get(objects["capsule"].mesh, params, tiny_locc)
        assert p == predict_collision(e1, q1, e2, q2, params, tiny_locc)
        assert len(cache) == 2


class TestEmbeddingCache:

    def test_reuses_until_params_change(self, cube, params, tiny_locc):
        cache = EmbeddingCache()
        first = cache.get(cube.mesh, params, tiny_locc)
        assert cache.get(cube.mesh, params, tiny_locc) is first
        params.update({name: a * 1.01 for name, a in params.arrays.items()})
        assert cache.get(cube.mesh, params, tiny_locc) is not first
        assert len(cache) == 2
        cache.clear()
        assert len(cache) == 0


class TestCheckpoint:

    def test_round_trip(self, tmp_path, params, tiny_locc):
        save_checkpoint(params, tiny_locc, tmp_path / "ckpt", {"train": {"epochs": 2}})
        loaded, cfg = load_checkpoint(tmp_path / "ckpt")
        assert cfg == tiny_locc
        for name in params.arrays:
            np.testing.assert_array_equal(loaded[name], params[name])
        meta = json.loads((tmp_path / "ckpt" / "config.json").read_text())
        assert meta["train"] == {"epochs": 2}

    def test_config_shape_mismatch(self, tmp_path, params, tiny_locc):
        directory = save_checkpoint(params, tiny_locc, tmp_path / "ckpt")
        meta = json.loads((directory / "config.json").read_text())
        meta["locc"]["predictor_width"] = 16
        (directory / "config.json").write_text(json.dumps(meta))
        with pytest.raises(CheckpointError):
            load_checkpoint(directory)

    def test_missing_config(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path)
