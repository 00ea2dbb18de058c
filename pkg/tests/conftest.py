"""
Shared fixtures: the bundled object set, a tiny network shape and helpers
for building posed pairs.
"""
import numpy as np
import pytest

from app.models.dataset import GenConfig, LabeledPair
from app.models.geometry import Pose
from app.models.locc import LoccConfig
from app.services.geometry.oracle import exact_collide
from app.services.geometry.primitives import bundled_objects, box, object_entry


@pytest.fixture(scope="session")
def objects():
    return bundled_objects()


@pytest.fixture(scope="session")
def cube(objects):
    return objects["box_cube"]


@pytest.fixture(scope="session")
def slab():
    """A wide flat box used as static ground."""
    return object_entry(*box("slab", (0.6, 0.6, 0.02)))


@pytest.fixture
def tiny_locc():
    return LoccConfig(points=64, grid=3, point_features=8, cell_features=4, conv_channels=4,
                      global_dim=8, predictor_width=8)


@pytest.fixture
def small_gen():
    return GenConfig(pairs=24, pose_bound=0.3, test_bound=0.12, seed=3)


def labelled(objects, id1, q1, id2, q2) -> LabeledPair:
    """A pair labelled by the exact oracle."""
    return LabeledPair(id1, id2, q1, q2, exact_collide(objects[id1].mesh, q1, objects[id2].mesh, q2))


def translated(x=0.0, y=0.0, z=0.0) -> Pose:
    return Pose.from_translation([x, y, z])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
