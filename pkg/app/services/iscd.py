"""
Query-point collision detection baseline.

Each object carries a fixed set of query points on or inside its surface;
a pair collides when some query point of one object lies inside the other.
The exact mesh inside test stands in for a learned implicit surface, so the
only accuracy knob is the query-point count.
"""
import logging
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, Field

from app.exceptions import DegenerateMeshError
from app.models.geometry import Pose, TriMesh
from app.services.geometry.mesh import sample_surface
from app.services.geometry.oracle import points_inside


logger = logging.getLogger(__name__)


class IsCdConfig(BaseModel):
    """Query-point density of the IS-CD baseline."""
    points: int = Field(1000, ge=1)
    seed: int = 0
    interior_fraction: float = Field(0.5, ge=0.0, le=1.0)
    jitter: float = Field(0.15, gt=0.0, le=0.5)

    class Config:
        json_schema_extra = {
            "example": {
                "points": 1000,
                "seed": 0
            }
        }

    def label(self) -> str:
        return f"points={self.points}"


@lru_cache(maxsize=1024)
def query_points(mesh: TriMesh, k: int, seed: int, interior_fraction: float = 0.5, jitter: float = 0.15) -> np.ndarray:
    """
    Local-frame query points: surface samples, a fraction of them pushed
    inward along the face normal by up to `jitter` times the smallest AABB
    extent. Points whose push would leave the body stay on the surface.

    Draws are prefix-consistent: the first k points of a larger draw with the
    same seed are the k-point draw.
    """
    cloud = sample_surface(mesh, k, seed)
    rng = np.random.default_rng([seed, 1])
    u = rng.random((k, 2))
    corners = mesh.corners[cloud.faces]
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    depth = jitter * float(np.min(mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0))) * u[:, 1]
    pushed = cloud.points - normals * depth[:, None]
    move = u[:, 0] < interior_fraction
    if move.any():
        move[move] = points_inside(pushed[move], mesh)
    points = np.where(move[:, None], pushed, cloud.points)
    points.setflags(write=False)
    return points


def iscd_boolean(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose, cfg: IsCdConfig) -> bool:
    """
    True iff a query point of either object lies inside the other.

    Raises:
        DegenerateMeshError: either mesh is not closed
    """
    for mesh in (m1, m2):
        if not mesh.closed:
            raise DegenerateMeshError(f"IS-CD needs closed meshes; '{mesh.id}' is open")
    p1 = q1.apply(query_points(m1, cfg.points, cfg.seed, cfg.interior_fraction, cfg.jitter))
    if points_inside(p1, m2, q2).any():
        return True
    p2 = q2.apply(query_points(m2, cfg.points, cfg.seed, cfg.interior_fraction, cfg.jitter))
    return bool(points_inside(p2, m1, q1).any())
