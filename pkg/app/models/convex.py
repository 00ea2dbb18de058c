"""
Convex shape records for the UCF-GJK baseline.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial import ConvexHull as QhullHull
from scipy.spatial import QhullError

from app.exceptions import DegenerateHullError


class GjkConfig(BaseModel):
    """UCF-GJK hyperparameters, constrained to the published search ranges."""
    max_iterations: int = Field(9, ge=4, le=9)
    max_decomposition: int = Field(16, ge=2, le=16)
    max_triangles_per_hull: int = Field(64, ge=16, le=64)

    class Config:
        json_schema_extra = {
            "example": {
                "max_iterations": 9,
                "max_decomposition": 8,
                "max_triangles_per_hull": 32
            }
        }

    def label(self) -> str:
        return f"iters={self.max_iterations};parts={self.max_decomposition};tris={self.max_triangles_per_hull}"


def qhull(points: np.ndarray) -> QhullHull:
    """Qhull wrapper translating degenerate input into DegenerateHullError."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 4:
        raise DegenerateHullError(f"convex hull needs >= 4 points, got {len(points)}")
    try:
        return QhullHull(points)
    except (QhullError, ValueError) as e:
        raise DegenerateHullError(f"degenerate (coplanar) hull input: {e}") from e


@dataclass(frozen=True, eq=False)
class ConvexHull:
    """
    Vertex set of a 3D convex polytope in its object's local frame.
    Construction verifies every vertex is extreme.
    """
    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        hull = qhull(vertices)
        if len(hull.vertices) != len(vertices):
            raise DegenerateHullError(
                f"{len(vertices) - len(hull.vertices)} of {len(vertices)} vertices are not on the hull")
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)

    @cached_property
    def faces(self) -> np.ndarray:
        """Outward-consistent triangle indices of the hull surface."""
        hull = qhull(self.vertices)
        faces = hull.simplices.copy()
        centroid = self.vertices.mean(axis=0)
        corners = self.vertices[faces]
        normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        flip = np.einsum("ij,ij->i", normals, corners[:, 0] - centroid) < 0
        faces[flip] = faces[flip][:, ::-1]
        return faces

    @property
    def triangle_count(self) -> int:
        return len(self.faces)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class ConvexSet:
    """A convex decomposition representing one object."""
    hulls: Tuple[ConvexHull, ...]
    source_id: str

    def __post_init__(self):
        hulls = tuple(self.hulls)
        if not hulls:
            raise DegenerateHullError(f"convex set '{self.source_id}' has no hulls")
        object.__setattr__(self, "hulls", hulls)

    def __len__(self) -> int:
        return len(self.hulls)

    @property
    def vertices(self) -> np.ndarray:
        return np.vstack([hull.vertices for hull in self.hulls])
