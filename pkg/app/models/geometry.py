"""
Geometry records: rigid poses, bounding boxes, triangle meshes and point clouds.

Quaternions are stored as (w, x, y, z) with w >= 0. All arrays are float64
and read-only once a record is constructed.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from app.exceptions import DegenerateMeshError

MIN_TRIANGLE_AREA = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; broadcasts over leading axes."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """
    Draw a rotation from the uniform (Haar) measure on SO(3).

    Uses Shoemake's subgroup algorithm, three uniforms per draw.
    """
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.array([
        b * np.cos(2 * np.pi * u3),
        a * np.sin(2 * np.pi * u2),
        a * np.cos(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
    ])


@dataclass(frozen=True, eq=False)
class Pose:
    """
    SE(3) rigid transform: x_world = R(rotation) @ x_local + translation.

    The quaternion is renormalised (and sign-canonicalised to w >= 0) on every
    construction, so composition never drifts off the unit sphere.
    """
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError(f"Invalid rotation quaternion: {self.rotation}")
        q = q / norm
        if q[0] < 0:
            q = -q
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "Pose":
        """Build from the 7-number encoding (qw, qx, qy, qz, tx, ty, tz)."""
        vector = np.asarray(vector, dtype=np.float64)
        return cls(vector[:4], vector[4:7])

    @classmethod
    def from_translation(cls, translation: Sequence[float]) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), translation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @cached_property
    def matrix(self) -> np.ndarray:
        return _frozen(quat_to_matrix(self.rotation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map local-frame points (..., 3) to world frame."""
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map world-frame points (..., 3) into this pose's local frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.matrix

    def inverse(self) -> "Pose":
        return Pose(quat_conjugate(self.rotation), -(self.matrix.T @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply other first, then self."""
        return Pose(
            quat_multiply(self.rotation, other.rotation),
            self.matrix @ other.translation + self.translation,
        )

    def translated(self, offset: Sequence[float]) -> "Pose":
        return Pose(self.rotation, self.translation + np.asarray(offset, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned box in an object's local frame."""
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64).reshape(3)
        hi = np.array(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", _frozen(lo))
        object.__setattr__(self, "max", _frozen(hi))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Aabb":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(points.min(axis=0), points.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    def corners(self) -> np.ndarray:
        bits = np.array([[(i >> k) & 1 for k in range(3)] for i in range(8)], dtype=np.float64)
        return self.min + bits * self.extents

    def cell_size(self, m: int) -> np.ndarray:
        return self.extents / m

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from local-frame points (N, 3) to the box (0 inside)."""
        points = np.asarray(points, dtype=np.float64)
        gap = np.maximum(np.maximum(self.min - points, points - self.max), 0.0)
        return np.linalg.norm(gap, axis=-1)

    def overlaps(self, other: "Aabb", slack: float = 0.0) -> bool:
        return bool(np.all(self.min - slack <= other.max) and np.all(other.min - slack <= self.max))


@dataclass(frozen=True, eq=False)
class Obb:
    """An Aabb carried through a rigid pose."""
    aabb: Aabb
    pose: Pose

    def corners(self) -> np.ndarray:
        return self.pose.apply(self.aabb.corners())

    def world_aabb(self) -> Aabb:
        return Aabb.from_points(self.corners())

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        """Distance from world-frame points to the box."""
        return self.aabb.distance_to(self.pose.apply_inverse(points))

    def overlaps(self, other: "Obb", tolerance: float = 1e-12) -> bool:
        """
        Separating-axis test between two oriented boxes (15 candidate axes).
        Touching boxes count as overlapping.
        """
        a_axes = self.pose.matrix.T
        b_axes = other.pose.matrix.T
        cross = np.cross(a_axes[:, None, :], b_axes[None, :, :]).reshape(9, 3)
        axes = np.vstack([a_axes, b_axes, cross])
        norms = np.linalg.norm(axes, axis=1)
        axes = axes[norms > 1e-12] / norms[norms > 1e-12, None]
        pa = self.corners() @ axes.T
        pb = other.corners() @ axes.T
        separated = (pa.max(axis=0) < pb.min(axis=0) - tolerance) | (pb.max(axis=0) < pa.min(axis=0) - tolerance)
        return not bool(np.any(separated))


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Indexed triangle mesh, vertices in meters.

    `closed` is True when every undirected edge is shared by exactly two
    triangles; the inside/outside test is only meaningful for closed meshes.
    """
    id: str
    vertices: np.ndarray
    triangles: np.ndarray
    closed: bool = field(init=False)

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(vertices) == 0:
            raise DegenerateMeshError(f"Mesh '{self.id}' has no vertices")
        if not np.all(np.isfinite(vertices)):
            raise DegenerateMeshError(f"Mesh '{self.id}' has non-finite vertices")
        bad = np.nonzero((triangles < 0).any(axis=1) | (triangles >= len(vertices)).any(axis=1))[0]
        if len(bad):
            raise DegenerateMeshError(
                f"Mesh '{self.id}': triangle {bad[0]} references a missing vertex",
                triangle_index=int(bad[0]),
            )
        corners = vertices[triangles]
        areas = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
        degenerate = np.nonzero(areas <= MIN_TRIANGLE_AREA)[0]
        if len(degenerate):
            raise DegenerateMeshError(
                f"Mesh '{self.id}': triangle {degenerate[0]} is degenerate (area {areas[degenerate[0]]:.3e} m^2)",
                triangle_index=int(degenerate[0]),
            )
        object.__setattr__(self, "vertices", _frozen(vertices))
        object.__setattr__(self, "triangles", _frozen(triangles))
        object.__setattr__(self, "closed", self._edge_manifold(triangles))

    @staticmethod
    def _edge_manifold(triangles: np.ndarray) -> bool:
        if len(triangles) == 0:
            return False
        edges = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @cached_property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (T, 3, 3)."""
        return _frozen(self.vertices[self.triangles])

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.corners
        return _frozen(0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1))

    @property
    def surface_area(self) -> float:
        return float(self.areas.sum())

    def world_corners(self, pose: Pose) -> np.ndarray:
        return pose.apply(self.corners)

    def transformed(self, pose: Pose, id: str | None = None) -> "TriMesh":
        """A new mesh with vertices mapped through `pose`."""
        return TriMesh(id or self.id, pose.apply(self.vertices), self.triangles)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Surface samples in the source mesh's local frame."""
    points: np.ndarray
    source_id: str
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(np.array(self.points, dtype=np.float64).reshape(-1, 3)))
        object.__setattr__(self, "faces", _frozen(np.array(self.faces, dtype=np.int64).reshape(-1)))

    @property
    def k(self) -> int:
        return len(self.points)
