"""
Mesh loading, export and surface sampling.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from app.exceptions import EmptyInputError, MeshParseError
from app.models.geometry import Aabb, PointCloud, TriMesh


logger = logging.getLogger(__name__)


def _face_index(token: str, vertex_count: int, line_number: int) -> int:
    """Resolve one OBJ face token ('7', '7/2', '7//3', '-1') to a 0-based index."""
    head = token.split("/")[0]
    try:
        index = int(head)
    except ValueError:
        raise MeshParseError(f"line {line_number}: bad face index '{token}'")
    if index == 0:
        raise MeshParseError(f"line {line_number}: face index 0 is invalid (OBJ indices are 1-based)")
    resolved = index - 1 if index > 0 else vertex_count + index
    if not 0 <= resolved < vertex_count:
        raise MeshParseError(f"line {line_number}: face index {index} out of range")
    return resolved


def parse_obj(text: str, mesh_id: str) -> TriMesh:
    """
    Parse the v/f subset of Wavefront OBJ.

    Polygonal faces are fan-triangulated; every other record type is ignored.
    """
    vertices = []
    triangles = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshParseError(f"line {line_number}: vertex needs three coordinates")
            try:
                vertices.append([float(value) for value in parts[1:4]])
            except ValueError:
                raise MeshParseError(f"line {line_number}: bad vertex '{raw.strip()}'")
        elif parts[0] == "f":
            if len(parts) < 4:
                raise MeshParseError(f"line {line_number}: face needs at least three vertices")
            indices = [_face_index(token, len(vertices), line_number) for token in parts[1:]]
            for i in range(1, len(indices) - 1):
                triangles.append([indices[0], indices[i], indices[i + 1]])
    if not vertices:
        raise MeshParseError(f"mesh '{mesh_id}' has no vertices")
    return TriMesh(mesh_id, np.array(vertices), np.array(triangles, dtype=np.int64).reshape(-1, 3))


def load_mesh(path: Path | str, id: Optional[str] = None) -> TriMesh:
    """
    Load an OBJ file into a TriMesh.

    Args:
        path: OBJ file path
        id: Mesh identifier, defaults to the file stem

    Returns:
        Validated TriMesh with its `closed` flag computed
    """
    path = Path(path)
    mesh = parse_obj(path.read_text(), id or path.stem)
    if not mesh.closed:
        logger.warning(f"Mesh '{mesh.id}' from {path} is not closed; containment tests will be refused")
    return mesh


def write_obj(mesh: TriMesh, path: Path | str) -> None:
    """Write a mesh as v/f OBJ records (repr floats, so reloads are exact)."""
    lines = [f"# {mesh.id}"]
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def aabb_of(mesh: TriMesh) -> Aabb:
    """Local-frame bounding box; its center is the mesh's reference center."""
    return Aabb.from_points(mesh.vertices)


def recenter(mesh: TriMesh) -> TriMesh:
    """Translate vertices so the AABB center sits at the local origin."""
    center = aabb_of(mesh).center
    if np.allclose(center, 0.0, atol=1e-15):
        return mesh
    return TriMesh(mesh.id, mesh.vertices - center, mesh.triangles)


def sample_surface(mesh: TriMesh, k: int, seed: int) -> PointCloud:
    """
    Draw k points uniformly over the surface.

    Triangles are chosen proportionally to area and points are
    barycentric-uniform within a triangle. All randomness comes from one
    (k, 3) uniform block, so the first k points of a larger draw with the same
    seed are exactly the k-point draw.
    """
    if k < 1:
        raise ValueError(f"sample count must be >= 1, got {k}")
    if len(mesh.triangles) == 0 or mesh.surface_area <= 0.0:
        raise EmptyInputError(f"mesh '{mesh.id}' has no surface to sample")
    rng = np.random.default_rng(seed)
    u = rng.random((k, 3))
    cdf = np.cumsum(mesh.areas)
    faces = np.minimum(np.searchsorted(cdf, u[:, 0] * cdf[-1], side="right"), len(cdf) - 1)
    root = np.sqrt(u[:, 1])
    weights = np.stack([1.0 - root, root * (1.0 - u[:, 2]), root * u[:, 2]], axis=1)
    points = np.einsum("kj,kjd->kd", weights, mesh.corners[faces])
    return PointCloud(points, mesh.id, faces)
