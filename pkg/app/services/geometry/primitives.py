"""
Procedural desk-scale object library.

Every generator returns a watertight TriMesh together with a convex
decomposition derived from its construction (rectangles of a prism, angular
wedges of a shell of revolution), so the GJK baseline has decompositions
without an external decomposition tool.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.exceptions import DegenerateMeshError, EmptyInputError
from app.models.convex import ConvexSet, qhull
from app.models.geometry import TriMesh
from app.services.geometry.mesh import aabb_of, load_mesh
from app.services.gjk import convex_hull, load_decomposition


logger = logging.getLogger(__name__)

SEGMENTS = 24
WEDGES = 8


@dataclass(frozen=True, eq=False)
class ObjectEntry:
    """A mesh, its convex decomposition and whether the mesh itself is convex."""
    mesh: TriMesh
    decomposition: ConvexSet
    convex: bool

    @property
    def id(self) -> str:
        return self.mesh.id


def signed_volume(mesh: TriMesh) -> float:
    c = mesh.corners
    return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


def is_convex(mesh: TriMesh, tolerance: float = 1e-6) -> bool:
    """A closed mesh is convex when its volume equals its hull's volume."""
    if not mesh.closed:
        return False
    hull_volume = qhull(mesh.vertices).volume
    return abs(hull_volume - abs(signed_volume(mesh))) <= tolerance * hull_volume


def _outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Flip the whole winding if it encloses negative volume."""
    c = vertices[triangles]
    if np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() < 0:
        return triangles[:, ::-1].copy()
    return triangles


def triangulate_polygon(polygon: np.ndarray) -> List[Tuple[int, int, int]]:
    """Ear-clipping triangulation of a simple counter-clockwise polygon."""
    polygon = np.asarray(polygon, dtype=np.float64)
    remaining = list(range(len(polygon)))
    triangles = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(remaining) > 3:
        for k in range(len(remaining)):
            i0, i1, i2 = remaining[k - 1], remaining[k], remaining[(k + 1) % len(remaining)]
            a, b, c = polygon[i0], polygon[i1], polygon[i2]
            if cross(a, b, c) <= 1e-15:
                continue
            blocked = any(
                cross(a, b, polygon[j]) >= 0 and cross(b, c, polygon[j]) >= 0 and cross(c, a, polygon[j]) >= 0
                for j in remaining if j not in (i0, i1, i2)
            )
            if blocked:
                continue
            triangles.append((i0, i1, i2))
            remaining.pop(k)
            break
        else:
            raise DegenerateMeshError("polygon is not simple or not counter-clockwise")
    triangles.append(tuple(remaining))
    return triangles


def box(id: str, size: Sequence[float]) -> Tuple[TriMesh, List[np.ndarray]]:
    bits = np.array([[(i >> k) & 1 for k in range(3)] for i in range(8)], dtype=np.float64)
    vertices = (bits - 0.5) * np.asarray(size, dtype=np.float64)
    triangles = np.array([
        [0, 2, 3], [0, 3, 1],
        [4, 5, 7], [4, 7, 6],
        [0, 1, 5], [0, 5, 4],
        [2, 6, 7], [2, 7, 3],
        [0, 4, 6], [0, 6, 2],
        [1, 3, 7], [1, 7, 5],
    ])
    return TriMesh(id, vertices, triangles), [vertices]


def prism(id: str, polygon: Sequence[Sequence[float]], height: float,
          parts: Sequence[Sequence[Sequence[float]]] = ()) -> Tuple[TriMesh, List[np.ndarray]]:
    """
    Extrude a counter-clockwise polygon along z.

    Args:
        polygon: (n, 2) outline
        height: extrusion length
        parts: convex 2D pieces covering the outline; defaults to the outline
    """
    polygon = np.asarray(polygon, dtype=np.float64)
    n = len(polygon)
    bottom = np.column_stack([polygon, np.zeros(n)])
    top = np.column_stack([polygon, np.full(n, height)])
    vertices = np.vstack([bottom, top])
    triangles = []
    for a, b, c in triangulate_polygon(polygon):
        triangles.append((a + n, b + n, c + n))
        triangles.append((c, b, a))
    for i in range(n):
        j = (i + 1) % n
        triangles.append((i, j, j + n))
        triangles.append((i, j + n, i + n))
    hull_points = []
    for piece in (parts or [polygon]):
        piece = np.asarray(piece, dtype=np.float64)
        hull_points.append(np.vstack([
            np.column_stack([piece, np.zeros(len(piece))]),
            np.column_stack([piece, np.full(len(piece), height)]),
        ]))
    return TriMesh(id, vertices, np.array(triangles)), hull_points


def _rect(x0: float, y0: float, x1: float, y1: float) -> List[Tuple[float, float]]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def revolve(id: str, profile: Sequence[Tuple[float, float]], segments: int = SEGMENTS):
    """
    Surface of revolution of an (r, z) profile about the z axis.

    Profile endpoints with r == 0 become single pole vertices, so a profile
    running from the axis back to the axis yields a closed surface.

    Returns:
        (mesh, rings) where rings[p] holds the world points of profile entry p
    """
    theta = 2 * np.pi * np.arange(segments) / segments
    vertices, rings, ring_index = [], [], []
    for r, z in profile:
        start = len(vertices)
        if r == 0:
            vertices.append([0.0, 0.0, z])
            ring_index.append(np.full(segments, start))
        else:
            vertices.extend(np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(segments, z)]).tolist())
            ring_index.append(start + np.arange(segments))
        rings.append(np.array(vertices[start:]))
    triangles = []
    for p in range(len(profile) - 1):
        a, b = ring_index[p], ring_index[p + 1]
        a_pole, b_pole = profile[p][0] == 0, profile[p + 1][0] == 0
        for j in range(segments):
            k = (j + 1) % segments
            if not a_pole:
                triangles.append((a[j], a[k], b[k]))
            if not b_pole:
                triangles.append((a[j], b[k], b[j]))
    vertices = np.array(vertices)
    return TriMesh(id, vertices, _outward(vertices, np.array(triangles))), rings


def _wedges(rings: Sequence[np.ndarray], entries: Sequence[int], wedges: int = WEDGES) -> List[np.ndarray]:
    """Angular sectors of the given profile rings, shared boundary rings included."""
    segments = max(len(rings[p]) for p in entries)
    step = segments // wedges
    parts = []
    for w in range(wedges):
        columns = [(w * step + j) % segments for j in range(step + 1)]
        parts.append(np.vstack([rings[p][columns] if len(rings[p]) > 1 else rings[p] for p in entries]))
    return parts


def torus(id: str, major: float, minor: float, segments: int = SEGMENTS, tube: int = 12):
    u = 2 * np.pi * np.arange(segments) / segments
    v = 2 * np.pi * np.arange(tube) / tube
    uu, vv = np.meshgrid(u, v, indexing="ij")
    radius = major + minor * np.cos(vv)
    vertices = np.stack([radius * np.cos(uu), radius * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    triangles = []
    for i in range(segments):
        for j in range(tube):
            a, b = i * tube + j, ((i + 1) % segments) * tube + j
            c, d = ((i + 1) % segments) * tube + (j + 1) % tube, i * tube + (j + 1) % tube
            triangles.extend([(a, b, c), (a, c, d)])
    mesh = TriMesh(id, vertices, _outward(vertices, np.array(triangles)))
    grid = vertices.reshape(segments, tube, 3)
    step = segments // WEDGES
    parts = [np.vstack([grid[(w * step + j) % segments] for j in range(step + 1)]) for w in range(WEDGES)]
    return mesh, parts


def _sphere_profile(radius: float, z0: float = 0.0, latitude: int = 10) -> List[Tuple[float, float]]:
    phi = np.linspace(0.0, np.pi, latitude + 1)
    profile = [(float(radius * np.sin(p)), float(z0 - radius * np.cos(p))) for p in phi]
    profile[0] = (0.0, z0 - radius)
    profile[-1] = (0.0, z0 + radius)
    return profile


def _capsule_profile(radius: float, length: float, latitude: int = 8) -> List[Tuple[float, float]]:
    phi = np.linspace(0.0, np.pi / 2, latitude // 2 + 1)
    lower = [(float(radius * np.sin(p)), float(-radius * np.cos(p))) for p in phi]
    upper = [(r, length - z) for r, z in reversed(lower)]
    lower[0] = (0.0, -radius)
    upper[-1] = (0.0, length + radius)
    return lower + upper


def _shell(id: str, profile: Sequence[Tuple[float, float]], bottom: Sequence[int], wall: Sequence[int]):
    mesh, rings = revolve(id, profile)
    parts = [np.vstack([rings[p] for p in bottom])] + _wedges(rings, wall)
    return mesh, parts


def _solid(id: str, profile: Sequence[Tuple[float, float]]):
    mesh, _ = revolve(id, profile)
    return mesh, [mesh.vertices]


def object_entry(mesh: TriMesh, parts: List[np.ndarray]) -> ObjectEntry:
    """Recenter mesh and parts on the mesh AABB center."""
    center = aabb_of(mesh).center
    mesh = TriMesh(mesh.id, mesh.vertices - center, mesh.triangles)
    decomposition = ConvexSet(tuple(convex_hull(part - center) for part in parts), mesh.id)
    return ObjectEntry(mesh, decomposition, is_convex(mesh))


@lru_cache(maxsize=1)
def _bundled() -> Tuple[ObjectEntry, ...]:
    u_outline = [(0, 0), (0.09, 0), (0.09, 0.07), (0.06, 0.07), (0.06, 0.025), (0.03, 0.025), (0.03, 0.07), (0, 0.07)]
    t_outline = [(0.03, 0), (0.06, 0), (0.06, 0.05), (0.09, 0.05), (0.09, 0.08), (0, 0.08), (0, 0.05), (0.03, 0.05)]
    l_outline = [(0, 0), (0.10, 0), (0.10, 0.03), (0.03, 0.03), (0.03, 0.08), (0, 0.08)]
    hexagon = [(0.035 * np.cos(a), 0.035 * np.sin(a)) for a in np.arange(6) * np.pi / 3]
    built = [
        box("box_cube", (0.06, 0.06, 0.06)),
        box("box_flat", (0.12, 0.08, 0.03)),
        box("box_long", (0.16, 0.04, 0.04)),
        _solid("cylinder_can", [(0.0, 0.0), (0.035, 0.0), (0.035, 0.10), (0.0, 0.10)]),
        _solid("cylinder_disc", [(0.0, 0.0), (0.05, 0.0), (0.05, 0.02), (0.0, 0.02)]),
        _solid("cone", [(0.0, 0.0), (0.04, 0.0), (0.0, 0.08)]),
        _solid("sphere_ball", _sphere_profile(0.04)),
        _solid("capsule", _capsule_profile(0.02, 0.06)),
        prism("prism_hex", hexagon, 0.05),
        prism("prism_wedge", [(0, 0), (0.08, 0), (0, 0.05)], 0.04),
        prism("l_block", l_outline, 0.03, [_rect(0, 0, 0.10, 0.03), _rect(0, 0.03, 0.03, 0.08)]),
        prism("u_block", u_outline, 0.03,
              [_rect(0, 0, 0.09, 0.025), _rect(0, 0.025, 0.03, 0.07), _rect(0.06, 0.025, 0.09, 0.07)]),
        prism("t_block", t_outline, 0.03, [_rect(0.03, 0, 0.06, 0.05), _rect(0, 0.05, 0.09, 0.08)]),
        torus("torus_ring", 0.045, 0.012),
        torus("torus_fat", 0.04, 0.02),
        _shell("bowl_wide", [(0.0, 0.0), (0.04, 0.0), (0.08, 0.05), (0.074, 0.05), (0.036, 0.006), (0.0, 0.006)],
               bottom=[0, 1, 4, 5], wall=[1, 2, 3, 4]),
        _shell("bowl_deep", [(0.0, 0.0), (0.035, 0.0), (0.06, 0.07), (0.054, 0.07), (0.031, 0.006), (0.0, 0.006)],
               bottom=[0, 1, 4, 5], wall=[1, 2, 3, 4]),
        _shell("plate", [(0.0, 0.0), (0.06, 0.0), (0.09, 0.015), (0.085, 0.015), (0.057, 0.004), (0.0, 0.004)],
               bottom=[0, 1, 4, 5], wall=[1, 2, 3, 4]),
        _shell("cup_mug", [(0.0, 0.0), (0.04, 0.0), (0.04, 0.09), (0.035, 0.09), (0.035, 0.006), (0.0, 0.006)],
               bottom=[0, 1, 4, 5], wall=[1, 2, 3, 4]),
        _shell("cup_tall", [(0.0, 0.0), (0.03, 0.0), (0.033, 0.12), (0.029, 0.12), (0.026, 0.005), (0.0, 0.005)],
               bottom=[0, 1, 4, 5], wall=[1, 2, 3, 4]),
    ]
    return tuple(object_entry(mesh, parts) for mesh, parts in built)


def bundled_objects() -> Dict[str, ObjectEntry]:
    """The bundled desk-scale object set, keyed by id, every mesh recentered and closed."""
    return {entry.id: entry for entry in _bundled()}


def load_object_dir(path: Path | str) -> Dict[str, ObjectEntry]:
    """
    Load every `*.obj` in a directory; a sibling `<stem>.hulls` sidecar
    supplies the decomposition, otherwise the single hull of the mesh is used.
    """
    path = Path(path)
    objects = {}
    for obj_path in sorted(path.glob("*.obj")):
        mesh = load_mesh(obj_path)
        center = aabb_of(mesh).center
        mesh = TriMesh(mesh.id, mesh.vertices - center, mesh.triangles)
        sidecar = obj_path.with_suffix(".hulls")
        if sidecar.exists():
            loaded = load_decomposition(sidecar, mesh.id)
            decomposition = ConvexSet(tuple(convex_hull(h.vertices - center) for h in loaded.hulls), mesh.id)
        else:
            decomposition = ConvexSet((convex_hull(mesh),), mesh.id)
        objects[mesh.id] = ObjectEntry(mesh, decomposition, is_convex(mesh))
    if not objects:
        raise EmptyInputError(f"no .obj files in {path}")
    logger.info(f"Loaded {len(objects)} objects from {path}")
    return objects


def object_set(objects_dir: Path | str | None = None) -> Dict[str, ObjectEntry]:
    """External objects when a directory is given, otherwise the bundled set."""
    return load_object_dir(objects_dir) if objects_dir else bundled_objects()
