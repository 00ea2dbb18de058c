"""
Exact collision and distance oracle over triangle meshes.

The narrow phase works on triangle pairs: two triangles are at distance
min(vertex-to-triangle, edge-to-edge) unless an edge of one pierces the
other, in which case they intersect. A median-split AABB tree prunes the
pairs that can matter; the all-pairs path is kept for cross-checking.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from app.config import settings
from app.exceptions import EmptyInputError
from app.models.geometry import Pose, TriMesh
from app.services.geometry.mesh import sample_surface


logger = logging.getLogger(__name__)

TOUCH_TOLERANCE = 1e-9
PAIR_CHUNK = 20000
RAY_CHUNK = 400_000
# Three fixed, mutually skewed ray directions for the parity vote.
RAY_DIRECTIONS = np.array([
    [0.43, 0.57, 0.70],
    [-0.71, 0.31, 0.63],
    [0.27, -0.83, 0.49],
])
RAY_DIRECTIONS = RAY_DIRECTIONS / np.linalg.norm(RAY_DIRECTIONS, axis=1, keepdims=True)
EDGE_INDEX = np.array([[0, 1], [1, 2], [2, 0]])


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def _safe(denominator: np.ndarray) -> np.ndarray:
    return np.where(np.abs(denominator) > 1e-300, denominator, 1.0)


def closest_point_on_triangle(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Closest point to p on triangle abc, vectorised over leading axes.
    Voronoi-region classification, each region resolved by mask.
    """
    ab, ac, ap = b - a, c - a, p - a
    bp, cp = p - b, p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    result = np.empty(np.broadcast_shapes(p.shape, a.shape))
    done = np.zeros(result.shape[:-1], dtype=bool)

    def assign(mask, value):
        nonlocal done
        mask = mask & ~done
        result[mask] = np.broadcast_to(value, result.shape)[mask]
        done = done | mask

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = (d1 / _safe(d1 - d3))[..., None]
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = (d2 / _safe(d2 - d6))[..., None]
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w * ac)
        w = ((d4 - d3) / _safe((d4 - d3) + (d5 - d6)))[..., None]
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w * (c - b))
        denom = 1.0 / _safe(va + vb + vc)
        interior = a + ab * (vb * denom)[..., None] + ac * (vc * denom)[..., None]
        assign(np.ones_like(done), interior)
    return result


def closest_points_on_segments(p1, q1, p2, q2) -> Tuple[np.ndarray, np.ndarray]:
    """Closest points between segments p1q1 and p2q2 (non-degenerate), vectorised."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e = _dot(d1, d1), _dot(d2, d2)
    b, c, f = _dot(d1, d2), _dot(d1, r), _dot(d2, r)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-14 * a * e, np.clip((b * f - c * e) / _safe(denom), 0.0, 1.0), 0.0)
        t = (b * s + f) / _safe(e)
        s = np.where(t < 0.0, np.clip(-c / _safe(a), 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / _safe(a), 0.0, 1.0), s))
        t = np.clip(t, 0.0, 1.0)
    return p1 + d1 * s[..., None], p2 + d2 * t[..., None]


def segment_triangle_hits(p, q, a, b, c) -> Tuple[np.ndarray, np.ndarray]:
    """Möller-Trumbore segment/triangle crossing; parallel segments never hit."""
    direction = q - p
    e1, e2 = b - a, c - a
    h = np.cross(direction, e2)
    det = _dot(e1, h)
    valid = np.abs(det) > 1e-20
    inv = 1.0 / _safe(det)
    s = p - a
    u = _dot(s, h) * inv
    qv = np.cross(s, e1)
    v = _dot(direction, qv) * inv
    t = _dot(e2, qv) * inv
    hit = valid & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)
    return hit, p + direction * t[..., None]


def triangle_pair_distance(tri_a: np.ndarray, tri_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Distance and witness points for P triangle pairs.

    Args:
        tri_a, tri_b: (P, 3, 3) world-space triangle corners

    Returns:
        (distance (P,), point on a (P, 3), point on b (P, 3)); distance is 0
        with the crossing point as witness when the triangles intersect.
    """
    count = len(tri_a)
    dists = []
    wit_a = []
    wit_b = []

    # Vertices of a against triangle b and vice versa.
    verts_a = tri_a
    on_b = closest_point_on_triangle(verts_a, tri_b[:, None, 0], tri_b[:, None, 1], tri_b[:, None, 2])
    dists.append(np.linalg.norm(verts_a - on_b, axis=-1))
    wit_a.append(verts_a)
    wit_b.append(on_b)
    verts_b = tri_b
    on_a = closest_point_on_triangle(verts_b, tri_a[:, None, 0], tri_a[:, None, 1], tri_a[:, None, 2])
    dists.append(np.linalg.norm(verts_b - on_a, axis=-1))
    wit_a.append(on_a)
    wit_b.append(verts_b)

    # Edge against edge: 9 combinations.
    edges_a = tri_a[:, EDGE_INDEX]
    edges_b = tri_b[:, EDGE_INDEX]
    ea = np.broadcast_to(edges_a[:, :, None], (count, 3, 3, 2, 3)).reshape(count, 9, 2, 3)
    eb = np.broadcast_to(edges_b[:, None, :], (count, 3, 3, 2, 3)).reshape(count, 9, 2, 3)
    ca, cb = closest_points_on_segments(ea[:, :, 0], ea[:, :, 1], eb[:, :, 0], eb[:, :, 1])
    dists.append(np.linalg.norm(ca - cb, axis=-1))
    wit_a.append(ca)
    wit_b.append(cb)

    # Edges piercing the other triangle.
    hit_ab, point_ab = segment_triangle_hits(
        edges_a[:, :, 0], edges_a[:, :, 1], tri_b[:, None, 0], tri_b[:, None, 1], tri_b[:, None, 2])
    hit_ba, point_ba = segment_triangle_hits(
        edges_b[:, :, 0], edges_b[:, :, 1], tri_a[:, None, 0], tri_a[:, None, 1], tri_a[:, None, 2])
    dists.append(np.where(hit_ab, 0.0, np.inf))
    wit_a.append(point_ab)
    wit_b.append(point_ab)
    dists.append(np.where(hit_ba, 0.0, np.inf))
    wit_a.append(point_ba)
    wit_b.append(point_ba)

    all_d = np.concatenate(dists, axis=1)
    all_a = np.concatenate(wit_a, axis=1)
    all_b = np.concatenate(wit_b, axis=1)
    best = np.argmin(all_d, axis=1)
    rows = np.arange(count)
    return all_d[rows, best], all_a[rows, best], all_b[rows, best]


class TriangleBvh:
    """Median-split binary AABB tree over triangles (world-space corners)."""

    def __init__(self, corners: np.ndarray, leaf_size: int = 8):
        self.corners = corners
        centroids = corners.mean(axis=1)
        tri_lo = corners.min(axis=1)
        tri_hi = corners.max(axis=1)
        self.lo: List[np.ndarray] = []
        self.hi: List[np.ndarray] = []
        self.children: List[Optional[Tuple[int, int]]] = []
        self.members: List[Optional[np.ndarray]] = []

        def build(indices: np.ndarray) -> int:
            node = len(self.lo)
            self.lo.append(tri_lo[indices].min(axis=0))
            self.hi.append(tri_hi[indices].max(axis=0))
            self.children.append(None)
            self.members.append(None)
            if len(indices) <= leaf_size:
                self.members[node] = indices
                return node
            spread = centroids[indices].max(axis=0) - centroids[indices].min(axis=0)
            axis = int(np.argmax(spread))
            order = indices[np.argsort(centroids[indices, axis], kind="stable")]
            half = len(order) // 2
            left = build(order[:half])
            right = build(order[half:])
            self.children[node] = (left, right)
            return node

        build(np.arange(len(corners)))

    def size(self, node: int) -> float:
        return float(np.sum(self.hi[node] - self.lo[node]))


def _box_distance(lo1, hi1, lo2, hi2) -> float:
    gap = np.maximum(np.maximum(lo1 - hi2, lo2 - hi1), 0.0)
    return float(np.sqrt(gap @ gap))


def candidate_pairs(a: TriangleBvh, b: TriangleBvh, max_distance: float) -> Tuple[np.ndarray, np.ndarray]:
    """Triangle index pairs whose leaf boxes lie within max_distance."""
    out_a, out_b = [], []
    stack = [(0, 0)]
    while stack:
        i, j = stack.pop()
        if _box_distance(a.lo[i], a.hi[i], b.lo[j], b.hi[j]) > max_distance:
            continue
        leaf_i, leaf_j = a.children[i] is None, b.children[j] is None
        if leaf_i and leaf_j:
            ia, ib = np.meshgrid(a.members[i], b.members[j], indexing="ij")
            out_a.append(ia.ravel())
            out_b.append(ib.ravel())
        elif leaf_j or (not leaf_i and a.size(i) >= b.size(j)):
            left, right = a.children[i]
            stack.extend([(left, j), (right, j)])
        else:
            left, right = b.children[j]
            stack.extend([(i, left), (i, right)])
    if not out_a:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(out_a), np.concatenate(out_b)


def _evaluate_pairs(corners_a, corners_b, ia, ib):
    """Minimum over the listed triangle pairs, chunked."""
    best = (np.inf, None, None)
    for start in range(0, len(ia), PAIR_CHUNK):
        sl = slice(start, start + PAIR_CHUNK)
        d, pa, pb = triangle_pair_distance(corners_a[ia[sl]], corners_b[ib[sl]])
        k = int(np.argmin(d))
        if d[k] < best[0]:
            best = (float(d[k]), pa[k], pb[k])
    return best


def closest_points_all_pairs(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose):
    """Un-pruned reference: every triangle of m1 against every triangle of m2."""
    ca, cb = m1.world_corners(q1), m2.world_corners(q2)
    ia, ib = np.meshgrid(np.arange(len(ca)), np.arange(len(cb)), indexing="ij")
    d, pa, pb = _evaluate_pairs(ca, cb, ia.ravel(), ib.ravel())
    return pa, pb, d


def closest_points(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Closest surface points between two posed meshes.

    Returns:
        (p1 on mesh 1, p2 on mesh 2, distance). Colliding pairs get distance
        0 with a witness pair: the touching points when the surfaces meet, or
        a vertex of the contained body (as both points) when one closed mesh
        sits inside the other.
    """
    ca, cb = m1.world_corners(q1), m2.world_corners(q2)
    # Nearest vertex pair bounds the surface distance from above.
    upper, _ = cKDTree(q2.apply(m2.vertices)).query(q1.apply(m1.vertices), k=1)
    bound = float(np.min(upper)) + TOUCH_TOLERANCE
    ia, ib = candidate_pairs(TriangleBvh(ca), TriangleBvh(cb), bound)
    d, pa, pb = _evaluate_pairs(ca, cb, ia, ib)
    if d > TOUCH_TOLERANCE and m1.closed and m2.closed:
        for mesh, pose, other, other_pose in ((m1, q1, m2, q2), (m2, q2, m1, q1)):
            witness = pose.apply(mesh.vertices[:1])
            if points_inside(witness, other, other_pose)[0]:
                return witness[0], witness[0].copy(), 0.0
    return pa, pb, d


def points_inside(points: np.ndarray, mesh: TriMesh, pose: Optional[Pose] = None) -> np.ndarray:
    """
    Ray-parity inside test with a majority vote over three ray directions.

    Args:
        points: (N, 3) points in world frame (or mesh frame when pose is None)
        mesh: closed mesh
        pose: mesh pose

    Returns:
        (N,) boolean mask
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    local = pose.apply_inverse(points) if pose is not None else points
    inside = np.zeros(len(local), dtype=bool)
    if len(local) == 0 or len(mesh.triangles) == 0:
        return inside
    box_lo, box_hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    candidates = np.nonzero(np.all((local >= box_lo) & (local <= box_hi), axis=1))[0]
    if len(candidates) == 0:
        return inside
    a, b, c = mesh.corners[:, 0], mesh.corners[:, 1], mesh.corners[:, 2]
    e1, e2 = b - a, c - a
    votes = np.zeros(len(candidates), dtype=np.int64)
    chunk = max(1, RAY_CHUNK // len(a))
    for direction in RAY_DIRECTIONS:
        h = np.cross(direction, e2)
        det = _dot(e1, h)
        valid = np.abs(det) > 1e-20
        inv = 1.0 / _safe(det)
        for start in range(0, len(candidates), chunk):
            p = local[candidates[start:start + chunk], None, :]
            s = p - a
            u = _dot(s, h) * inv
            qv = np.cross(s, e1)
            v = (qv @ direction) * inv
            t = _dot(e2, qv) * inv
            hits = valid & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
            votes[start:start + chunk] += hits.sum(axis=1) % 2
    inside[candidates] = votes >= 2
    return inside


def point_mesh_distance(points: np.ndarray, mesh: TriMesh, pose: Optional[Pose] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Unsigned distance from world points to the mesh surface, with the closest surface points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    corners = mesh.world_corners(pose) if pose is not None else mesh.corners
    distances = np.empty(len(points))
    closest = np.empty_like(points)
    chunk = max(1, RAY_CHUNK // (4 * len(corners)))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk, None, :]
        on = closest_point_on_triangle(p, corners[None, :, 0], corners[None, :, 1], corners[None, :, 2])
        d = np.linalg.norm(on - p, axis=-1)
        k = np.argmin(d, axis=1)
        rows = np.arange(len(k))
        distances[start:start + chunk] = d[rows, k]
        closest[start:start + chunk] = on[rows, k]
    return distances, closest


@dataclass(frozen=True)
class CollisionVerdict:
    """Exact oracle result; containment_checked is False when a mesh is open."""
    colliding: bool
    surface_contact: bool
    containment_checked: bool


def _world_boxes_overlap(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose, slack: float) -> bool:
    w1, w2 = q1.apply(m1.vertices), q2.apply(m2.vertices)
    return bool(np.all(w1.min(axis=0) - slack <= w2.max(axis=0)) and np.all(w2.min(axis=0) - slack <= w1.max(axis=0)))


def collision_verdict(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose) -> CollisionVerdict:
    """
    Exact test: any triangle pair within TOUCH_TOLERANCE, or one mesh's
    representative vertex inside the other (ray parity).
    """
    containment_checked = m1.closed and m2.closed
    if not _world_boxes_overlap(m1, q1, m2, q2, TOUCH_TOLERANCE):
        return CollisionVerdict(False, False, containment_checked)
    ca, cb = m1.world_corners(q1), m2.world_corners(q2)
    if len(ca) and len(cb):
        ia, ib = candidate_pairs(TriangleBvh(ca), TriangleBvh(cb), TOUCH_TOLERANCE)
    else:
        ia = ib = np.empty(0, dtype=np.int64)
    if len(ia):
        d, _, _ = _evaluate_pairs(ca, cb, ia, ib)
        if d <= TOUCH_TOLERANCE:
            return CollisionVerdict(True, True, containment_checked)
    if not containment_checked:
        logger.warning(f"Containment test refused for open mesh pair '{m1.id}'/'{m2.id}'; surface-only verdict")
        return CollisionVerdict(False, False, False)
    inside = bool(points_inside(q1.apply(m1.vertices[:1]), m2, q2)[0]) or \
        bool(points_inside(q2.apply(m2.vertices[:1]), m1, q1)[0])
    return CollisionVerdict(inside, False, True)


def exact_collide(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose) -> bool:
    """Ground-truth collision label for a posed mesh pair (symmetric)."""
    return collision_verdict(m1, q1, m2, q2).colliding


@lru_cache(maxsize=512)
def _probe_cloud(mesh: TriMesh, samples: int, seed: int) -> np.ndarray:
    return sample_surface(mesh, samples, seed).points


@dataclass(frozen=True)
class PenetrationProbe:
    """
    Sampled penetration estimate for a colliding pair.

    normal is the unit direction that moves body 1 out of body 2 (None when
    no sample landed inside); point is the mean of the penetrating samples.
    """
    depth: float
    normal: Optional[np.ndarray]
    point: Optional[np.ndarray]


def penetration_probe(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose, samples: int, seed: int = 0) -> PenetrationProbe:
    """
    Depth as the largest distance from a surface sample of one body that lies
    inside the other body to that body's surface, over both directions.
    """
    escapes = []
    depths = [0.0]
    contacts = []
    for mine, my_pose, other, other_pose, sign in ((m1, q1, m2, q2, 1.0), (m2, q2, m1, q1, -1.0)):
        if not other.closed:
            continue
        world = my_pose.apply(_probe_cloud(mine, samples, seed))
        inside = points_inside(world, other, other_pose)
        if not inside.any():
            continue
        pts = world[inside]
        dist, surface = point_mesh_distance(pts, other, other_pose)
        depths.append(float(dist.max()))
        escapes.append(sign * (surface - pts).sum(axis=0))
        contacts.append(pts)
    depth = max(depths)
    if not escapes:
        return PenetrationProbe(depth, None, None)
    escape = np.sum(escapes, axis=0)
    norm = np.linalg.norm(escape)
    normal = escape / norm if norm > 1e-15 else None
    return PenetrationProbe(depth, normal, np.concatenate(contacts).mean(axis=0))


def min_abs_sd(
    scene: Sequence[Tuple[TriMesh, Pose]],
    contact_pairs: Sequence[Tuple[int, int]],
    samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Minimum absolute signed distance over reported contact pairs.

    Colliding pairs contribute their sampled penetration depth, disjoint
    pairs (false contacts) their separation distance. Zero for an ideal
    simulator at every contact.
    """
    if not contact_pairs:
        raise EmptyInputError("min_abs_sd needs at least one contact pair")
    samples = samples or settings.SD_SAMPLES
    values = []
    for i, j in contact_pairs:
        (m1, q1), (m2, q2) = scene[i], scene[j]
        if exact_collide(m1, q1, m2, q2):
            values.append(penetration_probe(m1, q1, m2, q2, samples, seed).depth)
        else:
            values.append(closest_points(m1, q1, m2, q2)[2])
    return float(np.min(np.abs(values)))
