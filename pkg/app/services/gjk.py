"""
Uniform-computational-flow GJK over convex hulls and convex decompositions.

Every query in a batch runs the same instruction sequence: a fixed number of
simplex updates, support points by brute max-dot, and a distance
sub-algorithm that evaluates all fifteen sub-simplices of the current
tetrahedron and picks the answer by mask. Convergence and intersection are
recorded as flags that freeze the state; they never shorten the loop.
"""
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.exceptions import DegenerateHullError, EmptyInputError, MeshParseError
from app.models.convex import ConvexHull, ConvexSet, GjkConfig, qhull
from app.models.geometry import PointCloud, Pose, TriMesh


logger = logging.getLogger(__name__)

TOUCH_TOLERANCE = 1e-9
CONVERGENCE_TOLERANCE = 1e-12
SUBSETS = [s for k in range(1, 5) for s in itertools.combinations(range(4), k)]


def convex_hull(points: Union[PointCloud, TriMesh, np.ndarray]) -> ConvexHull:
    """
    Convex hull of a point set, mesh vertex set or point cloud.

    Raises:
        DegenerateHullError: fewer than four points or coplanar input
    """
    if isinstance(points, PointCloud):
        points = points.points
    elif isinstance(points, TriMesh):
        points = points.vertices
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return ConvexHull(points[np.sort(qhull(points).vertices)])


def hull_mesh(hull: ConvexHull, id: str = "hull") -> TriMesh:
    """Triangulated hull surface, usable by the exact oracle."""
    return TriMesh(id, hull.vertices, hull.faces)


def cap_hull(hull: ConvexHull, max_triangles: int) -> ConvexHull:
    """
    Reduce a hull to at most max_triangles faces by keeping a farthest-point
    subset of its vertices.
    """
    if hull.triangle_count <= max_triangles:
        return hull
    vertices = hull.vertices
    keep = max(4, max_triangles // 2 + 2)
    while True:
        chosen = [int(np.argmax(np.linalg.norm(vertices - vertices.mean(axis=0), axis=1)))]
        gap = np.linalg.norm(vertices - vertices[chosen[0]], axis=1)
        while len(chosen) < keep:
            nxt = int(np.argmax(gap))
            chosen.append(nxt)
            gap = np.minimum(gap, np.linalg.norm(vertices - vertices[nxt], axis=1))
        reduced = convex_hull(vertices[sorted(chosen)])
        if reduced.triangle_count <= max_triangles or keep == 4:
            return reduced
        keep -= 1


def coarsen(convex_set: ConvexSet, max_parts: int) -> ConvexSet:
    """Merge consecutive parts (hull of their union) until at most max_parts remain."""
    if len(convex_set) <= max_parts:
        return convex_set
    groups = np.array_split(np.arange(len(convex_set)), max_parts)
    hulls = tuple(convex_hull(np.vstack([convex_set.hulls[i].vertices for i in group])) for group in groups)
    return ConvexSet(hulls, convex_set.source_id)


def prepare_set(convex_set: ConvexSet, cfg: GjkConfig) -> ConvexSet:
    """Apply the decomposition-size and triangle caps of a configuration."""
    coarse = coarsen(convex_set, cfg.max_decomposition)
    return ConvexSet(tuple(cap_hull(h, cfg.max_triangles_per_hull) for h in coarse.hulls), coarse.source_id)


def load_decomposition(path: Path | str, source_id: str | None = None) -> ConvexSet:
    """
    Read a decomposition sidecar: blocks introduced by a `hull` line followed
    by `v x y z` lines.
    """
    path = Path(path)
    blocks: List[List[List[float]]] = []
    for line_number, raw in enumerate(path.read_text().splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "hull":
            blocks.append([])
        elif parts[0] == "v":
            if not blocks:
                raise MeshParseError(f"{path}:{line_number}: vertex before the first 'hull' line")
            try:
                blocks[-1].append([float(value) for value in parts[1:4]])
            except ValueError:
                raise MeshParseError(f"{path}:{line_number}: bad vertex '{raw.strip()}'")
        else:
            raise MeshParseError(f"{path}:{line_number}: unknown record '{parts[0]}'")
    return ConvexSet(tuple(convex_hull(np.array(block)) for block in blocks), source_id or path.stem)


def write_decomposition(convex_set: ConvexSet, path: Path | str) -> None:
    lines = [f"# {convex_set.source_id}"]
    for hull in convex_set.hulls:
        lines.append("hull")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in hull.vertices.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class GjkBatchResult:
    """Per-query GJK outputs; `lower` never exceeds the true distance."""
    lower: np.ndarray
    upper: np.ndarray
    colliding: np.ndarray
    converged: np.ndarray


def _pad(vertex_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Stack ragged vertex arrays, padding with each set's first vertex."""
    width = max(len(v) for v in vertex_sets)
    out = np.empty((len(vertex_sets), width, 3))
    for i, v in enumerate(vertex_sets):
        out[i, :len(v)] = v
        out[i, len(v):] = v[0]
    return out


def _support(verts_a: np.ndarray, verts_b: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Support point of A - B in `direction`, batched."""
    rows = np.arange(len(direction))
    ia = np.argmax(np.einsum("bnd,bd->bn", verts_a, direction), axis=1)
    ib = np.argmax(np.einsum("bnd,bd->bn", verts_b, -direction), axis=1)
    return verts_a[rows, ia] - verts_b[rows, ib]


def _closest_in_simplex(simplex: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closest point to the origin of conv(simplex[mask]) and the smallest
    supporting subset, computed for all fifteen subsets unconditionally.
    """
    batch = len(simplex)
    best_score = np.full(batch, np.inf)
    best_point = np.zeros((batch, 3))
    best_mask = np.zeros((batch, 4), dtype=bool)
    for subset in SUBSETS:
        idx = list(subset)
        pts = simplex[:, idx]
        present = mask[:, idx].all(axis=1)
        if len(idx) == 1:
            point = pts[:, 0]
            valid = present
        else:
            origin = pts[:, 0]
            d = pts[:, 1:] - origin[:, None, :]
            gram = np.einsum("bid,bjd->bij", d, d)
            rhs = -np.einsum("bid,bd->bi", d, origin)
            scale = np.prod(np.maximum(np.einsum("bii->bi", gram), 1e-300), axis=1)
            regular = np.abs(np.linalg.det(gram)) > 1e-12 * scale
            safe_gram = np.where(regular[:, None, None], gram, np.eye(len(idx) - 1))
            lam = np.linalg.solve(safe_gram, rhs[..., None])[..., 0]
            bary = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
            point = origin + np.einsum("bi,bid->bd", lam, d)
            valid = present & regular & np.all(bary >= -1e-12, axis=1)
        score = np.einsum("bd,bd->b", point, point) * (1.0 + 1e-9 * len(idx))
        better = valid & (score < best_score)
        best_score = np.where(better, score, best_score)
        best_point = np.where(better[:, None], point, best_point)
        subset_mask = np.zeros(4, dtype=bool)
        subset_mask[idx] = True
        best_mask = np.where(better[:, None], subset_mask, best_mask)
    return best_point, best_mask


def ucf_gjk(verts_a: np.ndarray, verts_b: np.ndarray, iterations: int) -> GjkBatchResult:
    """
    Run exactly `iterations` GJK simplex updates on a batch of world-space
    vertex arrays (B, N, 3).
    """
    batch = len(verts_a)
    rows = np.arange(batch)
    v = verts_a[:, 0] - verts_b[:, 0]
    simplex = np.zeros((batch, 4, 3))
    mask = np.zeros((batch, 4), dtype=bool)
    lower = np.zeros(batch)
    intersecting = np.zeros(batch, dtype=bool)
    converged = np.zeros(batch, dtype=bool)
    for _ in range(iterations):
        active = ~(intersecting | converged)
        w = _support(verts_a, verts_b, -v)
        vv = np.einsum("bd,bd->b", v, v)
        vw = np.einsum("bd,bd->b", v, w)
        norm = np.sqrt(vv)
        bound = np.where(norm > TOUCH_TOLERANCE, vw / np.where(norm > 0, norm, 1.0), 0.0)
        lower = np.where(active, np.maximum(lower, bound), lower)
        done_now = active & (vv - vw <= CONVERGENCE_TOLERANCE * np.maximum(vv, 1e-300))

        slot = np.argmin(mask, axis=1)
        grown = simplex.copy()
        grown[rows, slot] = w
        grown_mask = mask.copy()
        grown_mask[rows, slot] = True
        new_v, new_mask = _closest_in_simplex(grown, grown_mask)

        step = active & ~done_now
        simplex = np.where(step[:, None, None], grown, simplex)
        mask = np.where(step[:, None], new_mask, mask)
        v = np.where(step[:, None], new_v, v)
        converged = converged | done_now
        intersecting = intersecting | (step & (np.linalg.norm(new_v, axis=1) <= TOUCH_TOLERANCE))
    upper = np.where(intersecting, 0.0, np.linalg.norm(v, axis=1))
    lower = np.where(intersecting, 0.0, np.minimum(lower, upper))
    colliding = ~(lower > TOUCH_TOLERANCE)
    return GjkBatchResult(lower, upper, colliding, converged | intersecting)


def gjk_boolean(h1: ConvexHull, q1: Pose, h2: ConvexHull, q2: Pose, cfg: GjkConfig) -> bool:
    """Collision verdict after exactly cfg.max_iterations simplex updates; touching counts."""
    result = ucf_gjk(q1.apply(h1.vertices)[None], q2.apply(h2.vertices)[None], cfg.max_iterations)
    return bool(result.colliding[0])


def gjk_distance(h1: ConvexHull, q1: Pose, h2: ConvexHull, q2: Pose, cfg: GjkConfig) -> float:
    """Certified lower bound on the hull distance (0 when colliding)."""
    result = ucf_gjk(q1.apply(h1.vertices)[None], q2.apply(h2.vertices)[None], cfg.max_iterations)
    return float(result.lower[0])


@dataclass
class BatchVerdicts:
    verdicts: List[bool]
    elapsed: float


def _flatten(pairs: Sequence[Tuple[ConvexSet, Pose, ConvexSet, Pose]]):
    """World vertices of every hull pair, with the owning item index."""
    verts_a, verts_b, owner = [], [], []
    for item, (s1, q1, s2, q2) in enumerate(pairs):
        world_1 = [q1.apply(h.vertices) for h in s1.hulls]
        world_2 = [q2.apply(h.vertices) for h in s2.hulls]
        for wa in world_1:
            for wb in world_2:
                verts_a.append(wa)
                verts_b.append(wb)
                owner.append(item)
    return verts_a, verts_b, np.array(owner)


def _verdicts(verts_a: List[np.ndarray], verts_b: List[np.ndarray], owner: np.ndarray, count: int, cfg: GjkConfig) -> np.ndarray:
    pa, pb = _pad(verts_a), _pad(verts_b)
    # Broad phase as a whole-batch mask: every pair still runs the full GJK.
    overlap = np.all(pa.min(axis=1) - TOUCH_TOLERANCE <= pb.max(axis=1), axis=1) & \
        np.all(pb.min(axis=1) - TOUCH_TOLERANCE <= pa.max(axis=1), axis=1)
    hits = ucf_gjk(pa, pb, cfg.max_iterations).colliding & overlap
    return np.bincount(owner, weights=hits.astype(np.float64), minlength=count) > 0


def set_boolean(s1: ConvexSet, q1: Pose, s2: ConvexSet, q2: Pose, cfg: GjkConfig) -> bool:
    """OR over all hull pairs of two decompositions, every pair evaluated."""
    for convex_set in (s1, s2):
        if len(convex_set) > cfg.max_decomposition:
            raise DegenerateHullError(
                f"decomposition '{convex_set.source_id}' has {len(convex_set)} parts, limit {cfg.max_decomposition}")
    verts_a, verts_b, owner = _flatten([(s1, q1, s2, q2)])
    return bool(_verdicts(verts_a, verts_b, owner, 1, cfg)[0])


def batch_boolean(
    pairs: Sequence[Tuple[ConvexSet, Pose, ConvexSet, Pose]],
    cfg: GjkConfig,
    threads: int | None = None,
) -> BatchVerdicts:
    """
    Verdicts for a batch of decomposition pairs plus the wall-clock seconds
    of the batch itself (thread-pool startup excluded).
    """
    if not pairs:
        raise EmptyInputError("batch_boolean needs a nonempty batch")
    threads = threads or settings.BENCH_THREADS
    chunks = [list(chunk) for chunk in np.array_split(np.arange(len(pairs)), min(threads, len(pairs)))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        start = time.perf_counter()

        def run(chunk: List[int]) -> np.ndarray:
            verts_a, verts_b, owner = _flatten([pairs[i] for i in chunk])
            return _verdicts(verts_a, verts_b, owner, len(chunk), cfg)

        results = list(pool.map(run, chunks))
        elapsed = time.perf_counter() - start
    verdicts = np.concatenate(results)
    return BatchVerdicts([bool(v) for v in verdicts], elapsed)
