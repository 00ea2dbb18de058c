"""
Labelled pair synthesis.

Pairs start from disjoint random poses; a second pose is then derived by
sliding object 2 along the closest-point vector so the surface gap hits a
target drawn from |N(0, sigma)|, negated (penetration) with probability
penetrate_probability. Every emitted pair is labelled by the exact oracle.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from app.config import settings
from app.exceptions import CollidingPairError, DatasetBalanceError, EmptyInputError, PoseSamplingError
from app.models.dataset import AugmentedSample, Dataset, GenConfig, LabeledPair, Split
from app.models.geometry import Pose, TriMesh, quat_conjugate, quat_to_matrix, random_quaternion
from app.services.geometry.oracle import closest_points, exact_collide
from app.services.geometry.primitives import ObjectEntry
from app.services.manifest import manifest_hash


logger = logging.getLogger(__name__)

MAGIC = b"LOCCDATA 1\n"
GAP_TOLERANCE = 1e-9
BACKOFF_STEPS = 30
RECORD = np.dtype([
    ("id1", "<u4"), ("id2", "<u4"),
    ("q1", "<f8", (7,)), ("q2", "<f8", (7,)),
    ("y", "u1"), ("delta", "<f8"), ("gap", "<f8"),
])

Objects = Mapping[str, Union[TriMesh, ObjectEntry]]


def _meshes(objects: Objects) -> Dict[str, TriMesh]:
    return {k: (v.mesh if isinstance(v, ObjectEntry) else v) for k, v in objects.items()}


def random_pose(rng: np.random.Generator, bound: float) -> Pose:
    """Uniform translation in the cube [-bound/2, bound/2]^3, Haar-uniform rotation."""
    return Pose(random_quaternion(rng), rng.uniform(-bound / 2, bound / 2, size=3))


def sample_initial_pair(m1: TriMesh, m2: TriMesh, cfg: GenConfig, rng: np.random.Generator) -> Tuple[Pose, Pose]:
    """
    Draw poses until the pair is disjoint.

    Raises:
        PoseSamplingError: still colliding after cfg.max_attempts draws
    """
    for _ in range(cfg.max_attempts):
        q1, q2 = random_pose(rng, cfg.pose_bound), random_pose(rng, cfg.pose_bound)
        if not exact_collide(m1, q1, m2, q2):
            return q1, q2
    raise PoseSamplingError(
        f"no disjoint poses for '{m1.id}'/'{m2.id}' in {cfg.max_attempts} attempts; pose_bound {cfg.pose_bound} is too small")


def _separation(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose) -> Tuple[np.ndarray, float]:
    """Unit vector from object 2 toward object 1 and the gap."""
    p1, p2, d = closest_points(m1, q1, m2, q2)
    return (p1 - p2) / d, d


def _manipulate(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose, delta_target: float) -> Tuple[Pose, Optional[float]]:
    """Returns the new pose of object 2 and, for positive targets, its measured gap."""
    if exact_collide(m1, q1, m2, q2):
        raise CollidingPairError(f"'{m1.id}'/'{m2.id}' already collide; distance manipulation needs a gap")
    direction, gap = _separation(m1, q1, m2, q2)
    if abs(gap - delta_target) <= GAP_TOLERANCE:
        return q2, gap
    moved = q2.translated(direction * (gap - delta_target))
    if delta_target <= 0:
        return moved, None

    if not exact_collide(m1, q1, m2, moved):
        p1, p2, new_gap = closest_points(m1, q1, m2, moved)
        if abs(new_gap - delta_target) <= GAP_TOLERANCE:
            return moved, new_gap
        # One correction along the re-measured closest-point vector.
        corrected = moved.translated((p1 - p2) / new_gap * (new_gap - delta_target))
        if not exact_collide(m1, q1, m2, corrected):
            final_gap = closest_points(m1, q1, m2, corrected)[2]
            if abs(final_gap - delta_target) > 1e-4:
                logger.warning(f"Gap correction for '{m1.id}'/'{m2.id}' left {final_gap:.5f} m for target {delta_target:.5f} m")
            return corrected, final_gap
        moved = corrected

    # Non-convex pairs can collide elsewhere; back off along the original path.
    lo, hi = 0.0, gap - delta_target
    for _ in range(BACKOFF_STEPS):
        mid = 0.5 * (lo + hi)
        if exact_collide(m1, q1, m2, q2.translated(direction * mid)):
            hi = mid
        else:
            lo = mid
    safe = q2.translated(direction * lo)
    final_gap = closest_points(m1, q1, m2, safe)[2]
    logger.warning(f"Positive target {delta_target:.5f} m for '{m1.id}'/'{m2.id}' collided; backed off to gap {final_gap:.5f} m")
    return safe, final_gap


def manipulate_distance(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose, delta_target: float) -> Pose:
    """
    Slide object 2 along the closest-point vector so the surface gap becomes
    delta_target; non-positive targets produce a shallow penetration.

    Raises:
        CollidingPairError: the input pair is not disjoint
    """
    return _manipulate(m1, q1, m2, q2, delta_target)[0]


def _draw(meshes: Dict[str, TriMesh], ids: List[str], cfg: GenConfig, index: int) -> Tuple[LabeledPair, LabeledPair]:
    """One initial (disjoint) row and one manipulated row; stream seeded by (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    a, b = rng.integers(0, len(ids), size=2)
    m1, m2 = meshes[ids[a]], meshes[ids[b]]
    q1, q2 = sample_initial_pair(m1, m2, cfg, rng)
    magnitude = abs(rng.normal(0.0, cfg.delta_sigma))
    target = -magnitude if rng.random() < cfg.penetrate_probability else magnitude
    moved, gap = _manipulate(m1, q1, m2, q2, target)
    initial = LabeledPair(m1.id, m2.id, q1, q2, False, float("nan"), None)
    manipulated = LabeledPair(m1.id, m2.id, q1, moved, exact_collide(m1, q1, m2, moved), target, gap)
    return initial, manipulated


def _balance(draws: List[Tuple[LabeledPair, LabeledPair]], total: int, min_fraction: float) -> Optional[List[LabeledPair]]:
    """
    Pick `total` rows with positives capped at half; negatives come from
    manipulated rows first, then initial rows, each in draw order. None when
    positives would fall under min_fraction.
    """
    positives = [(i, 1) for i, (_, m) in enumerate(draws) if m.y]
    n_pos = min(len(positives), total // 2)
    if n_pos < int(np.ceil(min_fraction * total)):
        return None
    negatives = [(i, 1) for i, (_, m) in enumerate(draws) if not m.y] + [(i, 0) for i in range(len(draws))]
    chosen = sorted(positives[:n_pos] + negatives[:total - n_pos])
    return [draws[i][kind] for i, kind in chosen]


def generate_dataset(objects: Objects, cfg: GenConfig, threads: Optional[int] = None) -> Dataset:
    """
    Draw labelled pairs until `cfg.pairs` rows with a positive fraction in
    [cfg.min_positive_fraction, 0.5] can be selected. Pure function of (objects, cfg).

    Raises:
        EmptyInputError: fewer than two objects
        DatasetBalanceError: the positive quota is still unmet after
            cfg.max_draw_rounds rounds of draws
    """
    meshes = _meshes(objects)
    ids = sorted(meshes)
    if len(ids) < 2:
        raise EmptyInputError(f"dataset generation needs >= 2 objects, got {len(ids)}")
    threads = threads or settings.WORKER_THREADS
    draws: List[Tuple[LabeledPair, LabeledPair]] = []
    batch = cfg.pairs
    rows = None
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for _ in range(cfg.max_draw_rounds):
            start = len(draws)
            draws.extend(pool.map(lambda i: _draw(meshes, ids, cfg, i), range(start, start + batch)))
            rows = _balance(draws, cfg.pairs, cfg.min_positive_fraction)
            if rows is not None:
                break
            logger.info(f"{sum(m.y for _, m in draws)} positives in {len(draws)} draws; drawing {batch // 2 + 1} more")
            batch = batch // 2 + 1
    if rows is None:
        positives = sum(m.y for _, m in draws)
        raise DatasetBalanceError(
            f"{positives} positives in {len(draws)} draws after {cfg.max_draw_rounds} rounds; need "
            f"{int(np.ceil(cfg.min_positive_fraction * cfg.pairs))} of {cfg.pairs} "
            f"(penetrate_probability {cfg.penetrate_probability})")
    dataset = Dataset(rows, ids, cfg.model_dump(), cfg.seed, manifest_hash(cfg.model_dump(), [cfg.seed]))
    logger.info(f"Generated {len(rows)} pairs from {len(draws)} draws, positive fraction {dataset.positive_fraction:.3f}")
    return dataset


def augment_rotation(pair: LabeledPair, rotation: np.ndarray, clouds: Tuple[np.ndarray, np.ndarray]) -> AugmentedSample:
    """
    Rotate both local clouds by R and compose R^-1 onto both poses, so the
    occupied world volume and the label are unchanged.

    Args:
        rotation: unit quaternion (w, x, y, z) or 3x3 rotation matrix
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape == (3, 3):
        q = _matrix_to_quat(rotation)
    else:
        q = rotation / np.linalg.norm(rotation)
    matrix = quat_to_matrix(q)
    undo = Pose(quat_conjugate(q), np.zeros(3))
    return AugmentedSample(
        points1=np.asarray(clouds[0]) @ matrix.T,
        points2=np.asarray(clouds[1]) @ matrix.T,
        q1=pair.q1.compose(undo),
        q2=pair.q2.compose(undo),
        y=pair.y,
        rotation=q,
    )


def _matrix_to_quat(matrix: np.ndarray) -> np.ndarray:
    """Shepperd's method."""
    m = matrix
    trace = np.trace(m)
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        q = np.zeros(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def uniform_test_pairs(
    objects: Objects,
    ids: Sequence[str],
    n: int,
    cfg: GenConfig,
    seed: int,
    exclude: Optional[Set[tuple]] = None,
) -> List[LabeledPair]:
    """
    Test pairs with both poses drawn uniformly in the test_bound cube (no
    distance manipulation), labelled by the exact oracle. Combinations whose
    key is in `exclude` are redrawn.
    """
    meshes = _meshes(objects)
    ids = list(ids)
    if not ids:
        return []
    exclude = exclude or set()
    pairs: List[LabeledPair] = []
    index = 0
    while len(pairs) < n:
        rng = np.random.default_rng([seed, 1, index])
        index += 1
        a, b = rng.integers(0, len(ids), size=2)
        m1, m2 = meshes[ids[a]], meshes[ids[b]]
        q1, q2 = random_pose(rng, cfg.test_bound), random_pose(rng, cfg.test_bound)
        pair = LabeledPair(m1.id, m2.id, q1, q2, exact_collide(m1, q1, m2, q2))
        if pair.key() in exclude:
            continue
        pairs.append(pair)
    return pairs


def split_known_unknown(
    objects: Objects,
    holdout: int,
    seed: int,
    cfg: GenConfig,
    n_test: int = 200,
    exclude: Optional[Iterable[LabeledPair]] = None,
) -> Split:
    """
    Hold out `holdout` objects as the unknown set and draw uniform test pairs
    for the known (training objects) and unknown sets. Known-test pairs
    never repeat a training (pair, pose) combination.
    """
    ids = sorted(objects)
    if holdout < 0 or holdout >= len(ids):
        raise ValueError(f"holdout must be in [0, {len(ids) - 1}], got {holdout}")
    rng = np.random.default_rng([seed, 2])
    unknown = sorted(rng.choice(ids, size=holdout, replace=False).tolist()) if holdout else []
    train = [i for i in ids if i not in unknown]
    seen = {p.key() for p in (exclude or [])}
    known_test = uniform_test_pairs(objects, train, n_test, cfg, seed, seen)
    unknown_test = uniform_test_pairs(objects, unknown, n_test, cfg, seed + 1) if unknown else []
    return Split(train, unknown, known_test, unknown_test)


def verify_labels(pairs: Iterable[LabeledPair], objects: Objects) -> float:
    """Fraction of stored labels reproduced by the exact oracle."""
    meshes = _meshes(objects)
    pairs = list(pairs)
    if not pairs:
        raise EmptyInputError("no pairs to verify")
    agree = sum(exact_collide(meshes[p.id1], p.q1, meshes[p.id2], p.q2) == p.y for p in pairs)
    return agree / len(pairs)


def save_dataset(dataset: Dataset, path: Path | str) -> Path:
    """Magic line, JSON header line, then packed little-endian records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {mesh_id: i for i, mesh_id in enumerate(dataset.mesh_ids)}
    records = np.zeros(len(dataset.pairs), dtype=RECORD)
    for row, pair in zip(records, dataset.pairs):
        row["id1"], row["id2"] = index[pair.id1], index[pair.id2]
        row["q1"], row["q2"] = pair.q1.as_vector(), pair.q2.as_vector()
        row["y"] = int(pair.y)
        row["delta"] = pair.delta_target
        row["gap"] = np.nan if pair.measured_gap is None else pair.measured_gap
    header = {
        "count": len(dataset.pairs),
        "mesh_ids": dataset.mesh_ids,
        "config": dataset.config,
        "seed": dataset.seed,
        "manifest_hash": dataset.manifest_hash,
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(records.tobytes())
    return path


def load_dataset(path: Path | str) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path} is not a dataset file")
    header_end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):header_end])
    records = np.frombuffer(raw, dtype=RECORD, count=header["count"], offset=header_end + 1)
    ids = header["mesh_ids"]
    pairs = [
        LabeledPair(
            ids[r["id1"]], ids[r["id2"]], Pose.from_vector(r["q1"]), Pose.from_vector(r["q2"]), bool(r["y"]),
            float(r["delta"]), None if np.isnan(r["gap"]) else float(r["gap"]),
        )
        for r in records
    ]
    return Dataset(pairs, ids, header["config"], header["seed"], header["manifest_hash"])
