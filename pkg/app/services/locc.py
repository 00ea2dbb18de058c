"""
LOCC shape encoder, cell selection, collision predictor and pose gradients.

Encoder: point MLP -> cell-wise max pool on an M^3 grid over the object's
AABB -> four 3x3x3 convolutions (first one unpadded) -> global pooling ->
four deconvolutions with concatenation skips -> per-cell concat of the
broadcast global vector -> linear to F features per cell.

Predictor: per object, the average of the selected cells' features plus the
7-number pose goes through a shared MLP; the two object vectors are combined
by elementwise max and mapped to a probability.
"""
import json
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.exceptions import CheckpointError, EmptyInputError
from app.models.geometry import Aabb, Obb, PointCloud, Pose, TriMesh
from app.models.locc import CellSelection, LoccConfig, LoccParams, ShapeEmbedding
from app.services.geometry.mesh import aabb_of, sample_surface
from app.services.nn import ops
from app.services.nn.checkpoint import load_params, save_params
from app.services.nn.optim import he_uniform, xavier_uniform
from app.services.nn.tensor import Tensor, grad


logger = logging.getLogger(__name__)

POSE_DIM = 7
CONV_LAYERS = 4
SELECTION_TOLERANCE = 1e-12


def init_params(cfg: LoccConfig, seed: int = 0) -> LoccParams:
    """
    Fresh parameters: He-uniform for layers followed by ReLU, Xavier for the
    final linear layers, zero biases.
    """
    rng = np.random.default_rng(seed)
    H, C, G, F, W = cfg.point_features, cfg.conv_channels, cfg.global_dim, cfg.cell_features, cfg.predictor_width
    arrays: Dict[str, np.ndarray] = {}

    def dense(name, fan_in, fan_out, final=False):
        if final:
            arrays[f"{name}.w"] = xavier_uniform(rng, (fan_in, fan_out), fan_in, fan_out)
        else:
            arrays[f"{name}.w"] = he_uniform(rng, (fan_in, fan_out), fan_in)
        arrays[f"{name}.b"] = np.zeros(fan_out)

    def kernel(name, c_in, c_out, shape):
        arrays[f"{name}.k"] = he_uniform(rng, shape, 27 * c_in)
        arrays[f"{name}.b"] = np.zeros(c_out)

    for i in range(cfg.encoder_depth):
        dense(f"enc.mlp{i}", 3 if i == 0 else H, H)
    kernel("enc.conv1", H, C, (3, 3, 3, H, C))
    for i in range(2, CONV_LAYERS + 1):
        kernel(f"enc.conv{i}", C, C, (3, 3, 3, C, C))
    dense("enc.global", C, G)
    feature = G
    if cfg.variant == "local":
        # deconv kernels are (3, 3, 3, C_out, C_in): deconv3d maps the last axis to the fourth
        kernel("dec.deconv4", C, C, (3, 3, 3, C, C))
        for i in (3, 2, 1):
            kernel(f"dec.deconv{i}", 2 * C, C, (3, 3, 3, C, 2 * C))
        dense("dec.head", C + G, F, final=True)
        feature = F
    for i in range(3):
        dense(f"pred.obj{i}", feature + POSE_DIM if i == 0 else W, W)
    for i in range(3):
        dense(f"pred.joint{i}", W, W)
    dense("pred.out", W, 1, final=True)
    return LoccParams(arrays)


def _tensors(params: LoccParams, requires_grad: bool = False) -> Dict[str, Tensor]:
    return {name: Tensor(a, requires_grad=requires_grad, op=name) for name, a in params.arrays.items()}


def _layers(t: Dict[str, Tensor], prefix: str, count: int) -> List[Tuple[Tensor, Tensor]]:
    return [(t[f"{prefix}{i}.w"], t[f"{prefix}{i}.b"]) for i in range(count)]


def assign_cells(points: np.ndarray, aabb: Aabb, m: int) -> np.ndarray:
    """
    Flat x-major cell index of local-frame points.

    Bins are closed on their upper side, so a point on an interior boundary
    goes to the lower cell; points on the min face go to cell 0 and points on
    the max face to cell M-1. Zero-extent axes map to index 0.
    """
    extents = aabb.extents
    safe = np.where(extents > 0, extents, 1.0)
    t = (np.asarray(points) - aabb.min) / safe * m
    idx = np.clip(np.ceil(t).astype(np.int64) - 1, 0, m - 1)
    idx = np.where(extents > 0, idx, 0)
    return (idx[..., 0] * m + idx[..., 1]) * m + idx[..., 2]


def cell_centers(aabb: Aabb, m: int) -> np.ndarray:
    """(M^3, 3) local cell centers in the same order as assign_cells."""
    i = np.arange(m)
    grid = np.stack(np.meshgrid(i, i, i, indexing="ij"), axis=-1).reshape(-1, 3)
    return aabb.min + (grid + 0.5) * aabb.cell_size(m)


def half_diagonal(aabb: Aabb, m: int) -> float:
    return float(np.linalg.norm(aabb.cell_size(m)) / 2.0)


def _normalise(points: np.ndarray, aabb: Aabb) -> np.ndarray:
    scale = max(float(np.max(aabb.extents)) / 2.0, 1e-9)
    return (points - aabb.center) / scale


def encode_batch(
    points: np.ndarray,
    aabbs: Sequence[Aabb],
    t: Dict[str, Tensor],
    cfg: LoccConfig,
) -> Tuple[Optional[Tensor], Tensor]:
    """
    Encode B point clouds at once.

    Args:
        points: (B, K, 3) local-frame clouds
        aabbs: one local AABB per cloud
        t: parameter tensors
        cfg: network configuration

    Returns:
        (grid (B, M, M, M, F) or None for the global variant, global (B, G))
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3 or points.shape[1] == 0:
        raise EmptyInputError(f"encoder needs (B, K>0, 3) points, got {points.shape}")
    batch, m = len(points), cfg.grid
    x = Tensor(np.stack([_normalise(p, a) for p, a in zip(points, aabbs)]))
    cells = np.stack([assign_cells(p, a, m) for p, a in zip(points, aabbs)])
    h = ops.mlp_forward(x, _layers(t, "enc.mlp", cfg.encoder_depth))
    v = ops.reshape(ops.scatter_max(h, cells, cfg.cells), (batch, m, m, m, cfg.point_features))

    features = []
    f = v
    for i in range(1, CONV_LAYERS + 1):
        f = ops.relu(ops.add(ops.conv3d(f, t[f"enc.conv{i}.k"], "valid" if i == 1 else "same"), t[f"enc.conv{i}.b"]))
        features.append(f)
    g = ops.relu(ops.linear(ops.pool(f, cfg.global_pooling), t["enc.global.w"], t["enc.global.b"]))
    if cfg.variant == "global":
        return None, g

    d = ops.relu(ops.add(ops.deconv3d(features[3], t["dec.deconv4.k"], "same"), t["dec.deconv4.b"]))
    for i, skip in ((3, features[2]), (2, features[1]), (1, features[0])):
        padding = "valid" if i == 1 else "same"
        d = ops.relu(ops.add(ops.deconv3d(ops.concat([d, skip]), t[f"dec.deconv{i}.k"], padding), t[f"dec.deconv{i}.b"]))
    tiled = ops.broadcast_to(ops.reshape(g, (batch, 1, 1, 1, cfg.global_dim)), (batch, m, m, m, cfg.global_dim))
    grid = ops.linear(ops.concat([d, tiled]), t["dec.head.w"], t["dec.head.b"])
    return grid, g


def encode_shape(cloud: PointCloud, aabb: Aabb, params: LoccParams, cfg: LoccConfig) -> ShapeEmbedding:
    """Single-object wrapper around encode_batch."""
    if cloud.k == 0:
        raise EmptyInputError(f"point cloud of '{cloud.source_id}' is empty")
    grid, g = encode_batch(cloud.points[None], [aabb], _tensors(params), cfg)
    return ShapeEmbedding(
        grid=None if grid is None else grid.data[0],
        global_feature=g.data[0],
        aabb=aabb,
        source_id=cloud.source_id,
    )


def select_cells(e1: ShapeEmbedding, q1: Pose, e2: ShapeEmbedding, q2: Pose, m: Optional[int] = None) -> CellSelection:
    """
    Cells of each object whose world-space center lies within that object's
    cell half-diagonal of the other object's OBB.

    Every point of a cell box is within its half-diagonal of the center, so
    a cell whose box touches the other OBB is always selected. The margin of
    each side is that side's own cell half-diagonal (epsilon1 for object 1's
    cells); a counterpart margin would miss cells when the two grids differ.
    """
    m = m or (e1.grid.shape[0] if e1.grid is not None else 1)
    epsilon1, epsilon2 = half_diagonal(e1.aabb, m), half_diagonal(e2.aabb, m)
    obb1, obb2 = Obb(e1.aabb, q1), Obb(e2.aabb, q2)
    d1 = obb2.distance_to(q1.apply(cell_centers(e1.aabb, m)))
    d2 = obb1.distance_to(q2.apply(cell_centers(e2.aabb, m)))
    return CellSelection(d1 <= epsilon1 + SELECTION_TOLERANCE, d2 <= epsilon2 + SELECTION_TOLERANCE,
                         epsilon1, epsilon2)


def _predict(
    f1: Tensor, p1: Tensor, mask1: Optional[np.ndarray],
    f2: Tensor, p2: Tensor, mask2: Optional[np.ndarray],
    t: Dict[str, Tensor],
) -> Tensor:
    """
    Batched predictor head.

    f1/f2 are (B, N, F) cell features with (B, N) masks, or (B, G) global
    vectors with masks None; p1/p2 are (B, 7) poses. Returns (B, 1).
    """
    def per_object(features, pose, mask):
        pooled = features if mask is None else ops.masked_mean(features, mask)
        return ops.mlp_forward(ops.concat([pooled, pose]), _layers(t, "pred.obj", 3))

    joint = ops.maximum(per_object(f1, p1, mask1), per_object(f2, p2, mask2))
    joint = ops.mlp_forward(joint, _layers(t, "pred.joint", 3))
    return ops.sigmoid(ops.linear(joint, t["pred.out.w"], t["pred.out.b"]))


def _features(e: ShapeEmbedding) -> np.ndarray:
    return e.global_feature if e.grid is None else e.cell_features()


def _query_tensors(pairs, selections):
    """Stack embeddings, poses and masks of several queries into batch tensors."""
    local = pairs[0][0].grid is not None
    f1 = Tensor(np.stack([_features(e1) for e1, _, _, _ in pairs]))
    f2 = Tensor(np.stack([_features(e2) for _, _, e2, _ in pairs]))
    m1 = np.stack([s.mask1 for s in selections]) if local else None
    m2 = np.stack([s.mask2 for s in selections]) if local else None
    return f1, m1, f2, m2


def _pose_vector(q) -> np.ndarray:
    return q.as_vector() if isinstance(q, Pose) else np.asarray(q, dtype=np.float64).reshape(POSE_DIM)


def predict_with_selection(
    e1: ShapeEmbedding, q1, e2: ShapeEmbedding, q2,
    selection: CellSelection, params: LoccParams, cfg: LoccConfig,
) -> float:
    """Predictor output for a fixed cell selection; q1/q2 may be Poses or raw 7-vectors."""
    f1, m1, f2, m2 = _query_tensors([(e1, q1, e2, q2)], [selection])
    out = _predict(f1, Tensor(_pose_vector(q1)[None]), m1, f2, Tensor(_pose_vector(q2)[None]), m2, _tensors(params))
    return float(out.data[0, 0])


def predict_collision(e1: ShapeEmbedding, q1: Pose, e2: ShapeEmbedding, q2: Pose,
                      params: LoccParams, cfg: LoccConfig) -> float:
    """Collision probability in (0, 1)."""
    return predict_with_selection(e1, q1, e2, q2, select_cells(e1, q1, e2, q2, cfg.grid), params, cfg)


def predict_many(queries: Sequence[Tuple[ShapeEmbedding, Pose, ShapeEmbedding, Pose]],
                 params: LoccParams, cfg: LoccConfig) -> np.ndarray:
    """Probabilities for a batch of queries in one predictor pass."""
    if not queries:
        raise EmptyInputError("predict_many needs at least one query")
    selections = [select_cells(e1, q1, e2, q2, cfg.grid) for e1, q1, e2, q2 in queries]
    f1, m1, f2, m2 = _query_tensors(queries, selections)
    p1 = Tensor(np.stack([q1.as_vector() for _, q1, _, _ in queries]))
    p2 = Tensor(np.stack([q2.as_vector() for _, _, _, q2 in queries]))
    return _predict(f1, p1, m1, f2, p2, m2, _tensors(params)).data[:, 0]


def pose_gradient(e1: ShapeEmbedding, q1: Pose, e2: ShapeEmbedding, q2: Pose,
                  params: LoccParams, cfg: LoccConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    d(probability)/d(pose 7-vector) for both objects, with the cell
    selection held at the current poses.
    """
    selection = select_cells(e1, q1, e2, q2, cfg.grid)
    f1, m1, f2, m2 = _query_tensors([(e1, q1, e2, q2)], [selection])
    p1 = Tensor(q1.as_vector()[None], requires_grad=True)
    p2 = Tensor(q2.as_vector()[None], requires_grad=True)
    out = _predict(f1, p1, m1, f2, p2, m2, _tensors(params))
    g1, g2 = grad(ops.total(out), [p1, p2])
    return g1[0], g2[0]


class EmbeddingCache:
    """
    Read-mostly map (mesh id, params version) -> ShapeEmbedding with
    single-writer insertion.
    """

    def __init__(self):
        self._store: Dict[Tuple[str, int], ShapeEmbedding] = {}
        self._lock = threading.Lock()

    def get(self, mesh: TriMesh, params: LoccParams, cfg: LoccConfig, seed: Optional[int] = None) -> ShapeEmbedding:
        key = (mesh.id, params.version)
        found = self._store.get(key)
        if found is not None:
            return found
        seed = settings.CLOUD_SEED if seed is None else seed
        embedding = encode_shape(sample_surface(mesh, cfg.points, seed), aabb_of(mesh), params, cfg)
        with self._lock:
            return self._store.setdefault(key, embedding)

    def clear(self) -> None:
        with self._lock:
            self._store.clear()

    def __len__(self) -> int:
        return len(self._store)


def full_forward(m1: TriMesh, q1: Pose, m2: TriMesh, q2: Pose, params: LoccParams, cfg: LoccConfig,
                 cache: Optional[EmbeddingCache] = None) -> float:
    """sample_surface -> encode_shape (cached) -> select_cells -> predict_collision."""
    cache = cache if cache is not None else EmbeddingCache()
    e1, e2 = cache.get(m1, params, cfg), cache.get(m2, params, cfg)
    return predict_collision(e1, q1, e2, q2, params, cfg)


def save_checkpoint(params: LoccParams, cfg: LoccConfig, directory: Path | str, extra: Optional[dict] = None) -> Path:
    directory = save_params(params.arrays, directory)
    (directory / "config.json").write_text(json.dumps({"locc": cfg.model_dump(), **(extra or {})}, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory: Path | str) -> Tuple[LoccParams, LoccConfig]:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "config.json").read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"no config.json in {directory}") from e
    cfg = LoccConfig(**meta["locc"])
    arrays = load_params(directory)
    expected = init_params(cfg).arrays
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint {directory} is missing parameters {missing[:3]}")
    for name, array in expected.items():
        if arrays[name].shape != array.shape:
            raise CheckpointError(f"parameter '{name}' has shape {arrays[name].shape}, config expects {array.shape}")
    return LoccParams(arrays), cfg
