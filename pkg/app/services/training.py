"""
LOCC training, evaluation and the data-efficiency sweep.

Every minibatch rotates each pair by a random rotation R (clouds by R, both
poses composed with R^-1) so the encoder sees objects in arbitrary local
orientations while labels stay fixed.
"""
import csv
import logging
import time
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.exceptions import DivergenceError, EmptyInputError, NonFiniteError
from app.models.dataset import Dataset, GenConfig, LabeledPair
from app.models.geometry import Aabb, Pose, quat_to_matrix, random_quaternion
from app.models.locc import LoccConfig, LoccParams, ShapeEmbedding
from app.models.training import EvalReport, SweepRow, TrainConfig, TrainResult
from app.services.datagen import augment_rotation, generate_dataset, split_known_unknown
from app.services.detectors.locc import THRESHOLD, LoccDetector
from app.services.geometry.mesh import sample_surface
from app.services.geometry.oracle import exact_collide
from app.services.geometry.primitives import ObjectEntry
from app.services.locc import _predict, _tensors, encode_batch, init_params, load_checkpoint, predict_many, \
    save_checkpoint, select_cells
from app.services.nn import ops
from app.services.nn.optim import AdamState, LossTerms, adam_step
from app.services.nn.tensor import Tensor, grad


logger = logging.getLogger(__name__)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

Checkpoint = Union[Path, str, Tuple[LoccParams, LoccConfig]]


def _minibatch(
    rows: Sequence[LabeledPair],
    objects: Mapping[str, ObjectEntry],
    clouds: Dict[str, np.ndarray],
    rng: np.random.Generator,
    augment: bool,
):
    """Rotated clouds (2B, K, 3) with their AABBs, poses and labels."""
    points, aabbs, poses1, poses2 = [], [], [], []
    for pair in rows:
        rotation = random_quaternion(rng) if augment else IDENTITY
        sample = augment_rotation(pair, rotation, (clouds[pair.id1], clouds[pair.id2]))
        matrix = quat_to_matrix(sample.rotation)
        points.append((sample.points1, sample.points2))
        aabbs.append((Aabb.from_points(objects[pair.id1].mesh.vertices @ matrix.T),
                      Aabb.from_points(objects[pair.id2].mesh.vertices @ matrix.T)))
        poses1.append(sample.q1)
        poses2.append(sample.q2)
    stacked = np.stack([p for p, _ in points] + [p for _, p in points])
    boxes = [a for a, _ in aabbs] + [a for _, a in aabbs]
    labels = np.array([pair.y for pair in rows], dtype=np.float64)
    return stacked, boxes, poses1, poses2, labels


def _loss(
    batch,
    t: Dict[str, Tensor],
    cfg: LoccConfig,
    alpha: float,
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    BCE of the batch plus alpha times the embedding regulariser.

    The regulariser is the mean of the squared embedding entries, the squared
    norm of the whole batch embedding divided by its element count, so alpha
    does not need retuning when the grid size or batch size changes.
    """
    points, aabbs, poses1, poses2, labels = batch
    size = len(labels)
    grid, g = encode_batch(points, aabbs, t, cfg)
    first, second = np.arange(size), np.arange(size, 2 * size)
    if grid is None:
        features, mask1, mask2 = g, None, None
        embedding = g
    else:
        features = ops.reshape(grid, (2 * size, cfg.cells, cfg.cell_features))
        embedding = grid
        selections = [
            select_cells(ShapeEmbedding(None, np.empty(0), aabbs[i], "a"), q1,
                         ShapeEmbedding(None, np.empty(0), aabbs[size + i], "b"), q2, cfg.grid)
            for i, (q1, q2) in enumerate(zip(poses1, poses2))
        ]
        mask1 = np.stack([s.mask1 for s in selections])
        mask2 = np.stack([s.mask2 for s in selections])
    p1 = Tensor(np.stack([q.as_vector() for q in poses1]))
    p2 = Tensor(np.stack([q.as_vector() for q in poses2]))
    out = _predict(ops.gather_rows(features, first), p1, mask1, ops.gather_rows(features, second), p2, mask2, t)
    bce = ops.bce_loss(out, labels[:, None])
    reg = ops.square_mean(embedding)
    loss = bce if alpha == 0 else ops.add(bce, ops.scale(reg, alpha))
    return loss, bce, reg


def _check_labels(
    rows: Sequence[LabeledPair],
    objects: Mapping[str, ObjectEntry],
    count: int,
    rng: np.random.Generator,
) -> int:
    """Re-label `count` rotated samples with the oracle; returns the number of disagreements."""
    if count == 0 or not rows:
        return 0
    picks = rng.choice(len(rows), size=min(count, len(rows)), replace=False)
    mismatches = 0
    for i in picks:
        pair = rows[i]
        q = random_quaternion(rng)
        rotate = Pose(q, np.zeros(3))
        sample = augment_rotation(pair, q, (np.zeros((0, 3)), np.zeros((0, 3))))
        m1 = objects[pair.id1].mesh.transformed(rotate)
        m2 = objects[pair.id2].mesh.transformed(rotate)
        if exact_collide(m1, sample.q1, m2, sample.q2) != pair.y:
            mismatches += 1
    return mismatches


def _split_validation(rows: List[LabeledPair], fraction: float, rng: np.random.Generator):
    count = int(round(fraction * len(rows))) if len(rows) >= 10 else 0
    if count == 0:
        return rows, []
    order = rng.permutation(len(rows))
    return [rows[i] for i in order[count:]], [rows[i] for i in order[:count]]


def train(
    dataset: Dataset,
    objects: Mapping[str, ObjectEntry],
    cfg: Optional[TrainConfig] = None,
    locc_cfg: Optional[LoccConfig] = None,
    out: Optional[Path | str] = None,
) -> TrainResult:
    """
    Train the collision network end to end.

    Args:
        dataset: labelled pairs; both labels must be present
        objects: the object set the dataset refers to
        cfg: optimiser schedule; cfg.variant overrides locc_cfg.variant
        locc_cfg: network shape
        out: checkpoint directory, written when given

    Returns:
        TrainResult with the final (best validation) parameters and loss curve

    Raises:
        DivergenceError: the loss or a gradient became non-finite
    """
    cfg = cfg or TrainConfig()
    locc_cfg = (locc_cfg or LoccConfig()).model_copy(update={"variant": cfg.variant})
    rows = list(dataset.pairs)
    if not rows:
        raise EmptyInputError("training dataset is empty")
    labels = {p.y for p in rows}
    if labels != {True, False}:
        raise ValueError(f"training needs both labels, dataset only has {labels}")
    missing = sorted(({p.id1 for p in rows} | {p.id2 for p in rows}) - set(objects))
    if missing:
        raise KeyError(f"dataset references unknown objects {missing[:3]}")

    rng = np.random.default_rng(cfg.seed)
    train_rows, validation_rows = _split_validation(rows, cfg.validation_fraction, rng)
    used = sorted({p.id1 for p in rows} | {p.id2 for p in rows})
    clouds = {key: sample_surface(objects[key].mesh, locc_cfg.points, settings.CLOUD_SEED).points for key in used}

    params = init_params(locc_cfg, cfg.seed)
    state = AdamState(lr=cfg.learning_rate)
    result = TrainResult(params=params, config=locc_cfg)
    best_accuracy, best_arrays, stale = -1.0, params.arrays, 0
    steps_per_epoch = int(np.ceil(len(train_rows) / cfg.batch_size))
    logger.info(f"Training {locc_cfg.variant} model ({params.parameter_count()} parameters) on {len(train_rows)} pairs, "
                f"{len(validation_rows)} held out, {steps_per_epoch} steps per epoch")

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_rows))
        for start in range(0, len(order), cfg.batch_size):
            step += 1
            batch_rows = [train_rows[i] for i in order[start:start + cfg.batch_size]]
            batch = _minibatch(batch_rows, objects, clouds, rng, cfg.augment)
            t = _tensors(params, requires_grad=True)
            names = sorted(t)
            try:
                loss, bce, reg = _loss(batch, t, locc_cfg, cfg.alpha)
                grads = grad(loss, [t[name] for name in names])
                params.update(adam_step(params.arrays, dict(zip(names, grads)), state))
            except NonFiniteError as e:
                raise DivergenceError(f"training diverged at step {step}: {e}", step) from e
            terms = LossTerms(float(bce.data), float(reg.data), cfg.alpha)
            result.losses.append(terms)
            logger.debug(f"step {step}: loss {terms.total:.5f} (bce {terms.bce:.5f}, reg {terms.reg:.5f})")

        recent = result.loss_curve[-steps_per_epoch:]
        logger.info(f"Epoch {epoch}/{cfg.epochs}: mean loss {np.mean(recent):.5f}")
        mismatches = _check_labels(train_rows, objects, cfg.label_check, np.random.default_rng([cfg.seed, 3, epoch]))
        if mismatches:
            logger.warning(f"Epoch {epoch}: {mismatches} rotated samples changed label under the oracle")

        if validation_rows and epoch % cfg.eval_every == 0:
            accuracy = evaluate((params, locc_cfg), validation_rows, objects).accuracy
            result.validation.append(accuracy)
            logger.info(f"Epoch {epoch}: validation accuracy {accuracy:.4f}")
            if accuracy > best_accuracy:
                best_accuracy, best_arrays, stale = accuracy, params.arrays, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.warning(f"Validation accuracy flat for {stale} evaluations; stopping after epoch {epoch}")
                    result.stopped_early = True
                    break

    if result.validation and best_arrays is not params.arrays:
        params.update(best_arrays)
    result.train_accuracy = evaluate((params, locc_cfg), train_rows, objects).accuracy
    logger.info(f"Training finished after {step} steps: train accuracy {result.train_accuracy:.4f}")
    if out is not None:
        result.checkpoint = save_checkpoint(params, locc_cfg, out, {"train": cfg.model_dump()})
        write_loss_curve(result.losses, Path(out) / "loss_curve.csv")
    return result


def train_global_variant(
    dataset: Dataset,
    objects: Mapping[str, ObjectEntry],
    cfg: Optional[TrainConfig] = None,
    locc_cfg: Optional[LoccConfig] = None,
    out: Optional[Path | str] = None,
) -> TrainResult:
    """Same loop with the predictor fed the pooled global vector instead of selected cells."""
    cfg = (cfg or TrainConfig()).model_copy(update={"variant": "global"})
    return train(dataset, objects, cfg, locc_cfg, out)


def write_loss_curve(losses: Sequence[LossTerms], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "bce", "reg", "total"])
        for step, terms in enumerate(losses, start=1):
            writer.writerow([step, repr(terms.bce), repr(terms.reg), repr(terms.total)])
    return path


def confusion_report(predicted: np.ndarray, labels: np.ndarray, cps: float,
                     mean_probability: Optional[float] = None) -> EvalReport:
    predicted = np.asarray(predicted, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if len(predicted) != len(labels):
        raise ValueError(f"{len(predicted)} predictions for {len(labels)} labels")
    tp = int(np.sum(predicted & labels))
    tn = int(np.sum(~predicted & ~labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    total = tp + tn + fp + fn
    return EvalReport(
        accuracy=(tp + tn) / total if total else 0.0,
        tp=tp, tn=tn, fp=fp, fn=fn,
        cps=cps,
        mean_probability=mean_probability,
    )


def evaluate(
    checkpoint: Checkpoint,
    pairs: Sequence[LabeledPair],
    objects: Mapping[str, ObjectEntry],
    threshold: float = THRESHOLD,
) -> EvalReport:
    """
    Confusion counts of a model on labelled pairs.

    Pairs whose OBBs are disjoint are answered "no collision" without the
    network. Embeddings are computed before the clock starts, so cps covers
    only the predictor over the surviving pairs. A probability exactly equal
    to the threshold counts as no collision.

    Args:
        checkpoint: checkpoint directory or an in-memory (params, config)
        pairs: labelled test pairs
        objects: object set the pairs refer to
        threshold: decision threshold
    """
    params, cfg = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    pairs = list(pairs)
    if not pairs:
        raise EmptyInputError("evaluate needs at least one labelled pair")
    detector = LoccDetector(objects, params, cfg)
    queries = [(p.id1, p.q1, p.id2, p.q2) for p in pairs]
    mask = detector.broad_phase(queries)
    predicted = np.zeros(len(pairs), dtype=bool)
    cps, mean_probability = 0.0, None
    live = [q for q, keep in zip(queries, mask) if keep]
    if live:
        prepared = detector.prepare(live)
        start = time.perf_counter()
        probabilities = predict_many(prepared, params, cfg)
        elapsed = time.perf_counter() - start
        predicted[mask] = probabilities > threshold
        cps = len(live) / elapsed if elapsed > 0 else 0.0
        mean_probability = float(probabilities.mean())
    labels = np.array([p.y for p in pairs], dtype=bool)
    return confusion_report(predicted, labels, cps, mean_probability)


def data_efficiency_sweep(
    objects: Mapping[str, ObjectEntry],
    counts: Sequence[int],
    pairs: int,
    cfg: Optional[TrainConfig] = None,
    locc_cfg: Optional[LoccConfig] = None,
    gen_cfg: Optional[GenConfig] = None,
    seeds: Sequence[int] = (0, 1, 2),
    holdout: int = 5,
    n_test: int = 200,
) -> List[SweepRow]:
    """
    Unknown-object accuracy of both variants against the number of training
    objects.

    The unknown set is held fixed; for each seed the training objects are
    the first `count` of a seeded shuffle of the rest, so larger counts
    extend smaller ones.

    Raises:
        ValueError: a count exceeds the available training objects or is below 2,
            or `pairs` cannot meet the positive quota
    """
    cfg = cfg or TrainConfig()
    gen_cfg = GenConfig.model_validate({**(gen_cfg or GenConfig()).model_dump(), "pairs": pairs})
    split = split_known_unknown(objects, holdout, 0, gen_cfg, n_test=n_test)
    available = split.train_ids
    for count in counts:
        if count < 2 or count > len(available):
            raise ValueError(f"object count {count} outside [2, {len(available)}]")
    if not split.unknown_test:
        raise ValueError("data-efficiency sweep needs a non-empty unknown set")

    table: List[SweepRow] = []
    for count in counts:
        scores: Dict[str, List[float]] = {"local": [], "global": []}
        for seed in seeds:
            order = np.random.default_rng([seed, 4]).permutation(len(available))
            chosen = [available[i] for i in order[:count]]
            dataset = generate_dataset({k: objects[k] for k in chosen},
                                       gen_cfg.model_copy(update={"seed": seed}))
            for variant in scores:
                run_cfg = cfg.model_copy(update={"variant": variant, "seed": seed})
                result = train(dataset, objects, run_cfg, locc_cfg)
                report = evaluate((result.params, result.config), split.unknown_test, objects)
                scores[variant].append(report.accuracy)
                logger.info(f"{count} objects, seed {seed}, {variant}: unknown accuracy {report.accuracy:.4f}")
        for variant, values in scores.items():
            table.append(SweepRow(
                objects=count,
                variant=variant,
                accuracy_mean=float(np.mean(values)),
                accuracy_std=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                seeds=len(values),
            ))
    return table


def write_sweep_csv(rows: Sequence[SweepRow], path: Path | str) -> Path:
    """CSV with one row per (object count, variant)."""
    if not rows:
        raise EmptyInputError("no sweep rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(SweepRow.model_fields)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())
    return path
