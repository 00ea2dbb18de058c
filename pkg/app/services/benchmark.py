"""
Accuracy-versus-throughput benchmark over the collision detectors.
"""
import csv
import itertools
import logging
import statistics
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import CheckpointError, EmptyInputError
from app.models.bench import BenchRow
from app.models.convex import GjkConfig
from app.models.dataset import LabeledPair
from app.models.locc import LoccConfig, LoccParams
from app.services.detectors import CollisionDetector, GjkDetector, IsCdDetector, LoccDetector, build_detector
from app.services.geometry.primitives import ObjectEntry
from app.services.iscd import IsCdConfig
from app.services.locc import load_checkpoint


logger = logging.getLogger(__name__)

GJK_ITERATIONS = (4, 5, 6, 7, 8, 9)
GJK_PARTS = (2, 4, 8, 16)
GJK_TRIANGLES = (16, 32, 64)
ISCD_POINTS = (10, 100, 1000, 10000)
WARMUPS = 3
REPEATS = 5
CSV_FIELDS = ["method", "params", "accuracy", "cps", "testset"]


def methods_grid(
    objects: Mapping[str, ObjectEntry],
    methods: Sequence[str] = ("exact", "gjk", "iscd", "locc"),
    gjk_iterations: Sequence[int] = GJK_ITERATIONS,
    gjk_parts: Sequence[int] = GJK_PARTS,
    gjk_triangles: Sequence[int] = GJK_TRIANGLES,
    iscd_points: Sequence[int] = ISCD_POINTS,
    checkpoint: Optional[Path | str | Tuple[LoccParams, LoccConfig]] = None,
    threads: Optional[int] = None,
) -> List[CollisionDetector]:
    """
    One detector per benchmark point: the GJK grid, the IS-CD point sweep and
    a single LOCC configuration.

    Raises:
        CheckpointError: locc requested without a checkpoint
        ValueError: unknown method name
    """
    detectors: List[CollisionDetector] = []
    for method in methods:
        if method == "exact":
            detectors.append(build_detector("exact", objects))
        elif method == "gjk":
            for iterations, parts, triangles in itertools.product(gjk_iterations, gjk_parts, gjk_triangles):
                cfg = GjkConfig(max_iterations=iterations, max_decomposition=parts, max_triangles_per_hull=triangles)
                detectors.append(GjkDetector(objects, cfg, threads=threads))
        elif method == "iscd":
            detectors.extend(IsCdDetector(objects, IsCdConfig(points=points)) for points in iscd_points)
        elif method == "locc":
            if checkpoint is None:
                raise CheckpointError("locc rows need a trained checkpoint")
            params, cfg = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
            detectors.append(LoccDetector(objects, params, cfg))
        else:
            raise ValueError(f"Invalid method: {method}. Must be one of: exact, gjk, iscd, locc")
    return detectors


def measure(
    detector: CollisionDetector,
    pairs: Sequence[LabeledPair],
    batch_size: int,
    warmups: int = WARMUPS,
    repeats: int = REPEATS,
) -> Tuple[np.ndarray, float]:
    """
    Verdicts and checks per second of one detector.

    Each pass runs every batch through collide_batch; only the narrow phase
    is on the clock. Throughput is the narrow-phase verdict count over the
    median pass time.
    """
    queries = [(p.id1, p.q1, p.id2, p.q2) for p in pairs]
    batches = [queries[i:i + batch_size] for i in range(0, len(queries), batch_size)]

    def one_pass():
        results = [detector.collide_batch(batch) for batch in batches]
        verdicts = np.concatenate([r.verdicts for r in results])
        return verdicts, sum(r.elapsed for r in results), sum(r.narrow_count for r in results)

    for _ in range(warmups):
        one_pass()
    verdicts, elapsed, count = one_pass()
    times = [elapsed]
    for _ in range(repeats - 1):
        times.append(one_pass()[1])
    median = statistics.median(times)
    if count == 0:
        return verdicts, float("inf")
    return verdicts, count / max(median, 1e-12)


def bench_accuracy_speed(
    testsets: Mapping[str, Sequence[LabeledPair]],
    detectors: Sequence[CollisionDetector],
    batch_size: int = 256,
    warmups: int = WARMUPS,
    repeats: int = REPEATS,
) -> List[BenchRow]:
    """
    Accuracy against the stored oracle labels and throughput for every
    detector on every test set ("known" / "unknown").

    Args:
        testsets: test set name -> labelled pairs
        detectors: from methods_grid
        batch_size: queries per collide_batch call
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    rows: List[BenchRow] = []
    for testset, pairs in testsets.items():
        pairs = list(pairs)
        if not pairs:
            logger.warning(f"Test set '{testset}' is empty; skipped")
            continue
        labels = np.array([p.y for p in pairs], dtype=bool)
        for detector in detectors:
            verdicts, cps = measure(detector, pairs, batch_size, warmups, repeats)
            row = BenchRow(method=detector.name, params=detector.params, accuracy=float(np.mean(verdicts == labels)),
                           cps=cps, testset=testset)
            logger.info(f"{testset} {row.method} [{row.params}]: accuracy {row.accuracy:.4f}, {row.cps:.1f} checks/s")
            rows.append(row)
    return rows


def emit_plot_data(
    rows: Sequence[BenchRow],
    directory: Path | str,
    prefix: str = "bench",
    manifest_hash: Optional[str] = None,
) -> Dict[str, Path]:
    """
    Write one CSV per test set, rows sorted by throughput (ties keep their
    input order). A leading '#' line carries the run's manifest hash.

    Raises:
        EmptyInputError: no rows
    """
    if not rows:
        raise EmptyInputError("no benchmark rows to emit")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    for testset in sorted({row.testset for row in rows}):
        selected = sorted((row for row in rows if row.testset == testset), key=lambda row: row.cps)
        path = directory / f"{prefix}_{testset}.csv"
        with open(path, "w", newline="") as f:
            if manifest_hash:
                f.write(f"# manifest {manifest_hash}\n")
            writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for row in selected:
                writer.writerow(row.model_dump())
        paths[testset] = path
    return paths


def read_plot_data(path: Path | str) -> List[BenchRow]:
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return [BenchRow(**record) for record in csv.DictReader(lines)]
