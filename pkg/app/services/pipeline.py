"""
End-to-end runs shared by the CLI and the background tasks.

Each run writes its outputs plus a `<command>.manifest.json` and returns a
JSON-ready summary.
"""
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from app.config import settings
from app.models.api import BenchRequest, EvalRequest, GenDataRequest, SimulateRequest, SweepRequest, TrainRequest
from app.models.dataset import Dataset
from app.services.benchmark import bench_accuracy_speed, emit_plot_data, methods_grid
from app.services.datagen import generate_dataset, load_dataset, save_dataset, split_known_unknown
from app.services.geometry.mesh import write_obj
from app.services.geometry.primitives import object_set
from app.services.gjk import write_decomposition
from app.services.manifest import finish_manifest, start_manifest
from app.services.simulation import run_shake_scenario, scaling_curve, write_event_log
from app.services.training import data_efficiency_sweep, evaluate, train, write_sweep_csv


logger = logging.getLogger(__name__)

Progress = Optional[Callable[[str], None]]


def _report(progress: Progress, status: str) -> None:
    logger.info(status)
    if progress:
        progress(status)


def _objects(objects_dir: Optional[Path]):
    return object_set(objects_dir or settings.OBJECTS_DIR)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix}")


def run_gen_data(request: GenDataRequest, progress: Progress = None) -> Dict[str, Any]:
    """Training dataset from the non-held-out objects, then uniform known/unknown test sets."""
    manifest = start_manifest("gen-data", request.model_dump(mode="json"), [request.gen.seed])
    objects = _objects(request.objects_dir)
    outputs: List[Path] = []

    if request.export_objects:
        directory = Path(request.export_objects)
        directory.mkdir(parents=True, exist_ok=True)
        for key, entry in objects.items():
            write_obj(entry.mesh, directory / f"{key}.obj")
            write_decomposition(entry.decomposition, directory / f"{key}.hulls")
        outputs.append(directory)

    holdout = split_known_unknown(objects, request.holdout, request.gen.seed, request.gen, n_test=0)
    _report(progress, f"generating {request.gen.pairs} pairs over {len(holdout.train_ids)} objects")
    dataset = generate_dataset({k: objects[k] for k in holdout.train_ids}, request.gen, request.threads)
    outputs.append(save_dataset(dataset, request.out))
    summary: Dict[str, Any] = {
        "pairs": len(dataset.pairs),
        "positive_fraction": dataset.positive_fraction,
        "unknown_ids": holdout.unknown_ids,
    }

    if request.test_pairs:
        _report(progress, f"drawing {request.test_pairs} test pairs per set")
        split = split_known_unknown(objects, request.holdout, request.gen.seed, request.gen,
                                    n_test=request.test_pairs, exclude=dataset.pairs)
        for name, pairs in (("known", split.known_test), ("unknown", split.unknown_test)):
            if not pairs:
                continue
            test = Dataset(pairs, sorted(objects), request.gen.model_dump(), request.gen.seed, manifest.hash)
            outputs.append(save_dataset(test, _sibling(Path(request.out), name)))
            summary[f"{name}_positive_fraction"] = test.positive_fraction

    manifest_path = finish_manifest(manifest, outputs, Path(request.out).parent)
    return {**summary, "outputs": [str(p) for p in outputs], "manifest": str(manifest_path), "hash": manifest.hash}


def run_train(request: TrainRequest, progress: Progress = None) -> Dict[str, Any]:
    manifest = start_manifest("train", request.model_dump(mode="json"), [request.train.seed])
    objects = _objects(request.objects_dir)
    dataset = load_dataset(request.data)
    _report(progress, f"training {request.train.variant} model on {len(dataset.pairs)} pairs")
    result = train(dataset, objects, request.train, request.locc, request.out)
    meta_path = Path(request.out) / "config.json"
    meta = json.loads(meta_path.read_text())
    meta["manifest"] = manifest.hash
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    manifest_path = finish_manifest(manifest, [request.out], request.out)
    return {
        "checkpoint": str(result.checkpoint),
        "steps": len(result.losses),
        "final_loss": result.loss_curve[-1] if result.losses else None,
        "train_accuracy": result.train_accuracy,
        "stopped_early": result.stopped_early,
        "manifest": str(manifest_path),
        "hash": manifest.hash,
    }


def run_eval(request: EvalRequest, progress: Progress = None) -> Dict[str, Any]:
    manifest = start_manifest("eval", request.model_dump(mode="json"), [])
    objects = _objects(request.objects_dir)
    pairs = load_dataset(request.data).pairs
    _report(progress, f"evaluating {request.checkpoint} on {len(pairs)} pairs")
    report = evaluate(request.checkpoint, pairs, objects, request.threshold)
    outputs = []
    if request.out:
        out = Path(request.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.model_dump_json(indent=2))
        outputs.append(out)
    manifest_path = finish_manifest(manifest, outputs, Path(request.out).parent if request.out else Path(request.data).parent)
    return {**report.model_dump(), "manifest": str(manifest_path), "hash": manifest.hash}


def run_bench(request: BenchRequest, progress: Progress = None) -> Dict[str, Any]:
    threads = request.threads or settings.BENCH_THREADS
    manifest = start_manifest("bench", request.model_dump(mode="json"), [])
    manifest.threads = threads
    objects = _objects(request.objects_dir)
    testsets = {"known": load_dataset(request.known).pairs}
    if request.unknown:
        testsets["unknown"] = load_dataset(request.unknown).pairs
    detectors = methods_grid(
        objects, request.methods, request.gjk_iterations, request.gjk_parts, request.gjk_triangles,
        request.iscd_points, request.checkpoint, threads,
    )
    _report(progress, f"benchmarking {len(detectors)} configurations on {', '.join(testsets)}")
    rows = bench_accuracy_speed(testsets, detectors, request.batch_size, request.warmups, request.repeats)
    paths = emit_plot_data(rows, request.out, manifest_hash=manifest.hash)
    manifest_path = finish_manifest(manifest, list(paths.values()), request.out)
    return {"rows": len(rows), "outputs": {k: str(v) for k, v in paths.items()},
            "manifest": str(manifest_path), "hash": manifest.hash}


def run_simulate(request: SimulateRequest, progress: Progress = None) -> Dict[str, Any]:
    manifest = start_manifest("simulate", request.model_dump(mode="json"), [request.seed])
    manifest.threads = request.sim.threads
    objects = _objects(request.objects_dir)
    _report(progress, f"simulating {request.envs} environments for {request.duration} s")
    result = run_shake_scenario(objects, request.sim, request.envs, request.duration, request.seed, request.checkpoint)
    outputs = [write_event_log(result.logs, request.out)]
    summary: Dict[str, Any] = {
        "steps": result.steps,
        "events": sum(len(events) for events in result.logs),
        "statistics": result.statistics.model_dump() if result.statistics else None,
        "seconds_per_step": result.seconds_per_step,
    }
    if request.scaling:
        _report(progress, f"measuring wall time for {request.scaling} environments")
        curve = scaling_curve(objects, request.sim, request.scaling, request.duration, request.seed, request.checkpoint)
        curve_path = _sibling(Path(request.out), "scaling").with_suffix(".csv")
        curve_path.write_text("envs,seconds_per_step\n" + "".join(f"{n},{s!r}\n" for n, s in curve))
        outputs.append(curve_path)
        summary["scaling"] = curve
    manifest_path = finish_manifest(manifest, outputs, Path(request.out).parent)
    return {**summary, "outputs": [str(p) for p in outputs], "manifest": str(manifest_path), "hash": manifest.hash}


def run_sweep(request: SweepRequest, progress: Progress = None) -> Dict[str, Any]:
    manifest = start_manifest("sweep", request.model_dump(mode="json"), request.seeds)
    objects = _objects(request.objects_dir)
    _report(progress, f"data-efficiency sweep over counts {request.counts}")
    rows = data_efficiency_sweep(objects, request.counts, request.pairs, request.train, request.locc, request.gen,
                                 request.seeds, request.holdout, request.test_pairs)
    path = write_sweep_csv(rows, request.out)
    manifest_path = finish_manifest(manifest, [path], Path(request.out).parent)
    return {"rows": [row.model_dump() for row in rows], "outputs": [str(path)],
            "manifest": str(manifest_path), "hash": manifest.hash}
