"""
Run manifests: deterministic input hash plus timing/machine provenance.
"""
import hashlib
import json
import logging
import os
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable

from app import __version__
from app.config import settings
from app.models.bench import RunManifest


logger = logging.getLogger(__name__)


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def manifest_hash(config: Dict[str, Any], seeds: Iterable[int], version: str = __version__) -> str:
    """sha256 over the canonical JSON of config, seeds and tool version."""
    payload = json.dumps({"config": _jsonable(config), "seeds": list(seeds), "version": version},
                         sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def machine_descriptor() -> Dict[str, Any]:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "processor": platform.processor() or platform.machine(),
        "cpus": os.cpu_count(),
    }


def start_manifest(command: str, config: Dict[str, Any], seeds: Iterable[int]) -> RunManifest:
    seeds = list(seeds)
    config = _jsonable(config)
    return RunManifest(
        command=command,
        config=config,
        seeds=seeds,
        version=__version__,
        machine=machine_descriptor(),
        threads=settings.BENCH_THREADS,
        started_at=datetime.now(timezone.utc).isoformat(),
        hash=manifest_hash(config, seeds),
    )


def finish_manifest(manifest: RunManifest, outputs: Iterable[Path | str], directory: Path | str) -> Path:
    """Stamp the end time and write `<command>.manifest.json` next to the outputs."""
    manifest.finished_at = datetime.now(timezone.utc).isoformat()
    manifest.outputs = [str(p) for p in outputs]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{manifest.command}.manifest.json"
    path.write_text(manifest.model_dump_json(indent=2))
    logger.info(f"Run manifest {manifest.hash[:12]} written to {path}")
    return path
