"""
Named-parameter checkpoints: a flat little-endian float64 blob plus a text
manifest of (name, shape, byte offset) lines.
"""
import logging
from pathlib import Path
from typing import Dict

import numpy as np

from app.exceptions import CheckpointError


logger = logging.getLogger(__name__)

BLOB = "params.bin"
MANIFEST = "params.manifest"


def save_params(params: Dict[str, np.ndarray], directory: Path | str) -> Path:
    """Write params in sorted-name order; reloading is bit-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offset = 0
    lines = ["# name shape offset"]
    with open(directory / BLOB, "wb") as blob:
        for name in sorted(params):
            array = np.ascontiguousarray(params[name], dtype="<f8")
            shape = ",".join(str(s) for s in array.shape) or "-"
            lines.append(f"{name} {shape} {offset}")
            blob.write(array.tobytes())
            offset += array.nbytes
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    logger.info(f"Saved {len(params)} parameter arrays ({offset} bytes) to {directory}")
    return directory


def load_params(directory: Path | str) -> Dict[str, np.ndarray]:
    """
    Read a checkpoint written by save_params.

    Raises:
        CheckpointError: missing files, malformed manifest or truncated blob
    """
    directory = Path(directory)
    try:
        raw = (directory / BLOB).read_bytes()
        manifest = (directory / MANIFEST).read_text().splitlines()
    except FileNotFoundError as e:
        raise CheckpointError(f"incomplete checkpoint at {directory}: {e}") from e
    params = {}
    for line in manifest:
        if not line.strip() or line.startswith("#"):
            continue
        try:
            name, shape_text, offset_text = line.split()
            shape = () if shape_text == "-" else tuple(int(s) for s in shape_text.split(","))
            offset = int(offset_text)
        except ValueError as e:
            raise CheckpointError(f"bad manifest line '{line}' in {directory}") from e
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"parameter '{name}' runs past the end of {BLOB}")
        params[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).astype(np.float64).reshape(shape)
    return params
