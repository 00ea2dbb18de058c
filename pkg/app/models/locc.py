"""
LOCC network configuration and the records it produces.
"""
import threading
from dataclasses import dataclass
from typing import Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from app.models.geometry import Aabb


class LoccConfig(BaseModel):
    """
    Shape encoder / collision predictor hyperparameters.

    cell_features defaults to 16; the wider 64 setting is a config change.
    """
    points: int = Field(1500, ge=1)
    grid: int = Field(6, ge=3)
    point_features: int = Field(256, ge=1)
    cell_features: int = Field(16, ge=1)
    encoder_depth: int = Field(3, ge=3, le=4)
    conv_channels: int = Field(128, ge=1)
    global_dim: int = Field(256, ge=1)
    predictor_width: int = Field(128, ge=1)
    global_pooling: Literal["average", "max"] = "average"
    variant: Literal["local", "global"] = "local"

    class Config:
        json_schema_extra = {
            "example": {
                "points": 256,
                "grid": 6,
                "point_features": 64,
                "cell_features": 16,
                "conv_channels": 32,
                "global_dim": 64,
                "predictor_width": 64,
                "global_pooling": "average",
                "variant": "local"
            }
        }

    @property
    def cells(self) -> int:
        return self.grid ** 3


@dataclass(frozen=True, eq=False)
class ShapeEmbedding:
    """
    Encoder output for one object.

    grid is (M, M, M, F) for the local variant and None for the global one;
    global_feature is always the pooled (G,) vector.
    """
    grid: Optional[np.ndarray]
    global_feature: np.ndarray
    aabb: Aabb
    source_id: str

    def cell_features(self) -> np.ndarray:
        """Grid flattened to (M^3, F) in x-major cell order."""
        return self.grid.reshape(-1, self.grid.shape[-1])


@dataclass(frozen=True)
class CellSelection:
    """
    Boolean masks over the M^3 cells of each object. epsilon1 and epsilon2
    are the selection margins of object 1 and object 2: each object's own
    cell half-diagonal.
    """
    mask1: np.ndarray
    mask2: np.ndarray
    epsilon1: float
    epsilon2: float

    @property
    def empty(self) -> bool:
        return not (self.mask1.any() or self.mask2.any())


class LoccParams:
    """
    Named parameter arrays plus a version counter bumped on every update;
    (mesh id, version) keys the embedding cache.
    """

    def __init__(self, arrays: Dict[str, np.ndarray], version: int = 0):
        self.arrays = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
        self.version = version
        self._lock = threading.Lock()

    def update(self, arrays: Dict[str, np.ndarray]) -> None:
        with self._lock:
            self.arrays = arrays
            self.version += 1

    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays
