"""
Dataset records and generation configuration.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.models.geometry import Pose


class GenConfig(BaseModel):
    """Synthetic pair generation settings (meters)."""
    pose_bound: float = Field(0.5, ge=0.0)
    test_bound: float = Field(0.12, ge=0.0)
    delta_sigma: float = Field(0.020, gt=0.0)
    pairs: int = Field(1000, ge=1)
    penetrate_probability: float = Field(0.5, ge=0.0, le=1.0)
    max_attempts: int = Field(100, ge=1)
    min_positive_fraction: float = Field(0.35, ge=0.0, le=0.5)
    max_draw_rounds: int = Field(50, ge=1, description="redraw rounds before giving up on the positive quota")
    seed: int = 0

    class Config:
        json_schema_extra = {
            "example": {
                "pose_bound": 0.5,
                "delta_sigma": 0.02,
                "pairs": 2000,
                "seed": 7
            }
        }

    @model_validator(mode="after")
    def check_bounds(self):
        if self.test_bound > self.pose_bound and self.pose_bound > 0:
            raise ValueError("test_bound must not exceed pose_bound")
        quota = math.ceil(self.min_positive_fraction * self.pairs)
        if self.pairs // 2 < quota:
            raise ValueError(
                f"{self.pairs} pairs cannot hold {quota} positives with positives capped at half; "
                f"lower min_positive_fraction or raise pairs")
        if self.penetrate_probability == 0.0 and quota > 0:
            raise ValueError("penetrate_probability 0 never produces positives; set min_positive_fraction to 0")
        return self


@dataclass(frozen=True, eq=False)
class LabeledPair:
    """
    One dataset row. delta_target is the intended signed surface gap
    (negative means intended penetration); measured_gap is the gap after
    manipulation, None for rows that were not manipulated.
    """
    id1: str
    id2: str
    q1: Pose
    q2: Pose
    y: bool
    delta_target: float = float("nan")
    measured_gap: Optional[float] = None

    def key(self) -> tuple:
        """Hashable identity of the (object pair, poses) combination."""
        return (self.id1, self.id2, self.q1.as_vector().round(12).tobytes(), self.q2.as_vector().round(12).tobytes())


@dataclass
class Dataset:
    """Rows plus the header written with them."""
    pairs: List[LabeledPair]
    mesh_ids: List[str]
    config: Dict
    seed: int
    manifest_hash: str = ""

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.y for p in self.pairs], dtype=bool)

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if self.pairs else 0.0


@dataclass(frozen=True)
class Split:
    """Known/unknown object split."""
    train_ids: List[str]
    unknown_ids: List[str]
    known_test: List[LabeledPair]
    unknown_test: List[LabeledPair]


@dataclass(frozen=True, eq=False)
class AugmentedSample:
    """A pair with both clouds rotated by R and R^-1 composed onto both poses."""
    points1: np.ndarray
    points2: np.ndarray
    q1: Pose
    q2: Pose
    y: bool
    rotation: np.ndarray
