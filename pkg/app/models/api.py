"""
Request and response models shared by the CLI, the Celery tasks and the HTTP routes.
"""
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from app.config import settings
from app.models.convex import GjkConfig
from app.models.dataset import GenConfig
from app.models.locc import LoccConfig
from app.models.simulation import SimConfig
from app.models.training import TrainConfig


class GenDataRequest(BaseModel):
    """Generate a training dataset and, optionally, known/unknown test sets."""
    gen: GenConfig = Field(default_factory=GenConfig)
    out: Path = Field(default_factory=lambda: settings.DATA_DIR / "dataset.bin")
    objects_dir: Optional[Path] = None
    holdout: int = Field(0, ge=0, description="objects held out as the unknown set")
    test_pairs: int = Field(0, ge=0, description="pairs per test set; 0 skips the test sets")
    threads: Optional[int] = Field(None, ge=1)
    export_objects: Optional[Path] = None

    class Config:
        json_schema_extra = {
            "example": {
                "gen": {"pairs": 2000, "seed": 7},
                "out": "data/dataset.bin",
                "holdout": 5,
                "test_pairs": 200
            }
        }


class TrainRequest(BaseModel):
    data: Path
    out: Path = Field(default_factory=lambda: settings.checkpoint_dir / "locc")
    train: TrainConfig = Field(default_factory=TrainConfig)
    locc: LoccConfig = Field(default_factory=LoccConfig)
    objects_dir: Optional[Path] = None

    class Config:
        json_schema_extra = {
            "example": {
                "data": "data/dataset.bin",
                "out": "data/checkpoints/locc",
                "train": {"epochs": 20, "seed": 0, "variant": "local"},
                "locc": {"points": 256, "grid": 6, "point_features": 64, "cell_features": 16}
            }
        }


class EvalRequest(BaseModel):
    checkpoint: Path
    data: Path
    objects_dir: Optional[Path] = None
    threshold: float = Field(0.5, gt=0.0, lt=1.0)
    out: Optional[Path] = None


class BenchRequest(BaseModel):
    """Accuracy-speed sweep over the detectors."""
    known: Path
    unknown: Optional[Path] = None
    out: Path = Field(default_factory=lambda: settings.DATA_DIR / "bench")
    methods: List[Literal["exact", "gjk", "iscd", "locc"]] = Field(default_factory=lambda: ["exact", "gjk", "iscd", "locc"])
    gjk_iterations: List[int] = Field(default_factory=lambda: [4, 5, 6, 7, 8, 9])
    gjk_parts: List[int] = Field(default_factory=lambda: [2, 4, 8, 16])
    gjk_triangles: List[int] = Field(default_factory=lambda: [16, 32, 64])
    iscd_points: List[int] = Field(default_factory=lambda: [10, 100, 1000, 10000])
    checkpoint: Optional[Path] = None
    batch_size: int = Field(256, ge=1)
    warmups: int = Field(3, ge=0)
    repeats: int = Field(5, ge=1)
    objects_dir: Optional[Path] = None
    threads: Optional[int] = Field(None, ge=1)

    class Config:
        json_schema_extra = {
            "example": {
                "known": "data/dataset_known.bin",
                "unknown": "data/dataset_unknown.bin",
                "methods": ["exact", "gjk", "iscd"],
                "gjk_iterations": [4, 9],
                "iscd_points": [10, 100]
            }
        }


class SimulateRequest(BaseModel):
    sim: SimConfig = Field(default_factory=SimConfig)
    envs: int = Field(8, ge=1)
    duration: float = Field(5.0, ge=0.0)
    seed: int = 0
    out: Path = Field(default_factory=lambda: settings.DATA_DIR / "contacts.jsonl")
    checkpoint: Optional[Path] = None
    objects_dir: Optional[Path] = None
    scaling: List[int] = Field(default_factory=list, description="env counts for the wall-time curve")

    class Config:
        json_schema_extra = {
            "example": {
                "sim": {"detector": "exact"},
                "envs": 8,
                "duration": 5.0,
                "seed": 0
            }
        }


class SweepRequest(BaseModel):
    """Data-efficiency table: unknown-object accuracy against training object count."""
    counts: List[int] = Field(default_factory=lambda: [3, 6, 12])
    pairs: int = Field(2000, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    holdout: int = Field(5, ge=1)
    test_pairs: int = Field(200, ge=1)
    out: Path = Field(default_factory=lambda: settings.DATA_DIR / "sweep.csv")
    train: TrainConfig = Field(default_factory=TrainConfig)
    locc: LoccConfig = Field(default_factory=LoccConfig)
    gen: GenConfig = Field(default_factory=GenConfig)
    objects_dir: Optional[Path] = None


class CollideRequest(BaseModel):
    """One collision query over the object set; poses are (qw, qx, qy, qz, tx, ty, tz)."""
    id1: str
    id2: str
    q1: List[float] = Field(..., min_length=7, max_length=7)
    q2: List[float] = Field(..., min_length=7, max_length=7)
    detector: Literal["exact", "gjk", "iscd", "locc"] = "exact"
    gjk: Optional[GjkConfig] = None
    checkpoint: Optional[Path] = None

    class Config:
        json_schema_extra = {
            "example": {
                "id1": "box_cube",
                "id2": "sphere_ball",
                "q1": [1, 0, 0, 0, 0, 0, 0],
                "q2": [1, 0, 0, 0, 0.05, 0, 0],
                "detector": "exact"
            }
        }


class CollideResponse(BaseModel):
    detector: str
    colliding: bool
    probability: Optional[float] = None
