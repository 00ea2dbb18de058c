"""
Training configuration and evaluation reports.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.models.locc import LoccConfig, LoccParams
from app.services.nn.optim import LossTerms


class TrainConfig(BaseModel):
    """Optimiser and schedule settings."""
    learning_rate: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    alpha: float = Field(0.5, ge=0.0)
    epochs: int = Field(20, ge=1)
    seed: int = 0
    eval_every: int = Field(1, ge=1, description="validation cadence in epochs")
    patience: int = Field(5, ge=1)
    validation_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    augment: bool = True
    label_check: int = Field(100, ge=0, description="augmented samples re-labelled by the oracle per epoch")
    variant: Literal["local", "global"] = "local"

    class Config:
        json_schema_extra = {
            "example": {
                "learning_rate": 0.001,
                "batch_size": 32,
                "alpha": 0.5,
                "epochs": 20,
                "seed": 0,
                "variant": "local"
            }
        }


class EvalReport(BaseModel):
    """Confusion counts at the decision threshold plus throughput."""
    accuracy: float = Field(..., ge=0.0, le=1.0)
    tp: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    cps: float = Field(..., ge=0.0)
    mean_probability: Optional[float] = None

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @model_validator(mode="after")
    def accuracy_matches_counts(self):
        if self.total and abs(self.accuracy - (self.tp + self.tn) / self.total) > 1e-12:
            raise ValueError("accuracy must equal (tp + tn) / total")
        return self


class SweepRow(BaseModel):
    """One cell of the data-efficiency table."""
    objects: int
    variant: Literal["local", "global"]
    accuracy_mean: float
    accuracy_std: float
    seeds: int


@dataclass
class TrainResult:
    params: LoccParams
    config: LoccConfig
    losses: List[LossTerms] = field(default_factory=list)
    validation: List[float] = field(default_factory=list)
    train_accuracy: float = 0.0
    stopped_early: bool = False
    checkpoint: Optional[Path] = None

    @property
    def loss_curve(self) -> List[float]:
        return [term.total for term in self.losses]
