"""
Benchmark rows and run manifests.
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class BenchRow(BaseModel):
    """One accuracy/throughput point of the accuracy-speed plot."""
    method: str
    params: str
    accuracy: float = Field(..., ge=0.0, le=1.0)
    cps: float = Field(..., gt=0.0)
    testset: Literal["known", "unknown"]

    class Config:
        json_schema_extra = {
            "example": {
                "method": "ucf-gjk",
                "params": "iters=9;parts=8;tris=32",
                "accuracy": 0.93,
                "cps": 18250.0,
                "testset": "known"
            }
        }


class RunManifest(BaseModel):
    """
    Provenance of one CLI or task run.

    Only config, seeds and version enter the hash; timestamps, machine and
    thread count are recorded alongside it.
    """
    command: str
    config: Dict[str, Any]
    seeds: List[int]
    version: str
    machine: Dict[str, Any] = Field(default_factory=dict)
    threads: int = 1
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    hash: str = ""
    outputs: List[str] = Field(default_factory=list)
