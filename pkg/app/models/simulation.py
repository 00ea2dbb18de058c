"""
Rigid-body simulation records.
"""
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.models.geometry import Pose


@dataclass(frozen=True, eq=False)
class Shake:
    """Prescribed sinusoidal translation about a base pose."""
    base: Pose
    amplitude: np.ndarray
    frequency: float
    phase: float = 0.0

    def pose(self, t: float) -> Pose:
        return self.base.translated(np.asarray(self.amplitude) * np.sin(2 * np.pi * self.frequency * t + self.phase))

    def velocity(self, t: float) -> np.ndarray:
        w = 2 * np.pi * self.frequency
        return np.asarray(self.amplitude) * w * np.cos(w * t + self.phase)


@dataclass(frozen=True, eq=False)
class BodyState:
    """
    Pose and velocities of one body. Kinematic bodies (shake is set) follow
    their trajectory and ignore contact impulses.
    """
    mesh_id: str
    pose: Pose
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    mass: float
    inertia: np.ndarray
    shake: Optional[Shake] = None

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"body '{self.mesh_id}' mass must be positive, got {self.mass}")
        inertia = np.array(self.inertia, dtype=np.float64).reshape(3, 3)
        if not np.allclose(inertia, inertia.T, rtol=1e-9, atol=1e-15):
            raise ValueError(f"body '{self.mesh_id}' inertia is not symmetric")
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError(f"body '{self.mesh_id}' inertia is not positive definite")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "linear_velocity", np.array(self.linear_velocity, dtype=np.float64).reshape(3))
        object.__setattr__(self, "angular_velocity", np.array(self.angular_velocity, dtype=np.float64).reshape(3))

    @property
    def kinematic(self) -> bool:
        return self.shake is not None

    def world_inertia(self) -> np.ndarray:
        r = self.pose.matrix
        return r @ self.inertia @ r.T

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.pose.as_vector()))
                    and np.all(np.isfinite(self.linear_velocity))
                    and np.all(np.isfinite(self.angular_velocity)))


class SimConfig(BaseModel):
    """Simulator settings; one step advances substeps * dt seconds."""
    dt: float = Field(0.01 / 4, gt=0.0, description="substep size in seconds")
    substeps: int = Field(4, ge=1)
    gravity: Tuple[float, float, float] = (0.0, 0.0, -9.81)
    detector: Literal["locc", "gjk", "exact"] = "exact"
    gjk_hull: bool = Field(True, description="gjk detector uses one convex hull per object")
    stiffness: float = Field(20000.0, gt=0.0, description="penalty acceleration per meter of depth (1/s^2)")
    damping: float = Field(200.0, ge=0.0, description="penalty acceleration per m/s of approach (1/s)")
    locc_depth_scale: float = Field(0.01, gt=0.0, description="depth equivalent of a probability excess of 1 (m)")
    shake_amplitude: float = Field(0.01, ge=0.0)
    shake_frequency: float = Field(2.0, ge=0.0)
    broadphase_slack: float = Field(0.01, ge=0.0)
    sd_samples: int = Field(500, ge=1)
    density: float = Field(500.0, gt=0.0)
    bowl_id: str = "bowl_wide"
    drop_ids: List[str] = Field(default_factory=lambda: ["box_cube", "sphere_ball", "capsule", "cylinder_can"])
    threads: int = Field(1, ge=1)

    class Config:
        json_schema_extra = {
            "example": {
                "detector": "exact",
                "dt": 0.0025,
                "substeps": 4,
                "stiffness": 20000.0,
                "damping": 200.0
            }
        }

    @property
    def step_seconds(self) -> float:
        return self.dt * self.substeps


class ContactEvent(BaseModel):
    """
    One reported contact: the state at the first substep of a step in which
    the detector reported the pair, and the impulses applied over the step.
    """
    env: int = 0
    step: int
    substep: int
    pair: Tuple[int, int]
    ids: Tuple[str, str]
    q1: List[float]
    q2: List[float]
    min_abs_sd: float
    impulse1: List[float] = Field(..., min_length=6, max_length=6)
    impulse2: List[float] = Field(..., min_length=6, max_length=6)


class SdStatistics(BaseModel):
    """min-|sd| aggregated over every logged contact."""
    events: int
    average: float
    top10_average: float
    maximum: float


@dataclass
class ShakeResult:
    logs: List[List[ContactEvent]]
    statistics: Optional[SdStatistics]
    steps: int
    seconds_per_step: float
    energies: List[List[float]] = field(default_factory=list)
