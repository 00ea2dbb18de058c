"""
Exact mesh oracle as a detector.
"""
from app.models.geometry import Pose
from app.services.detectors.base import CollisionDetector
from app.services.geometry.oracle import exact_collide


class ExactDetector(CollisionDetector):
    """Triangle-pair and containment oracle; accuracy 1.0 by construction."""

    @property
    def name(self) -> str:
        return "exact"

    def narrow_phase(self, id1: str, q1: Pose, id2: str, q2: Pose) -> bool:
        return exact_collide(self.objects[id1].mesh, q1, self.objects[id2].mesh, q2)
