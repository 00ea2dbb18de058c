"""
Query-point (IS-CD) detector.
"""
from typing import Mapping, Optional

from app.models.geometry import Pose
from app.services.detectors.base import CollisionDetector
from app.services.geometry.primitives import ObjectEntry
from app.services.iscd import IsCdConfig, iscd_boolean, query_points


class IsCdDetector(CollisionDetector):

    def __init__(self, objects: Mapping[str, ObjectEntry], cfg: Optional[IsCdConfig] = None):
        super().__init__(objects)
        self.cfg = cfg or IsCdConfig()

    @property
    def name(self) -> str:
        return "is-cd"

    @property
    def params(self) -> str:
        return self.cfg.label()

    def narrow_phase(self, id1: str, q1: Pose, id2: str, q2: Pose) -> bool:
        return iscd_boolean(self.objects[id1].mesh, q1, self.objects[id2].mesh, q2, self.cfg)

    def prepare(self, queries):
        # Build each mesh's query points outside the timed region.
        for id1, _, id2, _ in queries:
            for key in (id1, id2):
                mesh = self.objects[key].mesh
                query_points(mesh, self.cfg.points, self.cfg.seed, self.cfg.interior_fraction, self.cfg.jitter)
        return list(queries)
