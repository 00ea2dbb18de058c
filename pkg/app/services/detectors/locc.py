"""
Learned LOCC detector.
"""
from typing import Mapping, Optional

import numpy as np

from app.models.geometry import Pose
from app.models.locc import LoccConfig, LoccParams
from app.services.detectors.base import CollisionDetector, ContactInfo
from app.services.geometry.primitives import ObjectEntry
from app.services.locc import EmbeddingCache, pose_gradient, predict_collision, predict_many

THRESHOLD = 0.5


class LoccDetector(CollisionDetector):
    """
    Probability above 0.5 means collision; exactly 0.5 counts as no collision.
    Shape embeddings are computed once per object and cached.
    """

    def __init__(self, objects: Mapping[str, ObjectEntry], params: LoccParams, cfg: LoccConfig,
                 cache: Optional[EmbeddingCache] = None):
        super().__init__(objects)
        self.model_params = params
        self.cfg = cfg
        self.cache = cache or EmbeddingCache()

    @property
    def name(self) -> str:
        return "locc" if self.cfg.variant == "local" else "global-ocn"

    @property
    def params(self) -> str:
        return f"K={self.cfg.points};M={self.cfg.grid};H={self.cfg.point_features};F={self.cfg.cell_features}"

    def embedding(self, key: str):
        return self.cache.get(self.objects[key].mesh, self.model_params, self.cfg)

    def probability(self, id1: str, q1: Pose, id2: str, q2: Pose) -> float:
        return predict_collision(self.embedding(id1), q1, self.embedding(id2), q2, self.model_params, self.cfg)

    def narrow_phase(self, id1: str, q1: Pose, id2: str, q2: Pose) -> bool:
        return self.probability(id1, q1, id2, q2) > THRESHOLD

    def prepare(self, queries):
        return [(self.embedding(a), qa, self.embedding(b), qb) for a, qa, b, qb in queries]

    def narrow_batch(self, prepared) -> np.ndarray:
        return predict_many(prepared, self.model_params, self.cfg) > THRESHOLD

    def contact(self, id1: str, q1: Pose, id2: str, q2: Pose, samples: Optional[int] = None) -> Optional[ContactInfo]:
        if not self.collide(id1, q1, id2, q2):
            return None
        e1, e2 = self.embedding(id1), self.embedding(id2)
        score = predict_collision(e1, q1, e2, q2, self.model_params, self.cfg)
        gradients = pose_gradient(e1, q1, e2, q2, self.model_params, self.cfg)
        return ContactInfo(score=score, gradients=gradients)
