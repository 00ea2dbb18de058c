"""
UCF-GJK detector over convex decompositions or single convex hulls.
"""
import logging
from typing import Dict, Mapping, Optional

import numpy as np

from app.config import settings
from app.models.convex import ConvexSet, GjkConfig
from app.models.geometry import Pose, TriMesh
from app.services.detectors.base import CollisionDetector, ContactInfo
from app.services.geometry.oracle import penetration_probe
from app.services.geometry.primitives import ObjectEntry
from app.services.gjk import batch_boolean, convex_hull, hull_mesh, prepare_set, set_boolean, ucf_gjk


logger = logging.getLogger(__name__)


class GjkDetector(CollisionDetector):
    """
    Args:
        objects: object set
        cfg: iteration / decomposition / triangle caps
        hull_only: use one convex hull per object instead of the decomposition
    """

    def __init__(self, objects: Mapping[str, ObjectEntry], cfg: Optional[GjkConfig] = None,
                 hull_only: bool = False, threads: Optional[int] = None):
        super().__init__(objects)
        self.cfg = cfg or GjkConfig()
        self.hull_only = hull_only
        self.threads = threads or settings.BENCH_THREADS
        self._sets: Dict[str, ConvexSet] = {}
        self._hull_meshes: Dict[tuple, TriMesh] = {}

    @property
    def name(self) -> str:
        return "gjk-hull" if self.hull_only else "ucf-gjk"

    @property
    def params(self) -> str:
        return self.cfg.label()

    def convex_set(self, key: str) -> ConvexSet:
        found = self._sets.get(key)
        if found is None:
            entry = self.objects[key]
            source = ConvexSet((convex_hull(entry.mesh),), key) if self.hull_only else entry.decomposition
            found = self._sets.setdefault(key, prepare_set(source, self.cfg))
        return found

    def narrow_phase(self, id1: str, q1: Pose, id2: str, q2: Pose) -> bool:
        return set_boolean(self.convex_set(id1), q1, self.convex_set(id2), q2, self.cfg)

    def prepare(self, queries):
        return [(self.convex_set(a), qa, self.convex_set(b), qb) for a, qa, b, qb in queries]

    def narrow_batch(self, prepared) -> np.ndarray:
        return np.array(batch_boolean(prepared, self.cfg, self.threads).verdicts, dtype=bool)

    def _hull_mesh(self, key: str, index: int) -> TriMesh:
        found = self._hull_meshes.get((key, index))
        if found is None:
            found = self._hull_meshes.setdefault((key, index), hull_mesh(self.convex_set(key).hulls[index], f"{key}#{index}"))
        return found

    def contact(self, id1: str, q1: Pose, id2: str, q2: Pose, samples: Optional[int] = None) -> Optional[ContactInfo]:
        """
        Penetration of the deepest colliding hull pair, probed on the hull
        triangulations: the detector only knows its convex geometry.
        """
        if not self.collide(id1, q1, id2, q2):
            return None
        samples = samples or settings.SD_SAMPLES
        s1, s2 = self.convex_set(id1), self.convex_set(id2)
        best = None
        for i, h1 in enumerate(s1.hulls):
            for j, h2 in enumerate(s2.hulls):
                hit = ucf_gjk(q1.apply(h1.vertices)[None], q2.apply(h2.vertices)[None], self.cfg.max_iterations)
                if not hit.colliding[0]:
                    continue
                probe = penetration_probe(self._hull_mesh(id1, i), q1, self._hull_mesh(id2, j), q2, samples)
                if best is None or probe.depth > best.depth:
                    best = probe
        if best is None:
            return ContactInfo(score=0.0)
        return ContactInfo(score=best.depth, depth=best.depth, normal=best.normal, point=best.point)
