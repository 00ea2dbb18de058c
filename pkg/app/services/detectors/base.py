"""
Base collision detector interface.
Defines the contract shared by the exact oracle and the three baselines.
"""
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.exceptions import EmptyInputError
from app.models.geometry import Obb, Pose
from app.services.geometry.mesh import aabb_of
from app.services.geometry.oracle import penetration_probe
from app.services.geometry.primitives import ObjectEntry


logger = logging.getLogger(__name__)

Query = Tuple[str, Pose, str, Pose]


@dataclass
class BatchResult:
    """Verdicts for a batch and the seconds spent in the narrow phase."""
    verdicts: np.ndarray
    elapsed: float
    narrow_count: int


@dataclass
class ContactInfo:
    """
    What a detector knows about one reported contact.

    normal moves body 1 out of body 2 (geometric detectors); gradients are
    d(score)/d(pose 7-vector) of both bodies (learned detector).
    """
    score: float
    depth: float = 0.0
    normal: Optional[np.ndarray] = None
    point: Optional[np.ndarray] = None
    gradients: Optional[Tuple[np.ndarray, np.ndarray]] = None


class CollisionDetector(ABC):
    """
    Abstract base class for collision detectors.

    The disjoint-OBB short circuit lives here so every method sees the same
    broad phase; subclasses only implement the narrow phase.
    """

    def __init__(self, objects: Mapping[str, ObjectEntry]):
        """
        Initialize detector with the object set it answers queries about.

        Args:
            objects: id -> ObjectEntry (mesh + decomposition)
        """
        self.objects = objects
        self._obb_boxes = {key: aabb_of(entry.mesh) for key, entry in objects.items()}

    @property
    @abstractmethod
    def name(self) -> str:
        """Method name used in benchmark rows and CLI flags."""
        pass

    @property
    def params(self) -> str:
        """Hyperparameter label for benchmark rows."""
        return ""

    @abstractmethod
    def narrow_phase(self, id1: str, q1: Pose, id2: str, q2: Pose) -> bool:
        """
        Precise verdict for a pair whose OBBs overlap.

        Why: the broad phase is shared, so this is the only place methods differ.
        """
        pass

    def broad_phase(self, queries: Sequence[Query]) -> np.ndarray:
        """OBB overlap mask, computed identically for every method."""
        return np.array([
            Obb(self._obb_boxes[a], qa).overlaps(Obb(self._obb_boxes[b], qb)) for a, qa, b, qb in queries
        ], dtype=bool)

    def collide(self, id1: str, q1: Pose, id2: str, q2: Pose) -> bool:
        if not self.broad_phase([(id1, q1, id2, q2)])[0]:
            return False
        return bool(self.narrow_phase(id1, q1, id2, q2))

    def prepare(self, queries: Sequence[Query]) -> Any:
        """Untimed per-batch setup (caches, hull preparation)."""
        return list(queries)

    def narrow_batch(self, prepared: Any) -> np.ndarray:
        """Timed narrow phase over the prepared batch."""
        return np.array([self.narrow_phase(*q) for q in prepared], dtype=bool)

    def collide_batch(self, queries: Sequence[Query]) -> BatchResult:
        """
        Verdicts for many queries; only the narrow phase is timed.

        Returns:
            BatchResult with verdicts in query order
        """
        if not queries:
            raise EmptyInputError("collide_batch needs at least one query")
        mask = self.broad_phase(queries)
        live = [q for q, keep in zip(queries, mask) if keep]
        verdicts = np.zeros(len(queries), dtype=bool)
        if not live:
            return BatchResult(verdicts, 0.0, 0)
        prepared = self.prepare(live)
        start = time.perf_counter()
        hits = self.narrow_batch(prepared)
        elapsed = time.perf_counter() - start
        verdicts[mask] = hits
        return BatchResult(verdicts, elapsed, len(live))

    def contact(self, id1: str, q1: Pose, id2: str, q2: Pose, samples: Optional[int] = None) -> Optional[ContactInfo]:
        """
        Contact details when the pair is reported colliding, else None.
        Default: sampled penetration of the exact meshes.
        """
        if not self.collide(id1, q1, id2, q2):
            return None
        probe = penetration_probe(self.objects[id1].mesh, q1, self.objects[id2].mesh, q2,
                                  samples or settings.SD_SAMPLES)
        return ContactInfo(score=probe.depth, depth=probe.depth, normal=probe.normal, point=probe.point)

    def mesh_pairs(self, queries: Sequence[Query]) -> List[tuple]:
        return [(self.objects[a].mesh, qa, self.objects[b].mesh, qb) for a, qa, b, qb in queries]
