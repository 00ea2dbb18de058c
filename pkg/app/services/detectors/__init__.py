"""
Collision detectors behind one interface, looked up by name.
"""
from typing import Dict, Mapping, Type

from app.services.detectors.base import BatchResult, CollisionDetector, ContactInfo  # noqa: F401
from app.services.detectors.exact import ExactDetector
from app.services.detectors.gjk import GjkDetector
from app.services.detectors.iscd import IsCdDetector
from app.services.detectors.locc import LoccDetector
from app.services.geometry.primitives import ObjectEntry

DETECTORS: Dict[str, Type[CollisionDetector]] = {
    "exact": ExactDetector,
    "gjk": GjkDetector,
    "iscd": IsCdDetector,
    "locc": LoccDetector,
}


def build_detector(name: str, objects: Mapping[str, ObjectEntry], **options) -> CollisionDetector:
    """
    Instantiate a detector by name.

    Raises:
        ValueError: unknown detector name
    """
    if name not in DETECTORS:
        raise ValueError(f"Invalid detector: {name}. Must be one of: {sorted(DETECTORS)}")
    return DETECTORS[name](objects, **options)
