"""
Collision query endpoints.
Answers single pair queries synchronously over the configured object set.
"""
import threading
from functools import lru_cache
from typing import Dict, List, Mapping

from fastapi import APIRouter, Depends, HTTPException, Query
from pydantic import BaseModel

from app.config import settings
from app.exceptions import LoccError
from app.models.api import CollideRequest, CollideResponse
from app.models.geometry import Pose
from app.services.detectors import CollisionDetector, build_detector
from app.services.detectors.locc import LoccDetector
from app.services.geometry.primitives import ObjectEntry, object_set
from app.services.locc import load_checkpoint


router = APIRouter(tags=["collision"])

_detectors: Dict[tuple, CollisionDetector] = {}
_lock = threading.Lock()


class ObjectItem(BaseModel):
    """One object of the set."""
    id: str
    convex: bool
    parts: int
    triangles: int

    class Config:
        json_schema_extra = {
            "example": {
                "id": "bowl_wide",
                "convex": False,
                "parts": 9,
                "triangles": 288
            }
        }


class ObjectsResponse(BaseModel):
    objects: List[ObjectItem]


@lru_cache(maxsize=1)
def get_objects() -> Mapping[str, ObjectEntry]:
    """Object set loaded once per process (OBJECTS_DIR or the bundled set)."""
    return object_set(settings.OBJECTS_DIR)


def _detector(request: CollideRequest, objects: Mapping[str, ObjectEntry]) -> CollisionDetector:
    key = (request.detector, request.gjk.label() if request.gjk else None,
           str(request.checkpoint) if request.checkpoint else None, id(objects))
    with _lock:
        found = _detectors.get(key)
        if found is None:
            if request.detector == "locc":
                if request.checkpoint is None:
                    raise HTTPException(status_code=400, detail="detector 'locc' needs a checkpoint")
                params, cfg = load_checkpoint(request.checkpoint)
                found = build_detector("locc", objects, params=params, cfg=cfg)
            elif request.detector == "gjk":
                found = build_detector("gjk", objects, cfg=request.gjk)
            else:
                found = build_detector(request.detector, objects)
            _detectors[key] = found
    return found


@router.get("/objects", response_model=ObjectsResponse)
async def list_objects(
    limit: int = Query(100, ge=1, le=1000, description="Maximum number of objects to return"),
    objects: Mapping[str, ObjectEntry] = Depends(get_objects),
) -> ObjectsResponse:
    """Object ids with their convexity and decomposition size, sorted by id."""
    items = [
        ObjectItem(id=key, convex=entry.convex, parts=len(entry.decomposition.hulls),
                   triangles=len(entry.mesh.triangles))
        for key, entry in sorted(objects.items())
    ]
    return ObjectsResponse(objects=items[:limit])


@router.post("/collide", response_model=CollideResponse)
def collide(
    request: CollideRequest,
    objects: Mapping[str, ObjectEntry] = Depends(get_objects),
) -> CollideResponse:
    """
    Collision verdict for one posed pair.

    Why: quick interactive checks of any detector against the same object
    set the benchmark uses.
    """
    for key in (request.id1, request.id2):
        if key not in objects:
            raise HTTPException(status_code=404, detail=f"Unknown object: {key}")
    try:
        q1, q2 = Pose.from_vector(request.q1), Pose.from_vector(request.q2)
        detector = _detector(request, objects)
        colliding = detector.collide(request.id1, q1, request.id2, q2)
        probability = None
        if isinstance(detector, LoccDetector):
            probability = detector.probability(request.id1, q1, request.id2, q2)
    except (LoccError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except HTTPException:
        raise
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Collision query failed: {str(e)}")
    return CollideResponse(detector=detector.name, colliding=colliding, probability=probability)
