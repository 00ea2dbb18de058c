"""
LOCC collision toolkit FastAPI application.
Synchronous collision queries plus background dataset, training, simulation and benchmark runs.
"""
import logging
from contextlib import asynccontextmanager
from typing import Mapping
from fastapi import Depends, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app import __version__
from app.config import configure_logging, settings
from app.api import collision, pipeline
from app.services.geometry.primitives import ObjectEntry
# Import Celery tasks to register them
from app.services import tasks  # noqa: F401


logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Application lifespan manager.
    Configures logging and loads the object set on startup.
    """
    configure_logging()
    objects = collision.get_objects()
    logger.info(f"{settings.APP_NAME} ready with {len(objects)} objects")
    yield


# Initialize FastAPI application
app = FastAPI(
    title=settings.APP_NAME,
    description="Learned (LOCC) and geometric (UCF-GJK, IS-CD, exact) collision detection for rigid objects",
    version=__version__,
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # Configure appropriately for production
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Register API routers
app.include_router(collision.router)
app.include_router(pipeline.router)
app.include_router(pipeline.task_router)


@app.get("/")
async def root():
    return {
        "name": settings.APP_NAME,
        "status": "operational",
        "version": __version__,
        "detectors": ["exact", "gjk", "iscd", "locc"]
    }


@app.get("/health")
async def health_check(objects: Mapping[str, ObjectEntry] = Depends(collision.get_objects)):
    """Healthy once the object set is loaded; reports its size."""
    return {"status": "healthy", "objects": len(objects)}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("app.main:app", host="0.0.0.0", port=8000, reload=settings.DEBUG)
