"""
Pipeline orchestration endpoints.
These endpoints trigger dataset generation, training, simulation and benchmarks.
All of them run as background Celery tasks.
"""
from typing import Any, Dict

from fastapi import APIRouter, HTTPException

from app.models.api import BenchRequest, GenDataRequest, SimulateRequest, SweepRequest, TrainRequest
from app.services.tasks import bench_task, gen_data_task, simulate_task, sweep_task, train_task


router = APIRouter(prefix="/pipeline", tags=["pipeline"])


def _queue(task, request, command: str) -> Dict[str, Any]:
    try:
        queued = task.delay(request.model_dump(mode="json"))
        return {
            "status": "queued",
            "task_id": queued.id,
            "command": command,
            "message": f"{command} started in background. Use task_id to check status."
        }
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to queue {command}: {str(e)}")


@router.post("/gen-data")
async def gen_data(request: GenDataRequest) -> Dict[str, Any]:
    """
    Generate a labelled pair dataset in the background.

    Args:
        request: generation settings and output path

    Returns:
        Task ID for tracking progress
    """
    return _queue(gen_data_task, request, "gen-data")


@router.post("/train")
async def train(request: TrainRequest) -> Dict[str, Any]:
    """
    Train a collision network in the background.
    At desk scale (2,000 pairs, tiny network) this takes tens of minutes.

    Returns:
        Task ID for tracking progress
    """
    return _queue(train_task, request, "train")


@router.post("/simulate")
async def simulate(request: SimulateRequest) -> Dict[str, Any]:
    return _queue(simulate_task, request, "simulate")


@router.post("/bench")
async def bench(request: BenchRequest) -> Dict[str, Any]:
    return _queue(bench_task, request, "bench")


@router.post("/sweep")
async def sweep(request: SweepRequest) -> Dict[str, Any]:
    return _queue(sweep_task, request, "sweep")


task_router = APIRouter(tags=["pipeline"])

# Celery state -> (reported status, payload key)
TASK_STATES = {
    "PENDING": ("pending", None),
    "STARTED": ("running", None),
    "PROGRESS": ("in_progress", "progress"),
    "SUCCESS": ("completed", "result"),
    "FAILURE": ("failed", "error"),
}


@task_router.get("/task/{task_id}")
async def get_task_status(task_id: str) -> Dict[str, Any]:
    """
    Status of a queued pipeline run. Completed runs carry the command's
    JSON summary (outputs, manifest hash, headline numbers); failed runs the
    error message.
    """
    from app.celery_app import celery_app

    try:
        outcome = celery_app.AsyncResult(task_id)
        status, key = TASK_STATES.get(outcome.state, (outcome.state.lower(), "info"))
        body: Dict[str, Any] = {"task_id": task_id, "status": status}
        if key == "result":
            body[key] = outcome.result
        elif key == "progress":
            body[key] = outcome.info
        elif key is not None:
            body[key] = str(outcome.info)
        return body
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Failed to read task {task_id}: {e}")
