"""
Celery background tasks for long-running operations.
Each task runs the same pipeline function as the matching CLI command.
"""
import logging
from typing import Any, Dict

from app.celery_app import celery_app
from app.models.api import BenchRequest, GenDataRequest, SimulateRequest, SweepRequest, TrainRequest
from app.services import pipeline


logger = logging.getLogger(__name__)


def _progress(task, command: str):
    def report(status: str) -> None:
        task.update_state(state='PROGRESS', meta={'status': status, 'command': command})
    return report


@celery_app.task(bind=True, name="gen_data_task")
def gen_data_task(self, request: Dict[str, Any]) -> Dict[str, Any]:
    """
    Background task to synthesise a labelled dataset.

    Args:
        request: GenDataRequest as a JSON dict

    Returns:
        Dictionary with output paths, manifest hash and positive fraction
    """
    try:
        logger.info("Starting background gen-data task")
        summary = pipeline.run_gen_data(GenDataRequest(**request), _progress(self, "gen-data"))
        return {"status": "success", **summary}
    except Exception as e:
        logger.error(f"Error in gen-data task: {str(e)}", exc_info=True)
        raise


@celery_app.task(bind=True, name="train_task")
def train_task(self, request: Dict[str, Any]) -> Dict[str, Any]:
    """
    Background task to train a collision network.

    Args:
        request: TrainRequest as a JSON dict

    Returns:
        Dictionary with the checkpoint path, final loss and train accuracy
    """
    try:
        logger.info(f"Starting background train task on {request.get('data')}")
        summary = pipeline.run_train(TrainRequest(**request), _progress(self, "train"))
        return {"status": "success", **summary}
    except Exception as e:
        logger.error(f"Error in train task: {str(e)}", exc_info=True)
        raise


@celery_app.task(bind=True, name="simulate_task")
def simulate_task(self, request: Dict[str, Any]) -> Dict[str, Any]:
    """Background task running the shake scenario; returns min-|sd| statistics."""
    try:
        logger.info("Starting background simulate task")
        summary = pipeline.run_simulate(SimulateRequest(**request), _progress(self, "simulate"))
        return {"status": "success", **summary}
    except Exception as e:
        logger.error(f"Error in simulate task: {str(e)}", exc_info=True)
        raise


@celery_app.task(bind=True, name="bench_task")
def bench_task(self, request: Dict[str, Any]) -> Dict[str, Any]:
    """Background accuracy-speed benchmark; returns the CSV paths."""
    try:
        logger.info("Starting background bench task")
        summary = pipeline.run_bench(BenchRequest(**request), _progress(self, "bench"))
        return {"status": "success", **summary}
    except Exception as e:
        logger.error(f"Error in bench task: {str(e)}", exc_info=True)
        raise


@celery_app.task(bind=True, name="sweep_task")
def sweep_task(self, request: Dict[str, Any]) -> Dict[str, Any]:
    try:
        logger.info("Starting background data-efficiency sweep")
        summary = pipeline.run_sweep(SweepRequest(**request), _progress(self, "sweep"))
        return {"status": "success", **summary}
    except Exception as e:
        logger.error(f"Error in sweep task: {str(e)}", exc_info=True)
        raise
