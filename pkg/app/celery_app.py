"""
Celery configuration for background task processing.
Dataset generation, training, simulation and benchmarks run as worker tasks.
"""
from celery import Celery
from celery.signals import setup_logging
from app.config import configure_logging, settings

# Initialize Celery app
celery_app = Celery("locc")

# Configure Celery
celery_app.conf.update(
    broker=settings.CELERY_BROKER_URL,
    result_backend=settings.CELERY_RESULT_BACKEND_URL,
    task_serializer="json",
    accept_content=["json"],
    result_serializer="json",
    timezone="UTC",
    enable_utc=True,
    task_track_started=True,
    task_time_limit=4 * 60 * 60,  # 4 hours hard limit (sweeps train many models)
    task_soft_time_limit=int(3.75 * 60 * 60),
)


@setup_logging.connect
def _worker_logging(**kwargs):
    configure_logging()


# Import tasks to register them
from app.services import tasks  # noqa: F401, E402
