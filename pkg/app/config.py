"""
Configuration module for the LOCC collision toolkit.
Uses pydantic-settings for type-safe environment variable management.
"""
import logging
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Output locations
    DATA_DIR: Path = Path("data")
    OBJECTS_DIR: Optional[Path] = None

    # Parallelism (bench hot loops default to one thread for reproducibility)
    BENCH_THREADS: int = 1
    WORKER_THREADS: int = 1

    # Geometry defaults
    CLOUD_SEED: int = 0
    SD_SAMPLES: int = 2000

    # Celery configuration
    CELERY_BROKER_URL: str = "redis://localhost:6379/0"
    CELERY_RESULT_BACKEND_URL: str = "redis://localhost:6379/1"

    # App configuration
    APP_NAME: str = "LOCC Collision Toolkit"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore"
    )

    @property
    def checkpoint_dir(self) -> Path:
        """Default directory for trained model checkpoints."""
        return self.DATA_DIR / "checkpoints"


# Global settings instance
settings = Settings()


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure root logging for entry points (CLI, Celery worker).

    Args:
        level: Log level name, defaults to settings.LOG_LEVEL
    """
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )
