"""Application configuration."""
import os

from pydantic import computed_field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    # Parallelism (0 = let torch decide)
    PINN_THREADS: int = 0

    # Logging
    LOG_LEVEL: str = "INFO"

    # Output locations
    OUTPUT_DIR: str = "runs"
    REFERENCE_DIR: str = "reference_tables"

    # Evaluation callback
    EVAL_DX: float = 0.1

    # History cadence: every iteration up to the limit, then every LOG_STRIDE
    LOG_EVERY_ITERATION_LIMIT: int = 2000
    LOG_STRIDE: int = 10

    # Reference solvers
    REFERENCE_RESOLUTION: int = 64

    @computed_field  # type: ignore[misc]
    @property
    def SWEEP_WORKERS(self) -> int:
        """Number of concurrent sweep runs."""
        return self.PINN_THREADS if self.PINN_THREADS > 0 else (os.cpu_count() or 1)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        env_ignore_empty=True,
        extra="ignore"
    )


settings = Settings()
