"""Process-level configuration for lensopt.

Run-specific inputs (mesh, materials, time grid, ...) live in the TOML run
configuration handled by :mod:`lensopt.runconfig`. The settings here control
logging, artifact handling and the numerical guard thresholds shared by every
run.
"""

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(
        default="INFO",
        description="Logging level",
    )
    log_format: Literal["text", "json"] = Field(
        default="json",
        description="Log output format",
    )

    # Runs and artifacts
    output_root: Path = Field(
        default=Path("runs"),
        description="Directory under which run directories are created",
    )
    default_threads: int = Field(
        default=1,
        description="Worker threads for independent perturbed solves",
        ge=1,
        le=256,
    )
    metrics_textfile: bool = Field(
        default=True,
        description="Write a prometheus text file next to every run",
    )

    # Numerical guards
    min_element_area_ratio: float = Field(
        default=1e-6,
        description="Smallest accepted triangle area relative to h_mesh squared",
        gt=0,
    )
    lipschitz_bound_deg: float = Field(
        default=150.0,
        description="Maximum turning angle along the interface in degrees",
        gt=0,
        le=180,
    )
    fd_eps_abs: float = Field(
        default=1e-12,
        description="Absolute floor for relative finite-difference errors",
        gt=0,
    )
    fd_tolerance: float = Field(
        default=0.05,
        description="Accepted relative gap between volume form and FD slope",
        gt=0,
    )
    volume_boundary_tolerance: float = Field(
        default=0.10,
        description="Accepted relative gap between volume and interface forms",
        gt=0,
    )


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance.

    Returns:
        Settings: Application settings
    """
    return Settings()
