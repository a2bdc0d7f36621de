from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Explicitly load .env file from project root
load_dotenv()


class Settings(BaseSettings):
    """Solver settings read from the environment or a `.env` file."""

    # App configuration
    APP_NAME: str = "HJB max-plus solver"
    DEBUG: bool = False

    # Reproducibility: overrides every seed coming from configs or flags
    HJB_SEED: Optional[int] = None

    # Numerical defaults
    HJB_QUAD_NODES: int = Field(7, ge=1, le=40)
    HJB_CHUNK_SIZE: int = Field(256, ge=1)
    HJB_MAX_GRID_DIM: int = Field(2, ge=1)

    # Execution
    HJB_THREADS: int = Field(1, ge=1)
    HJB_OUTPUT_DIR: str = "."

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings."""
    return Settings()


def resolve_seed(seed: Optional[int]) -> Optional[int]:
    """Apply the `HJB_SEED` override to a seed coming from a config or a flag."""
    override = get_settings().HJB_SEED
    return override if override is not None else seed
