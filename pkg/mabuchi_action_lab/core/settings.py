from __future__ import annotations

from typing import Literal

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv(".env", override=True)


class AppSettings(BaseSettings):
    """Process-wide settings read from the environment (prefix ``MAL_``)."""

    model_config = SettingsConfigDict(env_prefix="MAL_", extra="ignore")

    # General application settings
    debug: bool = Field(default=False, description="Enable debug mode")
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: Literal["console", "json"] = Field(
        default="console", description="Renderer for stderr diagnostics"
    )

    # Worker pool settings
    threads: int = Field(
        default=0, ge=0, description="Worker cap for parallel work (0 = auto)"
    )
    batch_size: int = Field(
        default=5, ge=1, description="Number of tasks submitted per parallel batch"
    )

    output_directory: str = Field(
        default="results", description="Default directory for written artifacts"
    )


# Create application settings instance
settings = AppSettings()
