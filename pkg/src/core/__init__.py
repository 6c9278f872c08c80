"""
etrl — Process-level settings.

Loads environment variables via pydantic-settings.
Run hyperparameters live in ``RunConfig`` (see ``src.models``); only the
process environment is read here, so nothing else touches os.environ.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Settings populated from ``ETRL_*`` environment variables / .env file.
    """

    model_config = SettingsConfigDict(
        env_prefix="ETRL_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ── App metadata ─────────────────────────────────────────────────
    app_name: str = "etrl"
    app_version: str = "1.0.0"

    # ── Output ───────────────────────────────────────────────────────
    out: Path = Path("runs")                 # ETRL_OUT
    checkpoint_name: str = "checkpoint.etrl"
    diagnostic_name: str = "diagnostic.etrl"

    # ── Logging ──────────────────────────────────────────────────────
    log_level: str = "INFO"


@lru_cache()
def get_settings() -> Settings:
    """Singleton accessor — call ``get_settings.cache_clear()`` after changing env."""
    return Settings()
