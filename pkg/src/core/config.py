"""
Re-export settings for convenient imports.

Usage:
    from src.core.config import get_settings
"""

from src.core import Settings, get_settings  # noqa: F401

__all__ = ["Settings", "get_settings"]
