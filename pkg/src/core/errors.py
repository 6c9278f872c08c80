"""
etrl — Error hierarchy.

Every failure the toolkit raises on purpose derives from ``EtrlError`` so the
CLI can map it onto an exit code:

    ConfigurationError  → exit 1   (ParseError, DimensionError, CheckpointFormatError)
    NumericError        → exit 2
    any other EtrlError → exit 1
"""

from __future__ import annotations

from typing import Optional


class EtrlError(Exception):
    """Base class for all toolkit errors."""


# ═══════════════════════════════════════════════════════════════════════════
# Configuration family  (exit code 1)
# ═══════════════════════════════════════════════════════════════════════════

class ConfigurationError(EtrlError, ValueError):
    """Invalid dimensions, hyperparameters or environment settings."""


class ParseError(ConfigurationError):
    """A config file line or CLI flag could not be accepted."""

    def __init__(self, message: str, source: str = "<config>", line_no: Optional[int] = None):
        self.source = source
        self.line_no = line_no
        where = f"{source}:{line_no}" if line_no is not None else source
        super().__init__(f"{where}: {message}")


class DimensionError(ConfigurationError):
    """Checkpoint architecture does not match the requested environment."""


class CheckpointFormatError(ConfigurationError):
    """Bad magic, version drift or truncated checkpoint file."""


# ═══════════════════════════════════════════════════════════════════════════
# Runtime families
# ═══════════════════════════════════════════════════════════════════════════

class ShapeError(EtrlError, ValueError):
    """Array shape mismatch (including a stale forward cache)."""


class NumericError(EtrlError, ArithmeticError):
    """NaN / Inf encountered in inputs, gradients or losses."""


class SequencingError(EtrlError, RuntimeError):
    """Calls made out of order (ETC time going backwards, step after done)."""


class GeometryError(EtrlError, ValueError):
    """Degenerate engagement geometry, e.g. coincident vehicles."""
