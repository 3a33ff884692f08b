"""Error taxonomy shared by the pipeline commands and the CLI.

Each class maps to one CLI exit category; see cli.EXIT_CODES.
"""

from __future__ import annotations


class KdeOodError(Exception):
    """Base class for pipeline-level failures."""


class ConfigError(KdeOodError):
    """Invalid or incomplete configuration (bad flags, unmet regime needs)."""


class ValidationError(KdeOodError):
    """Inputs are well-formed but inconsistent with the model or config."""


class ModelFormatError(KdeOodError):
    """Model file is corrupt or not a model file."""
