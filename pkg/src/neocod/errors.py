"""Exception types shared across the pipeline.

Validation problems (bad inputs, malformed configuration) raise
:class:`ValidationError`; numerical failures during fitting or resampling
raise :class:`NumericalError`. The command line maps these onto distinct
exit codes so scripted callers can tell them apart.
"""
from __future__ import annotations


class NeocodError(Exception):
    """Base class for pipeline errors."""


class ValidationError(NeocodError):
    """Invalid input data or configuration."""


class MissingDataError(NeocodError):
    """A required value is absent; the caller may treat it as an imputation
    target rather than a fatal problem."""


class NumericalError(NeocodError):
    """Optimization or resampling failed to produce usable numbers."""
