"""Exception hierarchy shared by every module.

Errors that stem from bad inputs or configuration derive from
``AdaptRouteError``; filesystem problems raise ``IoError`` which also
subclasses ``OSError`` so callers may catch either.
"""

from __future__ import annotations


class AdaptRouteError(Exception):
    """Base class for all package errors."""


class DimensionError(AdaptRouteError, ValueError):
    pass


class MissingLayerError(AdaptRouteError, KeyError):
    pass


class FormatError(AdaptRouteError, ValueError):
    pass


class ValidationError(AdaptRouteError, ValueError):
    pass


class IoError(AdaptRouteError, OSError):
    pass


class NotFoundError(AdaptRouteError, KeyError):
    pass


class ConfigError(AdaptRouteError, ValueError):
    pass


class EmptyTaskError(AdaptRouteError, ValueError):
    pass


class EncoderMismatchError(AdaptRouteError, ValueError):
    pass


class EmptyCatalogError(AdaptRouteError, ValueError):
    pass


class EmptyPoolError(AdaptRouteError, ValueError):
    pass


class EvaluationError(AdaptRouteError, RuntimeError):
    pass


class PairingError(AdaptRouteError, RuntimeError):
    """Raised after a pairing pass when one or more tasks could not be paired."""

    def __init__(self, failures: dict[str, str]):
        self.failures = dict(failures)
        listed = ", ".join(f"{k}: {v}" for k, v in sorted(self.failures.items()))
        super().__init__(f"pairing failed for {len(self.failures)} task(s): {listed}")


class InsufficientBudgetError(AdaptRouteError, ValueError):
    pass


class IncompatibleAdaptersError(AdaptRouteError, ValueError):
    pass


class UnpairedTaskError(AdaptRouteError, LookupError):
    pass


class TooFewPointsError(AdaptRouteError, ValueError):
    pass
