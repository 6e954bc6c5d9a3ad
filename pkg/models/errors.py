"""
Error categories for the engine.

Every error is a ValueError so callers that validate input the plain way keep
working; the CLI maps each category to its own exit code.
"""


class FocusedKVError(ValueError):
    """Base class for all engine errors."""


class ConfigurationError(FocusedKVError):
    """Invalid or missing configuration (RunConfig, budgets, policy)."""


class ShapeError(FocusedKVError):
    """Tensor shapes disagree with each other or with the ModelShape."""


class IntegrityError(FocusedKVError):
    """Internal bookkeeping is inconsistent (dangling frames, overlapping writes)."""


class SchemaValidationError(FocusedKVError):
    """An input file does not match its documented schema."""
