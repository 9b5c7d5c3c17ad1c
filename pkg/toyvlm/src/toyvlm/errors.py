"""Typed errors raised across the package."""


class ToyVlmError(Exception):
    """Base class for every error this package raises on purpose."""


class BadMagic(ToyVlmError):
    """Cloud file does not start with the expected magic bytes."""


class BadHeader(ToyVlmError):
    """Cloud file header carries an unsupported version or channel layout."""


class Truncated(ToyVlmError):
    """Cloud file byte length disagrees with its declared row count."""


class InvalidPayload(ToyVlmError):
    """Cloud file rows contain non-finite values."""


class TooFewPoints(ToyVlmError):
    """Cloud is too small for the requested grouping."""


class DimensionMismatch(ToyVlmError):
    """Feature dimensions do not line up with the fusion stack."""


class PlanViolation(ToyVlmError):
    """A parameter outside the trainable set changed during a stage."""


class MissingCheckpoint(ToyVlmError):
    """Stage 2 was started without a stage-1 state to resume from."""
