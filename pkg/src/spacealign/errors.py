"""Exception hierarchy shared by all spacealign modules."""


class SpaceAlignError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(SpaceAlignError):
    """Input violates a documented precondition (non-finite, wrong range, ...)."""


class ShapeError(SpaceAlignError):
    """Operands have incompatible shapes."""


class InvalidRank(SpaceAlignError):
    """A requested rank exceeds what the data can support."""


class RankZero(SpaceAlignError):
    """A factorization retained no components (e.g. SVD of a zero matrix)."""


class FormatError(SpaceAlignError):
    """A serialized file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvalidSpec(SpaceAlignError):
    """A synthetic-data spec is self-contradictory."""


class CorrespondenceError(SpaceAlignError):
    """Sample identities do not line up across spaces."""


class NumericalError(SpaceAlignError):
    """A numeric routine produced NaN/Inf or diverged."""


class UnknownSpaceError(SpaceAlignError, LookupError):
    """A space id is not registered in the model being queried."""


class ConfigError(SpaceAlignError):
    """A run configuration or manifest is unusable."""
