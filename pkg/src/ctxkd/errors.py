"""Exception hierarchy shared by every module.

The CLI maps :class:`DataError` subclasses to exit status 2 and
:class:`NumericalError` subclasses to exit status 3.
"""


class CtxKDError(Exception):
    """Base class for all toolkit errors."""


class DataError(CtxKDError):
    """Malformed or invariant-violating input data."""


class NumericalError(CtxKDError):
    """A numerical procedure failed to produce a usable result."""


class TagError(DataError):
    """Problem in inline-tagged text; ``offset`` is a UTF-8 byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnknownLabel(TagError):
    pass


class UnbalancedTag(TagError):
    pass


class NestedTag(TagError):
    pass


class SchemaError(DataError):
    pass


class InvariantViolation(DataError):
    pass


class DocIdMismatch(DataError):
    pass


class MissingTimestamps(DataError):
    pass


class EntityLongerThanWindow(DataError):
    pass


class EmptyReference(DataError):
    pass


class TargetOutOfRange(DataError):
    pass


class AllPadded(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class InvalidWeights(DataError, ValueError):
    pass


class DegeneratePlan(NumericalError):
    pass


class NumericalUnderflow(NumericalError):
    pass


class NoConvergence(NumericalError):
    """Sinkhorn stopped at ``max_iters`` above tolerance; the plan is attached."""

    def __init__(self, message, plan=None):
        super().__init__(message)
        self.plan = plan


class Diverged(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TeacherUnderfit(CtxKDError):
    """Raised only on request; by default underfit is reported in the result."""
