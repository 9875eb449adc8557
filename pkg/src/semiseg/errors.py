"""Exception types raised across the package.

Every error carries its class name as a stable, machine-readable identifier;
the command line prints it on stderr before exiting non-zero.
"""


class SegError(Exception):
    """Base class for all package errors."""


class EmptySequence(SegError, ValueError):
    pass


class LabelOutOfRange(SegError, ValueError):
    pass


class DimensionMismatch(SegError, ValueError):
    pass


class SequenceTooShort(SegError, ValueError):
    pass


class NoAnchorAvailable(SegError, ValueError):
    pass


class MissingLossTerm(SegError, LookupError):
    pass


class InvalidStride(SegError, ValueError):
    pass


class InfeasibleAlignment(SegError, ValueError):
    pass


class InvalidVicinity(SegError, ValueError):
    pass


class InsufficientData(SegError, ValueError):
    pass


class StaleCache(SegError, RuntimeError):
    pass


class GrammarError(SegError, ValueError):
    pass


class CoverageInfeasible(SegError, RuntimeError):
    pass


class UnknownAction(SegError, LookupError):
    pass


class CorruptFeatureFile(SegError, ValueError):
    pass


class DivergenceDetected(SegError, FloatingPointError):
    pass


class SchemaError(SegError, ValueError):
    pass


class IoError(SegError, OSError):
    pass


class CorruptCheckpoint(SegError, ValueError):
    pass
