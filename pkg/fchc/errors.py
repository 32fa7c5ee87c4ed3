"""
Error hierarchy of the fchc package.

Three families map to CLI exit codes: ConfigError (2), DataError (3) and
DivergedLoss (4). Errors caused by inconsistent arguments to the numerical
components derive from ValueError.
"""


class FCHCError(Exception):
    """Base class for every error raised by fchc."""


class ConfigError(FCHCError):
    """Raised for any configuration load/validation problems."""
    exit_code = 2


class DataError(FCHCError):
    """Raised for malformed or inconsistent input data."""
    exit_code = 3


class DivergedLoss(FCHCError):
    """Raised when the training loss becomes non-finite."""
    exit_code = 4


# ---- data errors ----

class SchemaMismatch(DataError):
    pass


class UnknownLabel(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class ScoreOutOfRange(DataError, ValueError):
    pass


class EmptyPatient(DataError):
    pass


class TooFewPoints(DataError):
    pass


class TooFewPatients(DataError):
    pass


class InvalidProportions(DataError):
    pass


class StaleGraphCache(DataError):
    pass


# ---- structural errors ----

class EmptySpec(FCHCError, ValueError):
    pass


class MalformedToken(FCHCError, ValueError):
    pass


class UnknownClass(FCHCError, KeyError):
    pass


class UnknownPreset(FCHCError, KeyError):
    pass


class DimensionMismatch(FCHCError, ValueError):
    pass


class TaxonomyMismatch(FCHCError, ValueError):
    pass


class LabelNotClosed(FCHCError, ValueError):
    pass


class ShapeMismatch(FCHCError, ValueError):
    pass


class IsolatedNode(FCHCError, ValueError):
    pass


class UnconstrainedInput(FCHCError, ValueError):
    pass


class EmptyTruth(FCHCError, ValueError):
    pass
