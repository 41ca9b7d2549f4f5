"""Exception types shared across the package.

The CLI maps these onto exit codes: availability errors exit 3, integrity
errors exit 2, everything else (usage, config, unsupported input) exits 1.
"""


class FvssError(Exception):
    pass


# usage / input errors

class EmptyInput(FvssError):
    pass


class DuplicateAbscissa(FvssError):
    pass


class InvalidThreshold(FvssError):
    pass


class UnknownParticipant(FvssError):
    pass


class OutOfRange(FvssError):
    pass


class SchemaMismatch(FvssError):
    pass


class DuplicateTable(FvssError):
    pass


class UnknownTable(FvssError):
    pass


class UnknownRecordPosition(FvssError):
    pass


class NotIndexed(FvssError):
    pass


class MissingTypeThreeColumn(FvssError):
    pass


class QuerySyntaxError(FvssError):
    """Bad query text; str() carries the position."""


class UnsupportedFeature(FvssError):
    pass


class StoreLocked(FvssError):
    pass


class ConfigError(FvssError):
    """Malformed or missing configuration; str() names the offending key."""


# availability errors (exit 3)

class AvailabilityError(FvssError):
    pass


class NotEnoughAliveCsps(AvailabilityError):
    pass


class CspUnavailable(AvailabilityError):
    pass


# integrity errors (exit 2)

class IntegrityError(FvssError):
    pass


class InnerSignatureMismatch(IntegrityError):
    pass


class MissingShare(IntegrityError):
    pass


class OuterSignatureBreach(IntegrityError):
    """Raised by CLI verify when a breach report is non-empty."""
