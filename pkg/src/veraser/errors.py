"""Exception taxonomy shared across the harness."""


class VeraserError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateBox(VeraserError):
    """A box has zero or negative area, or lies entirely outside its image."""


class EmptyPool(VeraserError):
    """In-context example selection was invoked on an empty candidate pool."""


class MalformedResponse(VeraserError):
    """An extractor response could not be parsed into object/property pairs."""


class NoRemainingUnits(VeraserError):
    """Erasing a description unit would leave the hypothesis empty."""


class BackendUnavailable(VeraserError):
    """A backend could not be reached after the configured retries."""


class BackendTimeout(BackendUnavailable):
    """A backend did not answer within the configured timeout."""


class BackendMalformed(VeraserError):
    """A backend answered with data that violates the wire schema."""


class DimensionMismatch(VeraserError):
    """An inpainter returned an image whose size differs from its input."""


class PlacementFailure(VeraserError):
    """Disjoint object placement could not be satisfied within the retry budget."""


class ManifestUnreadable(VeraserError):
    """A dataset manifest file is missing or cannot be read."""


class DatasetInvalid(VeraserError):
    """Too many manifest lines failed validation to continue."""


class PendingVerdicts(VeraserError):
    """A review sheet still contains pending verdicts."""


class RunAborted(VeraserError):
    """A harness run could not proceed (unwritable output, all backends down)."""
