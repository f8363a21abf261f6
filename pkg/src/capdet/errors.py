"""Exception types shared across the toolkit."""


class CapdetError(Exception):
    """Base class for every toolkit-level error."""


# --- scene graphs ---


class MalformedDocumentError(CapdetError):
    """Input document is not syntactically or structurally valid."""


class DuplicateObjectIdError(CapdetError):
    pass


class ReferentialIntegrityError(CapdetError):
    """An attribute or relation points at an object id that does not exist."""


class UnknownObjectError(CapdetError):
    pass


# --- masks ---


class InvalidRleError(CapdetError):
    """Run-length counts violate the mask invariants."""


class DimensionMismatchError(CapdetError):
    pass


class EmptyInputError(CapdetError):
    pass


# --- metrics ---


class ZeroImageAreaError(CapdetError):
    pass


class ZeroLengthError(CapdetError):
    """Caption has no words, so the length-normalized score is undefined."""


# --- sub-graph sampling ---


class ZeroOriginalIcrError(CapdetError):
    pass


class ZeroOriginalAodError(CapdetError):
    pass


class UnreachableTargetError(CapdetError):
    """No sub-graph achieves the requested ratio within tolerance."""


# --- filtering ---


class MissingItmScoreError(CapdetError):
    pass


class MissingMetricReportError(CapdetError):
    pass


class TTooLargeError(CapdetError):
    pass


class KTooLargeError(CapdetError):
    pass


# --- analysis ---


class LengthMismatchError(CapdetError):
    pass


class ZeroVarianceError(CapdetError):
    pass


class InconsistentDimensionsError(CapdetError):
    pass


class TooFewRatiosError(CapdetError):
    pass


# --- ingest / services ---


class MalformedLineError(CapdetError):
    """A manifest line failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message)
        self.line_no = line_no


class DuplicateIdError(CapdetError):
    pass


class TransportError(CapdetError):
    """Service request failed after exhausting retries."""


class NoGraphInResponseError(CapdetError):
    pass
