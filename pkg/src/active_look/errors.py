"""Exception hierarchy shared across the package."""


class ActiveLookError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateBox(ActiveLookError):
    """A box collapsed to zero area (after clamping) or lies outside the image."""


class EmptyTargets(ActiveLookError):
    """A detection query was requested for an empty target list."""


class ExpertUnavailable(ActiveLookError):
    """A detection backend could not be reached."""


class ReasonerUnavailable(ActiveLookError):
    """A reasoner backend could not be reached."""


class MalformedResponse(ActiveLookError):
    """A backend reply violated the wire schema."""


class MalformedExtraction(ActiveLookError):
    """A target-extraction reply could not be parsed into an object list."""


class MissingGroundTruth(ActiveLookError):
    """The rule-based reasoner needs scene ground truth that is not available."""


class NoisePlacementImpossible(ActiveLookError):
    """No in-bounds translation of a box can satisfy the requested overlap bound."""


class ImageUnreadable(ActiveLookError):
    """An input image could not be opened or decoded."""


class EmptyRecordSet(ActiveLookError):
    """A metric was requested over zero records."""


class UnpairedImage(ActiveLookError):
    """A paired-question benchmark image does not have exactly two questions."""


class JoinFailure(ActiveLookError):
    """Traces and evaluation records could not be joined by item id."""


class PipelineAbort(ActiveLookError):
    """A pipeline run terminated early; carries the partial trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
