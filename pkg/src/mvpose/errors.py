"""Exception hierarchy shared by all mvpose modules."""


class MVPoseError(Exception):
    """Base class for every error raised by this package."""


class DepthError(MVPoseError):
    """A point lies at or behind the camera plane."""


class DegenerateBaseline(MVPoseError):
    """Two cameras share the same optical center."""


class DegenerateLine(MVPoseError):
    """An epipolar line collapsed (the point is the epipole)."""


class InvalidBBox(MVPoseError):
    pass


class NonFiniteInput(MVPoseError):
    pass


class ParseError(MVPoseError):
    """Malformed input file; the message names the line, field or byte offset."""


class ConfigError(MVPoseError):
    """A configuration field failed validation."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class InsufficientViews(MVPoseError):
    pass


class DegenerateGeometry(MVPoseError):
    pass


class NoConsensus(MVPoseError):
    pass


class AllViewsSkipped(MVPoseError):
    pass


class LineSearchFailure(MVPoseError):
    pass


class MissingReferenceKeypoint(MVPoseError):
    pass


class ShapeMismatch(MVPoseError):
    pass


class DegenerateConfiguration(MVPoseError):
    pass
