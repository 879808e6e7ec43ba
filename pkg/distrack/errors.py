class DistrackError(Exception):
    """
    Base class for every error raised by distrack. The class name doubles
    as the machine-readable error type reported by the CLI.
    """

    exit_code: int = 2

    @property
    def error_type(self) -> str:
        return type(self).__name__

    def to_dict(self):
        return {"error": self.error_type, "message": str(self)}


class ConfigError(DistrackError):
    """A configuration value violates its invariants."""


class EmptyMask(DistrackError):
    """An operation that needs at least one pixel got an empty mask."""


class ShapeMismatch(DistrackError):
    """Two arrays that must share an image shape do not."""


class BrokenLink(DistrackError):
    """A lineage link references a cell that does not exist."""


class ChannelOverfull(DistrackError):
    """The initial cells of a simulation do not fit in the channel."""


class NonFiniteInput(DistrackError):
    """NaN or infinite values reached a numerical kernel."""


class InputRange(DistrackError):
    """Input values fall outside the range an operation accepts."""


class ConstraintUnsatisfiable(DistrackError):
    """No random draw satisfied the geometric constraints."""


class EmptyImage(DistrackError):
    """An image with zero pixels cannot be rendered."""


class UnsupportedDtype(DistrackError):
    """The array dtype has no tensor-file code."""


class NotATensorFile(DistrackError):
    exit_code = 1


class CorruptFile(DistrackError):
    exit_code = 1
