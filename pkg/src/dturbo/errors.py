"""Exception types shared across the package."""


class DTurboError(Exception):
    """Base class for package errors."""


class DegenerateExtrinsic(DTurboError):
    """The divergence-free direction ``d - alpha * r`` vanished.

    This happens when the wrapped denoiser is linear, so no extrinsic
    information can be formed.  The offending direction is kept on the
    exception for diagnostics.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class SolveFailure(DTurboError):
    """A small linear solve could not be carried out reliably."""


class ConfigError(DTurboError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class PGMError(DTurboError):
    """Malformed or unsupported PGM file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
