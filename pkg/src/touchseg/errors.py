"""Exception types shared across the package."""


class TouchsegError(Exception):
    """Base class for all package errors."""


class InvalidInput(TouchsegError):
    """Caller violated an argument contract (shape, range, count)."""


class EmptyMask(TouchsegError):
    """No mask pixel is set, so nothing can be pooled."""


class DegeneratePrototype(TouchsegError):
    """Pooled feature vector has (near-)zero norm and cannot be normalized."""


class NumericalFailure(TouchsegError):
    """A loss or gradient became non-finite during optimization."""


class CorruptCheckpoint(TouchsegError):
    """Checkpoint bytes do not parse or payload length is wrong."""


class UnsupportedVersion(TouchsegError):
    """Checkpoint format version is not supported by this build."""
