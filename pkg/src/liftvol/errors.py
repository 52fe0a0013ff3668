"""Exception types shared across the package."""


class LiftvolError(Exception):
    """Base class for all package errors."""


class DomainError(LiftvolError, ValueError):
    """A volume is not in the value domain an operation requires."""


class CorruptModelError(LiftvolError):
    """A model file failed its integrity check."""


class StreamError(LiftvolError):
    """Base class for bitstream failures."""


class NotIW3DError(StreamError):
    """The bytes do not start with the bitstream magic."""


class UnsupportedVersionError(StreamError):
    pass


class WrongModelError(StreamError):
    """The stream was produced with a different model file."""

    def __init__(self, expected: bytes, found: bytes):
        self.expected = expected
        self.found = found
        super().__init__(
            f"wrong model: stream expects model hash {expected.hex()}, "
            f"model file has {found.hex()}"
        )


class CorruptStreamError(StreamError):
    pass


class StateError(LiftvolError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class TrainingDivergedError(LiftvolError, FloatingPointError):
    def __init__(self, term: str, step: int | None = None):
        self.term = term
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite {term} term{where}")


class EmptyDatasetError(LiftvolError):
    pass
