"""Exception hierarchy shared across the pipeline."""


class RasrError(Exception):
    """Base class for all pipeline errors."""


class InvalidInput(RasrError):
    """Input violates an operation precondition (bad value, bad range)."""


class InvalidShape(RasrError):
    """Array dimensions are incompatible with the operation."""


class ZeroVector(RasrError):
    """A vector with zero Euclidean norm cannot be normalized."""


class UnknownEncoder(RasrError):
    """Encoder name not present in the registry."""


class DimMismatch(RasrError):
    """Embedding dimension differs from the index dimension."""


class DuplicateId(RasrError):
    """Two records in one index share an id."""


class EmptyIndex(RasrError):
    """Query issued against an index with no records."""


class CorruptIndex(RasrError):
    """Index file failed magic/version/length validation."""


class CorruptCheckpoint(RasrError):
    """Checkpoint file failed magic/version/length validation."""


class TooFewImages(RasrError):
    """A category has too few images to partition."""


class EmptyReferencePool(RasrError):
    """Reference preselection requires a nonempty reference pool."""


class PairingError(RasrError):
    """Prediction and ground-truth directories do not pair up by filename."""


class NonFiniteLoss(RasrError):
    """Training produced a NaN or infinite loss; the run must abort."""


class IoError(RasrError):
    """A required file is missing or unreadable."""
