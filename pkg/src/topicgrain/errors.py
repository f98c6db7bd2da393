"""Exception types raised across the package."""


class TopicgrainError(Exception):
    """Base class for all package errors."""


class EmptyText(TopicgrainError):
    """Raised when a text has no tokens after normalization."""


class EmptyCorpus(TopicgrainError):
    """Raised when a corpus has no texts or no usable tokens."""


class ParseError(TopicgrainError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class DuplicateId(TopicgrainError):
    """A text id appears more than once in one file."""


class EmptyBucket(TopicgrainError):
    """Attention pooling was handed a bucket with no vectors."""


class NumericalError(TopicgrainError):
    """A non-finite value appeared; carries the offending tensor name."""

    def __init__(self, name, message="non-finite values"):
        super().__init__(f"{name}: {message}")
        self.name = name


class ShapeError(TopicgrainError):
    """Operands disagree on dimensionality."""


class InvalidK(TopicgrainError):
    """Requested ranking depth is below 1."""


class InvalidSpace(TopicgrainError):
    """Non-positive storage size handed to the trade-off score."""


class EmptyRun(TopicgrainError):
    """Evaluation was handed a run with no queries."""


class IncompatibleArtifacts(TopicgrainError):
    """Artifacts built under different config fingerprints were mixed."""


class FormatError(TopicgrainError):
    """A binary artifact file is corrupt or has the wrong magic/version."""
