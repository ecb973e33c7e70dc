"""Exception types raised across the pipeline."""

from __future__ import annotations


class MalpacaError(Exception):
    """Base class for every error raised by this package."""


class UnreadableFile(MalpacaError, OSError):
    pass


class MalformedHeader(MalpacaError, ValueError):
    pass


class MalformedRecord(MalpacaError, ValueError):
    """A single jsonl line that could not be turned into a packet record."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class EmptySequence(MalpacaError, ValueError):
    pass


class LengthMismatch(MalpacaError, ValueError):
    pass


class TooFewConnections(MalpacaError, ValueError):
    pass


class KTooLarge(MalpacaError, ValueError):
    pass


class TooFewPoints(MalpacaError, ValueError):
    pass


class UnknownSample(MalpacaError, KeyError):
    pass


class EmptyCluster(MalpacaError, ValueError):
    pass


class ClusterTooSmall(MalpacaError, ValueError):
    pass


class InvalidParams(MalpacaError, ValueError):
    pass


class PipelineError(MalpacaError, RuntimeError):
    """A pipeline stage failed; the message is the user-facing diagnostic."""
