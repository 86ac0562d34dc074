"""Exception hierarchy shared by every cpcr module."""

import math
from typing import Optional


class CpcrError(Exception):
    """Base class for all errors raised by cpcr."""


class ShapeError(CpcrError, ValueError):
    pass


class NonFiniteError(CpcrError, FloatingPointError):
    pass


class AudioFormatError(CpcrError, ValueError):
    """Raised for WAV files that are not RIFF PCM16 mono 16 kHz.

    Attributes:
        field: Name of the offending header field (e.g. "channels")
    """

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class CorpusSpecError(CpcrError, ValueError):
    pass


class EmptyCorpusError(CpcrError, ValueError):
    pass


class VocabularyError(CpcrError, ValueError):
    pass


class CtcAlignmentError(CpcrError, ValueError):
    """No alignment of the label fits the posteriors.

    The loss of such an utterance is +inf; it is carried on the exception so
    training loops can count and skip the utterance.
    """

    def __init__(self, message: str):
        super().__init__(message)
        self.loss = math.inf


class EmptyReferenceError(CpcrError, ValueError):
    pass


class InfoNceError(CpcrError, ValueError):
    pass


class DivergenceError(CpcrError, FloatingPointError):
    """Training produced a non-finite objective.

    Attributes:
        step: Optimizer step at which divergence was detected
        checkpoint: Last good checkpoint (may be None before the first snapshot)
    """

    def __init__(self, message: str, step: int, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class CheckpointError(CpcrError, ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class ConfigError(CpcrError, ValueError):
    """Invalid experiment configuration.

    Attributes:
        key: Key path of the offending field
    """

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
