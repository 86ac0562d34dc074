"""
16 kHz mono utterances: WAV input/output, per-utterance standardisation and
random cropping for pretraining.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import soundfile as sf

from .errors import AudioFormatError, ShapeError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0
PCM16_SUBTYPE = "PCM_16"
VARIANCE_EPS = 1e-8
DEFAULT_CROP = 149600


@dataclass(eq=False)
class AudioUtterance:
    """A mono 16 kHz recording.

    Attributes:
        samples: Real amplitudes x_1..x_L (float64)
        utterance_id: Identifier, unique within a corpus
        transcript: Character transcript, if known
        language: Language tag
        domain: Recording-domain tag
    """
    samples: np.ndarray
    utterance_id: str = ""
    transcript: Optional[str] = None
    language: str = ""
    domain: str = ""
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise ShapeError(f"utterance {self.utterance_id!r} has no samples")
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}", "sample_rate")
        if not np.isfinite(self.samples).all():
            raise ShapeError(f"utterance {self.utterance_id!r} contains non-finite samples")

    @property
    def length(self) -> int:
        return int(self.samples.size)

    @property
    def duration_seconds(self) -> float:
        return self.length / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioUtterance":
        return replace(self, samples=samples)


def read_wav(path: Union[str, Path], utterance_id: Optional[str] = None, transcript: Optional[str] = None,
             language: str = "", domain: str = "") -> AudioUtterance:
    """Read a RIFF PCM16 mono 16 kHz file; samples are scaled to [-1, 1)."""
    path = Path(path)
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: not a readable audio file ({e})", "codec") from e
    if info.format != "WAV":
        raise AudioFormatError(f"{path}: expected a RIFF/WAVE file, found {info.format}", "codec")
    if info.channels != 1:
        raise AudioFormatError(f"{path}: expected 1 channel, found {info.channels}", "channels")
    if info.subtype != PCM16_SUBTYPE:
        raise AudioFormatError(f"{path}: expected {PCM16_SUBTYPE} samples, found {info.subtype}", "sample_width")
    if info.samplerate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, found {info.samplerate} Hz", "sample_rate")
    if info.frames < 1:
        raise AudioFormatError(f"{path}: file holds no audio frames", "frames")
    pcm, _ = sf.read(str(path), dtype="int16", always_2d=False)
    samples = pcm.astype(np.float64) / PCM16_SCALE
    return AudioUtterance(samples, utterance_id=utterance_id or path.stem, transcript=transcript,
                          language=language, domain=domain)


def write_wav(utterance: AudioUtterance, path: Union[str, Path]) -> None:
    """Write as PCM16; values outside [-1, 1) are clipped."""
    pcm = np.clip(np.round(utterance.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    sf.write(str(path), pcm, SAMPLE_RATE, subtype=PCM16_SUBTYPE, format="WAV")


def normalize_utterance(utterance: AudioUtterance) -> AudioUtterance:
    """Zero mean, unit variance over the utterance."""
    x = utterance.samples
    centred = x - x.mean()
    return utterance.with_samples(centred / np.sqrt(centred.var() + VARIANCE_EPS))


def random_crop(utterance: AudioUtterance, window: int = DEFAULT_CROP,
                rng: Optional[np.random.Generator] = None) -> AudioUtterance:
    """Uniformly positioned crop of exactly `window` samples.

    Utterances shorter than the window are right-padded with zeros.
    """
    if window < 1:
        raise ValueError(f"crop window must be positive, got {window}")
    x = utterance.samples
    if x.size < window:
        return utterance.with_samples(np.pad(x, (0, window - x.size)))
    rng = rng or np.random.default_rng()
    start = int(rng.integers(0, x.size - window + 1))
    return utterance.with_samples(x[start:start + window])
