"""
Baseline acoustic features: log mel filterbank and log power spectrogram.

Both share one framing pipeline (25 ms Hann window, 10 ms hop, 512-point FFT)
so their frame rate matches the CPC context frames.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import SAMPLE_RATE, AudioUtterance
from .errors import ShapeError

FRAME_LENGTH = 400
FRAME_HOP = 160
N_FFT = 512
N_MELS = 40
LOG_FLOOR = 1e-10
HOP_SECONDS = FRAME_HOP / SAMPLE_RATE

FEATURE_KINDS = ("log-filterbank", "spectrogram", "cpc-context")


@dataclass(eq=False)
class FeatureFrames:
    """A feature matrix laid out [dim × frames]."""
    frames: np.ndarray
    hop_seconds: float = HOP_SECONDS
    kind: str = "log-filterbank"

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.frames.ndim != 2 or self.frames.shape[1] < 1:
            raise ShapeError(f"features must be [dim × frames] with at least one frame, got {self.frames.shape}")

    @property
    def dim(self) -> int:
        return self.frames.shape[0]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


def num_frames(length: int, window: int = FRAME_LENGTH, hop: int = FRAME_HOP) -> int:
    return 1 + (length - window) // hop


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, evaluated at the FFT bin frequencies.

    Returns:
        np.ndarray: [n_mels × (n_fft/2 + 1)] weights, each triangle peaking at 1
    """
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (centre - lower)
    falling = (upper - bins[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(samples: np.ndarray, window: int = FRAME_LENGTH, hop: int = FRAME_HOP) -> np.ndarray:
    """Split samples into overlapping frames, [frames × window]."""
    if samples.size < window:
        raise ShapeError(f"signal of {samples.size} samples is shorter than the {window}-sample window")
    return sliding_window_view(samples, window)[::hop]


def frame_spectrum(samples: np.ndarray, window: int = FRAME_LENGTH, hop: int = FRAME_HOP,
                   n_fft: int = N_FFT) -> np.ndarray:
    """Complex one-sided spectra of the Hann-windowed frames, [frames × (n_fft/2 + 1)]."""
    frames = frame_signal(samples, window, hop) * np.hanning(window)
    return np.fft.rfft(frames, n=n_fft, axis=1)


def power_spectrum(samples: np.ndarray, window: int = FRAME_LENGTH, hop: int = FRAME_HOP,
                   n_fft: int = N_FFT) -> np.ndarray:
    spectrum = frame_spectrum(samples, window, hop, n_fft)
    return spectrum.real ** 2 + spectrum.imag ** 2


def log_filterbank(utterance: AudioUtterance, window: int = FRAME_LENGTH, hop: int = FRAME_HOP,
                   n_fft: int = N_FFT, n_mels: int = N_MELS) -> FeatureFrames:
    power = power_spectrum(utterance.samples, window, hop, n_fft)
    energies = mel_filterbank(n_mels, n_fft) @ power.T
    return FeatureFrames(np.log(energies + LOG_FLOOR), hop / SAMPLE_RATE, "log-filterbank")


def spectrogram(utterance: AudioUtterance, window: int = FRAME_LENGTH, hop: int = FRAME_HOP,
                n_fft: int = N_FFT) -> FeatureFrames:
    """The log-filterbank pipeline without the mel bank (n_fft/2 + 1 bins)."""
    power = power_spectrum(utterance.samples, window, hop, n_fft)
    return FeatureFrames(np.log(power.T + LOG_FLOOR), hop / SAMPLE_RATE, "spectrogram")


def standardize(features: FeatureFrames, eps: float = 1e-5) -> FeatureFrames:
    """Per-dimension zero mean, unit variance over the frames of one utterance."""
    frames = features.frames
    mean = frames.mean(axis=1, keepdims=True)
    std = np.sqrt(frames.var(axis=1, keepdims=True) + eps)
    return FeatureFrames((frames - mean) / std, features.hop_seconds, features.kind)
