"""Audio-to-feature pipeline: framing, FFT, log mel-filterbanks, normalization."""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Union

import librosa
import numpy as np
from scipy import signal

from core.config import FeatureConfig
from core.errors import DegenerateDataError, InputError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
NORM_VARIANCE_FLOOR = 1e-5
TRAIN_CROP_S = 2.0

# scipy window names for the configured window kinds (periodic, DFT-even).
_SCIPY_WINDOWS = {"hann": "hann", "hamming": "hamming", "rectangular": "boxcar"}


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio: float samples (nominally in [-1, 1]) and a sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InputError(f"waveform must be one-dimensional, got shape {samples.shape}")
        if samples.size == 0:
            raise InputError("waveform is empty")
        if self.sample_rate <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    def power(self) -> float:
        """Mean squared amplitude."""
        return float(np.mean(self.samples ** 2))

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Frames x mel-bins log energies, plus the framing that produced them."""

    values: np.ndarray
    hop_samples: int = 160
    window: str = "hann"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f"feature matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_mels(self) -> int:
        return int(self.values.shape[1])

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(values, self.hop_samples, self.window)


def preemphasize(wave: Waveform, coeff: float) -> Waveform:
    """First-order pre-emphasis y[t] = x[t] - coeff * x[t-1], y[0] = x[0]."""
    if not 0.0 <= coeff < 1.0:
        raise InputError(f"pre-emphasis coefficient must lie in [0, 1), got {coeff}")
    x = wave.samples
    return wave.with_samples(np.append(x[0], x[1:] - coeff * x[:-1]))


def crop_or_wrap(
    wave: Waveform,
    target_samples: int,
    offset: Union[int, np.random.Generator] = 0,
) -> Waveform:
    """Crop to ``target_samples`` or tile cyclically up to it.

    ``offset`` is either a fixed start sample or a seeded generator drawing the
    start uniformly from every valid position. Signals shorter than the target
    are wrap-padded (tiled from sample 0) and the offset is ignored.
    """
    if target_samples <= 0:
        raise InputError(f"target length must be positive, got {target_samples}")
    n = len(wave)
    if n < target_samples:
        return wave.with_samples(np.resize(wave.samples, target_samples))
    slack = n - target_samples
    if isinstance(offset, np.random.Generator):
        start = int(offset.integers(0, slack + 1))
    else:
        start = int(offset)
        if not 0 <= start <= slack:
            raise InputError(f"crop start {start} outside [0, {slack}]")
    return wave.with_samples(wave.samples[start:start + target_samples])


def training_crop(wave: Waveform, rng: np.random.Generator, seconds: float = TRAIN_CROP_S) -> Waveform:
    """Random fixed-length training segment (2 s = 32000 samples at 16 kHz)."""
    return crop_or_wrap(wave, int(round(seconds * wave.sample_rate)), rng)


def frame_signal(wave: Union[Waveform, np.ndarray], win_samples: int, hop_samples: int) -> np.ndarray:
    """Split into overlapping frames without center padding.

    Returns an (n_frames, win_samples) array with
    n_frames = 1 + (len - win) // hop; frame i covers [i*hop, i*hop + win).
    """
    samples = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    if win_samples <= 0 or hop_samples <= 0:
        raise InputError("window and hop lengths must be positive")
    if samples.size < win_samples:
        raise InputError(
            f"signal of {samples.size} samples is shorter than one {win_samples}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, win_samples)[::hop_samples]
    return np.ascontiguousarray(frames)


@lru_cache(maxsize=32)
def _window(kind: str, length: int) -> np.ndarray:
    if kind not in _SCIPY_WINDOWS:
        raise InputError(f"unknown window {kind!r}")
    window = signal.get_window(_SCIPY_WINDOWS[kind], length, fftbins=True).astype(np.float64)
    window.flags.writeable = False
    return window


def window_values(kind: str, length: int) -> np.ndarray:
    """Periodic window of the given kind.

    hann:    0.5 - 0.5 cos(2 pi n / N)   (the cos^2(pi n / N) form)
    hamming: 0.54 - 0.46 cos(2 pi n / N)
    """
    return _window(kind, length).copy()


def apply_window(frame: np.ndarray, window: str) -> np.ndarray:
    """Multiply frame(s) along the last axis by the window."""
    frame = np.asarray(frame, dtype=np.float64)
    return frame * _window(window, frame.shape[-1])


def fft_magnitude(frame: np.ndarray, window: str = "hann", nfft: int = 512) -> np.ndarray:
    """|DFT| of the windowed frame zero-padded to ``nfft``; bins 0..nfft/2."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > nfft:
        raise InputError(f"frame length {frame.shape[-1]} exceeds nfft {nfft}")
    return np.abs(np.fft.rfft(apply_window(frame, window), n=nfft))


def mel_center_frequencies(cfg: FeatureConfig, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters, HTK mel scale."""
    fmin, fmax = cfg.band(sample_rate)
    edges = librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=fmin, fmax=fmax, htk=True)
    return edges[1:-1]


def mel_filterbank_matrix(cfg: FeatureConfig, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """n_mels x (nfft/2 + 1) triangular filters, equally spaced on mel(f) = 2595 log10(1 + f/700)."""
    fmin, fmax = cfg.band(sample_rate)
    if fmax > sample_rate / 2.0:
        raise InputError(f"fmax {fmax} Hz exceeds the Nyquist frequency {sample_rate / 2.0} Hz")
    if cfg.nfft < cfg.win_samples(sample_rate):
        raise InputError(f"nfft {cfg.nfft} is shorter than the analysis window")
    return _filterbank(cfg.n_mels, cfg.nfft, fmin, fmax, sample_rate)


@lru_cache(maxsize=16)
def _filterbank(n_mels: int, nfft: int, fmin: float, fmax: float, sample_rate: int) -> np.ndarray:
    matrix = librosa.filters.mel(
        sr=sample_rate,
        n_fft=nfft,
        n_mels=n_mels,
        fmin=fmin,
        fmax=fmax,
        htk=True,
        norm=None,
        dtype=np.float64,
    )
    matrix.flags.writeable = False
    return matrix


def extract_fbank(wave: Waveform, cfg: FeatureConfig) -> FeatureMatrix:
    """Log mel-filterbank energies, shape (n_frames, n_mels)."""
    if cfg.preemphasis is not None:
        wave = preemphasize(wave, cfg.preemphasis)
    hop = cfg.hop_samples(wave.sample_rate)
    frames = frame_signal(wave, cfg.win_samples(wave.sample_rate), hop)
    power = fft_magnitude(frames, cfg.window, cfg.nfft) ** 2
    energies = power @ mel_filterbank_matrix(cfg, wave.sample_rate).T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), hop_samples=hop, window=cfg.window)


def instance_normalize(feat: FeatureMatrix) -> FeatureMatrix:
    """Per mel-dimension mean and variance normalization over time.

    The variance is floored at 1e-5, so constant columns map to zeros.
    """
    if feat.n_frames < 2:
        raise InputError("instance normalization needs at least 2 frames")
    values = feat.values
    mean = values.mean(axis=0, keepdims=True)
    centered = values - mean
    var = np.mean(centered ** 2, axis=0, keepdims=True)
    return feat.with_values(centered / np.sqrt(np.maximum(var, NORM_VARIANCE_FLOOR)))


def frame_count(n_samples: int, win_samples: int, hop_samples: int) -> int:
    """Number of frames ``frame_signal`` produces for a signal of ``n_samples``."""
    if n_samples < win_samples:
        return 0
    return 1 + (n_samples - win_samples) // hop_samples


def check_energy(wave: Waveform, what: str) -> float:
    """Return the waveform power, raising if it is zero."""
    power = wave.power()
    if power <= 0.0:
        raise DegenerateDataError(f"{what} has zero energy")
    return power


def segment_offsets(total: int, length: int, count: int) -> List[int]:
    """``count`` start offsets evenly spaced from 0 to ``total - length`` inclusive.

    Offsets are rounded half-up to integer positions.
    """
    last = max(total - length, 0)
    return [int(np.floor(x + 0.5)) for x in np.linspace(0.0, float(last), count)]
