"""WAV input/output (mono 16-bit PCM at 16 kHz)."""

import logging
from pathlib import Path
from typing import Union

import numpy as np
import soundfile as sf

from core.dsp import SAMPLE_RATE, Waveform
from core.errors import InputError
from core.storage import atomic_write

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.0


def read_wav(path: Union[str, Path], expected_rate: int = SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM WAV, scaling samples by 1/32768."""
    try:
        info = sf.info(str(path))
        samples, rate = sf.read(str(path), dtype="int16", always_2d=True)
    except (RuntimeError, OSError) as exc:
        raise InputError(f"cannot read WAV {path}: {exc}") from exc
    if info.subtype != "PCM_16":
        raise InputError(f"{path}: expected 16-bit PCM, got {info.subtype}")
    if samples.shape[1] != 1:
        raise InputError(f"{path}: expected mono audio, got {samples.shape[1]} channels")
    if rate != expected_rate:
        raise InputError(f"{path}: expected {expected_rate} Hz, got {rate} Hz (no resampling)")
    if samples.shape[0] == 0:
        raise InputError(f"{path}: no samples")
    return Waveform(samples[:, 0].astype(np.float64) / PCM_SCALE, rate)


def write_wav(wave: Waveform, path: Union[str, Path]):
    """Write 16-bit PCM atomically, clipping to the representable range."""
    pcm = np.clip(np.round(wave.samples * PCM_SCALE), -32768, 32767).astype(np.int16)
    with atomic_write(path, "wb") as handle:
        sf.write(handle, pcm, wave.sample_rate, subtype="PCM_16", format="WAV")
