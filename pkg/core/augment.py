"""Data augmentation: additive noise at a target SNR, reverberation, spectral masks."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from core.config import FeatureConfig
from core.dsp import FeatureMatrix, Waveform, check_energy, crop_or_wrap, extract_fbank
from core.errors import DegenerateDataError, InputError
from utils.seeding import hash64

logger = logging.getLogger(__name__)

CATEGORIES = ("speech", "music", "noise", "rir")
ROOM_CLASSES = ("small", "medium", "large")
TRANSFORMS = ("none", "music", "noise", "speech", "rir_small", "rir_medium", "rir_large", "specmask")

SEGMENT_LEN_S = 5.0
SEGMENT_STEP_S = 3.0


@dataclass(frozen=True)
class AugmentPolicy:
    """Parameter ranges for one augmentation category."""

    category: str
    snr_range_db: Tuple[float, float] = (0.0, 0.0)
    n_sources_range: Tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InputError(f"unknown augmentation category {self.category!r}")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise InputError(f"{self.category}: SNR range {self.snr_range_db} is reversed")
        if not 1 <= self.n_sources_range[0] <= self.n_sources_range[1]:
            raise InputError(f"{self.category}: source count range {self.n_sources_range} is invalid")


POLICIES: Dict[str, AugmentPolicy] = {
    "speech": AugmentPolicy("speech", (13.0, 20.0), (3, 7)),
    "music": AugmentPolicy("music", (5.0, 15.0), (1, 1)),
    "noise": AugmentPolicy("noise", (0.0, 15.0), (1, 1)),
    "rir": AugmentPolicy("rir"),
}


@dataclass(frozen=True)
class MaskSpec:
    """Time and frequency masking limits."""

    max_time_mask_frames: int = 40
    max_freq_mask_bins: int = 8
    n_time_masks: int = 1
    n_freq_masks: int = 1

    def __post_init__(self):
        if min(self.max_time_mask_frames, self.max_freq_mask_bins, self.n_time_masks, self.n_freq_masks) < 0:
            raise InputError("mask widths and counts must be non-negative")


def segment_corpus(
    wave: Waveform,
    width_s: float = SEGMENT_LEN_S,
    step_s: float = SEGMENT_STEP_S,
) -> List[Waveform]:
    """Cut a recording into fixed-width windows; the trailing partial one is dropped."""
    width = int(round(width_s * wave.sample_rate))
    step = int(round(step_s * wave.sample_rate))
    if width <= 0 or step <= 0:
        raise InputError("segment width and step must be positive")
    if len(wave) < width:
        return []
    count = (len(wave) - width) // step + 1
    return [wave.with_samples(wave.samples[i * step:i * step + width]) for i in range(count)]


@dataclass
class NoiseCorpus:
    """Additive-noise segments grouped by category (speech, music, noise)."""

    segments: Dict[str, List[Waveform]] = field(default_factory=dict)
    segment_len_s: float = SEGMENT_LEN_S
    step_s: float = SEGMENT_STEP_S

    def add_recording(self, category: str, wave: Waveform) -> int:
        """Segment a recording into the corpus; returns how many segments were added."""
        if category not in CATEGORIES or category == "rir":
            raise InputError(f"noise corpus category must be speech, music or noise, got {category!r}")
        pieces = segment_corpus(wave, self.segment_len_s, self.step_s)
        self.segments.setdefault(category, []).extend(pieces)
        return len(pieces)

    def get(self, category: str) -> List[Waveform]:
        pieces = self.segments.get(category, [])
        if not pieces:
            raise InputError(f"noise corpus has no {category!r} segments")
        return pieces

    @classmethod
    def from_directory(cls, root: Path, read_wav: Callable[[Path], Waveform]) -> "NoiseCorpus":
        """Load ``speech/``, ``music/`` and ``noise/`` WAV folders under ``root``."""
        corpus = cls()
        root = Path(root)
        for category in ("speech", "music", "noise"):
            for path in sorted((root / category).glob("*.wav")):
                added = corpus.add_recording(category, read_wav(path))
                logger.debug("corpus %s: %s -> %d segments", category, path.name, added)
        logger.info(
            "noise corpus loaded from %s: %s",
            root,
            ", ".join(f"{k}={len(v)}" for k, v in sorted(corpus.segments.items())),
        )
        return corpus


def load_rirs(root: Path, read_wav: Callable[[Path], Waveform]) -> Dict[str, List[Waveform]]:
    """Load RIR filters from ``small/``, ``medium/`` and ``large/`` folders."""
    root = Path(root)
    rirs = {room: [read_wav(p) for p in sorted((root / room).glob("*.wav"))] for room in ROOM_CLASSES}
    logger.info("RIR filters loaded from %s: %s", root, ", ".join(f"{k}={len(v)}" for k, v in rirs.items()))
    return rirs


def mix_at_snr(
    clean: Waveform,
    noises: Sequence[Waveform],
    snr_db: float,
    rng: np.random.Generator,
) -> Waveform:
    """Add the summed noises scaled so the aggregate reaches ``snr_db``.

    Each noise is wrap-tiled or randomly cropped to the clean length before
    summing; the clean component is left untouched.
    """
    if not noises:
        raise InputError("mix_at_snr needs at least one noise")
    clean_power = check_energy(clean, "clean signal")
    total = np.zeros(len(clean))
    for noise in noises:
        check_energy(noise, "noise signal")
        total += crop_or_wrap(noise, len(clean), rng).samples
    noise_power = float(np.mean(total ** 2))
    if noise_power <= 0.0:
        raise DegenerateDataError("summed noise has zero energy")
    gain = np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return clean.with_samples(clean.samples + gain * total)


def apply_rir(wave: Waveform, rir: Waveform) -> Waveform:
    """Convolve with a room response, truncate to the input length, restore input power."""
    check_energy(rir, "RIR filter")
    wet = signal.fftconvolve(wave.samples, rir.samples, mode="full")[:len(wave)]
    wet_power = float(np.mean(wet ** 2))
    in_power = wave.power()
    if wet_power <= 0.0 or in_power <= 0.0:
        return wave.with_samples(np.zeros(len(wave)))
    return wave.with_samples(wet * np.sqrt(in_power / wet_power))


def spec_mask(feat: FeatureMatrix, spec: MaskSpec, rng: np.random.Generator) -> FeatureMatrix:
    """Fill random contiguous time and frequency bands with the matrix mean."""
    if spec.max_time_mask_frames > feat.n_frames or spec.max_freq_mask_bins > feat.n_mels:
        raise InputError(
            f"mask widths ({spec.max_time_mask_frames} frames, {spec.max_freq_mask_bins} bins) "
            f"do not fit a {feat.n_frames}x{feat.n_mels} matrix"
        )
    values = feat.values.copy()
    fill = float(feat.values.mean())
    for _ in range(spec.n_time_masks):
        width = int(rng.integers(0, spec.max_time_mask_frames + 1))
        start = int(rng.integers(0, feat.n_frames - width + 1))
        values[start:start + width, :] = fill
    for _ in range(spec.n_freq_masks):
        width = int(rng.integers(0, spec.max_freq_mask_bins + 1))
        start = int(rng.integers(0, feat.n_mels - width + 1))
        values[:, start:start + width] = fill
    return feat.with_values(values)


@dataclass(frozen=True)
class OnlineDraw:
    """The category and parameters picked for one online augmentation."""

    category: str
    snr_db: Optional[float] = None
    n_sources: int = 1


def draw_online_policy(rng: np.random.Generator) -> OnlineDraw:
    """Pick one of the four categories with equal probability and draw its parameters."""
    category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
    if category == "rir":
        return OnlineDraw(category)
    policy = POLICIES[category]
    lo, hi = policy.n_sources_range
    n_sources = int(rng.integers(lo, hi + 1))
    snr_db = float(rng.uniform(*policy.snr_range_db))
    return OnlineDraw(category, snr_db, n_sources)


def augment_online(
    wave: Waveform,
    corpus: NoiseCorpus,
    rirs: Sequence[Waveform],
    rng: np.random.Generator,
) -> Waveform:
    """Apply exactly one of speech, music, noise or reverberation."""
    draw = draw_online_policy(rng)
    if draw.category == "rir":
        if not rirs:
            raise InputError("online augmentation needs at least one RIR filter")
        return apply_rir(wave, rirs[int(rng.integers(len(rirs)))])
    pool = corpus.get(draw.category)
    replace = len(pool) < draw.n_sources
    picks = rng.choice(len(pool), size=draw.n_sources, replace=replace)
    logger.debug("online %s: %d sources at %.2f dB", draw.category, draw.n_sources, draw.snr_db)
    return mix_at_snr(wave, [pool[int(i)] for i in picks], draw.snr_db, rng)


@dataclass(frozen=True)
class ManifestRecord:
    """One augmentation directive; audio is only rendered on request."""

    utterance_id: str
    source_path: str
    transform: str
    seed: int
    params: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise InputError(f"unknown transform {self.transform!r}")

    @property
    def record_id(self) -> str:
        return f"{self.utterance_id}@{self.transform}"

    def param(self, key: str) -> str:
        for name, value in self.params:
            if name == key:
                return value
        raise InputError(f"record {self.record_id} has no parameter {key!r}")


def build_offline_manifest(
    clean_manifest: Sequence[Tuple[str, str]],
    master_seed: int,
    mask: MaskSpec = MaskSpec(),
) -> List[ManifestRecord]:
    """Expand each (utterance_id, path) into the original plus four augmented copies.

    The four directives are music, noise, one RIR room class drawn per
    utterance, and a spectral mask.
    """
    if not clean_manifest:
        raise InputError("offline manifest needs at least one utterance")
    records: List[ManifestRecord] = []
    for utterance_id, path in clean_manifest:
        room_rng = np.random.default_rng(hash64(master_seed, utterance_id, "room"))
        room = ROOM_CLASSES[int(room_rng.integers(len(ROOM_CLASSES)))]
        for transform in ("none", "music", "noise", f"rir_{room}", "specmask"):
            seed = hash64(master_seed, utterance_id, transform)
            records.append(ManifestRecord(utterance_id, path, transform, seed, _offline_params(transform, seed, mask)))
    return records


def _offline_params(transform: str, seed: int, mask: MaskSpec) -> Tuple[Tuple[str, str], ...]:
    rng = np.random.default_rng(seed)
    if transform in ("music", "noise"):
        return (("snr_db", f"{rng.uniform(*POLICIES[transform].snr_range_db):.6f}"),)
    if transform == "specmask":
        return (
            ("max_time", str(mask.max_time_mask_frames)),
            ("max_freq", str(mask.max_freq_mask_bins)),
            ("n_time", str(mask.n_time_masks)),
            ("n_freq", str(mask.n_freq_masks)),
        )
    return ()


def render_record(
    record: ManifestRecord,
    wave: Waveform,
    corpus: Optional[NoiseCorpus],
    rirs: Optional[Dict[str, List[Waveform]]],
    feature: FeatureConfig,
) -> FeatureMatrix:
    """Materialize one directive as a feature matrix, seeded by the record."""
    rng = np.random.default_rng(record.seed)
    if record.transform in ("music", "noise", "speech"):
        if corpus is None:
            raise InputError(f"{record.record_id}: a noise corpus is required")
        pool = corpus.get(record.transform)
        noise = pool[int(rng.integers(len(pool)))]
        wave = mix_at_snr(wave, [noise], float(record.param("snr_db")), rng)
    elif record.transform.startswith("rir_"):
        room = record.transform[len("rir_"):]
        filters = (rirs or {}).get(room) or []
        if not filters:
            raise InputError(f"{record.record_id}: no {room} RIR filters available")
        wave = apply_rir(wave, filters[int(rng.integers(len(filters)))])
    feat = extract_fbank(wave, feature)
    if record.transform == "specmask":
        spec = MaskSpec(
            max_time_mask_frames=min(int(record.param("max_time")), feat.n_frames),
            max_freq_mask_bins=min(int(record.param("max_freq")), feat.n_mels),
            n_time_masks=int(record.param("n_time")),
            n_freq_masks=int(record.param("n_freq")),
        )
        feat = spec_mask(feat, spec, rng)
    return feat
