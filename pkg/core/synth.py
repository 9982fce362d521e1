"""Synthetic embedding harness: speakers, utterances, trials and a cohort pool."""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from core.errors import InputError
from core.scoring import Trial
from core.storage import EmbeddingStore
from utils.seeding import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian speaker clusters on the unit sphere."""

    n_speakers: int = 200
    utterances_per_speaker: int = 5
    dim: int = 32
    within_speaker_spread: float = 0.5
    between_speaker_spread: float = 1.0
    seed: int = 0
    n_cohort: int = 400

    def __post_init__(self):
        if self.n_speakers < 2:
            raise InputError(f"need at least 2 speakers, got {self.n_speakers}")
        if self.utterances_per_speaker < 2:
            raise InputError(f"need at least 2 utterances per speaker, got {self.utterances_per_speaker}")
        if self.dim < 2:
            raise InputError(f"dim must be at least 2, got {self.dim}")
        if self.within_speaker_spread <= 0 or self.between_speaker_spread <= 0:
            raise InputError("speaker spreads must be positive")
        if self.n_cohort < 0:
            raise InputError(f"n_cohort must be non-negative, got {self.n_cohort}")


@dataclass
class SyntheticData:
    store: EmbeddingStore
    trials: List[Trial]
    cohort_ids: List[str]


def utterance_id(speaker: int, utterance: int) -> str:
    return f"spk{speaker:04d}-utt{utterance:02d}"


def cohort_id(index: int) -> str:
    return f"cohort-{index:05d}"


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Sample the store, the labeled trial list and the cohort pool.

    Trials are every same-speaker utterance pair as targets plus as many
    distinct cross-speaker nontargets drawn from the seed. Cohort vectors come from
    speakers that never appear in the trials.
    """
    rng = derive_rng(spec.seed, "synth", "speakers")
    centroids = rng.normal(0.0, spec.between_speaker_spread, size=(spec.n_speakers, spec.dim))
    noise = rng.normal(0.0, spec.within_speaker_spread, size=(spec.n_speakers, spec.utterances_per_speaker, spec.dim))
    vectors = _unit(centroids[:, None, :] + noise)

    store = EmbeddingStore(spec.dim)
    for s in range(spec.n_speakers):
        for u in range(spec.utterances_per_speaker):
            store.add(utterance_id(s, u), vectors[s, u])

    cohort_rng = derive_rng(spec.seed, "synth", "cohort")
    cohort_centroids = cohort_rng.normal(0.0, spec.between_speaker_spread, size=(spec.n_cohort, spec.dim))
    cohort_noise = cohort_rng.normal(0.0, spec.within_speaker_spread, size=(spec.n_cohort, spec.dim))
    cohort_vectors = _unit(cohort_centroids + cohort_noise) if spec.n_cohort else np.zeros((0, spec.dim))
    cohort_ids = [cohort_id(i) for i in range(spec.n_cohort)]
    for key, vector in zip(cohort_ids, cohort_vectors):
        store.add(key, vector)

    trials = [
        Trial(utterance_id(s, a), utterance_id(s, b), True)
        for s in range(spec.n_speakers)
        for a in range(spec.utterances_per_speaker)
        for b in range(a + 1, spec.utterances_per_speaker)
    ]
    n_targets = len(trials)
    trial_rng = derive_rng(spec.seed, "synth", "nontargets")
    seen = set()
    while len(trials) < 2 * n_targets:
        a = int(trial_rng.integers(spec.n_speakers))
        # A uniform offset in [1, n) guarantees a different speaker.
        b = (a + int(trial_rng.integers(1, spec.n_speakers))) % spec.n_speakers
        key = (
            utterance_id(a, int(trial_rng.integers(spec.utterances_per_speaker))),
            utterance_id(b, int(trial_rng.integers(spec.utterances_per_speaker))),
        )
        if key not in seen:
            seen.add(key)
            trials.append(Trial(key[0], key[1], False))
    logger.info(
        "synthetic set: %d speakers x %d utterances, %d trials, %d cohort vectors",
        spec.n_speakers, spec.utterances_per_speaker, len(trials), spec.n_cohort,
    )
    return SyntheticData(store, trials, cohort_ids)
