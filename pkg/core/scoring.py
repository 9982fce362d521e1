"""Trial scoring: 10x10 segment cosine protocol and adaptive symmetric normalization."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.config import CohortConfig, DcfConfig
from core.dsp import Waveform, crop_or_wrap, segment_offsets
from core.errors import DegenerateDataError, InputError
from core.metrics import eer_from_sweep, min_dcf_from_sweep, roc_sweep
from utils.seeding import derive_rng

logger = logging.getLogger(__name__)

N_EVAL_SEGMENTS = 10
EVAL_SEGMENT_S = 4.0
SIGMA_EPS = 1e-12


@dataclass(frozen=True)
class Trial:
    """One (enroll, test) pair; ``label`` is None for blind lists."""

    enroll_id: str
    test_id: str
    label: Optional[bool] = None

    def __post_init__(self):
        if not self.enroll_id or not self.test_id:
            raise InputError("trial ids must be non-empty")

    @property
    def key(self) -> Tuple[str, str]:
        return (self.enroll_id, self.test_id)


@dataclass(eq=False)
class ScoreSet:
    """Per-trial scores of one system, keyed by (enroll_id, test_id)."""

    system_id: str
    keys: List[Tuple[str, str]]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.keys),):
            raise InputError(f"{self.system_id}: {len(self.keys)} trials but {self.scores.shape} scores")
        if not np.all(np.isfinite(self.scores)):
            raise InputError(f"{self.system_id}: scores must be finite")

    def __len__(self) -> int:
        return len(self.keys)

    @classmethod
    def from_trials(cls, system_id: str, trials: Sequence[Trial], scores: Iterable[float]) -> "ScoreSet":
        return cls(system_id, [t.key for t in trials], np.fromiter(scores, dtype=np.float64))

    def aligned(self, keys: Sequence[Tuple[str, str]]) -> np.ndarray:
        """Scores in the order of ``keys``; every key must be covered."""
        index = {key: i for i, key in enumerate(self.keys)}
        missing = [key for key in keys if key not in index]
        if missing or len(index) != len(set(keys)):
            detail = f"first missing trial {missing[0]}" if missing else "trial sets differ"
            raise InputError(f"{self.system_id}: score coverage mismatch ({detail})")
        return self.scores[[index[key] for key in keys]]

    def with_scores(self, scores: np.ndarray, system_id: Optional[str] = None) -> "ScoreSet":
        return ScoreSet(system_id or self.system_id, list(self.keys), scores)


def trial_labels(trials: Sequence[Trial]) -> np.ndarray:
    """Boolean target labels; raises if any trial is unlabeled."""
    if any(t.label is None for t in trials):
        raise InputError("trial list has unlabeled trials")
    if not trials:
        raise InputError("trial list is empty")
    return np.array([bool(t.label) for t in trials])


def sample_eval_segments(
    wave: Waveform,
    n_segments: int = N_EVAL_SEGMENTS,
    seg_len_s: float = EVAL_SEGMENT_S,
) -> List[Waveform]:
    """``n_segments`` windows of ``seg_len_s`` at evenly spaced offsets.

    Offsets run from 0 to len - seg_len inclusive; shorter inputs are first
    wrap-padded to one segment, which makes every segment identical.
    """
    seg_len = int(round(seg_len_s * wave.sample_rate))
    wave = crop_or_wrap(wave, seg_len, 0) if len(wave) < seg_len else wave
    return [
        wave.with_samples(wave.samples[start:start + seg_len])
        for start in segment_offsets(len(wave), seg_len, n_segments)
    ]


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateDataError(f"{what} contains a zero vector")
    return x / norms


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a, b) / (|a| |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateDataError("cosine of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def trial_score(enroll_embs: np.ndarray, test_embs: np.ndarray) -> float:
    """Mean of all pairwise cosines between the two segment sets."""
    enroll = _unit_rows(enroll_embs, "enrollment embeddings")
    test = _unit_rows(test_embs, "test embeddings")
    if enroll.shape[0] == 0 or test.shape[0] == 0:
        raise InputError("trial scoring needs at least one embedding per side")
    return float(np.mean(enroll @ test.T))


@dataclass(frozen=True)
class NormStats:
    """Top-X cohort score mean and standard deviation per utterance."""

    mu: np.ndarray
    sigma: np.ndarray


def cohort_stats(vectors: np.ndarray, cohort: np.ndarray, X: int) -> NormStats:
    """Statistics of the X highest cosines of each vector against the cohort.

    Sigma is the population standard deviation; ties at the cut are resolved
    by cohort index.
    """
    cohort = _unit_rows(cohort, "cohort")
    if not 1 <= X <= cohort.shape[0]:
        raise InputError(f"top-X must lie in [1, {cohort.shape[0]}], got {X}")
    scores = _unit_rows(vectors, "utterance vectors") @ cohort.T
    order = np.argsort(-scores, axis=1, kind="stable")[:, :X]
    top = np.take_along_axis(scores, order, axis=1)
    return NormStats(top.mean(axis=1), top.std(axis=1))


def _symmetric(raw, mu_e, sigma_e, mu_t, sigma_t):
    return 0.5 * ((raw - mu_e) / sigma_e + (raw - mu_t) / sigma_t)


def asnorm(raw: float, enroll: np.ndarray, test: np.ndarray, cohort: np.ndarray, X: int) -> float:
    """Adaptive symmetric normalization of one trial score."""
    stats = cohort_stats(np.vstack([enroll, test]), cohort, X)
    if np.any(stats.sigma < SIGMA_EPS):
        side = "enrollment" if stats.sigma[0] < SIGMA_EPS else "test"
        raise DegenerateDataError(f"top-{X} cohort scores of the {side} side have zero spread")
    return float(_symmetric(raw, stats.mu[0], stats.sigma[0], stats.mu[1], stats.sigma[1]))


class CohortScorer:
    """AS-norm over a fixed trial list, caching one cohort score row per utterance."""

    def __init__(self, raw: np.ndarray, trials: Sequence[Trial], vectors: Mapping[str, np.ndarray]):
        ids = sorted({t.enroll_id for t in trials} | {t.test_id for t in trials})
        missing = [i for i in ids if i not in vectors]
        if missing:
            raise InputError(f"no utterance vector for {missing[0]!r}")
        self.raw = np.asarray(raw, dtype=np.float64)
        index = {utt: i for i, utt in enumerate(ids)}
        self.enroll_index = np.array([index[t.enroll_id] for t in trials], dtype=np.int64)
        self.test_index = np.array([index[t.test_id] for t in trials], dtype=np.int64)
        self.utterances = _unit_rows(np.stack([vectors[i] for i in ids]), "utterance vectors")

    def sorted_cohort_scores(self, cohort: np.ndarray) -> np.ndarray:
        """Cosines against the cohort, each row sorted descending."""
        scores = self.utterances @ _unit_rows(cohort, "cohort").T
        return -np.sort(-scores, axis=1)

    def normalize(self, sorted_scores: np.ndarray, X: int) -> Tuple[np.ndarray, np.ndarray]:
        """Normalized scores (NaN where flagged) and the flagged trial indices."""
        top = sorted_scores[:, :X]
        mu, sigma = top.mean(axis=1), top.std(axis=1)
        e, t = self.enroll_index, self.test_index
        bad = (sigma[e] < SIGMA_EPS) | (sigma[t] < SIGMA_EPS)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _symmetric(self.raw, mu[e], sigma[e], mu[t], sigma[t])
        out[bad] = np.nan
        return out, np.flatnonzero(bad)


@dataclass(frozen=True)
class GridRow:
    """Mean and standard deviation of EER/DCF over the repeated cohort draws."""

    N: int
    X: int
    eer_mean: float
    eer_std: float
    dcf_mean: float
    dcf_std: float


@dataclass
class GridResult:
    rows: List[GridRow]
    selected: GridRow
    notes: List[str] = field(default_factory=list)
    cohorts: Dict[Tuple[int, int], CohortConfig] = field(default_factory=dict)

    @property
    def selected_cohort(self) -> CohortConfig:
        return self.cohorts[(self.selected.N, self.selected.X)]


def draw_cohort(pool: np.ndarray, N: int, seed: int, repeat: int) -> np.ndarray:
    """N pool vectors sampled without replacement for one repeat."""
    if N > pool.shape[0]:
        raise InputError(f"cohort size {N} exceeds the development pool ({pool.shape[0]})")
    rng = derive_rng(seed, "cohort", N, repeat)
    return pool[rng.choice(pool.shape[0], size=N, replace=False)]


def select_cell(rows: Sequence[GridRow]) -> GridRow:
    """Minimum mean DCF; ties go to the smaller N, then the smaller X."""
    if not rows:
        raise DegenerateDataError("grid search produced no usable cells")
    return min(rows, key=lambda r: (r.dcf_mean, r.N, r.X))


def grid_search_norm(
    scores: ScoreSet,
    trials: Sequence[Trial],
    vectors: Mapping[str, np.ndarray],
    pool: np.ndarray,
    ns: Sequence[int],
    xs: Sequence[int],
    repeats: int = 10,
    seed: int = 0,
    dcf: DcfConfig = DcfConfig(),
    jobs: int = 1,
) -> GridResult:
    """Evaluate AS-norm for every (N, X) over ``repeats`` random cohorts.

    Each repeat draws a fresh cohort of N pool vectors (shared by every X of
    that N). Cells with X > N, and cells where some repeat leaves no target
    or no nontarget trial unflagged, are skipped and noted.
    """
    labels = trial_labels(trials)
    pool = np.asarray(pool, dtype=np.float64)
    if pool.shape[0] < max(ns):
        raise InputError(f"development pool ({pool.shape[0]}) is smaller than the largest N ({max(ns)})")
    scorer = CohortScorer(scores.aligned([t.key for t in trials]), trials, vectors)
    notes: List[str] = []
    cohorts: Dict[Tuple[int, int], CohortConfig] = {}
    for n in ns:
        for x in xs:
            if x > n:
                notes.append(f"skipped N={n} X={x}: X exceeds N")
                logger.info("grid cell N=%d X=%d skipped (X > N)", n, x)
            else:
                cohorts[(n, x)] = CohortConfig(n, x, repeats, seed)
    valid_xs = {n: [x for x in xs if (n, x) in cohorts] for n in ns}

    def run(task: Tuple[int, int]) -> Dict[int, Optional[Tuple[float, float]]]:
        n, repeat = task
        sorted_scores = scorer.sorted_cohort_scores(draw_cohort(pool, n, seed, repeat))
        out: Dict[int, Optional[Tuple[float, float]]] = {}
        for x in valid_xs[n]:
            normalized, flagged = scorer.normalize(sorted_scores, x)
            keep = np.isfinite(normalized)
            if flagged.size:
                logger.warning("N=%d X=%d repeat %d: %d trials flagged (zero cohort spread)", n, x, repeat, flagged.size)
            kept = labels[keep]
            if not kept.any() or kept.all():
                out[x] = None
                continue
            sweep = roc_sweep(normalized[keep], kept)
            out[x] = (eer_from_sweep(sweep)[0], min_dcf_from_sweep(sweep, dcf)[0])
        return out

    tasks = [(n, r) for n in ns if valid_xs[n] for r in range(repeats)]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool_executor:
        results = dict(zip(tasks, pool_executor.map(run, tasks)))

    rows = []
    for n, x in cohorts:
        cell = [results[(n, r)][x] for r in range(repeats)]
        if any(c is None for c in cell):
            notes.append(f"skipped N={n} X={x}: flagged trials leave a single class")
            logger.warning("grid cell N=%d X=%d skipped (flagged trials leave a single class)", n, x)
            continue
        eers = np.array([c[0] for c in cell])
        dcfs = np.array([c[1] for c in cell])
        rows.append(GridRow(n, x, float(eers.mean()), float(eers.std()), float(dcfs.mean()), float(dcfs.std())))
    selected = select_cell(rows)
    logger.info("selected cohort N=%d X=%d (mean DCF %.4f)", selected.N, selected.X, selected.dcf_mean)
    return GridResult(rows, selected, notes, {(r.N, r.X): cohorts[(r.N, r.X)] for r in rows})


def apply_asnorm(
    scores: ScoreSet,
    trials: Sequence[Trial],
    vectors: Mapping[str, np.ndarray],
    pool: np.ndarray,
    cohort: CohortConfig,
    repeat: int = 0,
) -> Tuple[ScoreSet, np.ndarray]:
    """Normalize a score set with one cohort draw; returns the set and flagged indices.

    Flagged trials keep their raw score in the returned set.
    """
    raw = scores.aligned([t.key for t in trials])
    scorer = CohortScorer(raw, trials, vectors)
    drawn = draw_cohort(np.asarray(pool), cohort.N, cohort.seed, repeat)
    normalized, flagged = scorer.normalize(scorer.sorted_cohort_scores(drawn), cohort.X)
    if flagged.size:
        logger.warning("%d trials have zero cohort spread and keep their raw score", flagged.size)
        normalized[flagged] = raw[flagged]
    return ScoreSet.from_trials(f"{scores.system_id}+asnorm", trials, normalized), flagged
