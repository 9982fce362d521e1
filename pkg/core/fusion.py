"""Score fusion: min-max scaling, convex weighted sums and weight search."""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.config import DcfConfig
from core.errors import DegenerateDataError, InputError
from core.metrics import eer_from_sweep, min_dcf_from_sweep, roc_sweep
from core.scoring import ScoreSet

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-9

# Fixed-weight rows of the published results, keyed by system number.
PUBLISHED_WEIGHTS: Dict[str, Dict[str, float]] = {
    "sys4+7+10+13": {"sys4": 0.25, "sys7": 0.25, "sys10": 0.25, "sys13": 0.25},
    "sys1+4+7+10+13": {"sys1": 0.90, "sys4": 0.05, "sys7": 0.01, "sys10": 0.03, "sys13": 0.01},
    "sys1+5+8+11+14": {"sys1": 0.70, "sys5": 0.08, "sys8": 0.07, "sys11": 0.06, "sys14": 0.09},
}


@dataclass(frozen=True)
class FusionWeights:
    """Non-negative per-system weights summing to one."""

    weights: Dict[str, float]

    def __post_init__(self):
        if not self.weights:
            raise InputError("fusion needs at least one weight")
        if any(w < 0 for w in self.weights.values()):
            raise InputError(f"fusion weights must be non-negative, got {self.weights}")
        total = sum(self.weights.values())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise InputError(f"fusion weights must sum to 1, got {total:.12f}")

    @classmethod
    def from_sequence(cls, system_ids: Sequence[str], values: Sequence[float]) -> "FusionWeights":
        if len(system_ids) != len(values):
            raise InputError(f"{len(values)} weights given for {len(system_ids)} systems")
        if len(set(system_ids)) != len(system_ids):
            raise InputError("fusion system ids must be unique")
        return cls(dict(zip(system_ids, (float(v) for v in values))))

    def vector(self, system_ids: Sequence[str]) -> np.ndarray:
        missing = [s for s in system_ids if s not in self.weights]
        if missing or len(system_ids) != len(self.weights):
            raise InputError(f"weights {sorted(self.weights)} do not match systems {list(system_ids)}")
        return np.array([self.weights[s] for s in system_ids])


def equal_weights(system_ids: Sequence[str]) -> FusionWeights:
    """Uniform weights (a plain score sum, up to scale)."""
    return FusionWeights.from_sequence(system_ids, [1.0 / len(system_ids)] * len(system_ids))


def minmax_scale(scores: ScoreSet) -> ScoreSet:
    """Map scores affinely onto [0, 1]: min -> 0, max -> 1."""
    lo, hi = float(scores.scores.min()), float(scores.scores.max())
    if hi <= lo:
        raise DegenerateDataError(f"{scores.system_id}: all scores are equal, cannot min-max scale")
    return scores.with_scores((scores.scores - lo) / (hi - lo))


def _aligned_matrix(score_sets: Sequence[ScoreSet]) -> Tuple[List[Tuple[str, str]], np.ndarray]:
    """(trial keys, systems x trials matrix of min-max scaled scores)."""
    if not score_sets:
        raise InputError("fusion needs at least one score set")
    keys = list(score_sets[0].keys)
    for other in score_sets[1:]:
        if len(other) != len(keys):
            raise InputError(
                f"score coverage mismatch: {score_sets[0].system_id} has {len(keys)} trials, "
                f"{other.system_id} has {len(other)}"
            )
    rows = [minmax_scale(s).aligned(keys) for s in score_sets]
    return keys, np.vstack(rows)


def fuse(score_sets: Sequence[ScoreSet], w: FusionWeights, system_id: str = "fusion") -> ScoreSet:
    """Per trial: sum_k w_k * minmax_k(score)."""
    keys, matrix = _aligned_matrix(score_sets)
    weights = w.vector([s.system_id for s in score_sets])
    return ScoreSet(system_id, keys, np.clip(weights @ matrix, 0.0, 1.0))


@dataclass(frozen=True)
class TraceEntry:
    weights: Tuple[float, ...]
    eer: float
    dcf: float


@dataclass
class SearchResult:
    weights: FusionWeights
    objective: float
    eer: float
    dcf: float
    trace: List[TraceEntry] = field(default_factory=list)


def simplex_lattice(n_systems: int, step: float) -> Iterator[Tuple[float, ...]]:
    """Every weight vector with entries on multiples of ``step`` summing to one."""
    units = _units(step)
    for cuts in itertools.combinations(range(units + n_systems - 1), n_systems - 1):
        bounds = (-1,) + cuts + (units + n_systems - 1,)
        yield tuple((bounds[i + 1] - bounds[i] - 1) / units for i in range(n_systems))


def _units(step: float) -> int:
    units = int(round(1.0 / step))
    if units <= 0 or abs(units * step - 1.0) > 1e-9:
        raise InputError(f"granularity {step} must divide 1")
    return units


def search_weights(
    score_sets: Sequence[ScoreSet],
    labels: np.ndarray,
    granularity: float = 0.01,
    objective: str = "DCF",
    coarse_step: float = 0.05,
    dcf: DcfConfig = DcfConfig(),
) -> SearchResult:
    """Weights minimizing minDCF (or EER) on labeled trials.

    A coarse scan of the simplex lattice at ``coarse_step`` is followed by
    coordinate refinement that moves ``granularity`` of weight between pairs
    of systems while the objective improves. Ties keep the earlier candidate.
    ``labels`` must follow the trial order of the first score set.
    """
    if objective not in ("DCF", "EER"):
        raise InputError(f"objective must be DCF or EER, got {objective!r}")
    labels = np.asarray(labels).astype(bool)
    keys, matrix = _aligned_matrix(score_sets)
    if labels.shape != (len(keys),) or labels.size == 0:
        raise InputError(f"need {len(keys)} trial labels for the weight search, got {labels.shape}")
    fine = _units(granularity)
    coarse = _units(coarse_step)
    if fine % coarse != 0:
        raise InputError(f"coarse step {coarse_step} must be a multiple of granularity {granularity}")

    trace: List[TraceEntry] = []
    seen: Dict[Tuple[int, ...], Tuple[float, float]] = {}

    def rank(eer_value: float, dcf_value: float) -> Tuple[float, float]:
        return (dcf_value, eer_value) if objective == "DCF" else (eer_value, dcf_value)

    def evaluate(units: Tuple[int, ...]) -> Tuple[float, float]:
        if units not in seen:
            weights = np.array(units, dtype=np.float64) / fine
            sweep = roc_sweep(weights @ matrix, labels)
            result = (eer_from_sweep(sweep)[0], min_dcf_from_sweep(sweep, dcf)[0])
            seen[units] = result
            trace.append(TraceEntry(tuple(float(w) for w in weights), *result))
        return seen[units]

    best: Optional[Tuple[int, ...]] = None
    for point in simplex_lattice(len(score_sets), coarse_step):
        units = tuple(int(round(w * fine)) for w in point)
        if best is None or rank(*evaluate(units)) < rank(*evaluate(best)):
            best = units
    improved = True
    while improved:
        improved = False
        for i, j in itertools.permutations(range(len(score_sets)), 2):
            if best[i] == 0:
                continue
            candidate = list(best)
            candidate[i] -= 1
            candidate[j] += 1
            candidate = tuple(candidate)
            if rank(*evaluate(candidate)) < rank(*evaluate(best)):
                best = candidate
                improved = True

    eer_value, dcf_value = evaluate(best)
    weights = FusionWeights.from_sequence([s.system_id for s in score_sets], [u / fine for u in best])
    logger.info(
        "fusion weights %s: EER=%.4f%% minDCF=%.4f after %d evaluations",
        ", ".join(f"{k}={v:.2f}" for k, v in weights.weights.items()), eer_value, dcf_value, len(trace),
    )
    value = dcf_value if objective == "DCF" else eer_value
    return SearchResult(weights, value, eer_value, dcf_value, trace)
