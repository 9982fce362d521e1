"""Detection metrics: ROC sweep, EER and the minimum detection cost."""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple

import numpy as np

from core.config import DcfConfig
from core.errors import DegenerateDataError, InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorRates:
    """Miss and false-alarm rates at one decision threshold (accept iff score >= threshold)."""

    e_miss: float
    e_fa: float
    threshold: float


@dataclass(frozen=True)
class RocSweep:
    """Operating points at every distinct score plus +inf, thresholds ascending.

    e_miss is nondecreasing and e_fa nonincreasing along the arrays.
    """

    thresholds: np.ndarray
    e_miss: np.ndarray
    e_fa: np.ndarray
    n_target: int
    n_nontarget: int

    def __len__(self) -> int:
        return int(self.thresholds.size)

    def points(self) -> List[ErrorRates]:
        return [ErrorRates(float(m), float(f), float(t)) for t, m, f in zip(self.thresholds, self.e_miss, self.e_fa)]


@dataclass(frozen=True)
class MetricsReport:
    """EER (percent) and minimum DCF of one score set."""

    eer: float
    min_dcf: float
    n_target: int
    n_nontarget: int
    eer_threshold: float
    dcf_threshold: float
    min_dcf_norm: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def summary_line(self) -> str:
        return f"EER={self.eer:.4f}% minDCF={self.min_dcf:.4f}"


def dcf_point(e: ErrorRates, cfg: DcfConfig = DcfConfig()) -> float:
    """C_miss * E_miss * P_target + C_fa * E_fa * (1 - P_target)."""
    return cfg.c_miss * e.e_miss * cfg.p_target + cfg.c_fa * e.e_fa * (1.0 - cfg.p_target)


def _split(scores: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError(f"scores {scores.shape} and labels {labels.shape} must be matching 1-D arrays")
    if not np.all(np.isfinite(scores)):
        raise InputError("scores contain non-finite values")
    labels = labels.astype(bool)
    targets, nontargets = scores[labels], scores[~labels]
    if targets.size == 0 or nontargets.size == 0:
        raise DegenerateDataError(
            f"need both target and nontarget trials (got {targets.size} targets, {nontargets.size} nontargets)"
        )
    return np.sort(targets), np.sort(nontargets)


def roc_sweep(scores: np.ndarray, labels: np.ndarray) -> RocSweep:
    """Error rates at every distinct score and at +inf (the all-reject point)."""
    targets, nontargets = _split(scores, labels)
    thresholds = np.append(np.unique(np.concatenate([targets, nontargets])), np.inf)
    misses = np.searchsorted(targets, thresholds, side="left")
    false_alarms = nontargets.size - np.searchsorted(nontargets, thresholds, side="left")
    return RocSweep(
        thresholds=thresholds,
        e_miss=misses / float(targets.size),
        e_fa=false_alarms / float(nontargets.size),
        n_target=int(targets.size),
        n_nontarget=int(nontargets.size),
    )


def eer_from_sweep(sweep: RocSweep) -> Tuple[float, float]:
    """EER in percent, linearly interpolated between the bracketing points."""
    diff = sweep.e_miss - sweep.e_fa
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        return 100.0 * float(sweep.e_miss[k]), float(sweep.thresholds[k])
    m0, m1 = sweep.e_miss[k - 1], sweep.e_miss[k]
    f0, f1 = sweep.e_fa[k - 1], sweep.e_fa[k]
    alpha = (f0 - m0) / ((m1 - m0) - (f1 - f0))
    rate = m0 + alpha * (m1 - m0)
    t0, t1 = sweep.thresholds[k - 1], sweep.thresholds[k]
    threshold = t0 + alpha * (t1 - t0) if np.isfinite(t1) else t0
    return 100.0 * float(rate), float(threshold)


def eer(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """(EER percent, threshold)."""
    return eer_from_sweep(roc_sweep(scores, labels))


def min_dcf_from_sweep(sweep: RocSweep, cfg: DcfConfig = DcfConfig(), normalized: bool = False) -> Tuple[float, float]:
    costs = cfg.c_miss * sweep.e_miss * cfg.p_target + cfg.c_fa * sweep.e_fa * (1.0 - cfg.p_target)
    k = int(np.argmin(costs))
    value = float(costs[k])
    if normalized:
        value /= min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1.0 - cfg.p_target))
    return value, float(sweep.thresholds[k])


def min_dcf(
    scores: np.ndarray,
    labels: np.ndarray,
    cfg: DcfConfig = DcfConfig(),
    normalized: bool = False,
) -> Tuple[float, float]:
    """(minimum detection cost, threshold) over every sweep point.

    ``normalized`` divides by min(C_miss * P_target, C_fa * (1 - P_target)),
    the default-cost normalization of NIST evaluations.
    """
    return min_dcf_from_sweep(roc_sweep(scores, labels), cfg, normalized)


def evaluate(scores: np.ndarray, labels: np.ndarray, cfg: DcfConfig = DcfConfig()) -> MetricsReport:
    """EER and minDCF from a single sweep."""
    sweep = roc_sweep(scores, labels)
    eer_value, eer_threshold = eer_from_sweep(sweep)
    dcf_value, dcf_threshold = min_dcf_from_sweep(sweep, cfg)
    dcf_norm, _ = min_dcf_from_sweep(sweep, cfg, normalized=True)
    return MetricsReport(
        eer=eer_value,
        min_dcf=dcf_value,
        n_target=sweep.n_target,
        n_nontarget=sweep.n_nontarget,
        eer_threshold=eer_threshold,
        dcf_threshold=dcf_threshold,
        min_dcf_norm=dcf_norm,
    )
