"""Training objectives on embeddings, with analytic gradients.

All functions work in float64 numpy and return a LossResult whose ``grads``
dict holds one array per differentiable input:

    embs  - same shape as the embeddings passed in
    W     - classifier weights (softmax / AAM)
    w, b  - angular prototypical affine (AP)
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from core.config import LossConfig
from core.errors import DegenerateDataError, InputError

logger = logging.getLogger(__name__)

_NORM_EPS = 1e-12


@dataclass
class LossResult:
    """Mean loss over the batch and its gradients."""

    value: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    def __add__(self, other: "LossResult") -> "LossResult":
        grads = dict(self.grads)
        for name, grad in other.grads.items():
            grads[name] = grads[name] + grad if name in grads else grad
        return LossResult(self.value + other.value, grads)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def _cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    log_probs = _log_softmax(logits)
    batch = logits.shape[0]
    rows = np.arange(batch)
    value = -float(np.mean(log_probs[rows, labels]))
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return value, dlogits / batch


def _check_labels(labels: np.ndarray, n_classes: int, batch: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,) or not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"expected {batch} integer labels, got shape {labels.shape}")
    if batch == 0:
        raise InputError("loss needs a batch of at least one embedding")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise InputError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def _normalize_rows(x: np.ndarray, what: str):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < _NORM_EPS):
        raise DegenerateDataError(f"{what} contains a zero-norm vector")
    return x / norms, norms


def _normalize_backward(unit: np.ndarray, norms: np.ndarray, dunit: np.ndarray) -> np.ndarray:
    """Gradient through x -> x / |x| given the normalized rows and their norms."""
    return (dunit - unit * np.sum(unit * dunit, axis=-1, keepdims=True)) / norms


def softmax_loss(embs: np.ndarray, labels: np.ndarray, W: np.ndarray) -> LossResult:
    """Cross-entropy over plain dot-product logits ``embs @ W.T``."""
    embs = np.asarray(embs, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    labels = _check_labels(labels, W.shape[0], embs.shape[0])
    value, dlogits = _cross_entropy(embs @ W.T, labels)
    return LossResult(value, {"embs": dlogits @ W, "W": dlogits.T @ embs})


def aam_softmax_loss(
    embs: np.ndarray,
    labels: np.ndarray,
    W: np.ndarray,
    m: float = 0.2,
    s: float = 30.0,
) -> LossResult:
    """Additive angular margin softmax.

    Target logit s*cos(theta_y + m), others s*cos(theta_j), with cosines between
    L2-normalized embeddings and class rows. Past theta_y = pi - m the target
    logit falls back to s*(cos(theta_y) - m*sin(m)).
    """
    embs = np.asarray(embs, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    labels = _check_labels(labels, W.shape[0], embs.shape[0])
    e_hat, e_norm = _normalize_rows(embs, "embedding batch")
    w_hat, w_norm = _normalize_rows(W, "classifier weights")

    cosine = e_hat @ w_hat.T
    rows = np.arange(embs.shape[0])
    target = cosine[rows, labels]
    sine = np.sqrt(np.clip(1.0 - target ** 2, 0.0, None))
    cos_m, sin_m = math.cos(m), math.sin(m)
    in_range = target > math.cos(math.pi - m)
    phi = np.where(in_range, target * cos_m - sine * sin_m, target - m * sin_m)
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi = np.where(in_range & (sine > 0), cos_m + sin_m * target / sine, 1.0)
    dphi = np.where(in_range & (sine == 0), cos_m, dphi)

    logits = s * cosine
    logits[rows, labels] = s * phi
    value, dlogits = _cross_entropy(logits, labels)

    dcos = s * dlogits
    dcos[rows, labels] *= dphi
    de_hat = dcos @ w_hat
    dw_hat = dcos.T @ e_hat
    return LossResult(value, {
        "embs": _normalize_backward(e_hat, e_norm, de_hat),
        "W": _normalize_backward(w_hat, w_norm, dw_hat),
    })


def angular_prototypical_loss(embs: np.ndarray, w: float = 10.0, b: float = -5.0) -> LossResult:
    """Angular prototypical loss for a (n_speakers, 2, M) batch.

    Member 0 of each group is the query, member 1 the prototype. The logits
    are w * cos(query_j, proto_k) + b with the matching speaker on the diagonal.
    """
    embs = np.asarray(embs, dtype=np.float64)
    if embs.ndim != 3 or embs.shape[1] != 2:
        raise InputError(f"angular prototypical loss needs groups of exactly 2, got shape {embs.shape}")
    n = embs.shape[0]
    if n == 0:
        raise InputError("angular prototypical loss needs at least one speaker")
    q_hat, q_norm = _normalize_rows(embs[:, 0, :], "query embeddings")
    p_hat, p_norm = _normalize_rows(embs[:, 1, :], "prototype embeddings")

    cosine = q_hat @ p_hat.T
    value, dlogits = _cross_entropy(w * cosine + b, np.arange(n))

    dcos = w * dlogits
    grad = np.empty_like(embs)
    grad[:, 0, :] = _normalize_backward(q_hat, q_norm, dcos @ p_hat)
    grad[:, 1, :] = _normalize_backward(p_hat, p_norm, dcos.T @ q_hat)
    return LossResult(value, {
        "embs": grad,
        "w": np.array(np.sum(dlogits * cosine)),
        "b": np.array(np.sum(dlogits)),
    })


def combined_ap_plus_s(
    embs: np.ndarray,
    labels: np.ndarray,
    W: np.ndarray,
    w: float = 10.0,
    b: float = -5.0,
) -> LossResult:
    """AP + S: both losses on the same 2-per-speaker batch, summed.

    ``labels`` holds one speaker class per group; the softmax term sees all
    2n embeddings with their group's label.
    """
    embs = np.asarray(embs, dtype=np.float64)
    ap = angular_prototypical_loss(embs, w, b)
    labels = np.asarray(labels)
    if labels.shape != (embs.shape[0],):
        raise InputError(f"expected one label per speaker group ({embs.shape[0]}), got shape {labels.shape}")
    flat = embs.reshape(-1, embs.shape[-1])
    sm = softmax_loss(flat, np.repeat(labels, 2), W)
    sm.grads["embs"] = sm.grads["embs"].reshape(embs.shape)
    return ap + sm


def loss_schedule(cfg: LossConfig, epoch: int) -> str:
    """Active loss kind at ``epoch``; S_then_AAM switches at ``cfg.switch_epoch``."""
    if epoch < 0:
        raise InputError(f"epoch must be non-negative, got {epoch}")
    if cfg.kind == "S_then_AAM":
        return "S" if epoch < cfg.switch_epoch else "AAM"
    return cfg.kind


@dataclass(frozen=True)
class TrainingRecipe:
    """Published optimizer schedule, kept as configuration data."""

    name: str
    learning_rate: float
    decay: float
    decay_every: int
    softmax_epochs: int
    total_epochs: int
    batch_size: int
    max_utts_per_speaker: Optional[int] = None
    weight_decay: float = 0.0
    loss_kind: str = "S_then_AAM"

    def lr_at(self, epoch: int) -> float:
        """Step-decayed learning rate: lr * (1 - decay) ** (epoch // decay_every)."""
        if epoch < 0:
            raise InputError(f"epoch must be non-negative, got {epoch}")
        return self.learning_rate * (1.0 - self.decay) ** (epoch // self.decay_every)

    def loss_config(self, base: LossConfig = LossConfig()) -> LossConfig:
        return replace(base, kind=self.loss_kind, switch_epoch=self.softmax_epochs)


RECIPES: Dict[str, TrainingRecipe] = {
    "none": TrainingRecipe(
        "none", learning_rate=0.001, decay=0.05, decay_every=5,
        softmax_epochs=30, total_epochs=230, batch_size=200, max_utts_per_speaker=200,
    ),
    "offline": TrainingRecipe(
        "offline", learning_rate=0.001, decay=0.10, decay_every=1,
        softmax_epochs=3, total_epochs=35, batch_size=128, max_utts_per_speaker=2000,
    ),
    "online": TrainingRecipe(
        "online", learning_rate=0.001, decay=0.25, decay_every=24,
        softmax_epochs=0, total_epochs=360, batch_size=200, weight_decay=5e-5, loss_kind="AP_plus_S",
    ),
}
