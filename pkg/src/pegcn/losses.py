"""Classification, predictive-encoding and combined objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    pe_enabled: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _onehot(labels, n_classes, dtype) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 1:
        raise ValueError("labels must be a flat sequence")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got {labels.tolist()}")
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]`` with the log floored at 1e-12."""
    logits = nx.as_tensor(logits)
    N, C = logits.shape
    onehot = _onehot(labels, C, logits.dtype)
    if onehot.shape[0] != N:
        raise ValueError(f"{onehot.shape[0]} labels for {N} rows of logits")
    logp = nx.log(nx.softmax(logits, axis=1), floor=nx.LOG_FLOOR)
    return nx.scale(nx.sum(nx.mul(logp, onehot)), -1.0 / N)


def score_matrix(alpha: Tensor, context: Tensor, w_pe: Tensor, temperature: float = 1.0) -> Tensor:
    """``s[j, i] = alpha_j . (w_pe @ context_i) / temperature``."""
    s = nx.matmul(nx.matmul(alpha, w_pe), nx.transpose(context))
    return s if temperature == 1.0 else nx.scale(s, 1.0 / temperature)


def predictive_encoding_loss(alpha: Tensor, context: Tensor, w_pe: Tensor,
                             temperature: float = 1.0) -> Tensor:
    """InfoNCE over in-batch clean candidates.

    Each context vector ``context_i`` must pick out its own clean pooled
    latent ``alpha_i`` among all ``alpha_j`` in the batch under the
    log-bilinear score.
    """
    alpha, context, w_pe = nx.as_tensor(alpha), nx.as_tensor(context), nx.as_tensor(w_pe)
    N = alpha.shape[0]
    if N == 0:
        raise ValueError("predictive encoding loss needs at least one pair")
    if context.shape[0] != N:
        raise ValueError(f"batch mismatch: {N} clean vs {context.shape[0]} context vectors")
    s = score_matrix(alpha, context, w_pe, temperature)
    # column i holds the candidates for anchor i; the max shift cancels in the gradient
    shift = s.data.max(axis=0)
    lse = nx.add(nx.log(nx.sum(nx.exp(nx.sub(s, shift)), axis=0)), shift)
    pos = nx.sum(nx.mul(s, np.eye(N, dtype=s.dtype)), axis=0)
    return nx.mean(nx.sub(lse, pos))


def total_loss(ce, pe, cfg: LossConfig):
    if not cfg.pe_enabled:
        return ce
    if isinstance(ce, Tensor) or isinstance(pe, Tensor):
        return nx.add(nx.as_tensor(ce), nx.scale(nx.as_tensor(pe), cfg.lam))
    return ce + cfg.lam * pe
