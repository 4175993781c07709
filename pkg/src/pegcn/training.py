"""SGD training loop and noisy-evaluation protocol."""

from __future__ import annotations

import csv
import json
import math
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .losses import LossConfig, cross_entropy, predictive_encoding_loss, total_loss
from .model import PeGCNModel, forward_train, pe_matrix, predict_logits
from .noise import NoiseSpec, inject_noise
from .rng import SplitMix64, derive_seed
from .skeleton import SkeletonClip, stack_clips

LOSS_LOG_HEADER = ("epoch", "loss_total", "loss_ce", "loss_pe", "lr")
METRICS_HEADER = ("noise_level", "top1_mean", "top1_std", "top5_mean", "top5_std", "repeats", "seed")


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


def single_threaded(enabled: bool = True):
    """Context limiting BLAS to one thread, so results are bitwise reproducible."""
    if not enabled:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.1
    lr_decay_epochs: list | None = None
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    noise_level: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.loss.pe_enabled and self.batch_size < 2:
            raise ValueError("predictive encoding needs batch_size >= 2 (in-batch negatives)")
        if self.lr <= 0 or self.lr_decay <= 0:
            raise ValueError("learning rate and decay factor must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight decay must be nonnegative")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")

    def decay_epochs(self) -> list[int]:
        if self.lr_decay_epochs is not None:
            return sorted(int(e) for e in self.lr_decay_epochs)
        return [int(round(0.6 * self.epochs)), int(round(0.8 * self.epochs))]

    def lr_at(self, epoch: int) -> float:
        steps = sum(1 for e in self.decay_epochs() if epoch >= e)
        return self.lr * self.lr_decay ** steps


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float,
             weight_decay: float) -> None:
    """In-place SGD with momentum and L2 weight decay.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    ``velocity`` is filled with zeros for unseen names.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"sgd_step: gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = momentum * v + g + weight_decay * p
        velocity[name] = v.astype(p.dtype, copy=False)
        params[name] = (p - lr * v).astype(p.dtype, copy=False)


def batch_loss(model: PeGCNModel, params: dict, clean: np.ndarray, noisy: np.ndarray, labels,
               loss_cfg: LossConfig, stats: tuple | None = None):
    """``(total, ce, pe)`` tensors for one aligned clean/noisy batch."""
    alpha, context, logits = forward_train(model, clean, noisy, params, stats)
    ce = cross_entropy(logits, labels)
    pe = predictive_encoding_loss(alpha, context, pe_matrix(model, params), loss_cfg.temperature)
    return total_loss(ce, pe, loss_cfg), ce, pe


def _batches(n: int, size: int, drop_single: bool):
    out = [list(range(i, min(i + size, n))) for i in range(0, n, size)]
    if drop_single and len(out) > 1 and len(out[-1]) == 1:
        out.pop()
    return out


def train(model: PeGCNModel, clips: list[SkeletonClip], cfg: TrainConfig,
          on_epoch: Callable | None = None) -> list[dict]:
    """Train ``model`` in place; returns one loss-log row per epoch.

    Each epoch reshuffles the clips and draws fresh noisy copies, seeded from
    ``(cfg.seed, epoch, clip_id)``.
    """
    if not clips:
        raise ValueError("training set is empty")
    dtype = model.cfg.np_dtype
    data = stack_clips(clips, dtype)
    labels = np.array([c.label for c in clips])
    if labels.max() >= model.cfg.num_classes:
        raise ValueError(f"label {labels.max()} out of range for {model.cfg.num_classes} classes")
    velocity: dict = {}
    log = []
    with single_threaded(cfg.deterministic):
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = SplitMix64(derive_seed(cfg.seed, "shuffle", epoch)).permutation(len(clips))
            sums = np.zeros(3)
            count = 0
            for b, idx in enumerate(_batches(len(order), cfg.batch_size, cfg.loss.pe_enabled)):
                sel = [order[i] for i in idx]
                noisy = np.stack([
                    inject_noise(clips[i], NoiseSpec(cfg.noise_level,
                                                     derive_seed(cfg.seed, "train-noise", epoch, clips[i].clip_id))).coords
                    for i in sel]).astype(dtype, copy=False)
                stats = ({}, {})
                parts = {}

                def loss_fn(p):
                    tot, ce, pe = batch_loss(model, p, data[sel], noisy, labels[sel], cfg.loss, stats)
                    parts["ce"], parts["pe"] = float(ce.data), float(pe.data)
                    return tot

                try:
                    # the tape reports non-finite values by op name; numpy's own warnings are noise
                    with np.errstate(over="ignore", invalid="ignore"):
                        value, grads = nx.value_and_grad(loss_fn, model.params)
                except nx.NonFiniteError as exc:
                    raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}: {exc}") from exc
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}")
                sgd_step(model.params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
                model.commit_stats(stats[0])
                model.commit_stats(stats[1])
                w = len(sel)
                sums += w * np.array([value, parts["ce"], parts["pe"]])
                count += w
            row = {"epoch": epoch, "loss_total": sums[0] / count, "loss_ce": sums[1] / count,
                   "loss_pe": sums[2] / count, "lr": lr}
            log.append(row)
            if on_epoch is not None:
                on_epoch(row)
    return log


def write_loss_csv(log: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_LOG_HEADER)
        for row in log:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOSS_LOG_HEADER[1:]])


# ---------------------------------------------------------------------------
# evaluation

def topk_accuracy(logits, labels, k: int) -> float:
    """Percentage of rows whose label ranks in the top ``k`` (ties go to the lower index)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=int)
    N, C = logits.shape
    if not 1 <= k <= C:
        raise ValueError(f"k={k} outside [1, {C}]")
    if labels.shape != (N,):
        raise ValueError(f"{labels.size} labels for {N} rows")
    if N == 0:
        return 0.0
    own = logits[np.arange(N), labels][:, None]
    cols = np.arange(C)[None, :]
    rank = ((logits > own) | ((logits == own) & (cols < labels[:, None]))).sum(axis=1)
    return float(100.0 * np.mean(rank < k))


@dataclass
class MetricsRecord:
    noise_level: int
    top1_mean: float
    top1_std: float
    top5_mean: float
    top5_std: float
    repeats: int
    seed: int
    top1_runs: list = field(default_factory=list)
    top5_runs: list = field(default_factory=list)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRICS_HEADER}


def evaluate(model: PeGCNModel | None, clips: list[SkeletonClip], noise_level: int,
             repeats: int = 10, base_seed: int = 0,
             predict: Callable | None = None, top5_k: int = 5) -> MetricsRecord:
    """Mean and population std of top-1/top-5 over seeded noisy repeats.

    ``predict(clips) -> logits`` replaces the model when given.  Top-5 uses
    ``min(top5_k, num_classes)``.  At noise level 0 every repeat is the same
    pass, so it is computed once.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    if not clips:
        raise ValueError("evaluation set is empty")
    if predict is None:
        if model is None:
            raise ValueError("need a model or a predict callable")
        dt = model.cfg.np_dtype

        def predict(cs):
            return predict_logits(model, stack_clips(cs, dt))

    labels = np.array([c.label for c in clips])
    top1, top5 = [], []
    with single_threaded(True):
        for r in range(1 if noise_level == 0 else repeats):
            noisy = [inject_noise(c, NoiseSpec(noise_level, derive_seed(base_seed, "eval-noise", r, c.clip_id)))
                     for c in clips]
            logits = np.asarray(predict(noisy))
            k5 = min(top5_k, logits.shape[1])
            top1.append(topk_accuracy(logits, labels, 1))
            top5.append(topk_accuracy(logits, labels, k5))
    if noise_level == 0:
        top1, top5 = top1 * repeats, top5 * repeats
    a1, a5 = np.array(top1), np.array(top5)
    if noise_level == 0:  # identical passes: report the pass itself, not a rounded mean
        return MetricsRecord(0, top1[0], 0.0, top5[0], 0.0, repeats, base_seed, top1, top5)
    return MetricsRecord(noise_level, float(a1.mean()), float(a1.std()), float(a5.mean()),
                         float(a5.std()), repeats, base_seed, top1, top5)


def write_metrics(records: list[MetricsRecord], path, extra: dict | None = None) -> None:
    """CSV at ``path`` plus a JSON twin with the same stem.

    ``extra`` maps column name to a per-record list of values, prepended.
    """
    extra = extra or {}
    cols = list(extra) + list(METRICS_HEADER)
    rows = [{**{k: v[i] for k, v in extra.items()}, **r.row()} for i, r in enumerate(records)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    twin = str(path).rsplit(".", 1)[0] + ".json"
    with open(twin, "w") as fh:
        json.dump([{**row, "top1_runs": r.top1_runs, "top5_runs": r.top5_runs}
                   for row, r in zip(rows, records)], fh, indent=1)
        fh.write("\n")
