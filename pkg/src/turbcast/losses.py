"""Loss terms for semi-supervised co-training.

Supervised cells get a focal loss on the forecaster's class distribution;
unlabeled cells get a quality-weighted, class-weighted L2 distance to the
guessed soft label. Both are reduced the same way: per (sample, horizon
step) mean over masked cells (0 when a step has no masked cell), then mean
over samples and steps, matching a 1/(|batch| * |horizon|) normalization
that is insensitive to how many cells happen to carry labels.

Class predictions are channels-last [..., 4]; per-cell masks drop the class
axis. The leading two axes are (batch, horizon step).
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import DegenerateInputError, ValidationError
from .grids import NUM_CLASSES

PROB_FLOOR = 1.0e-8


def class_weights(counts: np.ndarray | list[int], smooth: bool = False) -> np.ndarray:
    """Normalized inverse-frequency weights: alpha_i = (N/N_i) / sum_j (N/N_j).

    Majority classes get small weights. ``smooth=True`` adds one to every
    count so a class absent from a small sample keeps a finite weight;
    without it a zero count raises DegenerateInputError.
    """
    arr = np.asarray(counts, dtype=np.float64)
    if arr.shape != (NUM_CLASSES,):
        raise ValidationError(f"expected {NUM_CLASSES} class counts, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValidationError("class counts cannot be negative")
    if smooth:
        arr = arr + 1.0
    if np.any(arr == 0):
        missing = [int(i) for i in np.flatnonzero(arr == 0)]
        raise DegenerateInputError(
            f"classes {missing} have zero count; pass smooth=True or provide counts for all classes"
        )
    inverse = arr.sum() / arr
    return inverse / inverse.sum()


def focal_loss(probs: torch.Tensor, target_onehot: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Per-cell focal term -sum_i y_i (1 - p_i)^gamma log(p_i).

    gamma = 0 recovers cross entropy. Cells whose one-hot row is all zero
    (no label) contribute exactly 0. Returns the input shape minus the class
    axis.
    """
    if gamma < 0:
        raise ValidationError(f"gamma must be non-negative, got {gamma}")
    if probs.shape != target_onehot.shape:
        raise ValidationError(
            f"probs shape {tuple(probs.shape)} != target shape {tuple(target_onehot.shape)}"
        )
    log_p = torch.log(probs.clamp_min(PROB_FLOOR))
    modulator = (1.0 - probs) ** gamma
    return -(target_onehot * modulator * log_p).sum(dim=-1)


def weighted_l2(probs: torch.Tensor, targets: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Per-cell class-weighted distance sqrt(sum_i alpha_i (p_i - y_i)^2).

    Zero exactly when prediction and target agree; no epsilon is added, so
    callers backpropagating through it rely on targets differing from the
    prediction almost everywhere (true for softmax outputs vs sharpened
    guesses).
    """
    if probs.shape != targets.shape:
        raise ValidationError(
            f"probs shape {tuple(probs.shape)} != target shape {tuple(targets.shape)}"
        )
    if alpha.shape != (probs.shape[-1],):
        raise ValidationError(f"alpha must have shape ({probs.shape[-1]},), got {tuple(alpha.shape)}")
    sq = alpha * (probs - targets) ** 2
    return torch.sqrt(sq.sum(dim=-1))


def masked_step_mean(per_cell: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of ``per_cell`` over masked cells within each (sample, step), then
    mean over samples and steps. Steps with no masked cell contribute 0."""
    if per_cell.shape != mask.shape:
        raise ValidationError(
            f"loss field shape {tuple(per_cell.shape)} != mask shape {tuple(mask.shape)}"
        )
    if per_cell.ndim < 3:
        raise ValidationError("expected at least [batch, step, cells...] axes")
    weights = mask.to(per_cell.dtype)
    cell_axes = tuple(range(2, per_cell.ndim))
    total = (per_cell * weights).sum(dim=cell_axes)
    count = weights.sum(dim=cell_axes)
    per_step = torch.where(count > 0, total / count.clamp_min(1.0), torch.zeros_like(total))
    return per_step.mean()


def supervised_loss(probs: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Masked focal loss over the labeled cells of a [B, p, L, W, H, 4] batch.

    ``labels`` is integer [B, p, L, W, H] with -1 marking unlabeled cells.
    """
    mask = labels >= 0
    onehot = torch.nn.functional.one_hot(labels.long().clamp_min(0), probs.shape[-1])
    onehot = onehot.to(probs.dtype) * mask.unsqueeze(-1).to(probs.dtype)
    per_cell = focal_loss(probs, onehot, gamma)
    return masked_step_mean(per_cell, mask)


def unsupervised_loss(
    probs: torch.Tensor,
    pseudo_labels: torch.Tensor,
    quality: torch.Tensor,
    alpha: torch.Tensor,
    unlabeled_mask: torch.Tensor,
) -> torch.Tensor:
    """Masked quality-weighted L2 to the guessed labels on unlabeled cells."""
    if quality.shape != probs.shape[:-1]:
        raise ValidationError(
            f"quality shape {tuple(quality.shape)} != cell shape {tuple(probs.shape[:-1])}"
        )
    per_cell = quality * weighted_l2(probs, pseudo_labels, alpha)
    return masked_step_mean(per_cell, unlabeled_mask)


def combined_loss(loss_supervised: torch.Tensor, loss_unsupervised: torch.Tensor,
                  unsupervised_weight: float) -> torch.Tensor:
    """Total objective: supervised + lambda * unsupervised."""
    if not 0.0 <= unsupervised_weight <= 1.0:
        raise ValidationError(f"unsupervised weight must lie in [0,1], got {unsupervised_weight}")
    return loss_supervised + unsupervised_weight * loss_unsupervised
