"""Training losses (soft dice family, cross-entropy) and hard-mask dice
metrics, including the composite whole/core/enhancing tumor regions."""

import numpy as np

from .autodiff import Tensor, div, log, logcosh, mul, reduce_sum, scale, sub
from .errors import GridMismatch, ShapeMismatch

#: Composite evaluation regions as internal-label sets.
REGIONS = {
    "whole": frozenset({1, 2, 3}),
    "core": frozenset({1, 3}),
    "enh": frozenset({3}),
}


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """Channels-last one-hot encoding of an integer label array."""
    out = np.zeros(labels.shape + (num_classes,), dtype=dtype)
    for c in range(num_classes):
        out[..., c] = labels == c
    return out


def _take_channels(vec: Tensor, sl) -> Tensor:
    def bw(g):
        full = np.zeros_like(vec.data)
        full[sl] = g
        return (full,)

    return Tensor(vec.data[sl], (vec,), bw)


def _check_probs_target(probs: Tensor, target: np.ndarray):
    if probs.data.shape != target.shape:
        raise ShapeMismatch(
            f"probs {probs.data.shape} vs target {target.shape}")


def dice_loss(probs: Tensor, target: np.ndarray, eps: float = 1e-6,
              foreground_only: bool = True) -> Tensor:
    """Soft dice loss 1 - (2*sum(py) + eps) / (sum(p) + sum(y) + eps).

    Averaged over foreground classes (channel 0 excluded) when the target
    has more than one channel; a single-channel target is treated as the
    lone foreground class.
    """
    _check_probs_target(probs, target)
    axes = tuple(range(probs.data.ndim - 1))
    target_t = Tensor(target)
    inter = reduce_sum(mul(probs, target_t), axes)      # (C,)
    p_sum = reduce_sum(probs, axes)
    y_sum = np.sum(target, axis=axes)
    n_classes = probs.data.shape[-1]
    if foreground_only and n_classes > 1:
        keep = slice(1, None)
        n_keep = n_classes - 1
    else:
        keep = slice(None)
        n_keep = n_classes
    num = scale(_take_channels(inter, keep), 2.0) + eps
    den = _take_channels(p_sum, keep) + (y_sum[keep] + eps)
    dice = reduce_sum(div(num, den))
    return sub(1.0, scale(dice, 1.0 / n_keep))


def dice_score_soft(probs: Tensor, target: np.ndarray, eps: float = 1e-6) -> Tensor:
    """Complement of :func:`dice_loss`: soft mean foreground dice."""
    return sub(1.0, dice_loss(probs, target, eps))


def cross_entropy(probs: Tensor, target: np.ndarray) -> Tensor:
    """Mean over voxels of -log(probability assigned to the true class)."""
    _check_probs_target(probs, target)
    n_vox = int(np.prod(probs.data.shape[:-1]))
    picked = reduce_sum(mul(log(probs), Tensor(target)))
    return scale(picked, -1.0 / n_vox)


def log_cosh_dice(probs: Tensor, target: np.ndarray, eps: float = 1e-6) -> Tensor:
    """log(cosh(dice loss)); monotone in the dice loss, gentler gradients."""
    return logcosh(dice_loss(probs, target, eps))


def dice_ce(probs: Tensor, target: np.ndarray, eps: float = 1e-6) -> Tensor:
    return dice_loss(probs, target, eps) + cross_entropy(probs, target)


LOSSES = {
    "DL": dice_loss,
    "CE": cross_entropy,
    "LC": log_cosh_dice,
    "DL+CE": dice_ce,
}


# -- hard-mask metrics ------------------------------------------------------

def dice_metric(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    """Dice overlap of two boolean (or 0/nonzero) masks; both-empty -> 1."""
    if pred_mask.shape != true_mask.shape:
        raise GridMismatch(f"{pred_mask.shape} vs {true_mask.shape}")
    p = pred_mask.astype(bool)
    t = true_mask.astype(bool)
    p_n = int(p.sum())
    t_n = int(t.sum())
    if p_n + t_n == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / (p_n + t_n)


def region_dice(pred_labels: np.ndarray, true_labels: np.ndarray, region) -> float:
    """Dice of a composite region; ``region`` is a name or a label set."""
    labels = REGIONS[region] if isinstance(region, str) else frozenset(region)
    return dice_metric(np.isin(pred_labels, list(labels)),
                       np.isin(true_labels, list(labels)))


def case_report(pred_labels: np.ndarray, true_labels: np.ndarray) -> dict:
    scores = {name: region_dice(pred_labels, true_labels, name) for name in REGIONS}
    scores["mean"] = float(np.mean([scores[n] for n in REGIONS]))
    return scores
