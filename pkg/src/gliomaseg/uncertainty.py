"""Energy-based voxel confidence and test-time-augmentation aggregation.

The energy of a logit vector is -logsumexp(logits); its negation (the
confidence) is high where the network is certain.  Aggregation averages
the 8 reflection-variant predictions after inverting each back to the
canonical orientation.
"""

import numpy as np

from .augment import ALL_TTA_VARIANTS, tta_apply, tta_invert
from .models import PatchSpec, sliding_window_predict


def energy(logits: np.ndarray) -> np.ndarray:
    """Per-voxel energy -logsumexp over the trailing class axis, computed
    with max-subtraction for stability."""
    m = logits.max(axis=-1)
    return -(m + np.log(np.exp(logits - m[..., None]).sum(axis=-1)))


def confidence_map(logits: np.ndarray) -> np.ndarray:
    """Negated energy: higher means more confident."""
    return -energy(logits)


def softmax_energy_identity_check(logits: np.ndarray) -> float:
    """Max absolute deviation of log(max softmax) from energy + max logit."""
    m = logits.max(axis=-1)
    shifted = np.exp(logits - m[..., None])
    softmax = shifted / shifted.sum(axis=-1, keepdims=True)
    lhs = np.log(softmax.max(axis=-1))
    rhs = energy(logits) + m
    return float(np.max(np.abs(lhs - rhs)))


def tta_aggregate(model, volume4: np.ndarray, patch_spec: PatchSpec,
                  variants=ALL_TTA_VARIANTS) -> tuple:
    """Mean probabilities and mean logits over inverted variant predictions.

    Probabilities are re-normalized after averaging; the mean logit field is
    the input for the energy-based confidence map.
    """
    prob_sum = None
    logit_sum = None
    for variant in variants:
        transformed = tta_apply(volume4, variant)
        probs, logits = sliding_window_predict(model, transformed, patch_spec)
        probs = tta_invert(probs, variant)
        logits = tta_invert(logits, variant)
        if prob_sum is None:
            prob_sum = probs.astype(np.float64)
            logit_sum = logits.astype(np.float64)
        else:
            prob_sum += probs
            logit_sum += logits
    n = float(len(variants))
    probs = (prob_sum / n)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs.astype(np.float32), (logit_sum / n).astype(np.float32)
