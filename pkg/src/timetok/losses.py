"""Per-task training losses over predicted token probabilities.

Boundary detection and segmentation use token cross-entropy; segmentation
adds a temporal smoothing penalty on the frame-wise class probabilities; the
detection loss scales the cross-entropy of boundary slots by how far the
predicted time bin landed from the true one.

Every function takes probability rows (one row per supervised position, the
padding already stripped by the caller) so the same code serves full-softmax
training rows and masked-softmax rows in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import Role


class NumericError(Exception):
    """A loss evaluated to a non-finite value or hit an impossible input."""


@dataclass(frozen=True)
class LossConfig:
    """Knobs shared by the loss functions.

    smooth_weight scales the segmentation smoothing term; boundary_space is
    the number of time bins used to normalize the detection distance weight.
    tas_class_columns optionally restricts the smoothing term to the
    segmentation class columns of a full-vocabulary probability matrix.
    tad_distance_weighting=False turns the detection loss into plain
    cross-entropy (the ablation control arm). The stop token is supervised
    with plain cross-entropy; padding is never passed in.
    """

    smooth_weight: float = 0.15
    boundary_space: int = 150
    tas_class_columns: tuple[int, int] | None = None
    tad_distance_weighting: bool = True
    tad_distance_scale: float = 1.0  # 0.0 forces every boundary weight to exactly 1
    supervise_eos: bool = True


def _true_token_log(probs: np.ndarray, targets: np.ndarray, log_floor: float | None) -> np.ndarray:
    p = probs[np.arange(len(targets)), targets]
    if log_floor is None:
        if np.any(p <= 0.0):
            raise NumericError("true token has zero probability")
        return np.log(p)
    return np.log(np.maximum(p, log_floor))


def loss_gebd(probs: np.ndarray, targets, log_floor: float | None = None) -> float:
    """Mean negative log probability of the true token over all positions."""
    targets = np.asarray(targets, dtype=int)
    if probs.shape[0] != len(targets):
        raise ValueError("one probability row per target required")
    return float(-_true_token_log(probs, targets, log_floor).mean())


def loss_tas(probs: np.ndarray, targets, config: LossConfig, log_floor: float | None = None) -> float:
    """Cross-entropy plus smooth_weight times the mean squared difference of
    consecutive frame probability rows, taken over the class columns."""
    ce = loss_gebd(probs, targets, log_floor)
    return ce + config.smooth_weight * _smoothing_term(probs, config)


def _class_block(probs: np.ndarray, config: LossConfig) -> np.ndarray:
    if config.tas_class_columns is None:
        return probs
    lo, hi = config.tas_class_columns
    return probs[:, lo:hi]


def _smoothing_term(probs: np.ndarray, config: LossConfig) -> float:
    y = _class_block(probs, config)
    t, c = y.shape
    if t < 2:
        return 0.0
    diff = y[1:] - y[:-1]
    return float((diff * diff).sum() / (t * c))


def loss_tad(
    probs: np.ndarray,
    targets,
    roles: list[Role],
    config: LossConfig,
    log_floor: float | None = None,
) -> float:
    """Distance-weighted detection loss.

    Class slots and the stop token contribute plain cross-entropy. Boundary
    slots are scaled by 1 + |predicted bin - true bin| / boundary_space, the
    predicted bin being the argmax over the time-token columns. The weight is
    a constant: no gradient flows through the argmax. With supervise_eos off,
    stop-token slots drop out of the mean entirely.
    """
    targets = np.asarray(targets, dtype=int)
    if not (probs.shape[0] == len(targets) == len(roles)):
        raise ValueError("probs, targets and roles must align")
    logs = _true_token_log(probs, targets, log_floor)
    weights = tad_position_weights(probs, targets, roles, config)
    keep = _supervised_mask(roles, config)
    return float(-(weights[keep] * logs[keep]).mean())


def _supervised_mask(roles, config: LossConfig) -> np.ndarray:
    if config.supervise_eos:
        return np.ones(len(roles), dtype=bool)
    return np.array([r is not Role.EOS for r in roles], dtype=bool)


def tad_position_weights(probs: np.ndarray, targets, roles, config: LossConfig) -> np.ndarray:
    """Per-position loss weights for the detection loss (1.0 everywhere except
    distance-weighted boundary slots)."""
    targets = np.asarray(targets, dtype=int)
    weights = np.ones(len(targets))
    if not config.tad_distance_weighting:
        return weights
    d = config.boundary_space
    for i, role in enumerate(roles):
        if role in (Role.TAD_START, Role.TAD_END):
            predicted_bin = int(np.argmax(probs[i, :d]))
            weights[i] = 1.0 + config.tad_distance_scale * (abs(predicted_bin - targets[i]) / d)
        elif role not in (Role.TAD_CLASS, Role.EOS):
            raise ValueError(f"role {role} is not a detection output role")
    return weights


def combined_loss(batch_items, config: LossConfig, log_floor: float | None = None) -> float:
    """Unweighted mean of the per-item task losses over a (possibly mixed) batch."""
    if not batch_items:
        raise ValueError("empty batch")
    total = 0.0
    for task, probs, targets, roles in batch_items:
        total += item_loss(task, probs, targets, roles, config, log_floor)
    return total / len(batch_items)


def item_loss(task, probs, targets, roles, config: LossConfig, log_floor: float | None = None) -> float:
    from .vocab import Task

    if task is Task.GEBD:
        return loss_gebd(probs, targets, log_floor)
    if task is Task.TAS:
        return loss_tas(probs, targets, config, log_floor)
    if all(r is Role.TAD_CLASS for r in roles):
        # dense detection mode supervises every slot with plain cross-entropy
        return loss_gebd(probs, targets, log_floor)
    return loss_tad(probs, targets, roles, config, log_floor)


# ---------------------------------------------------------------------------
# Gradients with respect to the logits that produced the probability rows
# (softmax over the full row). Used by the model's backward pass and verified
# against finite differences.
# ---------------------------------------------------------------------------


def ce_logit_grad(probs: np.ndarray, targets, weights=None) -> np.ndarray:
    """d(mean weighted cross-entropy)/d(logits): w * (p - onehot) / count."""
    targets = np.asarray(targets, dtype=int)
    n = len(targets)
    grad = probs.copy()
    grad[np.arange(n), targets] -= 1.0
    if weights is not None:
        grad *= np.asarray(weights)[:, None]
    return grad / n


def smoothing_logit_grad(probs: np.ndarray, config: LossConfig) -> np.ndarray:
    """Gradient of the smoothing term through the softmax."""
    y = _class_block(probs, config)
    t, c = y.shape
    g_block = np.zeros_like(y)
    if t >= 2:
        diff = y[1:] - y[:-1]
        g_block[1:] += 2.0 * diff / (t * c)
        g_block[:-1] -= 2.0 * diff / (t * c)
    g = np.zeros_like(probs)
    if config.tas_class_columns is None:
        g[:] = g_block
    else:
        lo, hi = config.tas_class_columns
        g[:, lo:hi] = g_block
    # softmax jacobian: dz_j = p_j * (g_j - sum_k g_k p_k)
    inner = (g * probs).sum(axis=1, keepdims=True)
    return probs * (g - inner)


def item_logit_grad(task, probs, targets, roles, config: LossConfig) -> np.ndarray:
    """d(item loss)/d(logits) for one sequence's supervised positions."""
    from .vocab import Task

    if task is Task.GEBD:
        return ce_logit_grad(probs, targets)
    if task is Task.TAS:
        return ce_logit_grad(probs, targets) + config.smooth_weight * smoothing_logit_grad(probs, config)
    if all(r is Role.TAD_CLASS for r in roles):
        return ce_logit_grad(probs, targets)
    weights = tad_position_weights(probs, targets, roles, config)
    keep = _supervised_mask(roles, config)
    if keep.all():
        return ce_logit_grad(probs, targets, weights)
    grad = ce_logit_grad(probs, targets, weights * keep)
    return grad * (len(keep) / keep.sum())  # mean over kept positions only
