import numpy as np
import torch
from torch import Tensor

from distrack.errors import InputRange, ShapeMismatch
from distrack.model.attention import DTYPE

PROBABILITY_FLOOR = 1e-12


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def _masked_mean(values: Tensor, mask) -> Tensor:
    if mask is None:
        return values.mean()
    mask = torch.as_tensor(np.asarray(mask) if not isinstance(mask, Tensor) else mask)
    if mask.shape != values.shape:
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not match {tuple(values.shape)}")
    mask = mask.to(torch.bool)
    if not mask.any():
        return values.sum() * 0.0
    return values[mask].mean()


def loss_l2(pred, target, mask=None) -> Tensor:
    """Mean squared error over the (masked) pixels; used for the EDM."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(
            f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ"
        )
    return _masked_mean((pred - target) ** 2, mask)


def loss_l1(pred, target, mask=None) -> Tensor:
    """Mean absolute error over the (masked) pixels; used for displacement."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(
            f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ"
        )
    return _masked_mean((pred - target).abs(), mask)


def loss_weighted_ce(probabilities, target, class_weights) -> Tensor:
    """
    Weighted sparse categorical cross-entropy over pixels:

        mean_i(w[t_i] * -ln p_i[t_i]) / mean_c(w[c])

    `probabilities` has the class axis last, `target` holds class indices.
    Probabilities below 1e-12 are clamped to it before the log.
    """
    probabilities = _as_tensor(probabilities)
    target = torch.as_tensor(np.asarray(target) if not isinstance(target, Tensor) else target)
    class_weights = _as_tensor(class_weights)

    num_classes = probabilities.shape[-1]
    if probabilities.shape[:-1] != target.shape:
        raise ShapeMismatch(
            f"probabilities {tuple(probabilities.shape)} do not match targets {tuple(target.shape)}"
        )
    if class_weights.shape != (num_classes,):
        raise ShapeMismatch(f"need {num_classes} class weights, got {tuple(class_weights.shape)}")
    sums = probabilities.detach().sum(dim=-1)
    if not torch.allclose(sums, torch.ones_like(sums), atol=1e-6, rtol=0):
        raise InputRange("class probabilities must sum to 1 per pixel")

    target = target.to(torch.int64)
    if target.numel() and (target.min() < 0 or target.max() >= num_classes):
        raise InputRange(f"target classes must be in [0, {num_classes})")

    picked = probabilities.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    nll = -torch.log(picked.clamp_min(PROBABILITY_FLOOR))
    return (class_weights[target] * nll).mean() / class_weights.mean()


def class_weights_from_frequency(categories, num_classes: int = 4) -> np.ndarray:
    """
    Inverse-frequency weights, total / (num_classes * count), so that rare
    classes ("divided", "no previous") weigh as much as common ones. Classes
    that never occur get weight 0.
    """
    counts = np.bincount(np.asarray(categories).ravel().astype(np.int64), minlength=num_classes)
    counts = counts[:num_classes].astype(np.float64)
    total = counts.sum()
    weights = np.zeros(num_classes, dtype=np.float64)
    present = counts > 0
    weights[present] = total / (num_classes * counts[present])
    return weights
