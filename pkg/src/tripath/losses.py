"""Training objective: weighted focal + dice + Lovasz-softmax losses.

All losses accept logits shaped (C, H, W) or (B, C, H, W) with integer masks
of matching spatial shape; pixels are pooled before reduction, so batched and
flattened calls agree.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import InvalidWeights, LabelOutOfRange, ShapeMismatch


@dataclass
class LossWeights:
    alpha: float = 0.4
    beta: float = 0.3
    gamma_focal: float = 2.0
    dice_smooth: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise InvalidWeights("alpha and beta must lie in [0, 1]")
        if self.alpha + self.beta > 1.0:
            raise InvalidWeights("alpha + beta must not exceed 1")
        if self.dice_smooth <= 0:
            raise InvalidWeights("dice_smooth must be positive")

    @property
    def lovasz(self):
        return 1.0 - self.alpha - self.beta


def _flatten(logits, mask):
    """-> (P, C) logits and (P,) labels, validating shape and label range."""
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
        mask = mask.unsqueeze(0)
    if logits.dim() != 4 or mask.dim() != 3:
        raise ShapeMismatch("expected (B,C,H,W) logits with (B,H,W) mask")
    if logits.shape[0] != mask.shape[0] or logits.shape[-2:] != mask.shape[-2:]:
        raise ShapeMismatch(
            f"logits {tuple(logits.shape)} incompatible with mask {tuple(mask.shape)}"
        )
    num_classes = logits.shape[1]
    labels = mask.reshape(-1).long()
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRange(
            f"mask values must lie in [0, {num_classes - 1}]"
        )
    flat = logits.permute(0, 2, 3, 1).reshape(-1, num_classes)
    return flat, labels


def focal_loss(logits, mask, gamma=2.0):
    """Mean over pixels of -(1 - p_t)^gamma * log p_t."""
    flat, labels = _flatten(logits, mask)
    logp = F.log_softmax(flat, dim=1)
    logp_t = logp.gather(1, labels[:, None]).squeeze(1)
    p_t = logp_t.exp()
    return ((1.0 - p_t) ** gamma * -logp_t).mean()


def dice_loss(logits, mask, smooth=1e-6):
    """1 - macro-average soft dice over all classes (background included)."""
    flat, labels = _flatten(logits, mask)
    num_classes = flat.shape[1]
    probs = flat.softmax(dim=1)
    onehot = F.one_hot(labels, num_classes).to(probs.dtype)
    inter = (probs * onehot).sum(dim=0)
    denom = probs.sum(dim=0) + onehot.sum(dim=0)
    dice = (2.0 * inter + smooth) / (denom + smooth)
    return 1.0 - dice.mean()


def _lovasz_grad(gt_sorted):
    """Gradient of the Jaccard-loss extension along a sorted indicator."""
    gts = gt_sorted.sum()
    intersection = gts - gt_sorted.cumsum(0)
    union = gts + (1.0 - gt_sorted).cumsum(0)
    jaccard = 1.0 - intersection / union
    if gt_sorted.numel() > 1:
        jaccard = torch.cat([jaccard[:1], jaccard[1:] - jaccard[:-1]])
    return jaccard


def lovasz_loss(logits, mask):
    """Lovasz-softmax averaged over the classes present in the mask."""
    flat, labels = _flatten(logits, mask)
    probs = flat.softmax(dim=1)
    losses = []
    for c in labels.unique().tolist():
        fg = (labels == c).to(probs.dtype)
        errors = (fg - probs[:, c]).abs()
        errors_sorted, perm = errors.sort(descending=True)
        losses.append(errors_sorted @ _lovasz_grad(fg[perm]))
    return torch.stack(losses).mean()


def total_loss(logits, mask, weights: LossWeights = None):
    """alpha * focal + beta * dice + (1 - alpha - beta) * lovasz."""
    w = LossWeights() if weights is None else weights
    if w.alpha + w.beta > 1.0:
        raise InvalidWeights("alpha + beta must not exceed 1")
    total = None
    for weight, term in (
        (w.alpha, lambda: focal_loss(logits, mask, gamma=w.gamma_focal)),
        (w.beta, lambda: dice_loss(logits, mask, smooth=w.dice_smooth)),
        (w.lovasz, lambda: lovasz_loss(logits, mask)),
    ):
        if weight == 0.0:
            continue
        piece = weight * term()
        total = piece if total is None else total + piece
    if total is None:
        return torch.zeros((), dtype=logits.dtype, device=logits.device)
    return total
