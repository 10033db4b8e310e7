"""Training objectives.

Conventions: mask bit 1 marks the floodable/alterable region, so the
mask-restricted terms average only over pixels with mask = 0 (an optional
``inside_weight`` soft-includes the masked region instead of excluding it).
Distances are L1 for image/content/style/cycle terms and least-squares for
the adversarial terms.  Degenerate masks (nothing kept) yield exactly 0,
never NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F

from .errors import DimensionMismatch, LabelOutOfRange, NonFiniteLoss

PROB_EPS = 1e-7

LOSS_NAMES = (
    "gan_A",
    "gan_B",
    "recon_image",
    "recon_content",
    "recon_style",
    "cycle_masked",
    "semantic_consistency",
    "domain_adv",
    "seg_sup",
    "height_l2",
)


@dataclass
class LossReport:
    """Named scalar losses for one step plus their weighted total.

    ``disc_A``/``disc_B`` are informational (the discriminator-side
    objective) and do not enter the generator total.
    """

    gan_A: float = 0.0
    gan_B: float = 0.0
    recon_image: float = 0.0
    recon_content: float = 0.0
    recon_style: float = 0.0
    cycle_masked: float = 0.0
    semantic_consistency: float = 0.0
    domain_adv: float = 0.0
    seg_sup: float = 0.0
    height_l2: float = 0.0
    total: float = 0.0
    disc_A: float = 0.0
    disc_B: float = 0.0

    def parts(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in LOSS_NAMES}

    def to_json_line(self, step: int) -> str:
        record = {"step": step}
        record.update(asdict(self))
        return json.dumps(record, sort_keys=True)


def _check_spatial(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise DimensionMismatch(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def _kept_weights(mask: torch.Tensor, inside_weight: float) -> torch.Tensor:
    mask = mask.to(dtype=torch.get_default_dtype() if not mask.is_floating_point() else mask.dtype)
    return (1.0 - mask) + inside_weight * mask


def masked_cycle_loss(
    x: torch.Tensor,
    x_cycled: torch.Tensor,
    mask: torch.Tensor,
    inside_weight: float = 0.0,
) -> torch.Tensor:
    """L1 between an image and its cycle reconstruction outside the mask.

    ``x``/``x_cycled`` are (..., C, H, W); ``mask`` is (..., H, W) with 1
    marking the floodable region that the cycle must not be forced to
    reconstruct.  Returns 0 when the mask keeps no pixels.
    """
    if x.shape != x_cycled.shape:
        raise DimensionMismatch(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_cycled.shape)}")
    _check_spatial(x, mask, "mask vs image")
    per_pixel = (x - x_cycled).abs().mean(dim=-3)  # mean over channels
    weights = _kept_weights(mask, inside_weight)
    weights = torch.broadcast_tensors(per_pixel, weights)[1]
    denom = weights.sum()
    if denom.item() == 0.0:
        return x.new_zeros(())
    return (per_pixel * weights).sum() / denom


def semantic_consistency_loss(
    seg_source: torch.Tensor,
    seg_translated: torch.Tensor,
    mask: torch.Tensor,
    inside_weight: float = 0.0,
) -> torch.Tensor:
    """Cross-entropy of the translated scores against the source's argmax
    labels, averaged outside the mask.

    Scores are raw (pre-softmax) class maps shaped (..., K, H, W).
    """
    if seg_source.shape != seg_translated.shape:
        raise DimensionMismatch(
            f"score shapes differ: {tuple(seg_source.shape)} vs {tuple(seg_translated.shape)}"
        )
    _check_spatial(seg_source, mask, "mask vs scores")
    labels = seg_source.argmax(dim=-3, keepdim=True)
    logp = F.log_softmax(seg_translated, dim=-3)
    ce = -logp.gather(-3, labels).squeeze(-3)
    weights = _kept_weights(mask, inside_weight)
    weights = torch.broadcast_tensors(ce, weights)[1]
    denom = weights.sum()
    if denom.item() == 0.0:
        return seg_translated.new_zeros(())
    return (ce * weights).sum() / denom


def _as_score_list(scores) -> list[torch.Tensor]:
    if isinstance(scores, torch.Tensor):
        return [scores]
    return list(scores)


def gan_losses(real_scores, fake_scores, role: str) -> torch.Tensor:
    """Least-squares adversarial objective, averaged over discriminator scales.

    discriminator: mean((real - 1)^2) + mean(fake^2)
    generator:     mean((fake - 1)^2)
    """
    if role not in ("generator", "discriminator"):
        raise ValueError(f"role must be generator or discriminator, got {role!r}")
    fakes = _as_score_list(fake_scores)
    if role == "generator":
        terms = [((f - 1.0) ** 2).mean() for f in fakes]
        return torch.stack(terms).mean()
    reals = _as_score_list(real_scores)
    if len(reals) != len(fakes):
        raise DimensionMismatch("real and fake score lists have different lengths")
    terms = [((r - 1.0) ** 2).mean() + (f**2).mean() for r, f in zip(reals, fakes)]
    return torch.stack(terms).mean()


def reconstruction_losses(
    x: torch.Tensor,
    x_recon: torch.Tensor,
    c: torch.Tensor,
    c_recon: torch.Tensor,
    s: torch.Tensor,
    s_recon: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Mean-L1 image, content, and style reconstruction terms."""
    for a, b, what in ((x, x_recon, "image"), (c, c_recon, "content"), (s, s_recon, "style")):
        if a.shape != b.shape:
            raise DimensionMismatch(f"{what} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (
        (x - x_recon).abs().mean(),
        (c - c_recon).abs().mean(),
        (s - s_recon).abs().mean(),
    )


def domain_adv_loss(prob_sim: torch.Tensor, true_domain) -> torch.Tensor:
    """Binary cross-entropy of the domain classifier's sim-probability.

    ``true_domain`` is "sim"/"real" or a per-item boolean tensor (True =
    simulated).  Probabilities are clipped away from {0, 1} so the loss
    stays finite; the gradient reversal to the encoder lives in the
    classifier's forward pass, not here.
    """
    p = prob_sim if isinstance(prob_sim, torch.Tensor) else torch.as_tensor(prob_sim)
    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    if isinstance(true_domain, str):
        if true_domain not in ("sim", "real"):
            raise ValueError(f"true_domain must be 'sim' or 'real', got {true_domain!r}")
        y = torch.full_like(p, 1.0 if true_domain == "sim" else 0.0)
    else:
        y = torch.as_tensor(true_domain, dtype=p.dtype, device=p.device)
        y = torch.broadcast_tensors(p, y)[1]
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()


def seg_supervised_loss(pred, gt, n_classes: int = 10) -> torch.Tensor:
    """Mean pixel-wise cross-entropy of raw class scores against labels.

    ``pred`` is (..., K, H, W); ``gt`` is integer labels (..., H, W) or a
    SegMap.  Only simulated batches carry labels, so only they reach here.
    """
    labels = gt
    if hasattr(gt, "labels"):  # SegMap
        labels = torch.from_numpy(gt.labels)
    labels = labels.long()
    _check_spatial(pred, labels, "labels vs scores")
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(
            f"labels must lie in [0, {n_classes - 1}], got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    logp = F.log_softmax(pred, dim=-3)
    ce = -logp.gather(-3, labels.unsqueeze(-3)).squeeze(-3)
    return ce.mean()


def _height_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    """Accept HeightMap / FloodMask / ndarray / tensor inputs uniformly."""
    if not isinstance(x, torch.Tensor):
        if hasattr(x, "values"):
            x = x.values
        elif hasattr(x, "bits"):
            x = x.bits
        x = torch.as_tensor(x)
    if like is not None:
        x = x.to(dtype=like.dtype, device=like.device)
    return x


def height_l2_loss(pred, gt, sky_mask) -> torch.Tensor:
    """Squared error averaged over non-sky pixels; 0 when everything is sky."""
    pred_t = _height_tensor(pred)
    gt_t = _height_tensor(gt, like=pred_t)
    mask_t = _height_tensor(sky_mask)
    if pred_t.shape != gt_t.shape:
        raise DimensionMismatch(f"height shapes differ: {tuple(pred_t.shape)} vs {tuple(gt_t.shape)}")
    _check_spatial(pred_t.unsqueeze(-3), mask_t, "sky mask vs heights")
    kept = (mask_t == 0).to(pred_t.dtype)
    kept = torch.broadcast_tensors(pred_t, kept)[1]
    denom = kept.sum()
    if denom.item() == 0.0:
        return pred_t.new_zeros(())
    return (((pred_t - gt_t) ** 2) * kept).sum() / denom


def total_loss(parts: LossReport, weights: Mapping[str, float]) -> float:
    """Weighted sum of the report's components; rejects non-finite parts."""
    total = 0.0
    for name in LOSS_NAMES:
        value = getattr(parts, name)
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss component {name!r} is {value}")
        total += weights.get(name, 0.0) * value
    if not math.isfinite(total):
        raise NonFiniteLoss(f"weighted total is {total}")
    return total
