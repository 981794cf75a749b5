"""Composite training objective: pixel MSE, perceptual distance, Gram-matrix
texture loss and a hinge adversarial term with a frozen-feature discriminator.

total = mse + lambda_lpips * perceptual + lambda_gram * gram + lambda_gan * adv

The perceptual term uses a small frozen seeded convolution stack by default;
a learned perceptual network can be plugged in through the same callable
interface (batched (B,3,H,W) tensor in, list of feature maps out).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidShape
from .generator import seeded_array
from .imgio import require_image


@dataclass(frozen=True)
class LossWeights:
    lambda_lpips: float = 2.0
    lambda_gram: float = 1e-3
    lambda_gan: float = 0.1

    def __post_init__(self):
        if min(self.lambda_lpips, self.lambda_gram, self.lambda_gan) < 0:
            raise ValueError("loss weights must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "LossWeights":
        return cls(**{k: data[k] for k in ("lambda_lpips", "lambda_gram", "lambda_gan")
                      if k in data})


@dataclass(frozen=True)
class GramLossConfig:
    layer_weights: Optional[tuple[float, ...]] = None  # None -> 1.0 per layer

    def weight(self, layer: int) -> float:
        if self.layer_weights is None:
            return 1.0
        return self.layer_weights[layer]


class ConvFeatureExtractor(nn.Module):
    """Frozen seeded 3-layer convolution stack; one feature map per layer."""

    def __init__(self, seed: int = 0, in_channels: int = 3,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 8, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(16, 16, 3, stride=2, padding=1)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if param.ndim == 4:
                    std = float(np.sqrt(2.0 / (param.shape[1] * 9)))
                    init = seeded_array(seed, f"extractor.{name}", tuple(param.shape), std)
                    param.copy_(torch.from_numpy(init))
                else:
                    param.zero_()
        self.to(dtype)
        self.requires_grad_(False)

    def forward(self, x) -> list[torch.Tensor]:
        f1 = F.silu(self.conv1(x))
        f2 = F.silu(self.conv2(f1))
        f3 = self.conv3(f2)
        return [f1, f2, f3]


class Discriminator(nn.Module):
    """Frozen seeded feature backbone with a trainable 1x1 logit head.

    The head starts at zero, so a fresh discriminator outputs 0 everywhere.
    """

    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, 32, 3, stride=2, padding=1)
        self.head = nn.Conv2d(32, 1, 1)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.startswith("head"):
                    param.zero_()
                elif param.ndim == 4:
                    std = float(np.sqrt(2.0 / (param.shape[1] * 9)))
                    init = seeded_array(seed, f"disc.{name}", tuple(param.shape), std)
                    param.copy_(torch.from_numpy(init))
                else:
                    param.zero_()
        self.to(dtype)
        self.requires_grad_(False)
        self.head.weight.requires_grad_(True)
        self.head.bias.requires_grad_(True)

    def features(self, x) -> torch.Tensor:
        x = F.silu(self.conv1(x))
        x = F.silu(self.conv2(x))
        return F.silu(self.conv3(x))

    def forward(self, x) -> torch.Tensor:
        return self.head(self.features(x))

    def head_parameters(self):
        return [self.head.weight, self.head.bias]


# ---------------------------------------------------------------------------
# differentiable core (batched tensors)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise InvalidShape(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_t(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check_same_shape(pred, gt)
    return ((pred - gt) ** 2).mean()


def perceptual_t(pred: torch.Tensor, gt: torch.Tensor, extractor) -> torch.Tensor:
    _check_same_shape(pred, gt)
    feats_p = extractor(pred)
    feats_g = extractor(gt)
    layer_terms = [((fp - fg) ** 2).mean() for fp, fg in zip(feats_p, feats_g)]
    return torch.stack(layer_terms).mean()


def gram_t(feature: torch.Tensor) -> torch.Tensor:
    """Gram matrices of a (B, C, H, W) feature map: F @ F^T per sample."""
    b, c, h, w = feature.shape
    flat = feature.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2)


def gram_objective_t(feats_pred: Sequence[torch.Tensor],
                     feats_gt: Sequence[torch.Tensor],
                     config: GramLossConfig) -> torch.Tensor:
    """Sum over layers of weight_l / (C*H*W) * ||G(pred) - G(gt)||_F^2."""
    total = None
    for layer, (fp, fg) in enumerate(zip(feats_pred, feats_gt)):
        _check_same_shape(fp, fg)
        _, c, h, w = fp.shape
        diff = gram_t(fp) - gram_t(fg)
        term = config.weight(layer) / (c * h * w) * (diff**2).sum(dim=(1, 2)).mean()
        total = term if total is None else total + term
    if total is None:
        raise InvalidShape("gram objective needs at least one layer")
    return total


def gram_loss_t(pred: torch.Tensor, gt: torch.Tensor, extractor,
                config: GramLossConfig) -> torch.Tensor:
    _check_same_shape(pred, gt)
    return gram_objective_t(extractor(pred), extractor(gt), config)


def hinge_d_t(logits_real: torch.Tensor, logits_fake: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - logits_real).mean() + F.relu(1.0 + logits_fake).mean()


def adversarial_g_t(logits_fake: torch.Tensor) -> torch.Tensor:
    return -logits_fake.mean()


def total_loss_t(pred: torch.Tensor, gt: torch.Tensor, extractor,
                 disc, weights: LossWeights,
                 gram_cfg: GramLossConfig) -> tuple[torch.Tensor, dict]:
    """Weighted objective plus its per-term breakdown (detached floats)."""
    l_mse = mse_t(pred, gt)
    l_perc = perceptual_t(pred, gt, extractor)
    l_gram = gram_loss_t(pred, gt, extractor, gram_cfg)
    l_adv = adversarial_g_t(disc(pred))
    total = (l_mse + weights.lambda_lpips * l_perc
             + weights.lambda_gram * l_gram + weights.lambda_gan * l_adv)
    parts = {
        "mse": float(l_mse.detach()),
        "perceptual": float(l_perc.detach()),
        "gram": float(l_gram.detach()),
        "adversarial": float(l_adv.detach()),
    }
    return total, parts


def weighted_total(parts: dict, weights: LossWeights) -> float:
    """Recombine a breakdown into the reported total (float64 arithmetic)."""
    return (parts["mse"] + weights.lambda_lpips * parts["perceptual"]
            + weights.lambda_gram * parts["gram"]
            + weights.lambda_gan * parts["adversarial"])


# ---------------------------------------------------------------------------
# single-image surface (numpy in, floats out)


def _img_t(img: np.ndarray, name: str) -> torch.Tensor:
    arr = require_image(img, name=name)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))[None])


def mse_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared difference over all pixels and channels."""
    p = require_image(pred, name="pred").astype(np.float64)
    g = require_image(gt, name="gt").astype(np.float64)
    if p.shape != g.shape:
        raise InvalidShape(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean((p - g) ** 2))


def perceptual_loss(pred: np.ndarray, gt: np.ndarray, extractor) -> float:
    with torch.no_grad():
        return float(perceptual_t(_img_t(pred, "pred"), _img_t(gt, "gt"), extractor))


def gram_matrix(feature: np.ndarray) -> np.ndarray:
    """Gram matrix F @ F^T of a (C, H, W) feature array."""
    arr = np.asarray(feature, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidShape(f"expected (C, H, W) feature, got shape {arr.shape}")
    c = arr.shape[0]
    flat = arr.reshape(c, -1)
    return flat @ flat.T


def gram_loss(pred: np.ndarray, gt: np.ndarray, extractor,
              config: Optional[GramLossConfig] = None) -> float:
    with torch.no_grad():
        return float(gram_loss_t(_img_t(pred, "pred"), _img_t(gt, "gt"),
                                 extractor, config or GramLossConfig()))


def gan_losses(disc, real: np.ndarray, fake: np.ndarray) -> tuple[float, float]:
    """Hinge discriminator loss and generator adversarial term."""
    real_t = _img_t(real, "real")
    fake_t = _img_t(fake, "fake")
    if real_t.shape != fake_t.shape:
        raise InvalidShape(f"shape mismatch: {tuple(real_t.shape)} vs {tuple(fake_t.shape)}")
    with torch.no_grad():
        d_loss = hinge_d_t(disc(real_t), disc(fake_t))
        g_loss = adversarial_g_t(disc(fake_t))
    return float(d_loss), float(g_loss)


def total_loss(pred: np.ndarray, gt: np.ndarray, extractor, disc,
               weights: Optional[LossWeights] = None,
               gram_cfg: Optional[GramLossConfig] = None) -> tuple[float, dict]:
    """Reported total is exactly the breakdown recombined with the weights."""
    weights = weights or LossWeights()
    gram_cfg = gram_cfg or GramLossConfig()
    with torch.no_grad():
        _, parts = total_loss_t(_img_t(pred, "pred"), _img_t(gt, "gt"),
                                extractor, disc, weights, gram_cfg)
    return weighted_total(parts, weights), parts
