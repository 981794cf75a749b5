"""Full-reference image metrics and the evaluation harness.

PSNR is computed on mean RGB MSE with peak 1.0 and a 100 dB cap; SSIM is the
standard single-scale formulation (11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03) on Rec.601 luma over valid window positions. Perceptual and
no-reference metrics are registry slots that report "unavailable" until a
plugin registers them.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import InvalidShape, PairingError
from .imgio import list_images, load_image, require_image, to_luma

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# slots for metrics that need pretrained networks; filled by plugins
PLUGIN_METRIC_SLOTS = ("lpips", "dists", "fid", "niqe", "musiq", "clipiqa")


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = require_image(pred, name="pred")
    g = require_image(gt, name="gt")
    if p.shape != g.shape:
        raise InvalidShape(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100."""
    p, g = _check_pair(pred, gt)
    mse = float(np.mean((p.astype(np.float64) - g.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    pad = kernel.shape[0] // 2
    full = cv2.filter2D(img, -1, kernel, borderType=cv2.BORDER_REFLECT)
    return full[pad:-pad, pad:-pad]


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean structural similarity over valid 11x11 windows of the luma plane."""
    p, g = _check_pair(pred, gt)
    if min(p.shape[0], p.shape[1]) < SSIM_WINDOW:
        raise InvalidShape(
            f"images must be at least {SSIM_WINDOW}px per side for SSIM, got {p.shape[:2]}"
        )
    x = to_luma(p)
    y = to_luma(g)
    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    mu_x = _windowed_mean(x, kernel)
    mu_y = _windowed_mean(y, kernel)
    xx = _windowed_mean(x * x, kernel) - mu_x**2
    yy = _windowed_mean(y * y, kernel) - mu_y**2
    xy = _windowed_mean(x * y, kernel) - mu_x * mu_y

    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


_METRICS = {"psnr": psnr, "ssim": ssim}


def register_metric(name: str, fn) -> None:
    """Register a per-image metric plugin: fn(pred, gt) -> float."""
    _METRICS[name] = fn


def available_metrics() -> tuple[str, ...]:
    return tuple(sorted(_METRICS))


@dataclass
class MetricReport:
    method: str = ""
    dataset: str = ""
    per_image: dict = field(default_factory=dict)   # metric -> {filename: value}
    means: dict = field(default_factory=dict)       # metric -> mean value
    unavailable: list = field(default_factory=list)

    def to_json(self) -> dict:
        metrics = {
            name: {"mean": self.means[name], "per_image": dict(sorted(values.items()))}
            for name, values in sorted(self.per_image.items())
        }
        return {
            "method": self.method,
            "dataset": self.dataset,
            "metrics": metrics,
            "unavailable": sorted(self.unavailable),
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_pairs(pairs: dict[str, tuple[np.ndarray, np.ndarray]],
                   metric_names, method: str = "", dataset: str = "") -> MetricReport:
    """Compute each requested metric over named (pred, gt) pairs."""
    report = MetricReport(method=method, dataset=dataset)
    for name in metric_names:
        fn = _METRICS.get(name)
        if fn is None:
            report.unavailable.append(name)
            continue
        values = {fname: float(fn(p, g)) for fname, (p, g) in sorted(pairs.items())}
        report.per_image[name] = values
        report.means[name] = math.fsum(values.values()) / len(values) if values else 0.0
    return report


def evaluate(pred_dir: str, gt_dir: str, metric_names,
             method: str = "", dataset: str = "") -> MetricReport:
    """Evaluate matching filenames across two directories."""
    pred_files = set(list_images(pred_dir))
    gt_files = set(list_images(gt_dir))
    if pred_files != gt_files:
        only_pred = sorted(pred_files - gt_files)
        only_gt = sorted(gt_files - pred_files)
        raise PairingError(
            f"filename mismatch between {pred_dir} and {gt_dir}: "
            f"pred-only={only_pred[:5]} gt-only={only_gt[:5]}"
        )
    pairs = {
        fname: (load_image(os.path.join(pred_dir, fname)),
                load_image(os.path.join(gt_dir, fname)))
        for fname in sorted(pred_files)
    }
    return evaluate_pairs(pairs, metric_names, method=method,
                          dataset=dataset or os.path.basename(os.path.normpath(gt_dir)))
