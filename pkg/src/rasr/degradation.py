"""Seeded synthetic degradation: blur -> downsample -> noise -> compression.

All randomness flows from a single 64-bit seed, and every applied stage is
recorded in a trace whose replay reproduces the output bitwise. Compression
is an in-process 8x8 block-DCT quantizer rather than a codec call so outputs
stay bit-exact across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import cv2
import numpy as np
import scipy.fft

from .errors import InvalidInput, InvalidShape
from .imgio import require_image

# standard JPEG luminance quantization table
LUMA_QUANT_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass
class DegradationConfig:
    scale: int = 4
    blur_kernel_sizes: tuple[int, ...] = (7, 9, 11, 13, 15, 17, 19, 21)
    blur_sigma_range: tuple[float, float] = (0.2, 3.0)
    noise_sigma_range: tuple[float, float] = (1.0 / 255.0, 25.0 / 255.0)
    jpeg_quality_range: tuple[int, int] = (30, 95)
    second_order: bool = False
    resize_modes: tuple[str, ...] = ("area", "bilinear", "bicubic")

    def __post_init__(self):
        if self.scale < 1:
            raise InvalidInput(f"scale must be >= 1, got {self.scale}")
        for k in self.blur_kernel_sizes:
            if k % 2 == 0 or not (7 <= k <= 21):
                raise InvalidInput(f"blur kernel sizes must be odd in [7, 21], got {k}")
        for name, rng in (
            ("blur_sigma_range", self.blur_sigma_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("jpeg_quality_range", self.jpeg_quality_range),
        ):
            if rng[0] > rng[1]:
                raise InvalidInput(f"{name} is reversed: {rng}")
        for mode in self.resize_modes:
            if mode not in ("area", "bilinear", "bicubic"):
                raise InvalidInput(f"unknown resize mode {mode!r}")

    @classmethod
    def from_json(cls, data: dict) -> "DegradationConfig":
        kwargs = dict(data)
        for key in ("blur_kernel_sizes", "blur_sigma_range", "noise_sigma_range",
                    "jpeg_quality_range", "resize_modes"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def to_json(self) -> dict:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data


@dataclass
class DegradationTrace:
    """Ordered record of applied stages; replay reproduces the output bitwise."""

    seed: int
    stages: list[dict] = field(default_factory=list)


_RESIZE_FLAGS = {
    "area": cv2.INTER_AREA,
    "bilinear": cv2.INTER_LINEAR,
    "bicubic": cv2.INTER_CUBIC,
}


def _quant_table(quality: int) -> np.ndarray:
    """Quality-scaled luminance table, clamped to [1, 255]."""
    if quality < 50:
        scale = 5000.0 / quality
    else:
        scale = 200.0 - 2.0 * quality
    table = np.floor((LUMA_QUANT_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def jpeg_quantize(image: np.ndarray, quality: int) -> np.ndarray:
    """Lossy 8x8 block-DCT quantization with the standard luminance table.

    Applied per channel on the [0, 255] scale with the usual -128 shift;
    quality 100 deviates by at most ~2/255 per pixel.
    """
    if not isinstance(quality, (int, np.integer)) or not (1 <= quality <= 100):
        raise InvalidInput(f"jpeg quality must be an integer in [1, 100], got {quality!r}")
    arr = require_image(image, name="jpeg input").astype(np.float64)
    h, w = arr.shape[:2]
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    if pad_h or pad_w:
        arr = np.pad(arr, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    table = _quant_table(quality)

    shifted = arr * 255.0 - 128.0
    ph, pw = shifted.shape[:2]
    # (bh, 8, bw, 8, 3) block view; DCT over the in-block axes
    blocks = shifted.reshape(ph // 8, 8, pw // 8, 8, 3)
    coeffs = scipy.fft.dctn(blocks, type=2, norm="ortho", axes=(1, 3))
    quantized = np.round(coeffs / table[None, :, None, :, None]) * table[None, :, None, :, None]
    restored = scipy.fft.idctn(quantized, type=2, norm="ortho", axes=(1, 3))
    out = (restored.reshape(ph, pw, 3) + 128.0) / 255.0
    out = np.clip(out[:h, :w], 0.0, 1.0)
    return out.astype(np.float32)


def _gaussian_blur(img: np.ndarray, ksize: int, sigma: float) -> np.ndarray:
    out = cv2.GaussianBlur(img, (ksize, ksize), sigmaX=sigma, sigmaY=sigma,
                           borderType=cv2.BORDER_REFLECT_101)
    return np.asarray(out, dtype=np.float32)


def _resize_to(img: np.ndarray, height: int, width: int, mode: str) -> np.ndarray:
    out = cv2.resize(img, (width, height), interpolation=_RESIZE_FLAGS[mode])
    return np.clip(np.asarray(out, dtype=np.float32), 0.0, 1.0)


def _add_noise(img: np.ndarray, sigma: float, entropy: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(list(entropy)))
    noise = rng.standard_normal(img.shape) * sigma
    return np.clip(img.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)


def _apply_stage(img: np.ndarray, stage: dict) -> np.ndarray:
    kind = stage["kind"]
    if kind == "blur":
        return _gaussian_blur(img, stage["ksize"], stage["sigma"])
    if kind == "resize":
        return _resize_to(img, stage["height"], stage["width"], stage["mode"])
    if kind == "noise":
        return _add_noise(img, stage["sigma"], tuple(stage["entropy"]))
    if kind == "jpeg":
        return jpeg_quantize(img, stage["quality"])
    raise InvalidInput(f"unknown trace stage {kind!r}")


def _sample_pass(rng: np.random.Generator, config: DegradationConfig,
                 seed: int, pass_idx: int, final_size: tuple[int, int] | None) -> list[dict]:
    """Sample one blur/[resize]/noise/jpeg pass. Draw order is fixed."""
    stages: list[dict] = []
    ksize = int(config.blur_kernel_sizes[rng.integers(len(config.blur_kernel_sizes))])
    sigma = float(rng.uniform(*config.blur_sigma_range))
    if sigma > 0.0:
        stages.append({"kind": "blur", "ksize": ksize, "sigma": sigma})
    if final_size is not None:
        mode = str(config.resize_modes[rng.integers(len(config.resize_modes))])
        stages.append({"kind": "resize", "height": final_size[0],
                       "width": final_size[1], "mode": mode})
    noise_sigma = float(rng.uniform(*config.noise_sigma_range))
    if noise_sigma > 0.0:
        stages.append({"kind": "noise", "sigma": noise_sigma,
                       "entropy": [seed, 1, pass_idx]})
    lo, hi = config.jpeg_quality_range
    quality = int(rng.integers(lo, hi + 1))
    stages.append({"kind": "jpeg", "quality": quality})
    return stages


def degrade(hr: np.ndarray, config: DegradationConfig,
            seed: int) -> tuple[np.ndarray, DegradationTrace]:
    """Produce the low-resolution counterpart of a high-resolution image.

    Stage order: Gaussian blur -> downsample (seeded resize mode) -> additive
    Gaussian noise -> block-DCT compression. With second_order the chain runs
    once at full resolution (fresh parameters, no resize) before the final
    pass that includes the resize to (H/scale, W/scale).
    """
    arr = require_image(hr, name="hr image")
    h, w = arr.shape[:2]
    if h % config.scale or w % config.scale:
        raise InvalidShape(
            f"hr dims {h}x{w} not divisible by scale {config.scale}"
        )
    target = (h // config.scale, w // config.scale)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))

    passes: list[list[dict]] = []
    if config.second_order:
        passes.append(_sample_pass(rng, config, seed, 0, final_size=None))
    passes.append(_sample_pass(rng, config, seed, len(passes), final_size=target))

    trace = DegradationTrace(seed=seed)
    out = arr
    for stages in passes:
        for stage in stages:
            out = _apply_stage(out, stage)
            trace.stages.append(stage)
    return out, trace


def replay_trace(hr: np.ndarray, trace: DegradationTrace) -> np.ndarray:
    """Re-apply the recorded stages; bitwise equal to the traced output."""
    out = require_image(hr, name="hr image")
    for stage in trace.stages:
        out = _apply_stage(out, stage)
    return out
