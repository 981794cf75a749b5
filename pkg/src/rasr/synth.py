"""Procedurally textured toy dataset.

Each category pairs a distinct color palette with a distinct low-frequency
pattern family, so category identity survives both heavy degradation and the
16x16 thumbnails used by the toy embedding. Useful for end-to-end runs where
real photographic data is unavailable.
"""

from __future__ import annotations

import colorsys
import os

import numpy as np

from .imgio import save_image

PATTERNS = (
    "stripes_h", "stripes_v", "stripes_diag", "checker",
    "rings", "blobs", "gradient", "dots",
)


def _palette(cat_idx: int, n_categories: int, rng: np.random.Generator):
    # hue separates categories; in-image contrast stays moderate so palette
    # identity dominates the pixel statistics
    hue = (cat_idx / max(n_categories, 1) + float(rng.uniform(-0.015, 0.015))) % 1.0
    fg = colorsys.hsv_to_rgb(hue, 0.75, float(rng.uniform(0.78, 0.88)))
    bg = colorsys.hsv_to_rgb(hue, 0.5, float(rng.uniform(0.55, 0.65)))
    return np.array(fg, dtype=np.float64), np.array(bg, dtype=np.float64)


def _pattern_mask(pattern: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, size, endpoint=False),
                         np.linspace(0, 1, size, endpoint=False), indexing="ij")
    freq = float(rng.uniform(2.0, 5.0))
    phase = float(rng.uniform(0, 2 * np.pi))
    if pattern == "stripes_h":
        m = np.sin(2 * np.pi * freq * yy + phase)
    elif pattern == "stripes_v":
        m = np.sin(2 * np.pi * freq * xx + phase)
    elif pattern == "stripes_diag":
        m = np.sin(2 * np.pi * freq * (xx + yy) / np.sqrt(2.0) + phase)
    elif pattern == "checker":
        m = np.sin(2 * np.pi * freq * xx + phase) * np.sin(2 * np.pi * freq * yy + phase)
    elif pattern == "rings":
        cx = float(rng.uniform(0.3, 0.7))
        cy = float(rng.uniform(0.3, 0.7))
        r = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        m = np.sin(2 * np.pi * freq * 2.0 * r + phase)
    elif pattern == "blobs":
        grid = rng.standard_normal((8, 8))
        big = np.kron(grid, np.ones((size // 8 + 1, size // 8 + 1)))[:size, :size]
        m = np.tanh(1.5 * big)
    elif pattern == "gradient":
        a = float(rng.uniform(0.2, 0.8))
        m = 2.0 * (a * xx + (1 - a) * yy) - 1.0
    elif pattern == "dots":
        m = np.sign(np.sin(2 * np.pi * freq * xx + phase)
                    * np.sin(2 * np.pi * freq * yy + phase))
        m = m * 0.9
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return 0.5 + 0.5 * m


def make_texture(cat_idx: int, img_idx: int, size: int = 320, seed: int = 0,
                 n_categories: int = 8) -> np.ndarray:
    """One procedurally textured image, deterministic in all arguments."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, cat_idx, img_idx]))
    pattern = PATTERNS[cat_idx % len(PATTERNS)]
    fg, bg = _palette(cat_idx, n_categories, rng)
    mask = _pattern_mask(pattern, size, rng)[..., None]
    img = bg[None, None, :] + (fg - bg)[None, None, :] * mask
    img = img + rng.standard_normal(img.shape) * 0.015
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def category_name(cat_idx: int) -> str:
    return f"cat{cat_idx:02d}_{PATTERNS[cat_idx % len(PATTERNS)]}"


def write_toy_dataset(root: str, categories: int = 8, per_category: int = 45,
                      size: int = 320, seed: int = 0) -> dict[str, list[str]]:
    """Write PNG images under root/<category>/ and return the path layout."""
    layout: dict[str, list[str]] = {}
    for c in range(categories):
        name = category_name(c)
        cat_dir = os.path.join(root, name)
        os.makedirs(cat_dir, exist_ok=True)
        paths = []
        for i in range(per_category):
            path = os.path.join(cat_dir, f"img_{i:04d}.png")
            if not os.path.exists(path):
                save_image(path, make_texture(c, i, size=size, seed=seed,
                                              n_categories=categories))
            paths.append(path)
        layout[name] = paths
    return layout
