"""Image loading, saving and resizing helpers.

Images are float32 numpy arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import os

import cv2
import numpy as np
from PIL import Image as PILImage

from .errors import InvalidInput, InvalidShape, IoError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")

# Rec.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def require_image(img: np.ndarray, min_side: int = 1, name: str = "image") -> np.ndarray:
    """Validate (H, W, 3) layout, [0, 1] value range and minimum side length."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidShape(f"{name}: expected (H, W, 3) array, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise InvalidInput(
            f"{name}: sides must be >= {min_side}, got {arr.shape[0]}x{arr.shape[1]}"
        )
    if not np.isfinite(arr).all():
        raise InvalidInput(f"{name}: non-finite pixel values")
    if float(arr.min()) < -1e-6 or float(arr.max()) > 1 + 1e-6:
        raise InvalidInput(f"{name}: pixel values outside [0, 1]")
    return arr.astype(np.float32, copy=False)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an image file as float32 RGB in [0, 1]."""
    try:
        with PILImage.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except FileNotFoundError as exc:
        raise IoError(f"image not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc
    return arr


def save_image(path: str | os.PathLike, img: np.ndarray) -> None:
    """Save a [0, 1] float image as 8-bit PNG (atomic rename into place)."""
    arr = require_image(img)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    tmp = f"{path}.tmp-{os.getpid()}"
    PILImage.fromarray(data, mode="RGB").save(tmp, format="PNG")
    os.replace(tmp, path)


def area_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize by area averaging (box filter); exact block mean for integer ratios."""
    out = cv2.resize(img, (width, height), interpolation=cv2.INTER_AREA)
    return np.asarray(out, dtype=np.float32)


_RESIZE_MODES = {
    "area": cv2.INTER_AREA,
    "bilinear": cv2.INTER_LINEAR,
    "bicubic": cv2.INTER_CUBIC,
}


def resize(img: np.ndarray, height: int, width: int, mode: str = "bilinear") -> np.ndarray:
    if mode not in _RESIZE_MODES:
        raise InvalidInput(f"unknown resize mode {mode!r}")
    out = cv2.resize(img, (width, height), interpolation=_RESIZE_MODES[mode])
    return np.asarray(out, dtype=np.float32)


def to_luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an RGB image, float64."""
    return np.asarray(img, dtype=np.float64) @ LUMA_WEIGHTS


def list_images(directory: str | os.PathLike) -> list[str]:
    """Sorted image filenames directly inside a directory."""
    if not os.path.isdir(directory):
        raise IoError(f"not a directory: {directory}")
    return sorted(
        f for f in os.listdir(directory) if f.lower().endswith(IMAGE_EXTENSIONS)
    )
