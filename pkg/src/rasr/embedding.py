"""Semantic image embeddings behind a pluggable encoder registry.

The default "toy" encoder is deterministic and dependency-free: area-resize
to 16x16, flatten, project through a fixed seeded random matrix, L2-normalize.
Real vision encoders can be registered under their own names and used through
the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, UnknownEncoder, ZeroVector
from .imgio import area_resize, require_image

TOY_THUMB = 16  # toy encoder thumbnail side
TOY_INPUT_DIM = TOY_THUMB * TOY_THUMB * 3


@dataclass(frozen=True)
class EncoderSpec:
    """Identifies one encoder configuration; equal specs behave identically."""

    name: str = "toy"
    dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput(f"encoder dim must be positive, got {self.dim}")


@dataclass(frozen=True)
class Embedding:
    """Unit-norm vector of fixed dimension plus the encoder that produced it."""

    vector: np.ndarray
    source_encoder: str = "toy"

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def normalize(vector: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm (computed in float64)."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVector("cannot normalize an all-zero vector")
    return v / norm


class ToyEncoder:
    """Deterministic stand-in for a pretrained vision encoder.

    Thumbnail by area averaging preserves coarse color/structure, so cosine
    similarity over the projected vectors still separates visually distinct
    categories.
    """

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self._projection = rng.standard_normal((spec.dim, TOY_INPUT_DIM))

    def encode(self, image: np.ndarray) -> Embedding:
        arr = require_image(image, min_side=8, name="encoder input")
        thumb = area_resize(arr, TOY_THUMB, TOY_THUMB)
        flat = thumb.reshape(-1).astype(np.float64)
        projected = self._projection @ flat
        unit = normalize(projected).astype(np.float32)
        return Embedding(vector=unit, source_encoder=self.spec.name)


_ENCODER_FACTORIES = {"toy": ToyEncoder}
_ENCODER_CACHE: dict[EncoderSpec, object] = {}


def register_encoder(name: str, factory) -> None:
    """Register a plugin encoder; factory(spec) must expose .encode(image)."""
    _ENCODER_FACTORIES[name] = factory


def get_encoder(spec: EncoderSpec):
    if spec.name not in _ENCODER_FACTORIES:
        raise UnknownEncoder(f"no encoder registered under {spec.name!r}")
    if spec not in _ENCODER_CACHE:
        _ENCODER_CACHE[spec] = _ENCODER_FACTORIES[spec.name](spec)
    return _ENCODER_CACHE[spec]


def encode(image: np.ndarray, spec: EncoderSpec) -> Embedding:
    """Embed an image with the encoder selected by spec."""
    return get_encoder(spec).encode(image)
