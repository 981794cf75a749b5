"""Dataset manifests: per-category train/test/reference partitions, reference
preselection by cosine similarity, and seeded training-pair sampling.

The canonical split is 40 train / 5 test per category with the remainder
feeding the reference pool; smaller categories fall back to a proportional
rule. Every sampling operation is a pure function of (manifest, index, seed).
"""

from __future__ import annotations

import copy
import functools
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .degradation import DegradationConfig, degrade
from .embedding import EncoderSpec, encode
from .errors import EmptyReferencePool, InvalidInput, InvalidShape, TooFewImages
from .imgio import load_image, require_image
from .retrieval import ReferenceRecord, build_index, query

TRAIN_PER_CATEGORY = 40
TEST_PER_CATEGORY = 5
PRESELECT_COUNT = 5


def path_id(path: str) -> int:
    """Stable 64-bit id of an image path (independent of insertion order)."""
    digest = hashlib.blake2b(str(path).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@functools.lru_cache(maxsize=512)
def _cached_image_u8(path: str) -> np.ndarray:
    # source files are 8-bit, so the uint8 cache is lossless
    return np.clip(np.rint(load_image(path) * 255.0), 0, 255).astype(np.uint8)


def _load_source(path) -> np.ndarray:
    return _cached_image_u8(str(path)).astype(np.float32) / 255.0


def _name_entropy(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class CategorySplit:
    name: str
    train_paths: list[str]
    test_paths: list[str]
    reference_paths: list[str]
    prompt: str = ""


@dataclass
class DatasetManifest:
    categories: list[CategorySplit]
    patch_size_train: int = 512
    patch_size_source: int = 768
    seed: int = 0
    encoder: Optional[EncoderSpec] = None
    preselected_refs: dict[int, list[int]] = field(default_factory=dict)

    def train_items(self) -> list[tuple[CategorySplit, str]]:
        """Flat (category, path) train list in manifest order."""
        return [(cat, p) for cat in self.categories for p in cat.train_paths]

    def reference_lookup(self) -> dict[int, tuple[str, str]]:
        """Map reference image id -> (category name, path)."""
        table = {}
        for cat in self.categories:
            for p in cat.reference_paths:
                table[path_id(p)] = (cat.name, p)
        return table

    def to_json(self) -> dict:
        return {
            "patch_size_train": self.patch_size_train,
            "patch_size_source": self.patch_size_source,
            "seed": self.seed,
            "encoder": (
                {"name": self.encoder.name, "dim": self.encoder.dim,
                 "seed": self.encoder.seed}
                if self.encoder else None
            ),
            "categories": [
                {
                    "name": c.name,
                    "train_paths": list(c.train_paths),
                    "test_paths": list(c.test_paths),
                    "reference_paths": list(c.reference_paths),
                    "prompt": c.prompt,
                }
                for c in self.categories
            ],
            "preselected_refs": {
                str(k): list(v) for k, v in sorted(self.preselected_refs.items())
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "DatasetManifest":
        enc = data.get("encoder")
        return cls(
            categories=[
                CategorySplit(
                    name=c["name"],
                    train_paths=list(c["train_paths"]),
                    test_paths=list(c["test_paths"]),
                    reference_paths=list(c["reference_paths"]),
                    prompt=c.get("prompt", c["name"]),
                )
                for c in data["categories"]
            ],
            patch_size_train=int(data["patch_size_train"]),
            patch_size_source=int(data["patch_size_source"]),
            seed=int(data.get("seed", 0)),
            encoder=EncoderSpec(enc["name"], int(enc["dim"]), int(enc["seed"])) if enc else None,
            preselected_refs={
                int(k): [int(i) for i in v]
                for k, v in data.get("preselected_refs", {}).items()
            },
        )


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> DatasetManifest:
    with open(path) as fh:
        return DatasetManifest.from_json(json.load(fh))


@dataclass
class TrainingSample:
    gt_patch: np.ndarray
    ref_patch: np.ndarray
    lr_patch: np.ndarray
    prompt_gt: str
    prompt_ref: str
    category: str = ""
    gt_path: str = ""
    ref_path: str = ""


def _split_counts(n: int, train_count: int, test_count: int) -> tuple[int, int, int]:
    """Canonical split when the pool is large enough; proportional fallback."""
    if n < 3:
        raise TooFewImages(f"need at least 3 images per category, got {n}")
    if n >= train_count + test_count:
        return train_count, test_count, n - train_count - test_count
    train = min(train_count, int(math.floor(0.8 * n)))
    train = max(train, 1)
    test = max(1, min(test_count, n - train))
    if train + test > n:
        train = n - test
    return train, test, n - train - test


def partition(category_images: Mapping[str, Sequence[str]], seed: int,
              train_count: int = TRAIN_PER_CATEGORY,
              test_count: int = TEST_PER_CATEGORY,
              patch_size_train: int = 512,
              patch_size_source: int = 768) -> DatasetManifest:
    """Deterministically split each category into train/test/reference sets.

    The shuffle stream is keyed by (seed, category name) so the result does
    not depend on mapping iteration order.
    """
    categories = []
    for name in sorted(category_images):
        paths = [str(p) for p in category_images[name]]
        n_train, n_test, _ = _split_counts(len(paths), train_count, test_count)
        rng = np.random.default_rng(np.random.SeedSequence([seed, _name_entropy(name)]))
        order = rng.permutation(len(paths))
        shuffled = [paths[i] for i in order]
        categories.append(
            CategorySplit(
                name=name,
                train_paths=shuffled[:n_train],
                test_paths=shuffled[n_train : n_train + n_test],
                reference_paths=shuffled[n_train + n_test :],
                prompt=name,
            )
        )
    return DatasetManifest(categories=categories, seed=seed,
                           patch_size_train=patch_size_train,
                           patch_size_source=patch_size_source)


def preselect_references(manifest: DatasetManifest, encoder_spec: EncoderSpec,
                         n: int = PRESELECT_COUNT) -> DatasetManifest:
    """Attach the top-n most similar same-category references to each train image.

    Similarity is cosine between embeddings of the full ground-truth image and
    each reference image (ties resolved by ascending id, as in retrieval).
    """
    result = copy.deepcopy(manifest)
    result.encoder = encoder_spec
    result.preselected_refs = {}
    for cat in result.categories:
        if not cat.reference_paths:
            raise EmptyReferencePool(f"category {cat.name!r} has no reference images")
        records = [
            ReferenceRecord(
                id=path_id(p), category=cat.name, path=p,
                embedding=encode(_load_source(p), encoder_spec).vector,
            )
            for p in cat.reference_paths
        ]
        index = build_index(records, encoder_spec)
        for train_path in cat.train_paths:
            emb = encode(_load_source(train_path), encoder_spec)
            hits = query(index, emb, k=n)
            result.preselected_refs[path_id(train_path)] = [h.id for h in hits]
    return result


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    ch = min(size, h)
    cw = min(size, w)
    top = (h - ch) // 2
    left = (w - cw) // 2
    return img[top : top + ch, left : left + cw]


def _random_patch(img: np.ndarray, patch: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if h < patch or w < patch:
        raise InvalidShape(f"source {h}x{w} smaller than patch size {patch}")
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    return img[top : top + patch, left : left + patch].copy()


def pick_reference(manifest: DatasetManifest, index: int,
                   rng: np.random.Generator) -> tuple[str, str]:
    """Uniformly choose one of the preselected references for a train image."""
    items = manifest.train_items()
    if not (0 <= index < len(items)):
        raise InvalidInput(f"train index {index} out of range (n={len(items)})")
    cat, gt_path = items[index]
    ref_ids = manifest.preselected_refs.get(path_id(gt_path))
    if not ref_ids:
        raise EmptyReferencePool(
            f"no preselected references for train image {gt_path!r}; "
            "run preselect_references first"
        )
    choice = ref_ids[int(rng.integers(len(ref_ids)))]
    lookup = manifest.reference_lookup()
    ref_cat, ref_path = lookup[choice]
    return ref_path, ref_cat


def sample_training_pair(manifest: DatasetManifest, index: int, seed: int,
                         degradation: Optional[DegradationConfig] = None) -> TrainingSample:
    """Draw one (gt, ref, lr) training triple.

    RNG draw order is fixed: reference choice, gt patch offsets, ref patch
    offsets, degradation seed. Same (manifest, index, seed) -> same sample.
    """
    config = degradation or DegradationConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    items = manifest.train_items()
    if not (0 <= index < len(items)):
        raise InvalidInput(f"train index {index} out of range (n={len(items)})")
    cat, gt_path = items[index]

    ref_path, ref_cat_name = pick_reference(manifest, index, rng)
    gt_source = _center_crop(_load_source(gt_path), manifest.patch_size_source)
    ref_source = _center_crop(_load_source(ref_path), manifest.patch_size_source)
    gt_patch = _random_patch(gt_source, manifest.patch_size_train, rng)
    ref_patch = _random_patch(ref_source, manifest.patch_size_train, rng)
    lr_seed = int(rng.integers(0, 2**63))
    lr_patch, _ = degrade(gt_patch, config, lr_seed)

    ref_prompt = next((c.prompt for c in manifest.categories if c.name == ref_cat_name),
                      ref_cat_name)
    return TrainingSample(
        gt_patch=gt_patch, ref_patch=ref_patch, lr_patch=lr_patch,
        prompt_gt=cat.prompt, prompt_ref=ref_prompt,
        category=cat.name, gt_path=gt_path, ref_path=ref_path,
    )


def make_self_reference_pairs(images: Sequence[str], seed: int,
                              patch_size: int = 512,
                              degradation: Optional[DegradationConfig] = None,
                              prompts: Optional[Mapping[str, str]] = None) -> list[TrainingSample]:
    """Target/reference pairs cropped from single images (no external pool).

    Two independently placed patches per image: the first is the ground truth,
    the second the reference.
    """
    config = degradation or DegradationConfig()
    samples = []
    for i, path in enumerate(images):
        img = require_image(_load_source(path), name=str(path))
        if img.shape[0] < patch_size or img.shape[1] < patch_size:
            raise InvalidShape(
                f"{path}: image {img.shape[0]}x{img.shape[1]} smaller than "
                f"patch size {patch_size}"
            )
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        gt_patch = _random_patch(img, patch_size, rng)
        ref_patch = _random_patch(img, patch_size, rng)
        lr_seed = int(rng.integers(0, 2**63))
        lr_patch, _ = degrade(gt_patch, config, lr_seed)
        prompt = prompts.get(os.path.basename(path), "") if prompts else ""
        samples.append(
            TrainingSample(gt_patch=gt_patch, ref_patch=ref_patch, lr_patch=lr_patch,
                           prompt_gt=prompt, prompt_ref=prompt,
                           gt_path=str(path), ref_path=str(path))
        )
    return samples
