"""Seeded training loop for the trainable generator parameters.

Each step runs one discriminator update (hinge loss on the frozen-feature
discriminator head) followed by one generator update on the composite loss.
Batch composition and sample crops are pure functions of (seed, step), so a
resumed run retraces an uninterrupted one exactly; frozen backbone and codec
parameters are never touched by the optimizer.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .dataset import DatasetManifest, TrainingSample, sample_training_pair
from .degradation import DegradationConfig
from .errors import InvalidInput, NonFiniteLoss
from .generator import (
    GeneratorConfig,
    GeneratorState,
    forward_batch,
    frozen_checksum,
    init_generator,
    load_checkpoint,
    save_checkpoint,
    trainable_parameters,
)
from .losses import (
    ConvFeatureExtractor,
    Discriminator,
    GramLossConfig,
    LossWeights,
    adversarial_g_t,
    gram_loss_t,
    hinge_d_t,
    mse_t,
    perceptual_t,
    weighted_total,
)

__all__ = [
    "TrainConfig", "train_step", "train_loop", "trainable_parameters",
    "make_optimizers", "smoothed_losses", "frozen_checksum",
]


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 4
    steps: int = 100
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    checkpoint_every: int = 100
    loss_weights: LossWeights = field(default_factory=LossWeights)
    gram_layer_weights: Optional[tuple[float, ...]] = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    extractor_seed: int = 11
    disc_seed: int = 13

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInput(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.steps < 1:
            raise InvalidInput(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise InvalidInput(f"batch size must be >= 1, got {self.batch_size}")

    def gram_config(self) -> GramLossConfig:
        return GramLossConfig(layer_weights=self.gram_layer_weights)

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "seed": self.seed,
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "checkpoint_every": self.checkpoint_every,
            "lambda_lpips": self.loss_weights.lambda_lpips,
            "lambda_gram": self.loss_weights.lambda_gram,
            "lambda_gan": self.loss_weights.lambda_gan,
            "gram_layer_weights": (
                list(self.gram_layer_weights) if self.gram_layer_weights else None
            ),
            "generator": self.generator.to_json(),
            "degradation": self.degradation.to_json(),
            "extractor_seed": self.extractor_seed,
            "disc_seed": self.disc_seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        weights = LossWeights.from_json(
            data.get("loss_weights", data)  # flat keys or nested block
        )
        glw = data.get("gram_layer_weights")
        return cls(
            learning_rate=float(data.get("learning_rate", 5e-5)),
            batch_size=int(data.get("batch_size", 4)),
            steps=int(data.get("steps", 100)),
            seed=int(data.get("seed", 0)),
            betas=tuple(data.get("betas", (0.9, 0.999))),
            eps=float(data.get("eps", 1e-8)),
            weight_decay=float(data.get("weight_decay", 1e-2)),
            checkpoint_every=int(data.get("checkpoint_every", 100)),
            loss_weights=weights,
            gram_layer_weights=tuple(glw) if glw else None,
            generator=(
                GeneratorConfig.from_json(data["generator"])
                if "generator" in data else GeneratorConfig()
            ),
            degradation=(
                DegradationConfig.from_json(data["degradation"])
                if "degradation" in data else DegradationConfig()
            ),
            extractor_seed=int(data.get("extractor_seed", 11)),
            disc_seed=int(data.get("disc_seed", 13)),
        )


def make_optimizers(state: GeneratorState, disc: Discriminator,
                    config: TrainConfig) -> tuple[torch.optim.AdamW, torch.optim.AdamW]:
    """Separate decoupled-weight-decay Adam optimizers for generator and head."""
    params_g = [p for _, p in trainable_parameters(state)]
    opt_g = torch.optim.AdamW(params_g, lr=config.learning_rate, betas=config.betas,
                              eps=config.eps, weight_decay=config.weight_decay,
                              foreach=False)
    opt_d = torch.optim.AdamW(disc.head_parameters(), lr=config.learning_rate,
                              betas=config.betas, eps=config.eps,
                              weight_decay=config.weight_decay, foreach=False)
    return opt_g, opt_d


def _batch_tensors(batch: Sequence[TrainingSample], dtype: torch.dtype):
    def stack(images):
        arr = np.stack([img.transpose(2, 0, 1) for img in images])
        return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)

    lr = stack([s.lr_patch for s in batch])
    ref = stack([s.ref_patch for s in batch])
    gt = stack([s.gt_patch for s in batch])
    prompts = [s.prompt_gt for s in batch]
    return lr, ref, gt, prompts


def train_step(state: GeneratorState, disc: Discriminator,
               batch: Sequence[TrainingSample], config: TrainConfig,
               optimizers=None, step: int = 0,
               extractor: Optional[ConvFeatureExtractor] = None) -> dict:
    """One discriminator update followed by one generator update.

    Mutates only the trainable generator parameters and the discriminator
    head; returns the per-step log entry.
    """
    if not batch:
        raise InvalidInput("empty training batch")
    opt_g, opt_d = optimizers or make_optimizers(state, disc, config)
    extractor = extractor or ConvFeatureExtractor(seed=config.extractor_seed)
    weights = config.loss_weights
    gram_cfg = config.gram_config()
    started = time.perf_counter()

    lr, ref, gt, prompts = _batch_tensors(batch, state.dtype)
    fake = forward_batch(state, lr, ref, prompts,
                         alpha=config.generator.fusion_alpha_train)

    # discriminator step (generator graph excluded via detach)
    opt_d.zero_grad(set_to_none=True)
    d_loss = hinge_d_t(disc(gt), disc(fake.detach()))
    d_loss.backward()
    opt_d.step()

    # generator step against the updated head
    opt_g.zero_grad(set_to_none=True)
    opt_d.zero_grad(set_to_none=True)
    l_mse = mse_t(fake, gt)
    l_perc = perceptual_t(fake, gt, extractor)
    l_gram = gram_loss_t(fake, gt, extractor, gram_cfg)
    l_adv = adversarial_g_t(disc(fake))
    total = (l_mse + weights.lambda_lpips * l_perc
             + weights.lambda_gram * l_gram + weights.lambda_gan * l_adv)
    total.backward()
    grad_sq = 0.0
    for _, param in trainable_parameters(state):
        if param.grad is not None:
            grad_sq += float((param.grad.detach() ** 2).sum())
    opt_g.step()
    opt_d.zero_grad(set_to_none=True)

    parts = {
        "mse": float(l_mse.detach()),
        "perceptual": float(l_perc.detach()),
        "gram": float(l_gram.detach()),
        "adversarial": float(l_adv.detach()),
    }
    entry = {
        "step": int(step),
        "total": weighted_total(parts, weights),
        "parts": parts,
        "d_loss": float(d_loss.detach()),
        "grad_norm": math.sqrt(grad_sq),
        "wall_time_s": time.perf_counter() - started,
    }
    if not all(math.isfinite(v) for v in
               (entry["total"], entry["d_loss"], entry["grad_norm"])):
        raise NonFiniteLoss(f"non-finite loss at step {step}: {entry}")
    return entry


def _make_batch(manifest: DatasetManifest, config: TrainConfig,
                step: int, n_train: int) -> list[TrainingSample]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, step]))
    indices = rng.integers(0, n_train, size=config.batch_size)
    seeds = rng.integers(0, 2**62, size=config.batch_size)
    return [
        sample_training_pair(manifest, int(idx), int(s), config.degradation)
        for idx, s in zip(indices, seeds)
    ]


def _disc_arrays(disc: Discriminator) -> dict[str, np.ndarray]:
    return {f"disc.{n}": p.detach().cpu().numpy().astype("<f4")
            for n, p in disc.named_parameters()}


def _optimizer_arrays(opt, named_params, prefix) -> dict[str, np.ndarray]:
    out = {}
    names = {id(p): n for n, p in named_params}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if not st:
                continue
            name = names[id(p)]
            out[f"{prefix}.{name}.step"] = np.asarray(float(st["step"]), dtype="<f4")
            out[f"{prefix}.{name}.exp_avg"] = st["exp_avg"].numpy().astype("<f4")
            out[f"{prefix}.{name}.exp_avg_sq"] = st["exp_avg_sq"].numpy().astype("<f4")
    return out


def _restore_optimizer(opt, named_params, arrays: dict, prefix: str) -> None:
    for name, param in named_params:
        key = f"{prefix}.{name}.exp_avg"
        if key not in arrays:
            continue
        opt.state[param] = {
            "step": torch.tensor(float(arrays[f"{prefix}.{name}.step"])),
            "exp_avg": torch.from_numpy(arrays[key].copy()).reshape(param.shape),
            "exp_avg_sq": torch.from_numpy(
                arrays[f"{prefix}.{name}.exp_avg_sq"].copy()).reshape(param.shape),
        }


def _save_run_checkpoint(path, state, disc, opt_g, opt_d, step):
    extras = {}
    extras.update(_disc_arrays(disc))
    extras.update(_optimizer_arrays(opt_g, trainable_parameters(state), "optim.g"))
    extras.update(_optimizer_arrays(
        opt_d, [("head.weight", disc.head.weight), ("head.bias", disc.head.bias)],
        "optim.d"))
    save_checkpoint(path, state, extra_arrays=extras, step=step)


def _restore_run(path: str, config: TrainConfig):
    state, extras = load_checkpoint(path)
    disc = Discriminator(seed=config.disc_seed)
    arrays = extras["arrays"]
    with torch.no_grad():
        for name, param in disc.named_parameters():
            key = f"disc.{name}"
            if key in arrays:
                param.copy_(torch.from_numpy(arrays[key].copy()).reshape(param.shape))
    opt_g, opt_d = make_optimizers(state, disc, config)
    _restore_optimizer(opt_g, trainable_parameters(state), arrays, "optim.g")
    _restore_optimizer(
        opt_d, [("head.weight", disc.head.weight), ("head.bias", disc.head.bias)],
        arrays, "optim.d")
    return state, disc, opt_g, opt_d, extras["step"]


def train_loop(manifest: DatasetManifest, config: TrainConfig,
               out_dir: Optional[str] = None,
               resume_from: Optional[str] = None):
    """Run config.steps training steps; returns (state, disc, logs).

    With out_dir set, writes log.jsonl plus ckpt_step_N.bin every
    checkpoint_every steps and ckpt_final.bin at the end.
    """
    n_train = len(manifest.train_items())
    if n_train == 0:
        raise InvalidInput("manifest has no training images")
    if resume_from:
        state, disc, opt_g, opt_d, start_step = _restore_run(resume_from, config)
    else:
        state = init_generator(config.generator)
        disc = Discriminator(seed=config.disc_seed)
        opt_g, opt_d = make_optimizers(state, disc, config)
        start_step = 0
    extractor = ConvFeatureExtractor(seed=config.extractor_seed)

    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "log.jsonl"),
                      "a" if resume_from else "w")
    logs = []
    try:
        for step in range(start_step, config.steps):
            batch = _make_batch(manifest, config, step, n_train)
            entry = train_step(state, disc, batch, config,
                               optimizers=(opt_g, opt_d), step=step,
                               extractor=extractor)
            logs.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            done = step + 1
            if out_dir and (done % config.checkpoint_every == 0) and done < config.steps:
                _save_run_checkpoint(
                    os.path.join(out_dir, f"ckpt_step_{done}.bin"),
                    state, disc, opt_g, opt_d, done)
        if out_dir:
            _save_run_checkpoint(os.path.join(out_dir, "ckpt_final.bin"),
                                 state, disc, opt_g, opt_d, config.steps)
    finally:
        if log_fh:
            log_fh.close()
    return state, disc, logs


def smoothed_losses(logs: Sequence[dict], window: int = 25) -> np.ndarray:
    """Trailing-window mean of the per-step total loss."""
    totals = np.asarray([entry["total"] for entry in logs], dtype=np.float64)
    if len(totals) == 0:
        return totals
    out = np.empty_like(totals)
    for i in range(len(totals)):
        lo = max(0, i - window + 1)
        out[i] = totals[lo : i + 1].mean()
    return out
