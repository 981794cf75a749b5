"""Retrieval-augmented super resolution.

Semantic reference retrieval over a per-category image database, followed by
a reference-conditioned one-step latent generator trained with a composite
pixel/perceptual/texture/adversarial objective.
"""

from .embedding import Embedding, EncoderSpec, encode, normalize, register_encoder
from .errors import RasrError
from .generator import (
    GeneratorConfig,
    GeneratorState,
    combine_prompts,
    control_features,
    embed_prompt,
    fuse,
    generate,
    init_generator,
    load_checkpoint,
    save_checkpoint,
)
from .losses import LossWeights, gram_matrix, mse_loss, total_loss
from .metrics import evaluate, psnr, ssim
from .retrieval import (
    RankedHit,
    ReferenceIndex,
    ReferenceRecord,
    brute_force_topk,
    build_index,
    load_index,
    query,
    save_index,
)
from .training import TrainConfig, train_loop, train_step, trainable_parameters

__version__ = "0.1.0"

__all__ = [
    "Embedding", "EncoderSpec", "encode", "normalize", "register_encoder",
    "RasrError",
    "GeneratorConfig", "GeneratorState", "combine_prompts", "control_features",
    "embed_prompt", "fuse", "generate", "init_generator", "load_checkpoint",
    "save_checkpoint",
    "LossWeights", "gram_matrix", "mse_loss", "total_loss",
    "evaluate", "psnr", "ssim",
    "RankedHit", "ReferenceIndex", "ReferenceRecord", "brute_force_topk",
    "build_index", "load_index", "query", "save_index",
    "TrainConfig", "train_loop", "train_step", "trainable_parameters",
    "__version__",
]
