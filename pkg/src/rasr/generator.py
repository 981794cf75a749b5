"""Reference-conditioned one-step latent generator.

A frozen seeded backbone (latent codec + UNet) stands in for a pretrained
one-step SR diffusion model. The only trainable pieces are a control branch
mirroring the UNet encoder half: rank-4 low-rank adapters on its convolutions
and one zero-initialized 1x1 convolution per injected decoder block. Because
the zero convolutions start at exactly zero, a fresh generator reproduces the
unconditioned backbone output bitwise for any reference and fusion weight.

Reference features are added to the features entering decoder blocks {0,1,2}
(0 = deepest); text cross-attention acts only in the final decoder block.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CorruptCheckpoint, InvalidInput, InvalidShape
from .imgio import require_image

CKPT_MAGIC = b"RASRCKP1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    latent_channels: int = 4
    widths: tuple[int, ...] = (32, 64, 128, 256)
    text_dim: int = 32
    text_len: int = 64
    text_vocab: int = 512
    lora_rank: int = 4
    injection_blocks: tuple[int, ...] = (0, 1, 2)
    fusion_alpha_train: float = 1.0
    fusion_alpha_infer: float = 0.5
    sr_scale: int = 4

    def __post_init__(self):
        if any(b not in (0, 1, 2, 3) for b in self.injection_blocks):
            raise InvalidInput(f"injection blocks must be in {{0,1,2,3}}: {self.injection_blocks}")
        for alpha in (self.fusion_alpha_train, self.fusion_alpha_infer):
            if not (0.0 <= alpha <= 1.0):
                raise InvalidInput(f"fusion weights must be in [0, 1], got {alpha}")
        if len(self.widths) != 4:
            raise InvalidInput("expected 4 block widths")

    def to_json(self) -> dict:
        data = asdict(self)
        data["widths"] = list(self.widths)
        data["injection_blocks"] = list(self.injection_blocks)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "GeneratorConfig":
        kwargs = dict(data)
        kwargs["widths"] = tuple(kwargs["widths"])
        kwargs["injection_blocks"] = tuple(kwargs["injection_blocks"])
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# prompt embedding


@dataclass
class PromptEmbedding:
    tokens: np.ndarray  # (max_len, dim) float32, zero rows beyond `length`
    length: int


_TEXT_TABLES: dict[tuple[int, int, int], np.ndarray] = {}


def _text_table(seed: int, vocab: int, dim: int) -> np.ndarray:
    key = (seed, vocab, dim)
    if key not in _TEXT_TABLES:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E87]))
        _TEXT_TABLES[key] = rng.standard_normal((vocab, dim)).astype(np.float32)
    return _TEXT_TABLES[key]


def _token_index(token: str, vocab: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab


def embed_prompt(prompt: str, seed: int, dim: int = 32, max_len: int = 64,
                 vocab: int = 512) -> PromptEmbedding:
    """Hash-based token embedding; deterministic in (prompt, seed)."""
    table = _text_table(seed, vocab, dim)
    words = prompt.split()[:max_len]
    tokens = np.zeros((max_len, dim), dtype=np.float32)
    for i, word in enumerate(words):
        tokens[i] = table[_token_index(word, vocab)]
    return PromptEmbedding(tokens=tokens, length=len(words))


def combine_prompts(prompt_ref: str, prompt_lr: str) -> str:
    """Reference prompt first, then the input prompt; empty parts dropped."""
    parts = [p for p in (prompt_ref, prompt_lr) if p]
    return ", ".join(parts)


# ---------------------------------------------------------------------------
# network modules


class LoraConv2d(nn.Module):
    """Frozen convolution plus a trainable rank-r factorized weight update."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0, rank: int = 4):
        super().__init__()
        self.base = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding)
        self.lora_a = nn.Parameter(torch.zeros(rank, in_ch * kernel * kernel))
        self.lora_b = nn.Parameter(torch.zeros(out_ch, rank))

    def forward(self, x):
        delta = (self.lora_b @ self.lora_a).view(self.base.weight.shape)
        return F.conv2d(x, self.base.weight + delta, self.base.bias,
                        self.base.stride, self.base.padding)


def _make_conv(in_ch, out_ch, kernel, stride=1, padding=0, rank=None):
    if rank is None:
        return nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding)
    return LoraConv2d(in_ch, out_ch, kernel, stride=stride, padding=padding, rank=rank)


class ResBlock(nn.Module):
    def __init__(self, ch: int, rank: Optional[int] = None):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, ch)
        self.conv1 = _make_conv(ch, ch, 3, padding=1, rank=rank)
        self.norm2 = nn.GroupNorm(8, ch)
        self.conv2 = _make_conv(ch, ch, 3, padding=1, rank=rank)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class DecBlock(nn.Module):
    """Fused feature + encoder skip -> refined feature at the block width."""

    def __init__(self, ch_in: int, ch_skip: int, ch_out: int):
        super().__init__()
        self.merge = nn.Conv2d(ch_in + ch_skip, ch_out, 3, padding=1)
        self.block = ResBlock(ch_out)

    def forward(self, x, skip):
        return self.block(self.merge(torch.cat([x, skip], dim=1)))


class CrossAttention(nn.Module):
    """Single-head cross-attention from spatial features to prompt tokens."""

    def __init__(self, ch: int, text_dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(8, ch)
        self.to_q = nn.Conv2d(ch, ch, 1, bias=False)
        self.to_k = nn.Linear(text_dim, ch, bias=False)
        self.to_v = nn.Linear(text_dim, ch, bias=False)
        self.to_out = nn.Conv2d(ch, ch, 1, bias=False)
        self.scale = ch ** -0.5

    def forward(self, x, tokens, mask):
        # tokens (B, L, text_dim); mask (B, L) bool; empty prompts contribute 0
        if tokens is None:
            return x
        valid = mask.any(dim=1)
        if not bool(valid.any()):
            return x
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x)).reshape(b, c, h * w).transpose(1, 2)
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        logits = (q @ k.transpose(1, 2)) * self.scale
        safe_mask = mask.clone()
        safe_mask[~valid, 0] = True  # keep softmax finite for empty prompts
        logits = logits.masked_fill(~safe_mask[:, None, :], float("-inf"))
        attended = torch.softmax(logits, dim=-1) @ v
        attended = attended * valid.to(x.dtype)[:, None, None]
        attended = attended.transpose(1, 2).reshape(b, c, h, w)
        return x + self.to_out(attended)


class LatentCodec(nn.Module):
    """Frozen image<->latent codec; decode carries the 4x upscaling.

    encode maps (B,3,H,W) -> (B,C,H/8,W/8); decode maps the latent back up by
    a factor of 8 * sr_scale, so a generated image is 4x its input.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        c = config.latent_channels
        self.enc1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(32, c, 3, stride=2, padding=1)
        n_up = int(round(np.log2(8 * config.sr_scale)))
        if 2 ** n_up != 8 * config.sr_scale:
            raise InvalidInput(f"sr_scale {config.sr_scale}: total upscale must be a power of two")
        chs = [32, 24, 16, 12, 8, 8, 8, 8][: n_up + 1]
        self.dec_stem = nn.Conv2d(c, chs[0], 3, padding=1)
        self.dec_stages = nn.ModuleList(
            nn.Conv2d(chs[i], chs[i + 1], 3, padding=1) for i in range(n_up)
        )
        self.dec_head = nn.Conv2d(chs[n_up], 3, 3, padding=1)

    def encode(self, img):
        x = F.silu(self.enc1(img))
        x = F.silu(self.enc2(x))
        return self.enc3(x)

    def decode(self, z):
        x = F.silu(self.dec_stem(z))
        for conv in self.dec_stages:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.silu(conv(x))
        return torch.sigmoid(self.dec_head(x))


class BackboneUNet(nn.Module):
    """Frozen latent-to-latent UNet; decoder blocks 0 (deepest) to 3.

    Block 3 is the only block with text cross-attention. Reference features
    are added to the feature entering each injected decoder block.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        w = config.widths
        self.stem = nn.Conv2d(config.latent_channels, w[0], 3, padding=1)
        self.enc = nn.ModuleList(ResBlock(w[i]) for i in range(4))
        self.down = nn.ModuleList(
            nn.Conv2d(w[i], w[i + 1], 3, stride=2, padding=1) for i in range(3)
        )
        self.time_embed = nn.Parameter(torch.zeros(w[3]))
        self.mid = ResBlock(w[3])
        self.dec = nn.ModuleList([
            DecBlock(w[3], w[3], w[2]),
            DecBlock(w[2], w[2], w[1]),
            DecBlock(w[1], w[1], w[0]),
            DecBlock(w[0], w[0], w[0]),
        ])
        self.text_attn = CrossAttention(w[0], config.text_dim)
        self.head_norm = nn.GroupNorm(8, w[0])
        self.head = nn.Conv2d(w[0], config.latent_channels, 3, padding=1)

    def encode_features(self, z):
        x = self.stem(z)
        skips = []
        for i in range(4):
            x = self.enc[i](x)
            skips.append(x)
            if i < 3:
                x = self.down[i](x)
        return skips

    def forward(self, z, control=None, alpha: float = 1.0, tokens=None,
                mask=None, capture=None):
        skips = self.encode_features(z)
        x = self.mid(skips[3] + self.time_embed[None, :, None, None])
        for i in range(4):
            f = x
            if capture is not None:
                capture.setdefault("unet", {})[i] = f.detach().clone()
            if control is not None and i in control:
                c = control[i]
                if c.shape != f.shape:
                    raise InvalidShape(
                        f"control feature for block {i} has shape {tuple(c.shape)}, "
                        f"expected {tuple(f.shape)}"
                    )
                f = f + alpha * c
                if capture is not None:
                    capture.setdefault("fused", {})[i] = f.detach().clone()
            x = self.dec[i](f, skips[3 - i])
            if i == 3:
                x = self.text_attn(x, tokens, mask)
            if i < 3:
                x = F.interpolate(x, size=skips[2 - i].shape[-2:], mode="nearest")
        return self.head(F.silu(self.head_norm(x)))


# decoder block -> encoder level feeding its control tap
_TAP_LEVEL = {0: 3, 1: 2, 2: 1, 3: 0}


class ControlBranch(nn.Module):
    """Trainable mirror of the UNet encoder half.

    Base convolutions are frozen copies of the backbone encoder; rank-r
    adapters and the per-block zero convolutions are the trainable set.
    The branch sees only the reference latent (no text path).
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        w = config.widths
        r = config.lora_rank
        self.stem = LoraConv2d(config.latent_channels, w[0], 3, padding=1, rank=r)
        self.enc = nn.ModuleList(ResBlock(w[i], rank=r) for i in range(4))
        self.down = nn.ModuleList(
            LoraConv2d(w[i], w[i + 1], 3, stride=2, padding=1, rank=r) for i in range(3)
        )
        self.zero_convs = nn.ModuleDict({
            str(b): nn.Conv2d(w[_TAP_LEVEL[b]], w[_TAP_LEVEL[b]], 1)
            for b in config.injection_blocks
        })

    def load_mirror(self, backbone: BackboneUNet) -> None:
        """Copy backbone encoder weights into the frozen base convolutions."""
        pairs = [(self.stem.base, backbone.stem)]
        for i in range(4):
            pairs.append((self.enc[i].conv1.base, backbone.enc[i].conv1))
            pairs.append((self.enc[i].conv2.base, backbone.enc[i].conv2))
            pairs.append((self.enc[i].norm1, backbone.enc[i].norm1))
            pairs.append((self.enc[i].norm2, backbone.enc[i].norm2))
        for i in range(3):
            pairs.append((self.down[i].base, backbone.down[i]))
        with torch.no_grad():
            for dst, src in pairs:
                dst.weight.copy_(src.weight)
                if src.bias is not None:
                    dst.bias.copy_(src.bias)

    def forward(self, z_ref):
        x = self.stem(z_ref)
        levels = []
        for i in range(4):
            x = self.enc[i](x)
            levels.append(x)
            if i < 3:
                x = self.down[i](x)
        return {
            int(b): conv(levels[_TAP_LEVEL[int(b)]])
            for b, conv in self.zero_convs.items()
        }


class GeneratorNet(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.codec = LatentCodec(config)
        self.backbone = BackboneUNet(config)
        self.control = ControlBranch(config)


@dataclass
class GeneratorState:
    config: GeneratorConfig
    net: GeneratorNet
    dtype: torch.dtype = torch.float32

    def parameters(self):
        return self.net.parameters()


# ---------------------------------------------------------------------------
# deterministic initialization


def _name_entropy(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seeded_array(seed: int, name: str, shape, std: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _name_entropy(name)]))
    return (rng.standard_normal(shape) * std).astype(np.float32)


def _init_std(name: str, shape) -> float:
    if name.endswith("time_embed"):
        return 0.2
    if len(shape) == 4:  # conv weight
        fan_in = shape[1] * shape[2] * shape[3]
        return float(np.sqrt(2.0 / fan_in))
    if len(shape) == 2:  # linear / lora factor
        return float(np.sqrt(1.0 / shape[1]))
    return 0.0  # biases and norm offsets


def _seed_parameters(net: GeneratorNet, seed: int) -> None:
    with torch.no_grad():
        for name, param in net.named_parameters():
            shape = tuple(param.shape)
            if ".zero_convs." in name:
                param.zero_()
            elif name.endswith(("lora_a", "lora_b")):
                param.copy_(torch.from_numpy(seeded_array(seed, name, shape, std=0.02)))
            elif ".norm" in name or "head_norm" in name:
                param.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                param.zero_()
            else:
                std = _init_std(name, shape)
                param.copy_(torch.from_numpy(seeded_array(seed, name, shape, std=std)))


def trainable_parameter_names(state: GeneratorState) -> list[str]:
    """Adapter and zero-convolution parameter names, in registration order."""
    names = []
    for name, _ in state.net.named_parameters():
        if name.endswith(("lora_a", "lora_b")) or ".zero_convs." in name:
            names.append(name)
    return names


def init_generator(config: GeneratorConfig, dtype: torch.dtype = torch.float32) -> GeneratorState:
    """Build a generator: seeded frozen backbone/codec, fresh trainable branch.

    Zero convolutions start exactly at zero, so the reference path is inert
    until training moves it.
    """
    net = GeneratorNet(config)
    _seed_parameters(net, config.seed)
    net.control.load_mirror(net.backbone)
    net.to(dtype)
    net.requires_grad_(False)
    state = GeneratorState(config=config, net=net, dtype=dtype)
    trainable = set(trainable_parameter_names(state))
    for name, param in net.named_parameters():
        if name in trainable:
            param.requires_grad_(True)
    return state


def trainable_parameters(state: GeneratorState) -> list[tuple[str, nn.Parameter]]:
    trainable = set(trainable_parameter_names(state))
    return [(n, p) for n, p in state.net.named_parameters() if n in trainable]


def frozen_parameters(state: GeneratorState) -> list[tuple[str, nn.Parameter]]:
    trainable = set(trainable_parameter_names(state))
    return [(n, p) for n, p in state.net.named_parameters() if n not in trainable]


def frozen_checksum(state: GeneratorState) -> str:
    """SHA-256 over all frozen parameter bytes, in name order."""
    digest = hashlib.sha256()
    for name, param in sorted(frozen_parameters(state)):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# functional surface


def _to_tensor(img: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))[None]).to(dtype)


def _check_latent_input(state: GeneratorState, image: np.ndarray, name: str) -> np.ndarray:
    arr = require_image(image, min_side=8, name=name)
    if arr.shape[0] % 8 or arr.shape[1] % 8:
        raise InvalidShape(f"{name}: dims {arr.shape[:2]} must be divisible by 8")
    return arr


def encode_latent(state: GeneratorState, image: np.ndarray) -> np.ndarray:
    """Frozen codec encode: (H, W, 3) -> (H/8, W/8, C) latent."""
    arr = _check_latent_input(state, image, "codec input")
    with torch.no_grad():
        z = state.net.codec.encode(_to_tensor(arr, state.dtype))
    return z[0].permute(1, 2, 0).cpu().numpy()


def decode_latent(state: GeneratorState, latent: np.ndarray) -> np.ndarray:
    """Frozen codec decode: latent -> [0,1] image upscaled by 8 * sr_scale."""
    z = np.asarray(latent, dtype=np.float32)
    if z.ndim != 3 or z.shape[2] != state.config.latent_channels:
        raise InvalidShape(f"latent must be (h, w, {state.config.latent_channels}), got {z.shape}")
    with torch.no_grad():
        out = state.net.codec.decode(_to_tensor(z, state.dtype))
    return np.clip(out[0].permute(1, 2, 0).cpu().numpy(), 0.0, 1.0)


def control_features(state: GeneratorState, z_ref: np.ndarray) -> dict[int, np.ndarray]:
    """Control-branch features per injected block, as (h, w, c) arrays.

    The branch receives only the reference latent; prompts never enter here.
    """
    z = np.asarray(z_ref, dtype=np.float32)
    if z.ndim != 3 or z.shape[2] != state.config.latent_channels:
        raise InvalidShape(f"latent must be (h, w, {state.config.latent_channels}), got {z.shape}")
    with torch.no_grad():
        feats = state.net.control(_to_tensor(z, state.dtype))
    return {i: f[0].permute(1, 2, 0).cpu().numpy() for i, f in sorted(feats.items())}


def fuse(f_unet: np.ndarray, f_ctrl: np.ndarray, alpha: float) -> np.ndarray:
    """Additive feature fusion: f + alpha * c."""
    a = np.asarray(f_unet, dtype=np.float32)
    b = np.asarray(f_ctrl, dtype=np.float32)
    if a.shape != b.shape:
        raise InvalidShape(f"fuse shape mismatch: {a.shape} vs {b.shape}")
    return a + np.float32(alpha) * b


def _prompt_batch(state: GeneratorState, prompts: Sequence[str],
                  dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    cfg = state.config
    embs = [embed_prompt(p, cfg.seed, dim=cfg.text_dim, max_len=cfg.text_len,
                         vocab=cfg.text_vocab) for p in prompts]
    tokens = torch.from_numpy(np.stack([e.tokens for e in embs])).to(dtype)
    mask = torch.zeros(len(embs), cfg.text_len, dtype=torch.bool)
    for i, e in enumerate(embs):
        mask[i, : e.length] = True
    return tokens, mask


def forward_batch(state: GeneratorState, lr: torch.Tensor,
                  ref: Optional[torch.Tensor], prompts: Sequence[str],
                  alpha: float, capture: Optional[dict] = None) -> torch.Tensor:
    """Differentiable batched forward pass on (B,3,H,W) tensors in [0,1].

    The reference is area-resized to the input size before encoding so the
    two latents (and hence control and decoder features) align spatially.
    """
    net = state.net
    z_lr = net.codec.encode(lr)
    control = None
    if ref is not None:
        if ref.shape[-2:] != lr.shape[-2:]:
            ref = F.interpolate(ref, size=lr.shape[-2:], mode="area")
        control = net.control(net.codec.encode(ref))
    if capture is not None and control is not None:
        capture["ctrl"] = {i: c.detach().clone() for i, c in control.items()}
    tokens, mask = _prompt_batch(state, prompts, lr.dtype)
    z_out = net.backbone(z_lr, control=control, alpha=alpha, tokens=tokens,
                         mask=mask, capture=capture)
    return net.codec.decode(z_out)


def generate(state: GeneratorState, lr_image: np.ndarray,
             ref_image: Optional[np.ndarray] = None, prompt: str = "",
             alpha: Optional[float] = None,
             capture: Optional[dict] = None) -> np.ndarray:
    """Super-resolve one image; output is 4x the input resolution in [0, 1].

    With no reference the control path is skipped entirely. The reference is
    area-resized to the input size before encoding so both latents align.
    """
    arr = _check_latent_input(state, lr_image, "lr image")
    if alpha is None:
        alpha = state.config.fusion_alpha_infer
    ref_t = None
    if ref_image is not None:
        ref = require_image(ref_image, min_side=8, name="reference image")
        ref_t = _to_tensor(ref, state.dtype)
    with torch.no_grad():
        out = forward_batch(state, _to_tensor(arr, state.dtype), ref_t,
                            [prompt], float(alpha), capture=capture)
    result = out[0].permute(1, 2, 0).cpu().numpy()
    return np.clip(result, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, state: GeneratorState,
                    extra_arrays: Optional[dict[str, np.ndarray]] = None,
                    step: int = 0) -> None:
    """Versioned container: config + named float32 arrays + trainable manifest.

    Layout: magic | u32 header length | header JSON | concatenated f32 LE
    blobs in header order. Extra arrays (discriminator, optimizer state) ride
    along under their own names.
    """
    trainable = set(trainable_parameter_names(state))
    entries = []
    blobs = []
    for name, param in state.net.named_parameters():
        arr = param.detach().cpu().numpy().astype("<f4")
        entries.append({"name": f"net.{name}", "shape": list(arr.shape),
                        "trainable": name in trainable})
        blobs.append(arr.tobytes())
    for name in sorted(extra_arrays or {}):
        arr = np.asarray(extra_arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "trainable": False})
        blobs.append(arr.tobytes())
    header = json.dumps({
        "version": CKPT_VERSION,
        "config": state.config.to_json(),
        "step": int(step),
        "entries": entries,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> tuple[GeneratorState, dict]:
    """Rebuild a generator from a checkpoint; returns (state, extras).

    extras = {"step": int, "arrays": {name: ndarray}} for non-generator
    entries (discriminator and optimizer state, when present).
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CorruptCheckpoint(f"bad magic in {path}")
    off = len(CKPT_MAGIC)
    if len(blob) < off + 4:
        raise CorruptCheckpoint(f"truncated checkpoint {path}")
    (hlen,) = struct.unpack("<I", blob[off : off + 4])
    off += 4
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"bad header in {path}") from exc
    off += hlen
    if header.get("version") != CKPT_VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {header.get('version')}")

    arrays = {}
    for entry in header["entries"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = 4 * count
        if off + nbytes > len(blob):
            raise CorruptCheckpoint(f"truncated checkpoint {path}")
        arrays[entry["name"]] = np.frombuffer(
            blob[off : off + nbytes], dtype="<f4"
        ).reshape(entry["shape"]).copy()
        off += nbytes
    if off != len(blob):
        raise CorruptCheckpoint(f"{len(blob) - off} trailing bytes in {path}")

    state = init_generator(GeneratorConfig.from_json(header["config"]))
    with torch.no_grad():
        for name, param in state.net.named_parameters():
            key = f"net.{name}"
            if key not in arrays:
                raise CorruptCheckpoint(f"missing parameter {key} in {path}")
            if tuple(arrays[key].shape) != tuple(param.shape):
                raise CorruptCheckpoint(f"shape mismatch for {key} in {path}")
            param.copy_(torch.from_numpy(arrays[key]))
    extras = {
        "step": int(header.get("step", 0)),
        "arrays": {k: v for k, v in arrays.items() if not k.startswith("net.")},
    }
    return state, extras
