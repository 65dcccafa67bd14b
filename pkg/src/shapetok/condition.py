"""Prompt encoders and the prefix adapter.

Conditions come in two desk-scale modalities: silhouette images, encoded by
a small trainable patch embedder (one token per patch plus a global mean
token appended last), and class prompts, encoded as a single token from a
family embedding concatenated with projected family parameters. The prefix
adapter projects either kind of condition token into the shape latent space
through learnable queries, cross-attention and a feed-forward layer:

    T = FF(CrossAttn(Q, C') + Q)

with C' the linearly projected condition tokens. The residual sits inside
the FF argument; there is no residual around the FF itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import FAMILIES, ModelConfig
from .data_synth import FAMILY_ARITY
from .errors import SpecificationError
from .layers import MultiHeadAttention


@dataclass
class ConditionTokens:
    tokens: torch.Tensor  # (m, d_cond)
    modality: str  # "image" | "class"


class ImageConditionEncoder(nn.Module):
    """Patch embedder for silhouette images.

    Token order: patches in row-major order, then one global token (the mean
    of the patch tokens) appended last. Learned per-patch position embeddings
    are added to the patch tokens unless disabled.
    """

    def __init__(self, cfg: ModelConfig, image_res: int):
        super().__init__()
        if image_res % cfg.patch_size != 0:
            raise SpecificationError("image resolution must be divisible by patch size")
        self.patch_size = cfg.patch_size
        self.grid = image_res // cfg.patch_size
        self.n_patches = self.grid * self.grid
        self.embed = nn.Linear(cfg.patch_size * cfg.patch_size, cfg.d_cond)
        self.pos = nn.Parameter(torch.randn(self.n_patches, cfg.d_cond) * 0.02)

    def forward(self, pixels: torch.Tensor, use_positions: bool = True) -> torch.Tensor:
        p = self.patch_size
        if pixels.shape != (self.grid * p, self.grid * p):
            raise SpecificationError(
                f"expected {self.grid * p}x{self.grid * p} image, got {tuple(pixels.shape)}"
            )
        patches = (
            pixels.view(self.grid, p, self.grid, p)
            .permute(0, 2, 1, 3)
            .reshape(self.n_patches, p * p)
        )
        tokens = self.embed(patches)
        if use_positions:
            tokens = tokens + self.pos
        global_token = tokens.mean(dim=0, keepdim=True)
        return torch.cat([tokens, global_token], dim=0)


class ClassConditionEncoder(nn.Module):
    """Single-token encoder for (family, params) prompts."""

    MAX_ARITY = 3

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        half = cfg.d_cond // 2
        self.family_embed = nn.Embedding(len(FAMILIES), half)
        self.param_proj = nn.Linear(self.MAX_ARITY, cfg.d_cond - half)

    def forward(self, family: str, params) -> torch.Tensor:
        if family not in FAMILIES:
            raise SpecificationError(f"unknown family {family!r}")
        params = tuple(float(p) for p in params)
        if len(params) != FAMILY_ARITY[family]:
            raise SpecificationError(
                f"{family} takes {FAMILY_ARITY[family]} params, got {len(params)}"
            )
        dtype = self.param_proj.weight.dtype
        idx = torch.tensor(FAMILIES.index(family))
        padded = torch.zeros(self.MAX_ARITY, dtype=dtype)
        padded[: len(params)] = torch.tensor(params, dtype=dtype)
        token = torch.cat([self.family_embed(idx), self.param_proj(padded)])
        return token.unsqueeze(0)


def encode_image_condition(
    encoder: ImageConditionEncoder, pixels: np.ndarray | torch.Tensor, use_positions: bool = True
) -> ConditionTokens:
    if isinstance(pixels, np.ndarray):
        pixels = torch.as_tensor(pixels, dtype=encoder.embed.weight.dtype)
    return ConditionTokens(tokens=encoder(pixels, use_positions), modality="image")


def encode_class_condition(
    encoder: ClassConditionEncoder, family: str, params
) -> ConditionTokens:
    return ConditionTokens(tokens=encoder(family, params), modality="class")


class PrefixAdapter(nn.Module):
    """Learnable queries projected against condition tokens into prefix tokens."""

    def __init__(self, cfg: ModelConfig, n_heads: int = 4):
        super().__init__()
        self.queries = nn.Parameter(torch.randn(cfg.prefix_len, cfg.d_model) * 0.02)
        # one input projection per condition modality
        self.in_proj = nn.ModuleDict(
            {
                "image": nn.Linear(cfg.d_cond, cfg.d_model),
                "class": nn.Linear(cfg.d_cond, cfg.d_model),
            }
        )
        self.cross_attn = MultiHeadAttention(cfg.d_model, n_heads)
        hidden = 4 * cfg.d_model
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, hidden), nn.ReLU(), nn.Linear(hidden, cfg.d_model)
        )
        # stand-in prefix used when the condition is dropped (null condition)
        self.null_prefix = nn.Parameter(torch.randn(cfg.prefix_len, cfg.d_model) * 0.02)

    def forward(self, cond: ConditionTokens) -> torch.Tensor:
        if cond.modality not in self.in_proj:
            raise SpecificationError(f"unknown condition modality {cond.modality!r}")
        projected = self.in_proj[cond.modality](cond.tokens)
        q = self.queries.unsqueeze(0)
        attn = self.cross_attn(q, projected.unsqueeze(0))
        return self.ff(attn + q).squeeze(0)


def prefix_forward(adapter: PrefixAdapter, cond: ConditionTokens) -> torch.Tensor:
    """Compute prefix tokens T for one condition; output (prefix_len, d_model)."""
    return adapter(cond)
