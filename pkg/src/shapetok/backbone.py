"""Masked autoencoder over shape tokens.

The encoder sees [prefix tokens || visible shape tokens + positions]; the
decoder sees the encoder output with learned mask tokens (plus positions)
substituted at masked slots, and its output at those slots is the per-token
condition vector z. Masked slots' input values are never read, so outputs
are exactly invariant to their contents. Ordering matters only through
which slots are masked: visible slots are always gathered in natural index
order, so two plans with the same visible set are computationally identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import ConfigError
from .layers import TransformerBlock


@dataclass
class MaskPlan:
    ordering: np.ndarray  # permutation of 0..n-1
    mask_ratio: float
    masked: np.ndarray  # bool, length n

    def __post_init__(self):
        n = self.ordering.shape[0]
        if sorted(self.ordering.tolist()) != list(range(n)):
            raise ConfigError("ordering must be a permutation")
        if self.masked.shape != (n,):
            raise ConfigError("masked mask length mismatch")
        expected = math.ceil(self.mask_ratio * n)
        if int(self.masked.sum()) != expected:
            raise ConfigError(
                f"masked count {int(self.masked.sum())} != ceil(ratio*n) = {expected}"
            )

    @property
    def n(self) -> int:
        return self.ordering.shape[0]

    @property
    def masked_indices(self) -> np.ndarray:
        return np.nonzero(self.masked)[0]

    @property
    def visible_indices(self) -> np.ndarray:
        return np.nonzero(~self.masked)[0]

    @classmethod
    def from_masked(cls, masked: np.ndarray) -> "MaskPlan":
        """Plan with an explicit masked set (used by the generation loop)."""
        masked = np.asarray(masked, dtype=bool)
        ordering = np.concatenate([np.nonzero(~masked)[0], np.nonzero(masked)[0]])
        return cls(ordering=ordering, mask_ratio=masked.mean(), masked=masked)


def sample_mask_plan(
    n: int,
    rng: np.random.Generator,
    ratio_min: float = 0.7,
    ratio_max: float = 1.0,
) -> MaskPlan:
    """Training-time plan: uniform ratio in [ratio_min, ratio_max], random order."""
    if n < 2:
        raise ConfigError("need at least 2 tokens to mask")
    if not 0.0 <= ratio_min <= ratio_max <= 1.0:
        raise ConfigError("invalid mask ratio range")
    ratio = float(rng.uniform(ratio_min, ratio_max))
    ordering = rng.permutation(n)
    n_masked = math.ceil(ratio * n)
    masked = np.zeros(n, dtype=bool)
    masked[ordering[n - n_masked :]] = True
    return MaskPlan(ordering=ordering, mask_ratio=ratio, masked=masked)


class MaskedAutoencoder(nn.Module):
    """Encoder/decoder transformer pair producing z at masked slots."""

    def __init__(self, cfg: ModelConfig, n_tokens: int, token_dim: int):
        super().__init__()
        self.n_tokens = n_tokens
        self.token_dim = token_dim
        d = cfg.d_model
        self.token_in = nn.Linear(token_dim, d)
        self.pos_emb = nn.Parameter(torch.randn(n_tokens, d) * 0.02)
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.encoder = nn.ModuleList(
            TransformerBlock(d, cfg.mae_heads) for _ in range(cfg.mae_layers)
        )
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(
            TransformerBlock(d, cfg.mae_heads) for _ in range(cfg.mae_layers)
        )
        self.decoder_norm = nn.LayerNorm(d)

    def forward(
        self, tokens: torch.Tensor, prefix: torch.Tensor, plan: MaskPlan
    ) -> torch.Tensor:
        """tokens (B, n, d_tok), prefix (B, k, d_model) -> z (B, M, d_model).

        z rows follow plan.masked_indices (ascending slot order).
        """
        if tokens.ndim != 3 or tokens.shape[1] != self.n_tokens:
            raise ConfigError(f"expected (B, {self.n_tokens}, d) tokens, got {tuple(tokens.shape)}")
        b = tokens.shape[0]
        k = prefix.shape[1]
        vis = torch.as_tensor(plan.visible_indices, dtype=torch.long)
        msk = torch.as_tensor(plan.masked_indices, dtype=torch.long)

        x_vis = self.token_in(tokens[:, vis]) + self.pos_emb[vis]
        h = torch.cat([prefix, x_vis], dim=1)
        for block in self.encoder:
            h = block(h)
        h = self.encoder_norm(h)

        mask_fill = (self.mask_token + self.pos_emb[msk]).unsqueeze(0).expand(b, -1, -1)
        perm = torch.cat([vis, msk])
        inv = torch.argsort(perm)
        slots = torch.cat([h[:, k:], mask_fill], dim=1)[:, inv]
        g = torch.cat([h[:, :k], slots], dim=1)
        for block in self.decoder:
            g = block(g)
        g = self.decoder_norm(g)
        return g[:, k:][:, msk]


def mae_forward(
    mae: MaskedAutoencoder,
    tokens: torch.Tensor,
    prefix: torch.Tensor,
    plan: MaskPlan,
) -> torch.Tensor:
    """Single-sequence wrapper: tokens (n, d_tok), prefix (k, d_model) -> z (M, d_z)."""
    return mae(tokens.unsqueeze(0), prefix.unsqueeze(0), plan).squeeze(0)
