"""Reconstruction adapter: condition tokens -> estimated shape tokens.

One learnable query per shape-token slot is cross-attended with the
condition (with a residual on the queries), refined by a stack of
self-attention blocks, and projected to the token dimension:

    X_hat = SelfAttn(CrossAttn(Q_s, C') + Q_s)

Trained separately from the backbone with MSE; used only as sampling
guidance, never as the final output.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import ConfigError, SpecificationError
from .layers import MultiHeadAttention, TransformerBlock

from .condition import ConditionTokens


class ReconAdapter(nn.Module):
    def __init__(self, cfg: ModelConfig, n_tokens: int, token_dim: int):
        super().__init__()
        d = cfg.recon_dim
        self.n_tokens = n_tokens
        self.queries = nn.Parameter(torch.randn(n_tokens, d) * 0.02)
        self.in_proj = nn.ModuleDict(
            {
                "image": nn.Linear(cfg.d_cond, d),
                "class": nn.Linear(cfg.d_cond, d),
            }
        )
        self.cross_attn = MultiHeadAttention(d, cfg.recon_heads)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, cfg.recon_heads) for _ in range(cfg.recon_layers)
        )
        self.head = nn.Linear(d, token_dim)

    def forward(self, cond: ConditionTokens) -> torch.Tensor:
        if cond.modality not in self.in_proj:
            raise SpecificationError(f"unknown condition modality {cond.modality!r}")
        c = self.in_proj[cond.modality](cond.tokens).unsqueeze(0)
        q = self.queries.unsqueeze(0)
        h = self.cross_attn(q, c) + q
        for block in self.blocks:
            h = block(h)
        return self.head(h).squeeze(0)


def recon_forward(adapter: ReconAdapter, cond: ConditionTokens) -> torch.Tensor:
    """Estimated shape tokens (n, d) for one condition."""
    return adapter(cond)


def recon_loss(xhat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all n*d entries."""
    xhat = torch.as_tensor(xhat)
    x = torch.as_tensor(x, dtype=xhat.dtype)
    if xhat.shape != x.shape:
        raise ConfigError(f"shape mismatch {tuple(xhat.shape)} vs {tuple(x.shape)}")
    return ((xhat - x) ** 2).mean()
