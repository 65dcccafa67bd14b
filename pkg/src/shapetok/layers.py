"""Shared transformer building blocks (explicit q/k/v projections)."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiHeadAttention(nn.Module):
    """Softmax attention with separate q/k/v/out projections.

    Works as self-attention (kv = q input) or cross-attention. Inputs are
    (B, T, D); key/value inputs may have a different feature width d_kv.
    """

    def __init__(self, d_model: int, n_heads: int, d_kv: int | None = None):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        d_kv = d_kv if d_kv is not None else d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_kv, d_model)
        self.v_proj = nn.Linear(d_kv, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, x_q: torch.Tensor, x_kv: torch.Tensor) -> torch.Tensor:
        b, tq, _ = x_q.shape
        tk = x_kv.shape[1]
        q = self.q_proj(x_q).view(b, tq, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x_kv).view(b, tk, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x_kv).view(b, tk, self.n_heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, -1)
        return self.out_proj(out)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with GELU MLP, residual on both halves."""

    def __init__(self, d_model: int, n_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        hidden = int(d_model * mlp_ratio)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, hidden), nn.GELU(), nn.Linear(hidden, d_model)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        x = x + self.mlp(self.norm2(x))
        return x


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos timestep embedding, computed in float64.

    Callers cast to their working dtype; t carries no gradient.
    """
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0)
        * torch.arange(half, dtype=torch.float64, device=t.device)
        / max(half - 1, 1)
    )
    args = t.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb
