"""Per-token denoising: schedule, forward noising, DenoiseNet, loss, sampling.

The denoiser predicts the injected noise for a single token given a
timestep and the token's condition vector z; sampling runs an ancestral
DDPM reverse chain, optionally strided over a subset of the training
timesteps, with noise injections scaled by a temperature (temperature 0
yields a deterministic mode-seeking chain) and optional classifier-free
guidance against a null condition vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import DiffusionConfig, ModelConfig
from .errors import ConfigError
from .layers import sinusoidal_embedding


@dataclass
class DiffusionSchedule:
    betas: np.ndarray  # (T,), float64
    alphas: np.ndarray
    alpha_bars: np.ndarray
    kind: str

    def __post_init__(self):
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    @property
    def t_steps(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t) -> np.ndarray:
        """alpha_bar at 1-based step t (t=0 maps to 1.0)."""
        t = np.atleast_1d(np.asarray(t))
        out = np.ones(t.shape, dtype=np.float64)
        pos = t > 0
        out[pos] = self.alpha_bars[t[pos] - 1]
        return out


def build_schedule(t_steps: int, kind: str = "cosine") -> DiffusionSchedule:
    if t_steps < 2:
        raise ConfigError("schedule needs at least 2 steps")
    if kind == "linear":
        betas = np.linspace(1e-4, 2e-2, t_steps, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(t_steps + 1, dtype=np.float64) / t_steps
        f = np.cos((steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bar = f / f[0]
        betas = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 1e-8, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars, kind=kind)


def schedule_from_config(cfg: DiffusionConfig) -> DiffusionSchedule:
    return build_schedule(cfg.train_steps, cfg.schedule)


def q_sample(
    x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps; t is 1-based."""
    t = torch.as_tensor(t)
    if torch.any(t < 1) or torch.any(t > sched.t_steps):
        raise ConfigError("timestep out of range")
    ab = torch.as_tensor(sched.alpha_bars, dtype=x0.dtype, device=x0.device)[t - 1]
    while ab.ndim < x0.ndim:
        ab = ab.unsqueeze(-1)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


class DenoiseNet(nn.Module):
    """MLP noise predictor with per-layer scale/shift modulation from (t, z)."""

    def __init__(self, cfg: ModelConfig, token_dim: int, z_dim: int | None = None):
        super().__init__()
        z_dim = z_dim if z_dim is not None else cfg.d_model
        hidden = cfg.denoise_hidden
        self.token_dim = token_dim
        self.time_dim = cfg.time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, hidden), nn.SiLU(), nn.Linear(hidden, hidden)
        )
        self.z_proj = nn.Linear(z_dim, hidden)
        self.in_proj = nn.Linear(token_dim, hidden)
        self.norms = nn.ModuleList(
            nn.LayerNorm(hidden, elementwise_affine=False) for _ in range(cfg.denoise_layers)
        )
        self.mods = nn.ModuleList(
            nn.Linear(hidden, 2 * hidden) for _ in range(cfg.denoise_layers)
        )
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, hidden))
            for _ in range(cfg.denoise_layers)
        )
        self.final_norm = nn.LayerNorm(hidden, elementwise_affine=False)
        self.final_mod = nn.Linear(hidden, 2 * hidden)
        self.out_proj = nn.Linear(hidden, token_dim)
        for mod in list(self.mods) + [self.final_mod]:
            nn.init.normal_(mod.weight, std=0.02)
            nn.init.zeros_(mod.bias)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        temb = sinusoidal_embedding(torch.as_tensor(t), self.time_dim).to(x_t.dtype)
        if temb.ndim == 1:
            temb = temb.unsqueeze(0).expand(x_t.shape[0], -1)
        cond = torch.nn.functional.silu(self.time_mlp(temb) + self.z_proj(z))
        h = self.in_proj(x_t)
        for norm, mod, block in zip(self.norms, self.mods, self.blocks):
            scale, shift = mod(cond).chunk(2, dim=-1)
            h = h + block(norm(h) * (1.0 + scale) + shift)
        scale, shift = self.final_mod(cond).chunk(2, dim=-1)
        return self.out_proj(self.final_norm(h) * (1.0 + scale) + shift)


def denoise_predict(
    net: DenoiseNet, x_t: torch.Tensor, t: torch.Tensor, z: torch.Tensor
) -> torch.Tensor:
    """Predicted noise for tokens x_t (N, d) at steps t (N,) with condition z (N, dz)."""
    if z.shape[-1] != net.z_proj.in_features:
        raise ConfigError(
            f"z dim {z.shape[-1]} does not match net ({net.z_proj.in_features})"
        )
    return net(x_t, t, z)


def diffusion_loss(
    x0: torch.Tensor,
    z: torch.Tensor,
    sched: DiffusionSchedule,
    net,
    generator: torch.Generator,
) -> torch.Tensor:
    """Per-token noise-prediction objective, averaged over the given tokens.

    For each row draws t ~ Uniform{1..T} and eps ~ N(0, I), then scores
    ||eps - net(q_sample(x0, t, eps), t, z)||^2 (full squared norm over the
    token dimension).
    """
    if x0.ndim != 2:
        raise ConfigError("x0 must be (N, d)")
    n = x0.shape[0]
    t = torch.randint(1, sched.t_steps + 1, (n,), generator=generator)
    eps = torch.randn(x0.shape, dtype=x0.dtype, generator=generator)
    x_t = q_sample(x0, t, eps, sched)
    eps_hat = net(x_t, t, z)
    return ((eps - eps_hat) ** 2).sum(dim=-1).mean()


def sampling_timesteps(t_steps: int, sample_steps: int) -> np.ndarray:
    """Descending 1-based timesteps for a strided reverse chain."""
    sample_steps = min(sample_steps, t_steps)
    ts = np.unique(np.linspace(1, t_steps, sample_steps).round().astype(np.int64))
    return ts[::-1].copy()


def token_ddpm_sample(
    z: torch.Tensor,
    sched: DiffusionSchedule,
    generator: torch.Generator,
    net,
    temperature: float = 1.0,
    cfg_scale: float = 1.0,
    z_null: torch.Tensor | None = None,
    sample_steps: int | None = None,
    token_dim: int | None = None,
    clip_x0: float | None = 1.0,
) -> torch.Tensor:
    """Ancestral reverse chain from scaled noise; returns tokens (N, d).

    With cfg_scale > 1 the prediction is eps_null + cfg_scale * (eps_cond -
    eps_null) against the null condition z_null. Noise injections (including
    the initial draw) are scaled by temperature. The implied clean-token
    prediction is clipped to [-clip_x0, clip_x0] each step (tokens live in
    the normalized cube; without the clip, prediction error near the high-t
    end is amplified by 1/sqrt(alpha_bar) and the chain diverges).
    """
    if temperature < 0.0:
        raise ConfigError("temperature must be non-negative")
    if cfg_scale < 1.0:
        raise ConfigError("cfg_scale must be >= 1")
    if cfg_scale > 1.0 and z_null is None:
        raise ConfigError("cfg_scale > 1 requires a null condition vector")
    d = token_dim if token_dim is not None else getattr(net, "token_dim")
    n = z.shape[0]
    steps = sampling_timesteps(sched.t_steps, sample_steps or sched.t_steps)

    x = temperature * torch.randn((n, d), generator=generator)
    x = x.to(z.dtype)
    for i, t in enumerate(steps):
        t_prev = int(steps[i + 1]) if i + 1 < len(steps) else 0
        ab_t = float(sched.alpha_bar(np.array([t]))[0])
        ab_s = float(sched.alpha_bar(np.array([t_prev]))[0])
        tt = torch.full((n,), int(t), dtype=torch.long)
        eps_hat = net(x, tt, z)
        if cfg_scale > 1.0:
            eps_null = net(x, tt, z_null)
            eps_hat = eps_null + cfg_scale * (eps_hat - eps_null)
        x0_pred = (x - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        if clip_x0 is not None:
            x0_pred = x0_pred.clamp(-clip_x0, clip_x0)
        if t_prev == 0:
            x = x0_pred
        else:
            alpha_ts = ab_t / ab_s
            beta_ts = 1.0 - alpha_ts
            mean = (
                math.sqrt(ab_s) * beta_ts / (1.0 - ab_t) * x0_pred
                + math.sqrt(alpha_ts) * (1.0 - ab_s) / (1.0 - ab_t) * x
            )
            var = beta_ts * (1.0 - ab_s) / (1.0 - ab_t)
            noise = torch.randn((n, d), generator=generator).to(z.dtype)
            x = mean + temperature * math.sqrt(var) * noise
    return x
