"""Masked autoregressive generation with reconstruction-guided blending.

Tokens are sampled a few slots per step in a random order; each step the
previously sampled tokens are blended with the reconstruction adapter's
estimate (weight alpha on the sampled side) before entering the MAE, the
per-slot condition vectors are read at this step's target slots, and a
per-token reverse diffusion chain fills them in. Blending only shapes the
MAE input: stored samples are raw and the final output equals them bit for
bit. The alpha index i is the cumulative 1-based order in which a slot was
sampled, rising from fusion_ratio to 1 after fusion_step tokens.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import MaskPlan
from .condition import ConditionTokens, prefix_forward
from .config import GenerationConfig
from .diffusion import token_ddpm_sample
from .errors import ConfigError
from .recon import recon_forward
from .trainer import ModelBundle


@dataclass(frozen=True)
class BlendSchedule:
    fusion_step: int = 30
    fusion_ratio: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.fusion_ratio <= 1.0:
            raise ConfigError("fusion_ratio must lie in [0, 1]")
        if self.fusion_step < 0:
            raise ConfigError("fusion_step must be non-negative")

    def alpha(self, order_index: int) -> float:
        """Weight on the sampled token for the order_index-th sampled slot (1-based)."""
        return self.fusion_ratio if order_index <= self.fusion_step else 1.0


def blend_tokens(
    recon: torch.Tensor,
    sampled: torch.Tensor,
    filled_mask: np.ndarray,
    blend: BlendSchedule,
    order_index: np.ndarray,
) -> torch.Tensor:
    """Fuse recon and raw sampled tokens on filled slots.

    order_index holds, per slot, the 1-based cumulative order at which the
    slot was sampled (0 where unfilled). Unfilled slots come out zero; they
    are masked downstream and never read.
    """
    filled = torch.as_tensor(np.asarray(filled_mask, dtype=bool))
    alphas = torch.tensor(
        [blend.alpha(int(i)) if i > 0 else 1.0 for i in order_index],
        dtype=sampled.dtype,
    ).unsqueeze(1)
    fused = (1.0 - alphas) * recon.to(sampled.dtype) + alphas * sampled
    return torch.where(filled.unsqueeze(1), fused, torch.zeros_like(fused))


def token_count_schedule(n: int, total_steps: int) -> list[int]:
    """Cosine schedule of tokens per step; counts are >= 1 and sum to n."""
    if not 1 <= total_steps <= n:
        raise ConfigError("total_steps must lie in [1, n_tokens]")
    remaining = [n]
    for s in range(1, total_steps + 1):
        target = int(round(n * math.cos(math.pi / 2.0 * s / total_steps)))
        target = min(target, remaining[-1] - 1)  # sample at least one per step
        remaining.append(max(target, 0 if s == total_steps else total_steps - s))
    remaining[-1] = 0
    return [remaining[i] - remaining[i + 1] for i in range(total_steps)]


@dataclass
class StepRecord:
    step: int
    positions: list[int]
    order_indices: list[int]
    alphas: list[float]
    input_hash: str
    sampled: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "positions": self.positions,
            "order_indices": self.order_indices,
            "alphas": self.alphas,
            "input_hash": self.input_hash,
            "sampled": self.sampled.tolist(),
        }


@dataclass
class GenerationTrace:
    n_tokens: int
    steps: list[StepRecord] = field(default_factory=list)

    def covered_positions(self) -> list[int]:
        out = []
        for s in self.steps:
            out.extend(s.positions)
        return out

    def validate_coverage(self) -> None:
        cov = self.covered_positions()
        if sorted(cov) != list(range(self.n_tokens)):
            raise ConfigError("trace does not partition the token slots")

    def raw_tokens(self) -> np.ndarray:
        """Reassemble the per-step raw samples into the full token matrix."""
        d = self.steps[0].sampled.shape[1]
        out = np.zeros((self.n_tokens, d))
        for s in self.steps:
            out[s.positions] = s.sampled
        return out

    def write_jsonl(self, path) -> None:
        lines = [json.dumps(s.to_json_dict()) for s in self.steps]
        Path(path).write_text("\n".join(lines) + "\n")


def mar_generate(
    cond: ConditionTokens, bundle: ModelBundle, gen: GenerationConfig
) -> tuple[np.ndarray, GenerationTrace]:
    """Generate a full token sequence for one condition; returns (tokens, trace)."""
    blend = BlendSchedule(gen.fusion_step, gen.fusion_ratio)
    if gen.fusion_step > 0 and not bundle.recon_trained:
        raise ConfigError("fusion_step > 0 requires a trained reconstruction adapter")
    n, d = bundle.cfg.n_tokens(), bundle.cfg.token_dim()
    counts = token_count_schedule(n, gen.total_steps)
    tgen = torch.Generator().manual_seed(gen.seed)

    with torch.no_grad():
        prefix = prefix_forward(bundle.prefix, cond)
        recon_tokens = (
            recon_forward(bundle.recon, cond)
            if gen.fusion_step > 0
            else torch.zeros(n, d)
        )

        perm = torch.randperm(n, generator=tgen).numpy()
        sampled = torch.zeros(n, d)
        filled = np.zeros(n, dtype=bool)
        order_index = np.zeros(n, dtype=np.int64)
        trace = GenerationTrace(n_tokens=n)

        taken = 0
        drawn = 0
        for step, count in enumerate(counts):
            positions = np.sort(perm[taken : taken + count])
            taken += count

            input_hash = hashlib.sha256(
                sampled.numpy().astype("<f4").tobytes()
            ).hexdigest()[:16]
            fused = blend_tokens(recon_tokens, sampled, filled, blend, order_index)
            plan = MaskPlan.from_masked(~filled)
            z_all = bundle.mae(fused.unsqueeze(0), prefix.unsqueeze(0), plan).squeeze(0)
            slot_of = {int(s): j for j, s in enumerate(plan.masked_indices)}
            z = z_all[[slot_of[int(p)] for p in positions]]

            z_null = None
            if gen.cfg_scale > 1.0:
                null_prefix = bundle.prefix.null_prefix
                z_null_all = bundle.mae(
                    fused.unsqueeze(0), null_prefix.unsqueeze(0), plan
                ).squeeze(0)
                z_null = z_null_all[[slot_of[int(p)] for p in positions]]

            new_tokens = token_ddpm_sample(
                z,
                bundle.sched,
                tgen,
                bundle.denoise,
                temperature=gen.temperature,
                cfg_scale=gen.cfg_scale,
                z_null=z_null,
                sample_steps=bundle.cfg.diffusion.sample_steps,
            )

            orders = []
            for p in positions:
                drawn += 1
                order_index[p] = drawn
                orders.append(drawn)
            sampled[torch.as_tensor(positions, dtype=torch.long)] = new_tokens
            filled[positions] = True
            trace.steps.append(
                StepRecord(
                    step=step,
                    positions=[int(p) for p in positions],
                    order_indices=orders,
                    alphas=[blend.alpha(i) for i in orders],
                    input_hash=input_hash,
                    sampled=new_tokens.numpy().astype(np.float64).copy(),
                )
            )

    if not filled.all():
        raise ConfigError("internal invariant violation: unfilled slots at termination")
    trace.validate_coverage()
    return sampled.numpy().astype(np.float64), trace
