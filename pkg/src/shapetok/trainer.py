"""Training loops and the checkpoint container.

The backbone (condition encoders + prefix adapter + MAE + DenoiseNet) is
trained jointly on the per-token diffusion objective; the reconstruction
adapter is trained separately on MSE against the canonical token targets,
reading condition tokens through detached (frozen) encoder outputs so
backbone parameters are provably untouched.

Checkpoints are a single file: magic, a length-prefixed JSON header (tensor
names/shapes/offsets/dtypes, resolved config + hash, training state),
raw little-endian tensor bytes in header order, and a whole-file sha256
footer. Loads verify the footer and payload hash and refuse mismatched
config hashes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import MaskedAutoencoder, sample_mask_plan
from .condition import (
    ClassConditionEncoder,
    ConditionTokens,
    ImageConditionEncoder,
    PrefixAdapter,
    encode_class_condition,
    encode_image_condition,
)
from .config import ExperimentConfig, config_hash, resolve
from .data_synth import DatasetManifest, read_ply, read_png
from .diffusion import DenoiseNet, DiffusionSchedule, diffusion_loss, schedule_from_config
from .errors import CheckpointError, NumericalError
from .recon import ReconAdapter, recon_loss
from .tokenizer import tokenize

_MAGIC = b"STOK0001"


@dataclass
class TrainingItem:
    shape_id: str
    family: str
    params: tuple
    tokens: np.ndarray  # (n, d) canonical-order tokens
    images: np.ndarray  # (V, H, W)
    points: np.ndarray  # (P, 3)


def load_training_set(
    manifest: DatasetManifest, cfg: ExperimentConfig, split: str = "train"
) -> list[TrainingItem]:
    items = []
    for entry in manifest.by_split(split):
        points = read_ply(manifest.root / entry.ply_path)
        tokens = tokenize(points, cfg.tokenizer)
        images = np.stack([read_png(manifest.root / v.png_path) for v in entry.views])
        items.append(
            TrainingItem(
                shape_id=entry.shape_id,
                family=entry.spec.family,
                params=entry.spec.params,
                tokens=tokens,
                images=images,
                points=points,
            )
        )
    return items


@dataclass
class ModelBundle:
    cfg: ExperimentConfig
    image_encoder: ImageConditionEncoder
    class_encoder: ClassConditionEncoder
    prefix: PrefixAdapter
    mae: MaskedAutoencoder
    denoise: DenoiseNet
    recon: ReconAdapter
    sched: DiffusionSchedule
    state: dict = field(default_factory=dict)

    def backbone_modules(self) -> dict:
        return {
            "cond_image": self.image_encoder,
            "cond_class": self.class_encoder,
            "prefix": self.prefix,
            "mae": self.mae,
            "denoise": self.denoise,
        }

    def modules(self) -> dict:
        return {**self.backbone_modules(), "recon": self.recon}

    @property
    def recon_trained(self) -> bool:
        return bool(self.state.get("recon_trained", False))


def build_bundle(cfg: ExperimentConfig) -> ModelBundle:
    """Construct a fresh bundle; init is deterministic in cfg.model.init_seed."""
    torch.manual_seed(cfg.model.init_seed)
    n, d = cfg.n_tokens(), cfg.token_dim()
    return ModelBundle(
        cfg=cfg,
        image_encoder=ImageConditionEncoder(cfg.model, cfg.dataset.image_res),
        class_encoder=ClassConditionEncoder(cfg.model),
        prefix=PrefixAdapter(cfg.model),
        mae=MaskedAutoencoder(cfg.model, n, d),
        denoise=DenoiseNet(cfg.model, d),
        recon=ReconAdapter(cfg.model, n, d),
        sched=schedule_from_config(cfg.diffusion),
        state={"step": 0, "recon_step": 0, "recon_trained": False,
               "backbone_loss": [], "recon_loss": []},
    )


def params_hash(modules: dict) -> str:
    """sha256 over all parameter bytes in fixed (namespace, key) order."""
    h = hashlib.sha256()
    for ns in sorted(modules):
        for key, tensor in modules[ns].state_dict().items():
            h.update(f"{ns}/{key}".encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def item_condition(
    bundle: ModelBundle, item: TrainingItem, modality: str, view_idx: int = 0
) -> ConditionTokens:
    if modality == "image":
        return encode_image_condition(bundle.image_encoder, item.images[view_idx])
    return encode_class_condition(bundle.class_encoder, item.family, item.params)


def _all_params(modules: dict) -> list:
    out = []
    for ns in modules.values():
        out.extend(p for p in ns.parameters())
    return out


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def _ema_update(shadow: dict, modules: dict, decay: float) -> None:
    with torch.no_grad():
        for ns, module in modules.items():
            for key, p in module.state_dict().items():
                name = f"{ns}/{key}"
                if name not in shadow:
                    shadow[name] = p.detach().clone()
                else:
                    shadow[name].mul_(decay).add_(p.detach(), alpha=1.0 - decay)


def train_backbone(
    manifest: DatasetManifest,
    cfg: ExperimentConfig,
    bundle: ModelBundle | None = None,
    epochs: int | None = None,
    log=None,
) -> ModelBundle:
    """Joint training of condition adapter, MAE and DenoiseNet.

    Deterministic for fixed (config, seed, dataset): all draws go through a
    numpy generator (batch order, mask plans, modality/view/dropout picks)
    and a torch generator (diffusion timesteps and noise), both seeded from
    cfg.train.seed plus the current step counter so resumed runs continue
    rather than replay.
    """
    if bundle is None:
        bundle = build_bundle(cfg)
    tc = cfg.train
    items = load_training_set(manifest, cfg)
    if not items:
        raise NumericalError("training split is empty")
    n_tokens, token_dim = cfg.n_tokens(), cfg.token_dim()

    modules = bundle.backbone_modules()
    params = _all_params(modules)
    opt = torch.optim.AdamW(params, lr=tc.lr, weight_decay=tc.weight_decay)
    if "optim_backbone" in bundle.state:
        opt.load_state_dict(bundle.state["optim_backbone"])

    start_step = bundle.state.get("step", 0)
    nprng = np.random.default_rng([tc.seed, start_step])
    tgen = torch.Generator().manual_seed((tc.seed + 1) * 1_000_003 + start_step)

    token_batch_all = torch.as_tensor(
        np.stack([it.tokens for it in items]), dtype=torch.float32
    )
    n_views = items[0].images.shape[0]

    losses = bundle.state.setdefault("backbone_loss", [])
    ema = bundle.state.setdefault("ema", {}) if tc.ema_decay else None
    step = start_step
    for _ in range(epochs if epochs is not None else tc.epochs):
        order = nprng.permutation(len(items))
        for lo in range(0, len(items), tc.batch_size):
            batch = order[lo : lo + tc.batch_size]
            plan = sample_mask_plan(n_tokens, nprng, tc.mask_ratio_min, tc.mask_ratio_max)
            prefixes = []
            for idx in batch:
                item = items[idx]
                use_image = nprng.uniform() < tc.modality_mix and n_views > 0
                view = int(nprng.integers(n_views)) if use_image else 0
                if nprng.uniform() < tc.cond_dropout:
                    prefixes.append(bundle.prefix.null_prefix)
                else:
                    cond = item_condition(
                        bundle, item, "image" if use_image else "class", view
                    )
                    prefixes.append(bundle.prefix(cond))
            prefix_stack = torch.stack(prefixes)
            tokens = token_batch_all[torch.as_tensor(batch, dtype=torch.long)]
            z = bundle.mae(tokens, prefix_stack, plan)
            x0 = tokens[:, torch.as_tensor(plan.masked_indices, dtype=torch.long)]
            loss = diffusion_loss(
                x0.reshape(-1, token_dim),
                z.reshape(-1, z.shape[-1]),
                bundle.sched,
                bundle.denoise,
                tgen,
            )
            if not torch.isfinite(loss):
                err = NumericalError(
                    f"non-finite backbone loss at step {step}; "
                    f"shapes {[items[i].shape_id for i in batch]}"
                )
                err.diagnostics = {
                    "step": step,
                    "shape_ids": [items[i].shape_id for i in batch],
                    "mask_ratio": plan.mask_ratio,
                }
                raise err
            opt.zero_grad()
            loss.backward()
            if tc.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, tc.grad_clip)
            if tc.warmup_steps > 0:
                _set_lr(opt, tc.lr * min(1.0, (step + 1) / tc.warmup_steps))
            opt.step()
            if tc.ema_decay:
                _ema_update(ema, modules, tc.ema_decay)
            losses.append(float(loss.detach()))
            step += 1
            if log is not None and step % tc.log_every == 0:
                log(f"backbone step {step} loss {losses[-1]:.5f}")

    bundle.state["step"] = step
    bundle.state["optim_backbone"] = opt.state_dict()
    return bundle


def train_recon(
    manifest: DatasetManifest,
    cfg: ExperimentConfig,
    bundle: ModelBundle | None = None,
    epochs: int | None = None,
    log=None,
) -> ModelBundle:
    """Train the reconstruction adapter only; backbone parameters untouched."""
    if bundle is None:
        bundle = build_bundle(cfg)
    tc = cfg.train
    items = load_training_set(manifest, cfg)
    if not items:
        raise NumericalError("training split is empty")
    n_views = items[0].images.shape[0]

    opt = torch.optim.AdamW(
        bundle.recon.parameters(), lr=tc.recon_lr, weight_decay=tc.weight_decay
    )
    if "optim_recon" in bundle.state:
        opt.load_state_dict(bundle.state["optim_recon"])

    start_step = bundle.state.get("recon_step", 0)
    nprng = np.random.default_rng([tc.seed + 17, start_step])
    targets = [torch.as_tensor(it.tokens, dtype=torch.float32) for it in items]

    losses = bundle.state.setdefault("recon_loss", [])
    step = start_step
    for _ in range(epochs if epochs is not None else tc.recon_epochs):
        order = nprng.permutation(len(items))
        for idx in order:
            item = items[idx]
            use_image = nprng.uniform() < tc.modality_mix and n_views > 0
            view = int(nprng.integers(n_views)) if use_image else 0
            with torch.no_grad():
                cond = item_condition(
                    bundle, item, "image" if use_image else "class", view
                )
            cond = ConditionTokens(cond.tokens.detach(), cond.modality)
            xhat = bundle.recon(cond)
            loss = recon_loss(xhat, targets[idx])
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite recon loss at step {step}")
            opt.zero_grad()
            loss.backward()
            if tc.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(bundle.recon.parameters(), tc.grad_clip)
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
            if log is not None and step % tc.log_every == 0:
                log(f"recon step {step} loss {losses[-1]:.6f}")

    bundle.state["recon_step"] = step
    bundle.state["recon_trained"] = True
    bundle.state["optim_recon"] = opt.state_dict()
    return bundle


# ---------------------------------------------------------------------------
# checkpoint container


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "<f4"
    if arr.dtype == np.float64:
        return "<f8"
    raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")


def _collect_tensors(bundle: ModelBundle) -> list[tuple[str, np.ndarray]]:
    out = []
    for ns, module in bundle.modules().items():
        for key, tensor in module.state_dict().items():
            out.append((f"{ns}/{key}", tensor.detach().cpu().numpy()))
    out.append(("sched/betas", bundle.sched.betas))
    for name, tensor in bundle.state.get("ema", {}).items():
        out.append((f"ema/{name}", tensor.detach().cpu().numpy()))
    for tag in ("optim_backbone", "optim_recon"):
        snap = bundle.state.get(tag)
        if snap:
            for pid, pstate in snap["state"].items():
                for skey, sval in pstate.items():
                    if isinstance(sval, torch.Tensor) and sval.ndim > 0:
                        out.append((f"{tag}/{pid}/{skey}", sval.detach().cpu().numpy()))
    return out


def _optim_meta(snap: dict | None) -> dict | None:
    if not snap:
        return None
    steps = {}
    for pid, pstate in snap["state"].items():
        s = pstate.get("step", 0)
        steps[str(pid)] = float(s) if isinstance(s, torch.Tensor) else float(s)
    return {"steps": steps, "param_groups": snap["param_groups"]}


def save_bundle(bundle: ModelBundle, path) -> None:
    tensors = _collect_tensors(bundle)
    entries = []
    payload_parts = []
    offset = 0
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        raw = arr.astype(_dtype_tag(arr), copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": _dtype_tag(arr),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload_parts.append(raw)
        offset += len(raw)
    payload = b"".join(payload_parts)

    header = {
        "version": 1,
        "config_hash": config_hash(bundle.cfg),
        "config": bundle.cfg.to_dict(),
        "meta": {
            "step": bundle.state.get("step", 0),
            "recon_step": bundle.state.get("recon_step", 0),
            "recon_trained": bundle.recon_trained,
            "backbone_loss": bundle.state.get("backbone_loss", []),
            "recon_loss": bundle.state.get("recon_loss", []),
            "schedule_kind": bundle.sched.kind,
            "optim_backbone": _optim_meta(bundle.state.get("optim_backbone")),
            "optim_recon": _optim_meta(bundle.state.get("optim_recon")),
        },
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = _MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + payload
    footer = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + footer)


def _rebuild_optimizer_snapshot(
    meta: dict | None, tensors: dict, tag: str
) -> dict | None:
    if meta is None:
        return None
    state = {}
    for pid_str, step in meta["steps"].items():
        pid = int(pid_str)
        pstate = {"step": torch.tensor(step)}
        for skey in ("exp_avg", "exp_avg_sq"):
            name = f"{tag}/{pid}/{skey}"
            if name in tensors:
                pstate[skey] = torch.as_tensor(tensors[name])
        state[pid] = pstate
    return {"state": state, "param_groups": meta["param_groups"]}


def load_bundle(path, expect_config_hash: str | None = None) -> ModelBundle:
    blob = Path(path).read_bytes()
    if len(blob) < len(_MAGIC) + 8 + 32 or blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint container")
    body, footer = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != footer:
        raise CheckpointError("checkpoint integrity check failed (file tampered)")
    header_len = struct.unpack("<Q", body[len(_MAGIC) : len(_MAGIC) + 8])[0]
    header_start = len(_MAGIC) + 8
    header = json.loads(body[header_start : header_start + header_len])
    payload = body[header_start + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("checkpoint payload hash mismatch")

    cfg = resolve(header["config"])
    stored_hash = header["config_hash"]
    if config_hash(cfg) != stored_hash:
        raise CheckpointError("stored config does not match its recorded hash")
    if expect_config_hash is not None and expect_config_hash != stored_hash:
        raise CheckpointError(
            f"config-hash mismatch: active {expect_config_hash[:12]}… vs "
            f"checkpoint {stored_hash[:12]}…"
        )

    tensors = {}
    for e in header["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
        tensors[e["name"]] = arr

    bundle = build_bundle(cfg)
    meta = header["meta"]
    betas = tensors["sched/betas"]
    alphas = 1.0 - betas
    bundle.sched = DiffusionSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=np.cumprod(alphas),
        kind=meta["schedule_kind"],
    )
    for ns, module in bundle.modules().items():
        sd = {}
        for key, ref in module.state_dict().items():
            arr = tensors[f"{ns}/{key}"]
            sd[key] = torch.as_tensor(arr, dtype=ref.dtype)
        module.load_state_dict(sd)

    bundle.state = {
        "step": meta["step"],
        "recon_step": meta["recon_step"],
        "recon_trained": meta["recon_trained"],
        "backbone_loss": meta["backbone_loss"],
        "recon_loss": meta["recon_loss"],
    }
    ema = {
        name[len("ema/") :]: torch.as_tensor(arr)
        for name, arr in tensors.items()
        if name.startswith("ema/")
    }
    if ema:
        bundle.state["ema"] = ema
    for tag in ("optim_backbone", "optim_recon"):
        snap = _rebuild_optimizer_snapshot(meta.get(tag), tensors, tag)
        if snap is not None:
            bundle.state[tag] = snap
    return bundle
