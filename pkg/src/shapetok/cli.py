"""Command-line surface: dataset build, training, sampling, evaluation, ablation.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The LTM3D_SEED environment variable, when set, overrides the seed relevant
to the invoked command (dataset seed for build-data, training seed for
train, generation seed for sample/ablate).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data_synth, metrics
from .condition import encode_class_condition, encode_image_condition
from .config import ExperimentConfig, config_hash, load_config
from .data_synth import FAMILY_ARITY, load_manifest, read_ply, read_png, write_ply
from .errors import CheckpointError, ConfigError, NumericalError, SpecificationError
from .sampler import mar_generate
from .tokenizer import detokenize
from .trainer import load_bundle, save_bundle, train_backbone, train_recon

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _env_seed() -> int | None:
    raw = os.environ.get("LTM3D_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"LTM3D_SEED must be an integer, got {raw!r}") from e


def cmd_build_data(args) -> int:
    cfg = load_config(args.config)
    seed = _env_seed()
    dataset_cfg = cfg.dataset if seed is None else replace(cfg.dataset, seed=seed)
    manifest = data_synth.build_dataset(dataset_cfg, Path(args.out))
    print(f"wrote {len(manifest.entries)} shapes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _env_seed()
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    manifest = load_manifest(Path(args.data) / "manifest.jsonl")
    bundle = None
    if args.resume:
        bundle = load_bundle(args.resume, expect_config_hash=config_hash(cfg))
    try:
        if args.stage == "backbone":
            bundle = train_backbone(manifest, cfg, bundle=bundle, log=print)
        else:
            bundle = train_recon(manifest, cfg, bundle=bundle, log=print)
    except NumericalError as e:
        diag = getattr(e, "diagnostics", None)
        if diag is not None:
            dump = Path(args.out).with_suffix(".diagnostics.json")
            dump.write_text(json.dumps(diag, indent=2))
            print(f"diagnostics dumped to {dump}", file=sys.stderr)
        raise
    save_bundle(bundle, args.out)
    stage_step = bundle.state["step" if args.stage == "backbone" else "recon_step"]
    print(f"saved checkpoint to {args.out} ({args.stage} steps: {stage_step})")
    return EXIT_OK


def parse_condition(spec: str, bundle):
    """'family:p1,p2,...' or a path to a grayscale image."""
    if ":" in spec and not Path(spec).exists():
        family, _, raw = spec.partition(":")
        if family not in FAMILY_ARITY:
            raise ConfigError(f"unknown family {family!r} in condition {spec!r}")
        try:
            params = tuple(float(x) for x in raw.split(",") if x)
        except ValueError as e:
            raise ConfigError(f"bad params in condition {spec!r}") from e
        tag = f"{family}-" + "-".join(f"{p:g}" for p in params)
        return encode_class_condition(bundle.class_encoder, family, params), tag
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"condition {spec!r} is neither family:params nor a file")
    pixels = read_png(path)
    return encode_image_condition(bundle.image_encoder, pixels), path.stem


def cmd_sample(args) -> int:
    bundle = load_bundle(args.checkpoint)
    gen = bundle.cfg.generation
    if args.fusion_step is not None:
        gen = replace(gen, fusion_step=args.fusion_step)
    if args.fusion_ratio is not None:
        gen = replace(gen, fusion_ratio=args.fusion_ratio)
    if args.temperature is not None:
        gen = replace(gen, temperature=args.temperature)
    if args.cfg_scale is not None:
        gen = replace(gen, cfg_scale=args.cfg_scale)
    base_seed = _env_seed()
    if base_seed is None:
        base_seed = gen.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    import torch

    with torch.no_grad():
        cond, tag = parse_condition(args.condition, bundle)
    for k in range(args.seeds):
        run = replace(gen, seed=base_seed + k)
        tokens, trace = mar_generate(cond, bundle, run)
        points = detokenize(tokens, bundle.cfg.tokenizer)
        name = f"{tag}__s{run.seed}"
        write_ply(out / f"{name}.ply", points)
        if args.trace:
            trace.write_jsonl(out / f"{name}.trace.jsonl")
        print(f"wrote {out / (name + '.ply')}")
    return EXIT_OK


def _group_generated(gen_dir: Path) -> dict:
    """Map condition id -> list of (view_tag, path) from generated PLY names."""
    groups: dict = {}
    for p in sorted(gen_dir.glob("*.ply")):
        cond_id = p.stem.split("__")[0]
        groups.setdefault(cond_id, []).append(p)
    return groups


def cmd_eval(args) -> int:
    manifest = load_manifest(args.reference)
    ref_clouds = {
        e.shape_id: read_ply(manifest.root / e.ply_path) for e in manifest.entries
    }
    gen_dir = Path(args.generated)
    groups = _group_generated(gen_dir)
    if not groups:
        raise ConfigError(f"no .ply files found in {gen_dir}")

    def base_shape(cond_id: str) -> str:
        return cond_id.split("_v")[0] if "_v" in cond_id else cond_id

    pairs = []
    cross_groups: dict = {}
    fid_gen = []
    fid_ref = []
    for cond_id, paths in groups.items():
        shape_id = base_shape(cond_id)
        if shape_id not in ref_clouds:
            raise ConfigError(f"generated id {cond_id!r} has no reference shape")
        ref = ref_clouds[shape_id]
        for p in paths:
            gen = read_ply(p)
            pairs.append((p.stem, gen, ref))
            fid_gen.append(gen)
            if "_v" in cond_id:
                cross_groups.setdefault(shape_id, []).append(gen)
    fid_ref = list(ref_clouds.values())

    fmap = metrics.FeatureMap(dim=args.fid_dim, seed=args.fid_seed)
    report = metrics.evaluate_pairs(
        pairs,
        cross_view_groups=cross_groups or None,
        fid_pair=(fid_gen, fid_ref) if args.fid else None,
        fmap=fmap,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    out.with_suffix(".txt").write_text(report.to_text_table() + "\n")
    print(report.to_text_table())
    return EXIT_OK


def _sweep_rows(bundle, items, seeds, base_seed, fusion_steps, fusion_ratios):
    """Paired sweep: identical seeds across cells, class-conditioned."""
    gen_base = bundle.cfg.generation
    rows = {"fusion_step_sweep": [], "fusion_ratio_sweep": []}
    cells = [(("fusion_step_sweep"), s, gen_base.fusion_ratio) for s in fusion_steps]
    cells += [(("fusion_ratio_sweep"), gen_base.fusion_step, r) for r in fusion_ratios]
    for sweep, step, ratio in cells:
        cds, emds, fss = [], [], []
        for item in items:
            cond = encode_class_condition(bundle.class_encoder, item.family, item.params)
            for k in range(seeds):
                run = replace(
                    gen_base, fusion_step=step, fusion_ratio=ratio, seed=base_seed + k
                )
                tokens, _ = mar_generate(cond, bundle, run)
                points = detokenize(tokens, bundle.cfg.tokenizer)
                cds.append(metrics.chamfer(points, item.points))
                emds.append(metrics.emd(points, item.points))
                fss.append(metrics.f_score(points, item.points))
        row = {
            "cd": float(np.mean(cds)),
            "emd": float(np.mean(emds)),
            "f_score": float(np.mean(fss)),
        }
        key = "step" if sweep == "fusion_step_sweep" else "ratio"
        rows[sweep].append({key: step if key == "step" else ratio, **row})
    return rows


def cmd_ablate(args) -> int:
    bundle = load_bundle(args.checkpoint)
    manifest = load_manifest(Path(args.data) / "manifest.jsonl")
    from .trainer import load_training_set

    items = load_training_set(manifest, bundle.cfg, split="train")
    if args.limit:
        items = items[: args.limit]
    base_seed = _env_seed()
    if base_seed is None:
        base_seed = bundle.cfg.generation.seed
    steps = [int(s) for s in args.steps.split(",") if s]
    ratios = [float(r) for r in args.ratios.split(",") if r]

    import torch

    with torch.no_grad():
        rows = _sweep_rows(bundle, items, args.seeds, base_seed, steps, ratios)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2))

    lines = [f"{'Step':<8}{'CD':>12}{'EMD':>12}{'F-Score':>12}"]
    for row in rows["fusion_step_sweep"]:
        lines.append(
            f"<={row['step']:<6}{row['cd']:>12.6f}{row['emd']:>12.6f}{row['f_score']:>12.6f}"
        )
    lines.append("")
    lines.append(f"{'Ratio':<8}{'CD':>12}{'EMD':>12}{'F-Score':>12}")
    for row in rows["fusion_ratio_sweep"]:
        lines.append(
            f"{row['ratio']:<8.1f}{row['cd']:>12.6f}{row['emd']:>12.6f}{row['f_score']:>12.6f}"
        )
    table = "\n".join(lines)
    out.with_suffix(".txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapetok",
        description="Masked autoregressive latent-token shape generation (desk scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", help="generate the synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="train the backbone or the recon adapter")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=["backbone", "recon"], default="backbone")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.jsonl)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate shapes from a condition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condition", required=True, help="image path or family:p1,p2,...")
    p.add_argument("--out", required=True)
    p.add_argument("--fusion-step", type=int, default=None, dest="fusion_step")
    p.add_argument("--fusion-ratio", type=float, default=None, dest="fusion_ratio")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--cfg-scale", type=float, default=None, dest="cfg_scale")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--trace", action="store_true", help="also write trace JSON-lines")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score generated shapes against references")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True, help="manifest.jsonl path")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--fid", action="store_true")
    p.add_argument("--fid-dim", type=int, default=32, dest="fid_dim")
    p.add_argument("--fid-seed", type=int, default=7, dest="fid_seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="fusion step/ratio sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", default="10,20,30,40")
    p.add_argument("--ratios", default="0.1,0.2,0.3,0.4")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--limit", type=int, default=0, help="cap the number of shapes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SpecificationError, CheckpointError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
