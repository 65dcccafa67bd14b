"""Conditional 3D shape generation with masked-autoregressive latent token diffusion."""

from .backbone import MaskedAutoencoder, MaskPlan, mae_forward, sample_mask_plan
from .condition import (
    ClassConditionEncoder,
    ConditionTokens,
    ImageConditionEncoder,
    PrefixAdapter,
    encode_class_condition,
    encode_image_condition,
    prefix_forward,
)
from .config import (
    ExperimentConfig,
    GenerationConfig,
    config_hash,
    load_config,
    resolve,
)
from .data_synth import (
    DatasetManifest,
    PointCloudShape,
    ShapeSpec,
    SilhouetteImage,
    build_dataset,
    generate_shape,
    load_manifest,
    render_silhouette,
)
from .diffusion import (
    DenoiseNet,
    DiffusionSchedule,
    build_schedule,
    denoise_predict,
    diffusion_loss,
    q_sample,
    token_ddpm_sample,
)
from .errors import CheckpointError, ConfigError, NumericalError, SpecificationError
from .metrics import chamfer, cross_view_consistency, emd, f_score, toy_fid
from .recon import ReconAdapter, recon_forward, recon_loss
from .sampler import BlendSchedule, GenerationTrace, blend_tokens, mar_generate
from .tokenizer import TokenizerConfig, detokenize, tokenize
from .trainer import (
    ModelBundle,
    build_bundle,
    load_bundle,
    save_bundle,
    train_backbone,
    train_recon,
)

__version__ = "0.1.0"
