"""Point cloud <-> latent token conversion.

Shape tokens are raw xyz coordinates: each token concatenates the
coordinates of ``group_size`` consecutive points taken in a canonical
lexicographic order, so a cloud of P points becomes a (P / g, 3 * g)
token matrix. With g = 1 every point is its own 3-d token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class TokenizerConfig:
    """Grouping scheme mapping a point cloud onto a fixed token grid."""

    group_size: int = 1

    def token_dim(self) -> int:
        return 3 * self.group_size

    def n_tokens(self, n_points: int) -> int:
        if n_points % self.group_size != 0:
            raise ConfigError(
                f"point count {n_points} not divisible by group size {self.group_size}"
            )
        return n_points // self.group_size


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Sort points lexicographically by (x, y, z) and return the sorted copy."""
    idx = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return points[idx]


def tokenize(points: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
    """Convert an (P, 3) cloud into an (n, d) token matrix.

    Points are put in canonical lexicographic order first so the token
    sequence is a pure function of the point *set*.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ConfigError(f"expected (P, 3) points, got {points.shape}")
    if np.abs(points).max(initial=0.0) > 1.0:
        raise ConfigError("coordinates must lie in [-1, 1] before tokenizing")
    n = cfg.n_tokens(points.shape[0])
    ordered = canonical_order(points)
    return ordered.reshape(n, cfg.token_dim())


def detokenize(tokens: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
    """Split (n, d) tokens back into an (n * g, 3) cloud, clamped to [-1, 1]."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != cfg.token_dim():
        raise ConfigError(
            f"expected token dim {cfg.token_dim()}, got shape {tokens.shape}"
        )
    points = tokens.reshape(-1, 3)
    return np.clip(points, -1.0, 1.0)
