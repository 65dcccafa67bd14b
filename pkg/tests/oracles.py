"""Independent oracles used by the test suite.

These stay deliberately naive (loops, enumeration, central differences) so
they share no code path with the implementations they check.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np
import torch


def chamfer_brute(a: np.ndarray, b: np.ndarray) -> float:
    def one_way(src, dst):
        total = 0.0
        for p in src:
            best = min(float(((p - q) ** 2).sum()) for q in dst)
            total += best
        return total / len(src)

    return one_way(a, b) + one_way(b, a)


def emd_brute(a: np.ndarray, b: np.ndarray) -> float:
    n = len(a)
    assert n <= 7, "factorial enumeration only"
    best = np.inf
    for perm in permutations(range(n)):
        cost = sum(float(np.linalg.norm(a[i] - b[perm[i]])) for i in range(n)) / n
        best = min(best, cost)
    return best


def central_diff_grad(
    f, tensor: torch.Tensor, eps: float = 1e-5, max_coords: int = 200, seed: int = 0
) -> tuple[torch.Tensor, np.ndarray]:
    """Central finite differences of scalar f() w.r.t. selected coords of tensor.

    Perturbs the tensor in place under no_grad; returns (grads, coord_indices)
    for a deterministic subsample of at most max_coords flat coordinates.
    """
    flat = tensor.data.reshape(-1)
    n = flat.numel()
    if n <= max_coords:
        coords = np.arange(n)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(n, max_coords, replace=False))
    grads = torch.zeros(len(coords), dtype=torch.float64)
    with torch.no_grad():
        for j, c in enumerate(coords):
            orig = flat[c].item()
            flat[c] = orig + eps
            hi = float(f())
            flat[c] = orig - eps
            lo = float(f())
            flat[c] = orig
            grads[j] = (hi - lo) / (2.0 * eps)
    return grads, coords


def max_rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    a = a.double()
    b = b.double()
    denom = (a.abs() + b.abs()).clamp_min(1e-6)
    return float(((a - b).abs() / denom).max())


def check_gradients(
    loss_fn, tensors: list[torch.Tensor], eps: float = 1e-5, max_coords: int = 120
) -> float:
    """Compare autograd gradients of loss_fn() against central differences.

    Returns the worst relative error over all checked coordinates. tensors
    must be leaf parameters of the double-precision graph behind loss_fn.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=False)
    worst = 0.0
    for tensor, grad in zip(tensors, grads):
        fd, coords = central_diff_grad(loss_fn, tensor, eps=eps, max_coords=max_coords)
        analytic = grad.detach().reshape(-1)[coords]
        worst = max(worst, max_rel_err(analytic, fd))
    return worst
