"""Numerical helpers for the test suite: central finite differences."""

from __future__ import annotations

import torch


def central_diff_grad(fn, tensor: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Central-difference gradient of a scalar function w.r.t. every entry."""
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn())
        flat[i] = orig - h
        down = float(fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor,
                  floor: float = 1e-6) -> float:
    """Worst-case relative error with a floor to ignore ~zero/zero coordinates."""
    diff = (analytic - numeric).abs()
    scale = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()),
                          torch.full_like(diff, floor))
    return float((diff / scale).max())


def check_grad_wrt_params(loss_fn, params: list[torch.Tensor], n_coords: int = 10,
                          h: float = 1e-4, seed: int = 0) -> float:
    """Compare autograd gradients against central differences on random coordinates.

    `loss_fn` must rebuild the scalar loss from the current parameter values
    every call. Returns the worst relative error over the sampled coordinates.
    """
    gen = torch.Generator().manual_seed(seed)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    worst = 0.0
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    for _ in range(n_coords):
        flat_idx = int(torch.randint(total, (1,), generator=gen))
        p_idx = 0
        while flat_idx >= sizes[p_idx]:
            flat_idx -= sizes[p_idx]
            p_idx += 1
        param = params[p_idx]
        flat = param.detach().reshape(-1)
        orig = flat[flat_idx].item()
        with torch.no_grad():
            flat[flat_idx] = orig + h
            up = float(loss_fn())
            flat[flat_idx] = orig - h
            down = float(loss_fn())
            flat[flat_idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = float(grads[p_idx].reshape(-1)[flat_idx])
        scale = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst
