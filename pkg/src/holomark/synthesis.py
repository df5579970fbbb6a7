"""Self-supervised tampered-sample synthesis.

Builds (spliced image, mask) training pairs without annotations: a binary
mask selects a region that is replaced with non-watermarked content, either
the original image (emulating manual edits) or the autoencoder
reconstruction (emulating generative forgeries).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .bits import bits_to_hex
from .configs import SpliceConfig

MAX_MASK_RETRIES = 100


class MaskCoverageError(RuntimeError):
    """Raised when no mask inside the coverage range was found within the retry cap."""


@dataclass
class TrainingSample:
    spliced: torch.Tensor      # 3xHxW, [0,1]
    mask: torch.Tensor         # 1xHxW, {0,1}
    bits: torch.Tensor         # L
    source_kind: str           # "original" | "reconstruction"


def _box_mask(h: int, w: int, target_cov: float, rng: np.random.Generator) -> np.ndarray:
    aspect = rng.uniform(0.5, 2.0)
    bh = int(round(np.sqrt(target_cov * h * w * aspect)))
    bw = int(round(np.sqrt(target_cov * h * w / aspect)))
    bh, bw = min(max(bh, 1), h), min(max(bw, 1), w)
    top = int(rng.integers(0, h - bh + 1))
    left = int(rng.integers(0, w - bw + 1))
    mask = np.zeros((h, w), dtype=np.float32)
    mask[top:top + bh, left:left + bw] = 1.0
    return mask


def _blob_mask(h: int, w: int, target_cov: float, rng: np.random.Generator) -> np.ndarray:
    """Union of 1-4 random ellipses, smoothed and re-thresholded into one soft-edged blob."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    n_lobes = int(rng.integers(1, 5))
    field = np.zeros((h, w), dtype=np.float32)
    # Scale lobe radii so the pre-smoothing union lands near the target coverage.
    base_r = np.sqrt(target_cov * h * w / (np.pi * n_lobes))
    cy0, cx0 = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.2 * w, 0.8 * w)
    for _ in range(n_lobes):
        cy = np.clip(cy0 + rng.normal(0, 0.15 * h), 0, h - 1)
        cx = np.clip(cx0 + rng.normal(0, 0.15 * w), 0, w - 1)
        ry = base_r * rng.uniform(0.6, 1.5)
        rx = base_r * rng.uniform(0.6, 1.5)
        theta = rng.uniform(0, np.pi)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        field = np.maximum(field, ((u / max(rx, 1.0)) ** 2 + (v / max(ry, 1.0)) ** 2 <= 1.0).astype(np.float32))
    field = _smooth(field, sigma=max(1.0, 0.02 * min(h, w)))
    return (field >= 0.5).astype(np.float32)


def _smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(3 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float32)
    kern = np.exp(-0.5 * (xs / sigma) ** 2)
    kern /= kern.sum()
    padded = np.pad(field, radius, mode="edge")
    out = np.apply_along_axis(lambda r: np.convolve(r, kern, mode="valid"), 1, padded)
    out = np.apply_along_axis(lambda c: np.convolve(c, kern, mode="valid"), 0, out)
    return out.astype(np.float32)


def sample_mask(cfg: SpliceConfig, shape: tuple[int, int], rng: np.random.Generator) -> torch.Tensor:
    """Draw one binary tamper mask, 1xHxW, with coverage inside cfg.coverage_range.

    Hybrid strategy: blob masks (organic closed regions) with probability
    semantic_mask_prob, rectangles otherwise. Resamples until the coverage
    constraint holds, up to MAX_MASK_RETRIES draws.
    """
    h, w = shape
    lo, hi = cfg.coverage_range
    for _ in range(MAX_MASK_RETRIES):
        target = rng.uniform(lo, hi)
        if rng.random() < cfg.semantic_mask_prob:
            mask = _blob_mask(h, w, target, rng)
        else:
            mask = _box_mask(h, w, target, rng)
        cov = float(mask.mean())
        if lo <= cov <= hi:
            return torch.from_numpy(mask)[None]
    raise MaskCoverageError(
        f"no mask with coverage in [{lo},{hi}] found on a {h}x{w} grid "
        f"after {MAX_MASK_RETRIES} draws")


def splice(watermarked: torch.Tensor, clean: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Compose (1-M)*watermarked + M*clean pixel-exactly."""
    if watermarked.shape != clean.shape:
        raise ValueError(f"image shape mismatch {tuple(watermarked.shape)} vs {tuple(clean.shape)}")
    if watermarked.shape[-2:] != mask.shape[-2:]:
        raise ValueError(f"mask spatial shape {tuple(mask.shape[-2:])} does not match "
                         f"images {tuple(watermarked.shape[-2:])}")
    return (1.0 - mask) * watermarked + mask * clean


def make_training_sample(x: torch.Tensor, x_hat: torch.Tensor, y: torch.Tensor,
                         bits: torch.Tensor, cfg: SpliceConfig,
                         rng: np.random.Generator) -> TrainingSample:
    """Synthesize one tampered training pair from an aligned (X, X_hat, Y) triple.

    The spliced-in region comes from the original image when the branch draw
    u <= p_threshold (manual-edit simulation), else from the reconstruction
    (generative-forgery simulation).
    """
    mask = sample_mask(cfg, x.shape[-2:], rng)
    u = rng.random()
    if u <= cfg.p_threshold:
        source, kind = x, "original"
    else:
        source, kind = x_hat, "reconstruction"
    return TrainingSample(spliced=splice(y, source, mask), mask=mask, bits=bits, source_kind=kind)


def save_mask_png(mask: torch.Tensor, path: str | Path) -> None:
    """Persist a binary mask as single-channel 8-bit PNG (0/255)."""
    arr = (mask.detach().cpu().numpy().squeeze() >= 0.5).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def load_mask_png(path: str | Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
    return torch.from_numpy((arr >= 0.5).astype(np.float32))[None]


def append_manifest(path: str | Path, image_path: str, mask_path: str,
                    bits: torch.Tensor, source_kind: str) -> None:
    record = {
        "image_path": image_path,
        "mask_path": mask_path,
        "bits_hex": bits_to_hex(bits),
        "source_kind": source_kind,
    }
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
