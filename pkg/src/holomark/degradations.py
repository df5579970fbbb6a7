"""Evaluation-time image degradations: noise, JPEG, resizing, color shifts.

Every attack maps a [0,1] float image batch to a [0,1] batch of the same
shape. The JPEG round trip is implemented internally (YCbCr 4:2:0, 8x8 DCT,
libjpeg-style quality scaling of the standard tables) so results are
bit-reproducible across platforms. Attacks are applied only at evaluation;
training never sees them.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .configs import AttackSpec

# Standard baseline quantization tables (luminance / chrominance).
QUANT_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

QUANT_CHROMA = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def _check_image(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        img = img[None]
    if img.dim() != 4:
        raise ValueError(f"expected 3D or 4D image tensor, got {img.dim()}D")
    return img


def gaussian_noise(img: torch.Tensor, sigma_255: float, seed: int = 0) -> torch.Tensor:
    """Additive Gaussian noise with sigma given on the 0-255 scale."""
    squeeze = img.dim() == 3
    x = _check_image(img)
    rng = np.random.default_rng(seed)
    noise = torch.from_numpy(rng.normal(0.0, sigma_255 / 255.0, size=tuple(x.shape)).astype(np.float32))
    out = (x + noise).clamp(0.0, 1.0)
    return out[0] if squeeze else out


def poisson_noise(img: torch.Tensor, peak: float = 255.0, seed: int = 0) -> torch.Tensor:
    """Shot noise: sample Poisson(img * peak) / peak."""
    if peak <= 0:
        raise ValueError("peak must be > 0")
    squeeze = img.dim() == 3
    x = _check_image(img)
    rng = np.random.default_rng(seed)
    lam = x.clamp(0.0, 1.0).numpy().astype(np.float64) * peak
    out = torch.from_numpy((rng.poisson(lam) / peak).astype(np.float32)).clamp(0.0, 1.0)
    return out[0] if squeeze else out


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None].astype(np.float64)
    m = np.arange(n)[None, :].astype(np.float64)
    mat = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


_DCT8 = _dct_matrix(8)


def dct2_blocks(blocks: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over trailing 8x8 axes."""
    return _DCT8 @ blocks @ _DCT8.T


def idct2_blocks(coeffs: np.ndarray) -> np.ndarray:
    return _DCT8.T @ coeffs @ _DCT8


def quality_scaled_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Scale the baseline tables by the libjpeg quality rule, clamped to [1,255]."""
    if not 10 <= quality <= 95:
        raise ValueError(f"JPEG quality {quality} outside [10,95]")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    luma = np.clip(np.floor((QUANT_LUMA * scale + 50.0) / 100.0), 1, 255)
    chroma = np.clip(np.floor((QUANT_CHROMA * scale + 50.0) / 100.0), 1, 255)
    return luma, chroma


def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _pad_to_multiple(plane: np.ndarray, mult: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def _code_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """DCT -> quantize -> dequantize -> inverse DCT on one level-shifted plane."""
    h, w = plane.shape
    padded = _pad_to_multiple(plane, 8)
    hp, wp = padded.shape
    blocks = padded.reshape(hp // 8, 8, wp // 8, 8).transpose(0, 2, 1, 3)
    coeffs = dct2_blocks(blocks)
    quant = np.round(coeffs / table) * table
    rec = idct2_blocks(quant)
    out = rec.transpose(0, 2, 1, 3).reshape(hp, wp)
    return out[:h, :w]


def jpeg(img: torch.Tensor, quality: int) -> torch.Tensor:
    """Baseline-JPEG round trip: 4:2:0 chroma subsampling, 8x8 DCT, quality-scaled tables."""
    luma_t, chroma_t = quality_scaled_tables(quality)
    squeeze = img.dim() == 3
    x = _check_image(img)
    if x.shape[1] != 3:
        raise ValueError("JPEG round trip expects 3-channel RGB input")
    out = torch.empty_like(x)
    for i in range(x.shape[0]):
        rgb = x[i].permute(1, 2, 0).numpy().astype(np.float64) * 255.0
        ycc = _rgb_to_ycbcr(rgb)
        y = ycc[..., 0] - 128.0
        # 4:2:0: average 2x2 neighborhoods of each chroma plane.
        h, w = y.shape
        cb = _pad_to_multiple(ycc[..., 1], 2)
        cr = _pad_to_multiple(ycc[..., 2], 2)
        cb = cb.reshape(cb.shape[0] // 2, 2, cb.shape[1] // 2, 2).mean(axis=(1, 3)) - 128.0
        cr = cr.reshape(cr.shape[0] // 2, 2, cr.shape[1] // 2, 2).mean(axis=(1, 3)) - 128.0
        y_rec = _code_plane(y, luma_t) + 128.0
        cb_rec = _code_plane(cb, chroma_t) + 128.0
        cr_rec = _code_plane(cr, chroma_t) + 128.0
        cb_up = np.repeat(np.repeat(cb_rec, 2, axis=0), 2, axis=1)[:h, :w]
        cr_up = np.repeat(np.repeat(cr_rec, 2, axis=0), 2, axis=1)[:h, :w]
        rgb_rec = _ycbcr_to_rgb(np.stack([y_rec, cb_up, cr_up], axis=-1)) / 255.0
        out[i] = torch.from_numpy(rgb_rec.astype(np.float32)).permute(2, 0, 1)
    out = out.clamp(0.0, 1.0)
    return out[0] if squeeze else out


def resize_cycle(img: torch.Tensor, scale: float) -> torch.Tensor:
    """Bilinear downscale by `scale` then bilinear upscale back to the input size."""
    if not 0.0 < scale <= 1.0:
        raise ValueError("scale must be in (0,1]")
    squeeze = img.dim() == 3
    x = _check_image(img)
    if scale == 1.0:
        return img.clone()
    h, w = x.shape[-2:]
    dh, dw = max(1, round(h * scale)), max(1, round(w * scale))
    down = F.interpolate(x, size=(dh, dw), mode="bilinear", align_corners=False)
    up = F.interpolate(down, size=(h, w), mode="bilinear", align_corners=False)
    up = up.clamp(0.0, 1.0)
    return up[0] if squeeze else up


_LUMA_WEIGHTS = torch.tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1)


def color_jitter(img: torch.Tensor, kind: str, factor: float) -> torch.Tensor:
    """Brightness, contrast, or saturation adjustment by a scalar factor."""
    squeeze = img.dim() == 3
    x = _check_image(img)
    if kind == "brightness":
        out = x * factor
    elif kind == "contrast":
        mean = (x * _LUMA_WEIGHTS).sum(dim=1, keepdim=True).mean(dim=(2, 3), keepdim=True)
        out = mean + factor * (x - mean)
    elif kind == "saturation":
        gray = (x * _LUMA_WEIGHTS).sum(dim=1, keepdim=True)
        out = gray + factor * (x - gray)
    else:
        raise ValueError(f"unknown color jitter kind {kind!r}")
    out = out.clamp(0.0, 1.0)
    return out[0] if squeeze else out


def apply_attack(img: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    spec.validate()
    if spec.kind == "identity":
        return img.clone()
    if spec.kind == "gaussian":
        return gaussian_noise(img, spec.param, spec.seed)
    if spec.kind == "poisson":
        return poisson_noise(img, spec.param, spec.seed)
    if spec.kind == "jpeg":
        return jpeg(img, int(spec.param))
    if spec.kind == "resize_cycle":
        return resize_cycle(img, spec.param)
    return color_jitter(img, spec.kind, spec.param)


def load_suite(path) -> list[AttackSpec]:
    """Read a JSON suite file: a list of {kind, param, seed} objects."""
    import json

    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ValueError("attack suite file must contain a JSON list")
    specs = []
    for entry in entries:
        unknown = set(entry) - {"kind", "param", "seed"}
        if unknown:
            raise ValueError(f"unknown attack spec keys: {sorted(unknown)}")
        spec = AttackSpec(**entry)
        spec.validate()
        specs.append(spec)
    return specs


def run_suite(autoencoder, forensic, images: torch.Tensor, specs: list[AttackSpec],
              splice_cfg=None, seed: int = 0) -> list[dict]:
    """Evaluate forensic accuracy on spliced images under each degradation.

    Returns one aggregated row per spec: mean bit accuracy, F1, IoU, and AUC
    over the dataset after attacking the spliced (distributed) images.
    """
    from .configs import SpliceConfig
    from .evaluation import build_eval_samples, forensic_rows, mean_of

    splice_cfg = splice_cfg or SpliceConfig()
    samples = build_eval_samples(autoencoder, images, splice_cfg, seed)
    rows = []
    for spec in specs:
        per_image = forensic_rows(forensic, samples,
                                  attack_fn=lambda im, s=spec: apply_attack(im, s))
        rows.append({
            "attack": spec.kind,
            "param": spec.param,
            "bit_acc": mean_of(per_image, "bit_acc"),
            "f1": mean_of(per_image, "f1"),
            "iou": mean_of(per_image, "iou"),
            "auc": mean_of(per_image, "auc"),
        })
    return rows
