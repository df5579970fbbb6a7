"""Held-out evaluation: fidelity of the watermark and forensic accuracy on
spliced (optionally degraded) images. Shared by the CLI commands, the
robustness suite, and the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import metrics
from .autoencoder import WatermarkAutoencoder
from .bits import sample_bits
from .configs import SpliceConfig
from .forensic import ForensicNetwork
from .synthesis import make_training_sample


@dataclass
class EvalSample:
    spliced: torch.Tensor
    mask: torch.Tensor
    bits: torch.Tensor
    source_kind: str


@torch.no_grad()
def watermark_pairs(ae: WatermarkAutoencoder, images: torch.Tensor, seed: int,
                    batch_size: int = 16) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Decode (plain, watermarked, bits) for every image with fresh random bits."""
    rng = np.random.default_rng([seed, 1])
    plains, marked, all_bits = [], [], []
    for start in range(0, images.shape[0], batch_size):
        batch = images[start:start + batch_size]
        z = ae.encode(batch)
        bits = sample_bits(rng, ae.cfg.bit_length, batch=batch.shape[0])
        plains.append(ae.decode_plain(z))
        marked.append(ae.decode_watermarked(z, bits))
        all_bits.append(bits)
    return torch.cat(plains), torch.cat(marked), torch.cat(all_bits)


@torch.no_grad()
def fidelity_rows(ae: WatermarkAutoencoder, images: torch.Tensor, seed: int) -> list[dict]:
    """Per-image PSNR/SSIM between the plain and watermarked decode of one latent."""
    plain, marked, _ = watermark_pairs(ae, images, seed)
    return [{"psnr": metrics.psnr(plain[i], marked[i]),
             "ssim": metrics.ssim(plain[i], marked[i])}
            for i in range(images.shape[0])]


@torch.no_grad()
def build_eval_samples(ae: WatermarkAutoencoder, images: torch.Tensor,
                       splice_cfg: SpliceConfig, seed: int,
                       tampered: bool = True) -> list[EvalSample]:
    """Watermark each image and splice in a tampered region (or none)."""
    rng = np.random.default_rng([seed, 2])
    samples = []
    plain, marked, bits = watermark_pairs(ae, images, seed)
    for i in range(images.shape[0]):
        if tampered:
            s = make_training_sample(images[i], plain[i], marked[i], bits[i],
                                     splice_cfg, rng)
            samples.append(EvalSample(s.spliced, s.mask, bits[i], s.source_kind))
        else:
            mask = torch.zeros(1, *images.shape[-2:])
            samples.append(EvalSample(marked[i], mask, bits[i], "untampered"))
    return samples


@torch.no_grad()
def forensic_rows(forensic: ForensicNetwork, samples: list[EvalSample],
                  attack_fn: Callable[[torch.Tensor], torch.Tensor] | None = None,
                  batch_size: int = 16) -> list[dict]:
    """Per-image forensic scores, optionally after degrading the spliced images."""
    rows = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        imgs = torch.stack([s.spliced for s in chunk])
        if attack_fn is not None:
            imgs = attack_fn(imgs)
        mask_logits, wm_logits = forensic(imgs)
        for i, s in enumerate(chunk):
            f1, iou = metrics.f1_iou(s.mask, mask_logits[i])
            rows.append({
                "bit_acc": metrics.bit_accuracy(s.bits, wm_logits[i]),
                "f1": f1,
                "iou": iou,
                "auc": metrics.auc(s.mask, torch.sigmoid(mask_logits[i])),
                "pred_coverage": float((mask_logits[i] >= 0.0).float().mean()),
                "source_kind": s.source_kind,
            })
    return rows


def mean_of(rows: list[dict], key: str) -> float:
    vals = [r[key] for r in rows if isinstance(r.get(key), (int, float))]
    return float(np.mean(vals)) if vals else float("nan")
