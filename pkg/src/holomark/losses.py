"""Training objective: similarity, watermark BCE, and tamper (WBCE + Dice) terms.

All losses take raw logits where a prediction is involved; sigmoid and
clamping happen inside so callers never pass pre-squashed probabilities.
Every function returns a differentiable scalar tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .configs import LossConfig

PROB_EPS = 1e-7
DICE_EPS = 1e-6
PYRAMID_LEVELS = 3


def pyramid_l1(a: torch.Tensor, b: torch.Tensor, levels: int = PYRAMID_LEVELS) -> torch.Tensor:
    """Sum of mean-L1 distances over successively mean-pooled copies.

    Stands in for a learned perceptual metric: each 2x mean-pool level compares
    progressively coarser structure. A constant offset contributes its
    magnitude once per level.
    """
    total = a.new_zeros(())
    x, y = a, b
    for _ in range(levels):
        if x.shape[-1] < 2 or x.shape[-2] < 2:
            break  # image too small to pool further
        x = F.avg_pool2d(x, 2)
        y = F.avg_pool2d(y, 2)
        total = total + (x - y).abs().mean()
    return total


def sim_loss(x_hat: torch.Tensor, y: torch.Tensor, cfg: LossConfig, ps_fn=None) -> torch.Tensor:
    """Mean-L1 plus perceptual-similarity distance between paired decodes."""
    if x_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(y.shape)}")
    if cfg.ps_backend == "external":
        if ps_fn is None:
            raise ValueError("ps_backend='external' requires a ps_fn callable")
        ps = ps_fn(x_hat, y)
    else:
        ps = pyramid_l1(x_hat, y)
    return (x_hat - y).abs().mean() + ps


def _safe_logs(logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """log(p) and log(1-p) with each probability floored at eps.

    Flooring each side separately (rather than clamping p into [eps, 1-eps])
    keeps a saturated correct prediction at ~zero loss while still making
    log(0) impossible.
    """
    p = torch.sigmoid(logits)
    return p.clamp_min(PROB_EPS).log(), (1.0 - p).clamp_min(PROB_EPS).log()


def wm_loss(bits: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over the message bits."""
    if bits.shape != logits.shape:
        raise ValueError(f"bit length mismatch {tuple(bits.shape)} vs {tuple(logits.shape)}")
    log_p, log_q = _safe_logs(logits)
    return -(bits * log_p + (1.0 - bits) * log_q).mean()


def wbce_loss(mask: torch.Tensor, logits: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Class-weighted BCE over mask pixels; lambda1 weights foreground, lambda2 background."""
    if mask.shape != logits.shape:
        raise ValueError(f"shape mismatch {tuple(mask.shape)} vs {tuple(logits.shape)}")
    log_p, log_q = _safe_logs(logits)
    return -(cfg.lambda1 * mask * log_p + cfg.lambda2 * (1.0 - mask) * log_q).mean()


def dice_loss(mask: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Soft Dice loss, averaged per sample.

    When both the mask and the prediction are empty the guarded value is 1;
    the training pipeline never emits empty masks, so that branch is
    exercised only by tests.
    """
    if mask.shape != logits.shape:
        raise ValueError(f"shape mismatch {tuple(mask.shape)} vs {tuple(logits.shape)}")
    p = torch.sigmoid(logits)
    dims = tuple(range(1, mask.dim())) if mask.dim() > 1 else (0,)
    inter = (mask * p).sum(dim=dims)
    denom = mask.pow(2).sum(dim=dims) + p.pow(2).sum(dim=dims)
    return (1.0 - 2.0 * inter / (denom + DICE_EPS)).mean()


def tamper_loss(mask: torch.Tensor, logits: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    return cfg.lambda0 * wbce_loss(mask, logits, cfg) + (1.0 - cfg.lambda0) * dice_loss(mask, logits)


@dataclass
class LossReport:
    """Per-step scalar summary of every objective component."""

    sim: float
    wm: float
    wbce: float
    dice: float
    tamper: float
    total: float

    def validate(self, lambda0: float) -> None:
        for name, value in self.__dict__.items():
            if not (value == value and abs(value) != float("inf")):
                raise ValueError(f"non-finite loss component {name}={value}")
        if abs(self.tamper - (lambda0 * self.wbce + (1.0 - lambda0) * self.dice)) > 1e-9:
            raise ValueError("tamper component does not decompose into wbce/dice")
        if abs(self.total - (self.sim + self.wm + self.tamper)) > 1e-9:
            raise ValueError("total does not equal sim + wm + tamper")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def total_loss(sim: torch.Tensor, wm: torch.Tensor, wbce: torch.Tensor,
               dice: torch.Tensor, cfg: LossConfig) -> tuple[torch.Tensor, LossReport]:
    """Unweighted sum of the three objective terms.

    Returns the differentiable total and a float report whose fields satisfy
    the decomposition invariants exactly (they are recomputed from the float
    components, not re-measured).
    """
    sim_f, wm_f = float(sim.detach()), float(wm.detach())
    wbce_f, dice_f = float(wbce.detach()), float(dice.detach())
    tamper_f = cfg.lambda0 * wbce_f + (1.0 - cfg.lambda0) * dice_f
    tamper_t = cfg.lambda0 * wbce + (1.0 - cfg.lambda0) * dice
    total_t = sim + wm + tamper_t
    report = LossReport(
        sim=sim_f,
        wm=wm_f,
        wbce=wbce_f,
        dice=dice_f,
        tamper=tamper_f,
        total=sim_f + wm_f + tamper_f,
    )
    report.validate(cfg.lambda0)
    return total_t, report
