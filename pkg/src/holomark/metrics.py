"""Evaluation metrics: fidelity (PSNR/SSIM), watermark bit accuracy, and
pixel-level localization scores (F1/IoU/AUC), plus grouped aggregation.

Conventions (documented because the numbers depend on them):
  * PSNR of identical images is capped at 100 dB.
  * Probabilities are thresholded at 0.5; a logit of exactly 0 counts as a
    positive prediction.
  * F1 = IoU = 1 when both prediction and ground truth are empty.
  * AUC is rank-based (Mann-Whitney, ties 0.5), computed per image over at
    most 10^5 pixels subsampled with a fixed seed; a single-class mask has
    no defined AUC and is reported as absent.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

PSNR_CAP_DB = 100.0
AUC_PIXEL_CAP = 100_000
AUC_SUBSAMPLE_SEED = 0

CSV_COLUMNS = ("run_id", "split", "attack", "param", "psnr", "ssim", "bit_acc", "f1", "auc", "iou")


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over [0,1] images."""
    a_np = _to_numpy(a).astype(np.float64)
    b_np = _to_numpy(b).astype(np.float64)
    if a_np.shape != b_np.shape:
        raise ValueError(f"shape mismatch {a_np.shape} vs {b_np.shape}")
    mse = float(np.mean((a_np - b_np) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-coords.pow(2) / (2 * sigma * sigma))
    kernel = torch.outer(g, g)
    return kernel / kernel.sum()


def ssim(a, b, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid Gaussian windows, per channel, on [0,1] images."""
    x = torch.as_tensor(_to_numpy(a), dtype=torch.float64)
    y = torch.as_tensor(_to_numpy(b), dtype=torch.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 2:
        x, y = x[None, None], y[None, None]
    elif x.dim() == 3:
        x, y = x[None], y[None]
    b_, c, h, w = x.shape
    if h < window_size or w < window_size:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {window_size}")
    kernel = _gaussian_window(window_size, sigma).expand(c, 1, window_size, window_size)

    def filt(t):
        return F.conv2d(t, kernel, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    sig_xx = filt(x * x) - mu_x * mu_x
    sig_yy = filt(y * y) - mu_y * mu_y
    sig_xy = filt(x * y) - mu_x * mu_y
    c1, c2 = k1 * k1, k2 * k2
    num = (2 * mu_x * mu_y + c1) * (2 * sig_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sig_xx + sig_yy + c2)
    return float((num / den).mean())


def bit_accuracy(bits, logits) -> float:
    """Percentage of bits recovered after thresholding sigmoid(logit) at 0.5."""
    w = _to_numpy(bits).reshape(-1)
    z = _to_numpy(logits).reshape(-1)
    if w.shape != z.shape:
        raise ValueError(f"bit length mismatch {w.shape} vs {z.shape}")
    pred = (z >= 0.0).astype(np.float64)
    return float((pred == w).mean() * 100.0)


def f1_iou(mask, logits) -> tuple[float, float]:
    """Pixel-level F1 and IoU with the prediction binarized at probability 0.5."""
    m = _to_numpy(mask).reshape(-1) >= 0.5
    pred = _to_numpy(logits).reshape(-1) >= 0.0
    if m.shape != pred.shape:
        raise ValueError("mask/logit size mismatch")
    tp = float(np.sum(pred & m))
    fp = float(np.sum(pred & ~m))
    fn = float(np.sum(~pred & m))
    if tp + fp + fn == 0.0:
        return 1.0, 1.0
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    iou = tp / (tp + fp + fn)
    assert abs(iou - f1 / (2.0 - f1)) < 1e-9
    return f1, iou


def auc(mask, scores) -> float | None:
    """Rank-based ROC AUC over pixels; None for a single-class mask."""
    labels = (_to_numpy(mask).reshape(-1) >= 0.5)
    s = _to_numpy(scores).reshape(-1).astype(np.float64)
    if labels.shape != s.shape:
        raise ValueError("mask/score size mismatch")
    if labels.size > AUC_PIXEL_CAP:
        rng = np.random.default_rng(AUC_SUBSAMPLE_SEED)
        idx = rng.choice(labels.size, size=AUC_PIXEL_CAP, replace=False)
        labels, s = labels[idx], s[idx]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(s)
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass
class FidelityReport:
    psnr_db: float
    ssim: float


@dataclass
class LocalizationReport:
    f1: float
    auc: float | None
    iou: float
    threshold: float = 0.5


def aggregate(reports: list[dict], group_keys: tuple[str, ...]) -> list[dict]:
    """Mean of every numeric field per group, preserving first-seen group order.

    None values (e.g. undefined AUC) are excluded from their column's mean;
    a group where every value is None keeps None.
    """
    groups: dict[tuple, list[dict]] = {}
    for rep in reports:
        key = tuple(rep.get(k) for k in group_keys)
        groups.setdefault(key, []).append(rep)
    rows = []
    for key, members in groups.items():
        row = dict(zip(group_keys, key))
        numeric = [k for k in members[0] if k not in group_keys]
        for col in numeric:
            vals = [m[col] for m in members if isinstance(m.get(col), (int, float))]
            row[col] = float(np.mean(vals)) if vals else None
        rows.append(row)
    return rows


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def rows_to_csv(rows: list[dict], columns=CSV_COLUMNS, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def rows_to_json(rows: list[dict], meta: dict | None = None) -> str:
    payload = {"meta": meta or {}, "rows": rows}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
