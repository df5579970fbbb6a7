"""Image I/O and the procedural training corpus.

Images travel as float tensors in [0,1], stored on disk as 8-bit RGB PNG.
The synthetic corpus mixes gradients, smooth noise fields, geometric shapes,
and stripe textures so the toy autoencoder has varied but learnable content.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, PngImagePlugin

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def list_images(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"image folder not found: {folder}")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def load_image(path: str | Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def save_image(tensor: torch.Tensor, path: str | Path, metadata: dict | None = None) -> None:
    arr = (tensor.detach().clamp(0, 1).cpu().numpy() * 255.0).round().astype(np.uint8)
    img = Image.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    info = None
    if metadata:
        info = PngImagePlugin.PngInfo()
        for k, v in metadata.items():
            info.add_text(str(k), str(v))
    img.save(path, pnginfo=info)


def load_folder(folder: str | Path, limit: int | None = None) -> torch.Tensor:
    paths = list_images(folder)
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise ValueError(f"no images found in {folder}")
    return torch.stack([load_image(p) for p in paths])


def _smooth_field(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(0, 1, size=(3, cells, cells)).astype(np.float32)
    t = torch.from_numpy(coarse)[None]
    up = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear",
                                         align_corners=True)
    return up[0].numpy()


def _gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-6)
    c0 = rng.uniform(0, 1, size=3).astype(np.float32)
    c1 = rng.uniform(0, 1, size=3).astype(np.float32)
    return c0[:, None, None] + ramp[None] * (c1 - c0)[:, None, None]


def _radial(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    cy, cx = rng.uniform(0.25, 0.75, size=2) * size
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / size
    r = np.clip(r / max(r.max(), 1e-6), 0, 1)
    c0 = rng.uniform(0, 1, size=3).astype(np.float32)
    c1 = rng.uniform(0, 1, size=3).astype(np.float32)
    return c0[:, None, None] + r[None] * (c1 - c0)[:, None, None]


def _add_shapes(img: np.ndarray, rng: np.random.Generator) -> None:
    # soft (anti-aliased) edges: ~1.5 px transition
    size = img.shape[1]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    edge = 1.5
    for _ in range(int(rng.integers(1, 5))):
        color = rng.uniform(0, 1, size=3).astype(np.float32)
        alpha = rng.uniform(0.6, 1.0)
        if rng.random() < 0.5:
            h = int(rng.integers(size // 8, size // 2))
            w = int(rng.integers(size // 8, size // 2))
            top = int(rng.integers(0, size - h))
            left = int(rng.integers(0, size - w))
            sy = np.clip((yy - top + 0.5) / edge, 0, 1) * np.clip((top + h - 0.5 - yy) / edge, 0, 1)
            sx = np.clip((xx - left + 0.5) / edge, 0, 1) * np.clip((left + w - 0.5 - xx) / edge, 0, 1)
            soft = sy * sx
        else:
            cy, cx = rng.uniform(0.15, 0.85, size=2) * size
            r = rng.uniform(size / 10, size / 4)
            d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            soft = np.clip((r - d) / edge + 0.5, 0, 1)
        blend = (alpha * soft)[None]
        img *= (1 - blend)
        img += blend * color[:, None, None]


def _add_stripes(img: np.ndarray, rng: np.random.Generator) -> None:
    size = img.shape[1]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2, 8) * 2 * np.pi / size
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    amp = rng.uniform(0.05, 0.2)
    img += amp * (wave[None] - 0.5)


def synthetic_images(count: int, size: int = 64, seed: int = 0) -> torch.Tensor:
    """Generate a deterministic corpus of (count, 3, size, size) images in [0,1]."""
    master = np.random.default_rng(seed)
    children = master.spawn(count)
    out = np.empty((count, 3, size, size), dtype=np.float32)
    for i, rng in enumerate(children):
        style = rng.random()
        if style < 0.35:
            img = _gradient(rng, size)
        elif style < 0.6:
            img = _radial(rng, size)
        else:
            img = _smooth_field(rng, size, cells=int(rng.integers(3, 7)))
        _add_shapes(img, rng)
        if rng.random() < 0.4:
            _add_stripes(img, rng)
        out[i] = np.clip(img, 0.0, 1.0)
    return torch.from_numpy(out)


def generate_corpus(out_dir: str | Path, count: int, size: int = 64, seed: int = 0) -> list[Path]:
    """Write a synthetic corpus to disk as PNGs named img_00000.png etc."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = synthetic_images(count, size, seed)
    paths = []
    for i in range(count):
        path = out_dir / f"img_{i:05d}.png"
        save_image(images[i], path)
        paths.append(path)
    return paths
