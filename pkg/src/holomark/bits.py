"""Watermark bit-string helpers: sampling and hex round-trips.

Hex convention: bit 0 is the most significant bit of the first hex digit,
so a message of length L maps to ceil(L/4) digits.
"""

from __future__ import annotations

import numpy as np
import torch


def sample_bits(rng: np.random.Generator, length: int, batch: int | None = None) -> torch.Tensor:
    """Draw i.i.d. uniform watermark bits as a float tensor of 0s and 1s."""
    shape = (length,) if batch is None else (batch, length)
    return torch.from_numpy(rng.integers(0, 2, size=shape).astype(np.float32))


def bits_to_hex(bits) -> str:
    arr = np.asarray(bits, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        return ""
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("bits must be 0/1")
    ndigits = (arr.size + 3) // 4
    padded = np.concatenate([arr, np.zeros(ndigits * 4 - arr.size, dtype=np.int64)])
    digits = []
    for i in range(ndigits):
        nibble = padded[4 * i] * 8 + padded[4 * i + 1] * 4 + padded[4 * i + 2] * 2 + padded[4 * i + 3]
        digits.append(f"{nibble:x}")
    return "".join(digits)


def hex_to_bits(hex_str: str, length: int) -> torch.Tensor:
    ndigits = (length + 3) // 4
    if len(hex_str) != ndigits:
        raise ValueError(f"expected {ndigits} hex digits for {length} bits, got {len(hex_str)}")
    out = []
    for ch in hex_str:
        nibble = int(ch, 16)
        out.extend([(nibble >> 3) & 1, (nibble >> 2) & 1, (nibble >> 1) & 1, nibble & 1])
    return torch.tensor(out[:length], dtype=torch.float32)
