"""Toy convolutional autoencoder with togglable watermark adapters.

The encoder/decoder pair is pretrained once on a reconstruction objective and
then frozen. Watermark embedding happens through per-decoder-block residual
adapters: each adapter embeds the bit string with two fully connected layers,
tiles the embedding across the feature map, fuses it with the block output
through two conv blocks, and adds the result back to the block output. The
final conv of every adapter is zero-initialized, so an untrained or disabled
adapter stack leaves the decode path bit-identical to the plain decoder.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .configs import AutoencoderConfig


def _gn(channels: int, groups: int = 8) -> nn.GroupNorm:
    return nn.GroupNorm(min(groups, channels), channels)


class ConvBlock(nn.Module):
    """3x3 conv + group norm + SiLU."""

    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm = _gn(c_out)
        self.act = nn.SiLU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class Encoder(nn.Module):
    """Maps a [0,1] image to the latent posterior mean (no sampling)."""

    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        w = cfg.base_width
        self.stages = nn.Sequential(
            ConvBlock(3, w),
            ConvBlock(w, 2 * w, stride=2),
            ConvBlock(2 * w, 4 * w, stride=2),
            ConvBlock(4 * w, 4 * w),
        )
        self.to_latent = nn.Conv2d(4 * w, cfg.latent_channels, 3, padding=1)

    def forward(self, image):
        return self.to_latent(self.stages(image))


class WatermarkAdapter(nn.Module):
    """Residual bit-injection branch attached after one decoder block.

    out = feature + conv_block_2(conv_block_1(cat(feature, tile(fc2(act(fc1(2W-1)))))))
    with conv_block_2 zero-initialized so the branch is an exact no-op at init.
    """

    def __init__(self, bit_length: int, channels: int, adapter_dim: int = 256):
        super().__init__()
        if adapter_dim < bit_length:
            raise ValueError("adapter_dim must be >= bit_length")
        self.bit_length = bit_length
        self.channels = channels
        self.fc1 = nn.Linear(bit_length, adapter_dim)
        self.fc2 = nn.Linear(adapter_dim, channels)
        # Initialize the embedding as a per-bit channel code: fc1 routes bit l
        # to hidden unit l (identity rows), fc2 gives each bit a random sign
        # signature across channels. Keeps every bit linearly separable in the
        # embedding from the first step, which is what lets the joint loop
        # lock on quickly; training is free to reshape it.
        with torch.no_grad():
            self.fc1.weight.mul_(0.02)
            self.fc1.bias.zero_()
            self.fc1.weight[:bit_length, :bit_length] += torch.eye(bit_length)
            signatures = torch.where(torch.rand(channels, bit_length) < 0.5, -1.0, 1.0)
            self.fc2.weight.mul_(0.02)
            self.fc2.bias.zero_()
            self.fc2.weight[:, :bit_length] += signatures / math.sqrt(channels)
        self.conv_block_1 = nn.Sequential(
            nn.Conv2d(2 * channels, channels, 3, padding=1),
            _gn(channels),
            nn.SiLU(),
        )
        self.conv_block_2 = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.zeros_(self.conv_block_2.weight)
        nn.init.zeros_(self.conv_block_2.bias)

    def forward(self, feature: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        if feature.shape[1] != self.channels:
            raise ValueError(f"adapter expects {self.channels} channels, got {feature.shape[1]}")
        if bits.shape[-1] != self.bit_length:
            raise ValueError(f"adapter expects {self.bit_length} bits, got {bits.shape[-1]}")
        if bits.dim() == 1:
            bits = bits[None].expand(feature.shape[0], -1)
        signed = bits * 2.0 - 1.0
        # tanh keeps the code symmetric in the bit sign (zero-mean embedding)
        emb = self.fc2(torch.tanh(self.fc1(signed)))
        tiled = emb[:, :, None, None].expand(-1, -1, feature.shape[2], feature.shape[3])
        fused = torch.cat([feature, tiled], dim=1)
        return feature + self.conv_block_2(self.conv_block_1(fused))


class Decoder(nn.Module):
    """Plain decoder; adapters are slotted in between blocks by the owner."""

    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        w = cfg.base_width
        self.in_conv = nn.Conv2d(cfg.latent_channels, 4 * w, 3, padding=1)
        self.blocks = nn.ModuleList([
            ConvBlock(4 * w, 4 * w),
            ConvBlock(2 * w, 2 * w),
            ConvBlock(w, w),
        ])
        self.ups = nn.ModuleList([
            nn.Conv2d(4 * w, 2 * w, 3, padding=1),
            nn.Conv2d(2 * w, w, 3, padding=1),
        ])
        self.out_conv = nn.Conv2d(w, 3, 3, padding=1)
        self.block_channels = (4 * w, 2 * w, w)

    def forward(self, z, adapters=None, bits=None):
        h = self.in_conv(z)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if adapters is not None:
                h = adapters[i](h, bits)
            if i < len(self.ups):
                h = self.ups[i](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(h)


class WatermarkAutoencoder(nn.Module):
    """Encoder + decoder + adapter stack with an on/off watermark toggle."""

    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.adapters = nn.ModuleList([
            WatermarkAdapter(cfg.bit_length, c, cfg.adapter_dim)
            for c in self.decoder.block_channels
        ])
        self.adapters_enabled = True

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        """Image -> latent posterior mean. H and W must divide the downsample factor."""
        h, w = image.shape[-2:]
        d = self.cfg.downsample
        if h % d or w % d:
            raise ValueError(f"image size {h}x{w} not divisible by downsample factor {d}")
        if image.dim() == 3:
            return self.encoder(image[None])[0]
        return self.encoder(image)

    def decode_plain(self, latent: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        """Vanilla decode; adapters never touch this path."""
        squeeze = latent.dim() == 3
        z = latent[None] if squeeze else latent
        out = self.decoder(z)
        if clamp:
            out = out.clamp(0.0, 1.0)
        return out[0] if squeeze else out

    def decode_watermarked(self, latent: torch.Tensor, bits: torch.Tensor,
                           clamp: bool = True) -> torch.Tensor:
        """Decode with the adapter stack injecting `bits`.

        With adapters disabled this is exactly decode_plain (the multiplexing
        toggle), and at zero-init the two paths agree bit-exactly as well.
        """
        if bits.shape[-1] != self.cfg.bit_length:
            raise ValueError(f"expected {self.cfg.bit_length} bits, got {bits.shape[-1]}")
        if not self.adapters_enabled:
            return self.decode_plain(latent, clamp=clamp)
        squeeze = latent.dim() == 3
        z = latent[None] if squeeze else latent
        out = self.decoder(z, adapters=self.adapters, bits=bits)
        if clamp:
            out = out.clamp(0.0, 1.0)
        return out[0] if squeeze else out

    def reconstruct(self, image: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        return self.decode_plain(self.encode(image), clamp=clamp)

    def base_parameter_names(self) -> list[str]:
        """Parameter paths that stay frozen during joint training."""
        return [n for n, _ in self.named_parameters()
                if n.startswith("encoder.") or n.startswith("decoder.")]

    def adapter_parameters(self):
        return self.adapters.parameters()

    def freeze_base(self) -> None:
        for name, p in self.named_parameters():
            if name.startswith("encoder.") or name.startswith("decoder."):
                p.requires_grad_(False)
