"""Forensic network: stem, UNet backbone, expert-mixture blocks, and a
two-headed decoder predicting the tamper mask and the watermark bits.

Three expert branches see the same feature map through different lenses:
full-map self-attention (global watermark patterns), attention restricted to
small patches (local tamper traces), and attention over the 2-D Fourier
spectrum (boundary cues). A per-location soft router mixes them convexly.
All attention/FFN output projections are zero-initialized, so every expert
(and therefore the whole mixture block) starts as an identity map.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .configs import MoeConfig, UnetConfig


def _gn(channels: int, groups: int = 8) -> nn.GroupNorm:
    return nn.GroupNorm(min(groups, channels), channels)


class MultiheadSelfAttention(nn.Module):
    """Plain scaled-dot-product MHSA with a zero-initialized output projection."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        b, t, c = tokens.shape
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)

        def split(x):
            return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, t, c)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 2):
        super().__init__()
        self.fc1 = nn.Linear(dim, mult * dim)
        self.fc2 = nn.Linear(mult * dim, dim)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TokenCore(nn.Module):
    """Shared expert body: Proj -> MHSA -> FFN with one residual from the input.

    A learned position embedding over `grid` is added after the projection;
    it is bilinearly resized when invoked on a different token grid.
    """

    def __init__(self, dim: int, heads: int, grid: tuple[int, int]):
        super().__init__()
        self.grid = grid
        self.proj = nn.Linear(dim, dim)
        self.pos = nn.Parameter(torch.randn(1, grid[0] * grid[1], dim) * 0.02)
        self.attn = MultiheadSelfAttention(dim, heads)
        self.ffn = FeedForward(dim)

    def _pos_for(self, hw: tuple[int, int]) -> torch.Tensor:
        if hw == self.grid:
            return self.pos
        g_h, g_w = self.grid
        pos = self.pos.view(1, g_h, g_w, -1).permute(0, 3, 1, 2)
        pos = F.interpolate(pos, size=hw, mode="bilinear", align_corners=False)
        return pos.permute(0, 2, 3, 1).reshape(1, hw[0] * hw[1], -1)

    def forward(self, tokens: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        y = self.proj(tokens) + self._pos_for(hw)
        y = self.attn(y)
        y = self.ffn(y)
        return y + tokens


class GlobalContextExpert(nn.Module):
    """Self-attention over the full token sequence of the feature map."""

    def __init__(self, channels: int, heads: int, grid: tuple[int, int]):
        super().__init__()
        self.core = TokenCore(channels, heads, grid)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = self.core(tokens, (h, w))
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class LocalPatchExpert(nn.Module):
    """Self-attention confined to n x n sub-patches; never crosses patch borders."""

    def __init__(self, channels: int, heads: int, n: int):
        super().__init__()
        self.n = n
        self.core = TokenCore(channels, heads, (n, n))

    def effective_n(self, h: int, w: int) -> int:
        return min(self.n, h, w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        n = self.effective_n(h, w)
        if h % n or w % n:
            raise ValueError(f"feature {h}x{w} not divisible by patch size {n}")
        gh, gw = h // n, w // n
        patches = (x.view(b, c, gh, n, gw, n)
                    .permute(0, 2, 4, 3, 5, 1)
                    .reshape(b * gh * gw, n * n, c))
        patches = self.core(patches, (n, n))
        return (patches.view(b, gh, gw, n, n, c)
                       .permute(0, 5, 1, 3, 2, 4)
                       .reshape(b, c, h, w))


class SpectralExpert(nn.Module):
    """Transformer applied to the 2-D Fourier spectrum of the feature map.

    Complex coefficients travel as concatenated real/imaginary channel pairs,
    so the token width is 2c; after the residual branch they are recombined
    and inverse-transformed, keeping the real part.
    """

    def __init__(self, channels: int, heads: int, grid: tuple[int, int]):
        super().__init__()
        self.channels = channels
        self.core = TokenCore(2 * channels, heads, grid)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        spec = torch.fft.fft2(x)
        tokens = torch.cat([spec.real, spec.imag], dim=1).flatten(2).transpose(1, 2)
        tokens = self.core(tokens, (h, w))
        planes = tokens.transpose(1, 2).reshape(b, 2 * c, h, w)
        spec_out = torch.complex(planes[:, :c].contiguous(), planes[:, c:].contiguous())
        return torch.fft.ifft2(spec_out).real


class SoftRouter(nn.Module):
    """Per-location expert weights: 1x1-conv MLP followed by softmax over experts."""

    def __init__(self, channels: int, num_experts: int):
        super().__init__()
        hidden = max(channels // 2, 1)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, num_experts, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.silu(self.fc1(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=1)


_EXPERT_ORDER = ("wm", "tamp", "bound")


class MixtureBlock(nn.Module):
    """Routes the input through the enabled experts and fuses their outputs.

    With the soft router the fusion is a per-location convex combination;
    the "sum" variant (router ablation) adds the expert outputs directly.
    """

    def __init__(self, channels: int, cfg: MoeConfig, grid: tuple[int, int]):
        super().__init__()
        self.expert_names = tuple(n for n in _EXPERT_ORDER if n in cfg.experts)
        builders = {
            "wm": lambda: GlobalContextExpert(channels, cfg.heads, grid),
            "tamp": lambda: LocalPatchExpert(channels, cfg.heads, cfg.n),
            "bound": lambda: SpectralExpert(channels, cfg.heads, grid),
        }
        self.experts = nn.ModuleList([builders[n]() for n in self.expert_names])
        self.router = SoftRouter(channels, len(self.experts)) if cfg.router == "soft" else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        outs = torch.stack([expert(x) for expert in self.experts], dim=1)
        if self.router is None:
            return outs.sum(dim=1)
        weights = self.router(x)
        return (outs * weights.unsqueeze(2)).sum(dim=1)


def _bandpass_kernels(out_channels: int, in_channels: int = 3,
                      size: int = 5) -> torch.Tensor:
    """First-conv init: mostly content-suppressing filters.

    Watermark residuals are orders of magnitude below image content, so the
    first layer starts as a bank of Laplacian / difference-of-Gaussian filters
    (zero DC response) with a few identity taps to keep content pathways. The
    following GroupNorm then rescales the residual-dominated channels to unit
    variance, which is what makes a faint watermark visible to the rest of
    the network from the first step. All filters remain learnable.
    """
    coords = torch.arange(size, dtype=torch.float32) - (size - 1) / 2
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    r2 = xx * xx + yy * yy

    def gauss(sigma):
        g = torch.exp(-r2 / (2 * sigma * sigma))
        return g / g.sum()

    dog_fine = gauss(0.6) - gauss(1.2)
    dog_mid = gauss(1.0) - gauss(2.0)
    lap = torch.zeros(size, size)
    c = size // 2
    lap[c, c] = 4.0
    lap[c - 1, c] = lap[c + 1, c] = lap[c, c - 1] = lap[c, c + 1] = -1.0
    ident = torch.zeros(size, size)
    ident[c, c] = 1.0

    bank = [dog_fine, dog_mid, lap]
    weight = torch.zeros(out_channels, in_channels, size, size)
    gen = torch.Generator().manual_seed(0)
    for k in range(out_channels):
        if k < max(2, out_channels // 8):
            base = ident  # a few content taps
        else:
            base = bank[k % len(bank)]
        mix = torch.randn(in_channels, generator=gen)
        mix = mix / mix.abs().sum().clamp_min(1e-6)
        for ci in range(in_channels):
            weight[k, ci] = base * mix[ci]
        weight[k] /= weight[k].pow(2).sum().sqrt().clamp_min(1e-6)
    return weight


class Stem(nn.Module):
    """Two strided convs: 3 channels at full resolution -> C_stem at 1/4.

    The first conv starts as a band-pass filter bank (see _bandpass_kernels);
    without it the tiny watermark residual is masked by image content and the
    bit-decoding branch never finds a gradient signal.
    """

    def __init__(self, cfg: UnetConfig):
        super().__init__()
        mid = max(cfg.stem_width // 2, 8)
        conv1 = nn.Conv2d(3, mid, 5, stride=2, padding=2)
        with torch.no_grad():
            conv1.weight.copy_(_bandpass_kernels(mid))
            conv1.bias.zero_()
        self.net = nn.Sequential(
            conv1, _gn(mid), nn.SiLU(),
            nn.Conv2d(mid, cfg.stem_width, 3, stride=2, padding=1), _gn(cfg.stem_width), nn.SiLU(),
        )

    def forward(self, image):
        return self.net(image)


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = _gn(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = _gn(channels)

    def forward(self, x):
        h = F.silu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.silu(x + h)


class ForensicDecoder(nn.Module):
    """Two parallel heads on the final decoder feature.

    Mask head: two convs (reflect padding) -> 1-channel logits, bilinearly
    upsampled to the input resolution. Watermark head: two convs -> global
    average pool -> fully connected -> L logits.
    """

    def __init__(self, channels: int, bit_length: int):
        super().__init__()
        self.mask_conv1 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect")
        self.mask_norm = _gn(channels)
        self.mask_conv2 = nn.Conv2d(channels, 1, 3, padding=1, padding_mode="reflect")
        wm_width = max(4 * channels, 4 * bit_length)
        self.wm_conv1 = nn.Conv2d(channels, wm_width, 3, padding=1, padding_mode="reflect")
        self.wm_norm = _gn(wm_width)
        self.wm_conv2 = nn.Conv2d(wm_width, wm_width, 3, padding=1, padding_mode="reflect")
        self.wm_fc = nn.Linear(wm_width, bit_length)
        # Large final-layer init gives every bit a strong, near-orthogonal
        # readout direction from the first step. The embedder's message
        # gradient then has a consistent per-bit component to grow along,
        # which is what lets joint training escape the chance-level plateau.
        nn.init.normal_(self.wm_fc.weight, std=4.0 / math.sqrt(wm_width))
        nn.init.zeros_(self.wm_fc.bias)

    def forward(self, feature: torch.Tensor, out_hw: tuple[int, int]):
        m = F.silu(self.mask_norm(self.mask_conv1(feature)))
        mask_logits = self.mask_conv2(m)
        if tuple(mask_logits.shape[-2:]) != tuple(out_hw):
            mask_logits = F.interpolate(mask_logits, size=out_hw, mode="bilinear",
                                        align_corners=False)
        wm = F.silu(self.wm_norm(self.wm_conv1(feature)))
        wm = F.silu(self.wm_conv2(wm))
        wm_logits = self.wm_fc(wm.mean(dim=(2, 3)))
        return mask_logits, wm_logits


class ForensicNetwork(nn.Module):
    """Stem -> 3-scale UNet -> mixture blocks -> two-headed decoder.

    `image_size` fixes the position-embedding grids; other input sizes still
    work through embedding interpolation.
    """

    def __init__(self, bit_length: int, moe: MoeConfig, unet: UnetConfig,
                 image_size: int = 64):
        super().__init__()
        moe.validate()
        unet.validate()
        if len(unet.widths) != 3:
            raise ValueError("this backbone is sized for exactly 3 scales")
        w1, w2, w3 = unet.widths
        if unet.stem_width != w1:
            raise ValueError("stem_width must equal the first UNet width")
        self.moe_cfg = moe
        self.stem = Stem(unet)
        s1 = image_size // 4
        grids = ((s1, s1), (s1 // 2, s1 // 2), (s1 // 4, s1 // 4))

        self.enc1 = ResBlock(w1)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.enc2 = ResBlock(w2)
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.enc3 = ResBlock(w3)

        self.dec3 = ResBlock(w3)
        self.up2 = nn.Conv2d(w3, w2, 3, padding=1)
        self.fuse2 = nn.Conv2d(2 * w2, w2, 3, padding=1)
        self.dec2 = ResBlock(w2)
        self.up1 = nn.Conv2d(w2, w1, 3, padding=1)
        self.fuse1 = nn.Conv2d(2 * w1, w1, 3, padding=1)
        self.dec1 = ResBlock(w1)

        def blocks(where):
            if moe.placement in (where, "encdec"):
                return nn.ModuleList([
                    MixtureBlock(w1, moe, grids[0]),
                    MixtureBlock(w2, moe, grids[1]),
                    MixtureBlock(w3, moe, grids[2]),
                ])
            return None

        self.enc_moe = blocks("enc")
        self.dec_moe = blocks("dec")
        self.head = ForensicDecoder(w1, bit_length)

    def _mix(self, blocks, idx, x):
        return blocks[idx](x) if blocks is not None else x

    def forward(self, image: torch.Tensor):
        """Image (B,3,H,W) in [0,1] -> (mask logits (B,1,H,W), bit logits (B,L))."""
        squeeze = image.dim() == 3
        if squeeze:
            image = image[None]
        h_in, w_in = image.shape[-2:]
        x = self.stem(image)
        e1 = self._mix(self.enc_moe, 0, self.enc1(x))
        e2 = self._mix(self.enc_moe, 1, self.enc2(self.down1(e1)))
        e3 = self._mix(self.enc_moe, 2, self.enc3(self.down2(e2)))

        d3 = self._mix(self.dec_moe, 2, self.dec3(e3))
        u2 = self.up2(F.interpolate(d3, scale_factor=2, mode="nearest"))
        d2 = self._mix(self.dec_moe, 1, self.dec2(self.fuse2(torch.cat([u2, e2], dim=1))))
        u1 = self.up1(F.interpolate(d2, scale_factor=2, mode="nearest"))
        d1 = self._mix(self.dec_moe, 0, self.dec1(self.fuse1(torch.cat([u1, e1], dim=1))))

        mask_logits, wm_logits = self.head(d1, (h_in, w_in))
        if squeeze:
            return mask_logits[0], wm_logits[0]
        return mask_logits, wm_logits

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
