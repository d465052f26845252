"""Style-based panorama generator, twin discriminators and checkpointing.

One shared synthesis network produces a raw tone-mapped-domain image; the HDR
and LDR branches are the fixed transforms psi/phi applied to that single
forward pass.  All convolutions wrap horizontally (panoramas are periodic in
longitude) and replicate-pad vertically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .panorama import ToneMapParams, phi, psi

__all__ = [
    "GeneratorConfig",
    "MappingNetwork",
    "SynthesisNetwork",
    "Generator",
    "Discriminator",
    "ModelCheckpoint",
    "build_models",
    "random_noise_maps",
    "estimate_w_avg",
    "raw_to_numpy",
    "sample_latents",
    "sample",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 512
    mapping_layers: int = 8
    base_h: int = 4
    resolution: tuple[int, int] = (256, 512)  # (H, W), W = 2H
    channel_base: int = 8192
    channel_max: int = 512
    d_channel_base: int | None = None  # defaults to channel_base

    def __post_init__(self):
        h, w = self.resolution
        if w != 2 * h:
            raise ValueError("output resolution must satisfy W = 2H")
        levels = math.log2(h / self.base_h)
        if levels != int(levels) or levels < 1:
            raise ValueError("H must be base_h * 2**k with k >= 1")

    @property
    def num_levels(self) -> int:
        return int(math.log2(self.resolution[0] / self.base_h)) + 1

    def channels(self, level: int) -> int:
        return min(self.channel_max, self.channel_base // (self.base_h << level))

    def d_channels(self, level: int) -> int:
        base = self.d_channel_base or self.channel_base
        return min(self.channel_max, base // (self.base_h << level))

    @property
    def num_noise_maps(self) -> int:
        return 1 + 2 * (self.num_levels - 1)

    def noise_shapes(self) -> list[tuple[int, int]]:
        shapes = [(self.base_h, 2 * self.base_h)]
        for lvl in range(1, self.num_levels):
            hw = (self.base_h << lvl, 2 * (self.base_h << lvl))
            shapes += [hw, hw]
        return shapes


def pano_pad(x: torch.Tensor, p: int) -> torch.Tensor:
    """Horizontal wrap-around plus vertical replicate padding."""
    if p == 0:
        return x
    x = F.pad(x, (p, p, 0, 0), mode="circular")
    return F.pad(x, (0, 0, p, p), mode="replicate")


def up2(x: torch.Tensor) -> torch.Tensor:
    """2x bilinear upsample that wraps horizontally like `pano_pad`."""
    x = F.pad(x, (1, 1, 0, 0), mode="circular")
    x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    return x[..., 2:-2]


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * torch.rsqrt(torch.mean(x * x, dim=1, keepdim=True) + 1e-8)


class MappingNetwork(nn.Module):
    """z -> w: pixel-normalized input through a stack of FC + leaky-ReLU."""

    def __init__(self, latent_dim: int, n_layers: int):
        super().__init__()
        self.norm = PixelNorm()
        self.layers = nn.ModuleList(
            [nn.Linear(latent_dim, latent_dim) for _ in range(n_layers)]
        )
        for lin in self.layers:
            nn.init.normal_(lin.weight, std=0.4 / math.sqrt(latent_dim))
            nn.init.zeros_(lin.bias)

    def forward(self, z):
        x = self.norm(z)
        for lin in self.layers:
            x = F.leaky_relu(lin(x), 0.2)
        return x


class ModulatedConv2d(nn.Module):
    """Weight-modulated convolution with per-sample style."""

    def __init__(self, in_ch, out_ch, w_dim, kernel=3, demodulate=True):
        super().__init__()
        self.kernel = kernel
        self.demodulate = demodulate
        self.weight = nn.Parameter(
            torch.randn(out_ch, in_ch, kernel, kernel) / math.sqrt(in_ch * kernel * kernel)
        )
        self.affine = nn.Linear(w_dim, in_ch)
        nn.init.normal_(self.affine.weight, std=0.2 / math.sqrt(w_dim))
        nn.init.ones_(self.affine.bias)

    def forward(self, x, w):
        b, c, h, wid = x.shape
        style = self.affine(w)  # [B, in_ch]
        weight = self.weight[None] * style[:, None, :, None, None]
        if self.demodulate:
            d = torch.rsqrt((weight * weight).sum(dim=(2, 3, 4)) + 1e-8)
            weight = weight * d[:, :, None, None, None]
        weight = weight.reshape(-1, c, self.kernel, self.kernel)
        x = pano_pad(x, self.kernel // 2)
        x = F.conv2d(x.reshape(1, -1, *x.shape[2:]), weight, groups=b)
        return x.reshape(b, -1, h, wid)


class SynthesisLayer(nn.Module):
    def __init__(self, in_ch, out_ch, w_dim):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, w_dim)
        self.noise_strength = nn.Parameter(torch.ones(()) * 0.1)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w, noise):
        x = self.conv(x, w)
        x = x + self.noise_strength * noise[:, None]
        return F.leaky_relu(x + self.bias[None, :, None, None], 0.2)


class ToRGB(nn.Module):
    def __init__(self, in_ch, w_dim):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, 3, w_dim, kernel=1, demodulate=False)
        self.bias = nn.Parameter(torch.zeros(3))

    def forward(self, x, w):
        return self.conv(x, w) + self.bias[None, :, None, None]


class SynthesisNetwork(nn.Module):
    """Skip-architecture synthesis from a learned constant map."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        ch0 = cfg.channels(0)
        self.const = nn.Parameter(torch.randn(ch0, cfg.base_h, 2 * cfg.base_h))
        self.layers = nn.ModuleList()
        self.torgbs = nn.ModuleList()
        in_ch = ch0
        for lvl in range(cfg.num_levels):
            out_ch = cfg.channels(lvl)
            if lvl == 0:
                self.layers.append(SynthesisLayer(in_ch, out_ch, cfg.latent_dim))
            else:
                self.layers.append(SynthesisLayer(in_ch, out_ch, cfg.latent_dim))
                self.layers.append(SynthesisLayer(out_ch, out_ch, cfg.latent_dim))
            self.torgbs.append(ToRGB(out_ch, cfg.latent_dim))
            in_ch = out_ch

    def forward(self, ws, noise):
        """ws: [B, num_noise_maps, latent_dim]; noise: list of [B, h, w]."""
        cfg = self.cfg
        b = ws.shape[0]
        x = self.const[None].expand(b, -1, -1, -1)
        rgb = None
        li = 0
        for lvl in range(cfg.num_levels):
            if lvl > 0:
                x = up2(x)
                x = self.layers[li](x, ws[:, li], noise[li])
                li += 1
            x = self.layers[li](x, ws[:, li], noise[li])
            w_rgb = ws[:, li]
            li += 1
            y = self.torgbs[lvl](x, w_rgb)
            if rgb is None:
                rgb = y
            else:
                rgb = up2(rgb) + y
        return rgb


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg.latent_dim, cfg.mapping_layers)
        self.synthesis = SynthesisNetwork(cfg)
        self.register_buffer("w_avg", torch.zeros(cfg.latent_dim))

    def broadcast_ws(self, w: torch.Tensor) -> torch.Tensor:
        """[B, dim] or [B, num_maps, dim] -> per-layer styles."""
        if w.dim() == 2:
            return w[:, None, :].expand(-1, self.cfg.num_noise_maps, -1)
        if w.dim() == 3 and w.shape[1] == self.cfg.num_noise_maps:
            return w
        raise ValueError(f"bad latent shape {tuple(w.shape)}")

    def forward(self, w: torch.Tensor, noise: list[torch.Tensor]) -> torch.Tensor:
        return self.synthesis(self.broadcast_ws(w), noise)


class Discriminator(nn.Module):
    """Plain convolutional critic mirroring the synthesis resolutions."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        top = cfg.num_levels - 1
        self.stem = nn.Conv2d(3, cfg.d_channels(top), 1)
        blocks = []
        for lvl in range(top, 0, -1):
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(cfg.d_channels(lvl), cfg.d_channels(lvl), 3),
                    nn.LeakyReLU(0.2),
                    nn.Conv2d(cfg.d_channels(lvl), cfg.d_channels(lvl - 1), 3, stride=2),
                    nn.LeakyReLU(0.2),
                )
            )
        self.blocks = nn.ModuleList(blocks)
        ch0 = cfg.d_channels(0)
        self.final_conv = nn.Conv2d(ch0, ch0, 3)
        self.fc = nn.Linear(ch0 * cfg.base_h * 2 * cfg.base_h, ch0)
        self.out = nn.Linear(ch0, 1)

    def forward(self, img):
        x = F.leaky_relu(self.stem(img), 0.2)
        for block in self.blocks:
            for layer in block:
                if isinstance(layer, nn.Conv2d):
                    x = layer(pano_pad(x, 1))
                else:
                    x = layer(x)
        x = F.leaky_relu(self.final_conv(pano_pad(x, 1)), 0.2)
        x = F.leaky_relu(self.fc(x.flatten(1)), 0.2)
        return self.out(x).squeeze(1)


def random_noise_maps(
    cfg: GeneratorConfig, batch: int, rng: torch.Generator | None = None
) -> list[torch.Tensor]:
    return [
        torch.randn(batch, h, w, generator=rng) for h, w in cfg.noise_shapes()
    ]


def estimate_w_avg(gen: Generator, n: int = 1000, seed: int = 0) -> torch.Tensor:
    """Monte-Carlo mean of w over random z draws."""
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        z = torch.randn(n, gen.cfg.latent_dim, generator=rng)
        return gen.mapping(z).mean(dim=0)


def raw_to_numpy(raw: torch.Tensor) -> np.ndarray:
    """[3, H, W] or [1, 3, H, W] tensor -> H x W x 3 float64 array."""
    if raw.dim() == 4:
        raw = raw[0]
    return raw.detach().permute(1, 2, 0).double().cpu().numpy()


@dataclass
class ModelCheckpoint:
    config: GeneratorConfig
    tone_map: ToneMapParams
    generator_state: dict
    d_hdr_state: dict
    d_ldr_state: dict
    step: int = 0
    kimg: float = 0.0
    optimizer_states: dict = field(default_factory=dict)

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": CHECKPOINT_VERSION,
                "config": asdict(self.config),
                "tone_map": {"alpha": self.tone_map.alpha, "gamma": self.tone_map.gamma},
                "generator_state": self.generator_state,
                "d_hdr_state": self.d_hdr_state,
                "d_ldr_state": self.d_ldr_state,
                "step": self.step,
                "kimg": self.kimg,
                "optimizer_states": self.optimizer_states,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        obj = torch.load(path, map_location="cpu", weights_only=False)
        version = obj.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r}")
        cfg_kwargs = dict(obj["config"])
        cfg_kwargs["resolution"] = tuple(cfg_kwargs["resolution"])
        return cls(
            config=GeneratorConfig(**cfg_kwargs),
            tone_map=ToneMapParams(**obj["tone_map"]),
            generator_state=obj["generator_state"],
            d_hdr_state=obj["d_hdr_state"],
            d_ldr_state=obj["d_ldr_state"],
            step=obj["step"],
            kimg=obj["kimg"],
            optimizer_states=obj["optimizer_states"],
        )

    def build_generator(self) -> Generator:
        gen = Generator(self.config)
        gen.load_state_dict(self.generator_state)
        gen.eval()
        return gen


def build_models(cfg: GeneratorConfig, seed: int = 0):
    """Freshly initialized (generator, hdr discriminator, ldr discriminator)."""
    torch.manual_seed(seed)
    return Generator(cfg), Discriminator(cfg), Discriminator(cfg)


def sample_latents(
    ckpt: ModelCheckpoint, seed: int, truncation: float = 1.0
) -> tuple[np.ndarray, list[np.ndarray]]:
    """One seeded (w, noise maps) draw, as numpy arrays (for editing jobs)."""
    gen = ckpt.build_generator()
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        z = torch.randn(1, ckpt.config.latent_dim, generator=rng)
        w = gen.mapping(z)
        w = gen.w_avg[None] + truncation * (w - gen.w_avg[None])
    noise = random_noise_maps(ckpt.config, 1, rng)
    return w[0].numpy().copy(), [n[0].numpy().copy() for n in noise]


def sample(
    ckpt: ModelCheckpoint, seed: int, count: int, truncation: float = 1.0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Draw (HDR, LDR) panorama pairs from one shared forward pass each."""
    out: list[tuple[np.ndarray, np.ndarray]] = []
    if count == 0:
        return out
    gen = ckpt.build_generator()
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        z = torch.randn(count, ckpt.config.latent_dim, generator=rng)
        w = gen.mapping(z)
        w = gen.w_avg[None] + truncation * (w - gen.w_avg[None])
        noise = random_noise_maps(ckpt.config, count, rng)
        raw = gen(w, noise)
    for i in range(count):
        g = raw_to_numpy(raw[i])
        out.append((psi(g, ckpt.tone_map), phi(g)))
    return out
