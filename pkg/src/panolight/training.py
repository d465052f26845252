"""Adversarial training of the coupled HDR/LDR panorama generator.

One shared generator forward pass feeds two discriminators: D sees the HDR
branch (linear radiance, log(1+x)-compressed for conditioning) against real
HDR panoramas, D' sees the LDR branch against clamped tone-mapped reals.
Losses are non-saturating logistic with lazy R1 gradient penalties; the
written minimax objective does not train in practice, this is the standard
realization of it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .models import (
    Discriminator,
    Generator,
    GeneratorConfig,
    ModelCheckpoint,
    build_models,
    random_noise_maps,
)
from .panorama import ToneMapParams
from .synthdata import DatasetManifest, load_split

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "toy_config",
    "paper_scale_config",
    "psi_torch",
    "phi_torch",
    "train",
    "discriminator_logits",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    micro_batch: int = 0  # 0 = whole batch at once
    lr: float = 0.0025
    beta1: float = 0.0
    beta2: float = 0.99
    r1_gamma: float = 1.0
    d_reg_interval: int = 16
    style_mixing_prob: float = 0.0
    pl_weight: float = 0.0
    g_reg_interval: int = 8
    checkpoint_every: int = 1000
    seed: int = 0


def toy_config(h: int = 64) -> tuple[GeneratorConfig, TrainConfig]:
    """Small CPU-friendly setup; determinism-friendly (no mixing/PL reg)."""
    gen = GeneratorConfig(
        latent_dim=32,
        resolution=(h, 2 * h),
        channel_base=512,
        channel_max=32,
    )
    return gen, TrainConfig(steps=2000, batch=8)


def paper_scale_config() -> tuple[GeneratorConfig, TrainConfig]:
    """Full-scale setup: 256x512 output, batch 32, 4000 kimg."""
    gen = GeneratorConfig(latent_dim=512, resolution=(256, 512))
    steps = int(4000_000 / 32)
    return gen, TrainConfig(
        steps=steps,
        batch=32,
        micro_batch=4,
        style_mixing_prob=0.9,
        pl_weight=2.0,
        r1_gamma=10.0,
    )


def psi_torch(raw: torch.Tensor, tm: ToneMapParams) -> torch.Tensor:
    """Differentiable HDR branch: clamp at 0, inverse tone map."""
    return (raw.clamp(min=0.0) / tm.alpha) ** tm.gamma


def phi_torch(raw: torch.Tensor) -> torch.Tensor:
    """Differentiable LDR branch: clamp to [0, 1]."""
    return raw.clamp(0.0, 1.0)


def _mapped_ws(gen: Generator, z: torch.Tensor, mixing_prob: float,
               rng: torch.Generator) -> torch.Tensor:
    ws = gen.broadcast_ws(gen.mapping(z)).clone()
    if mixing_prob > 0 and torch.rand((), generator=rng).item() < mixing_prob:
        z2 = torch.randn_like(z)
        ws2 = gen.broadcast_ws(gen.mapping(z2))
        cut = int(torch.randint(1, gen.cfg.num_noise_maps, (), generator=rng))
        ws[:, cut:] = ws2[:, cut:]
    return ws


def _r1_penalty(disc: Discriminator, real: torch.Tensor) -> torch.Tensor:
    real = real.detach().requires_grad_(True)
    logits = disc(real)
    (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    return grad.square().sum(dim=(1, 2, 3)).mean()


def discriminator_logits(ckpt: ModelCheckpoint, tensors: np.ndarray, seed: int = 0):
    """Mean real/fake logits of both discriminators on a held-out batch.

    ``tensors`` holds tone-mapped training-domain images, N x H x W x 3.
    """
    gen = ckpt.build_generator()
    d_hdr = Discriminator(ckpt.config)
    d_hdr.load_state_dict(ckpt.d_hdr_state)
    d_ldr = Discriminator(ckpt.config)
    d_ldr.load_state_dict(ckpt.d_ldr_state)
    tm = ckpt.tone_map
    x = torch.from_numpy(np.ascontiguousarray(tensors)).float().permute(0, 3, 1, 2)
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        z = torch.randn(x.shape[0], ckpt.config.latent_dim, generator=rng)
        raw = gen(gen.mapping(z), random_noise_maps(ckpt.config, x.shape[0], rng))
        out = {
            "hdr_real": d_hdr(torch.log1p(psi_torch(x, tm))).mean().item(),
            "hdr_fake": d_hdr(torch.log1p(psi_torch(raw, tm))).mean().item(),
            "ldr_real": d_ldr(phi_torch(x)).mean().item(),
            "ldr_fake": d_ldr(phi_torch(raw)).mean().item(),
        }
    return out


def train(
    manifest_path,
    gen_cfg: GeneratorConfig,
    train_cfg: TrainConfig,
    out_dir,
    resume_from=None,
) -> ModelCheckpoint:
    """Run the adversarial loop; writes checkpoint.pt and losses.csv."""
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(manifest_path)
    if tuple(manifest.resolution) != tuple(gen_cfg.resolution):
        raise ValueError(
            f"dataset resolution {manifest.resolution} != model {gen_cfg.resolution}"
        )
    tm = manifest.tone_map
    data = torch.from_numpy(load_split(manifest_path, "train")).float()
    data = data.permute(0, 3, 1, 2).contiguous()  # N x 3 x H x W, tone-mapped
    n_data = data.shape[0]

    gen, d_hdr, d_ldr = build_models(gen_cfg, seed=train_cfg.seed)
    opt_g = torch.optim.Adam(
        gen.parameters(), lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2)
    )
    opt_dh = torch.optim.Adam(
        d_hdr.parameters(), lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2)
    )
    opt_dl = torch.optim.Adam(
        d_ldr.parameters(), lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2)
    )
    start_step = 0
    pl_mean = 0.0
    if resume_from is not None:
        ckpt = ModelCheckpoint.load(resume_from)
        if ckpt.config != gen_cfg:
            raise ValueError("resume checkpoint config mismatch")
        gen.load_state_dict(ckpt.generator_state)
        d_hdr.load_state_dict(ckpt.d_hdr_state)
        d_ldr.load_state_dict(ckpt.d_ldr_state)
        start_step = ckpt.step
        opts = ckpt.optimizer_states
        if opts:
            opt_g.load_state_dict(opts["g"])
            opt_dh.load_state_dict(opts["d_hdr"])
            opt_dl.load_state_dict(opts["d_ldr"])
            pl_mean = opts.get("pl_mean", 0.0)

    csv_path = out_dir / "losses.csv"
    new_log = not csv_path.exists() or start_step == 0
    log_fh = open(csv_path, "w" if new_log else "a", newline="")
    logger = csv.writer(log_fh)
    if new_log:
        logger.writerow(["step", "loss_G", "loss_D", "loss_Dp", "r1_D", "r1_Dp"])

    micro = train_cfg.micro_batch or train_cfg.batch
    if train_cfg.batch % micro != 0:
        raise ValueError("batch must be divisible by micro_batch")
    n_micro = train_cfg.batch // micro

    def make_checkpoint(step: int) -> ModelCheckpoint:
        return ModelCheckpoint(
            config=gen_cfg,
            tone_map=tm,
            generator_state={k: v.clone() for k, v in gen.state_dict().items()},
            d_hdr_state={k: v.clone() for k, v in d_hdr.state_dict().items()},
            d_ldr_state={k: v.clone() for k, v in d_ldr.state_dict().items()},
            step=step,
            kimg=step * train_cfg.batch / 1000.0,
            optimizer_states={
                "g": opt_g.state_dict(),
                "d_hdr": opt_dh.state_dict(),
                "d_ldr": opt_dl.state_dict(),
                "pl_mean": pl_mean,
            },
        )

    try:
        for step in range(start_step + 1, train_cfg.steps + 1):
            rng = torch.Generator().manual_seed(train_cfg.seed * 1000003 + step)
            stats = {"loss_G": 0.0, "loss_D": 0.0, "loss_Dp": 0.0,
                     "r1_D": 0.0, "r1_Dp": 0.0}
            do_r1 = step % train_cfg.d_reg_interval == 0
            do_pl = train_cfg.pl_weight > 0 and step % train_cfg.g_reg_interval == 0

            # --- discriminators ---
            opt_dh.zero_grad(set_to_none=True)
            opt_dl.zero_grad(set_to_none=True)
            for _ in range(n_micro):
                idx = torch.randint(n_data, (micro,), generator=rng)
                real = data[idx]
                z = torch.randn(micro, gen_cfg.latent_dim, generator=rng)
                with torch.no_grad():
                    ws = _mapped_ws(gen, z, train_cfg.style_mixing_prob, rng)
                    raw = gen.synthesis(ws, random_noise_maps(gen_cfg, micro, rng))
                real_hdr = torch.log1p(psi_torch(real, tm))
                fake_hdr = torch.log1p(psi_torch(raw, tm))
                real_ldr = phi_torch(real)
                fake_ldr = phi_torch(raw)
                loss_dh = (
                    F.softplus(-d_hdr(real_hdr)).mean()
                    + F.softplus(d_hdr(fake_hdr)).mean()
                )
                loss_dl = (
                    F.softplus(-d_ldr(real_ldr)).mean()
                    + F.softplus(d_ldr(fake_ldr)).mean()
                )
                if do_r1:
                    r1_h = _r1_penalty(d_hdr, real_hdr)
                    r1_l = _r1_penalty(d_ldr, real_ldr)
                    loss_dh = loss_dh + 0.5 * train_cfg.r1_gamma * r1_h * train_cfg.d_reg_interval
                    loss_dl = loss_dl + 0.5 * train_cfg.r1_gamma * r1_l * train_cfg.d_reg_interval
                    stats["r1_D"] += r1_h.item() / n_micro
                    stats["r1_Dp"] += r1_l.item() / n_micro
                ((loss_dh + loss_dl) / n_micro).backward()
                stats["loss_D"] += loss_dh.item() / n_micro
                stats["loss_Dp"] += loss_dl.item() / n_micro
            opt_dh.step()
            opt_dl.step()

            # --- generator ---
            opt_g.zero_grad(set_to_none=True)
            for _ in range(n_micro):
                z = torch.randn(micro, gen_cfg.latent_dim, generator=rng)
                ws = _mapped_ws(gen, z, train_cfg.style_mixing_prob, rng)
                raw = gen.synthesis(ws, random_noise_maps(gen_cfg, micro, rng))
                loss_g = (
                    F.softplus(-d_hdr(torch.log1p(psi_torch(raw, tm)))).mean()
                    + F.softplus(-d_ldr(phi_torch(raw))).mean()
                )
                if do_pl:
                    pl_noise = torch.randn_like(raw) / math.sqrt(
                        raw.shape[2] * raw.shape[3]
                    )
                    (pl_grad,) = torch.autograd.grad(
                        (raw * pl_noise).sum(), ws, create_graph=True
                    )
                    pl_len = pl_grad.square().sum(dim=2).mean(dim=1).sqrt()
                    pl_mean = pl_mean + 0.01 * (pl_len.mean().item() - pl_mean)
                    loss_g = loss_g + train_cfg.pl_weight * (
                        (pl_len - pl_mean) ** 2
                    ).mean() * train_cfg.g_reg_interval
                (loss_g / n_micro).backward()
                stats["loss_G"] += loss_g.item() / n_micro
            opt_g.step()

            with torch.no_grad():
                w_batch = gen.mapping(
                    torch.randn(64, gen_cfg.latent_dim, generator=rng)
                ).mean(dim=0)
                gen.w_avg.lerp_(w_batch, 0.01)

            if not all(np.isfinite(v) for v in stats.values()):
                raise TrainingDiverged(f"non-finite loss at step {step}: {stats}")
            logger.writerow(
                [step, stats["loss_G"], stats["loss_D"], stats["loss_Dp"],
                 stats["r1_D"], stats["r1_Dp"]]
            )
            if step % train_cfg.checkpoint_every == 0 and step < train_cfg.steps:
                make_checkpoint(step).save(out_dir / "checkpoint.pt")
                log_fh.flush()
    finally:
        log_fh.close()

    ckpt = make_checkpoint(train_cfg.steps)
    ckpt.save(out_dir / "checkpoint.pt")
    return ckpt
