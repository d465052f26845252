"""Focal-masked GAN inversion and pivotal generator fine-tuning.

Phase 1 searches latent code and per-layer noise maps so the LDR branch
reproduces a masked panorama observation, with an extra L2 term on the focal
(brightest-observed) pixels that forces saturated lights to invert to high
radiance.  Phase 2 fine-tunes the generator weights around that pivot while
regularizing drift at latents interpolated toward random draws, then the HDR
panorama is read off the HDR branch.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import hdr_io
from .models import ModelCheckpoint, estimate_w_avg, random_noise_maps, raw_to_numpy
from .panorama import CameraSpec, MaskSet, check_hdr, focal_mask, lfov_to_masked_pano, psi
from .perceptual import get_perceptual, noise_regularizer
from .training import phi_torch

__all__ = [
    "HyperParams",
    "InversionResult",
    "InversionDiverged",
    "invert_latent",
    "pivotal_finetune",
    "estimate_lighting",
    "save_result",
]


class InversionDiverged(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class HyperParams:
    lambda_n: float = 1e5
    lambda_l2_r: float = 10.0
    lambda_l2_rp: float = 10.0
    eta: float = 1.0
    beta_l2: float = 10.0
    interp_alpha: float = 30.0
    focal_fraction: float = 0.10
    steps_latent: int = 500
    steps_pivotal: int = 350
    lr_latent: float = 0.1
    lr_pivotal: float = 3e-4
    perceptual: str = "auto"

    def __post_init__(self):
        if self.steps_latent < 1 or self.steps_pivotal < 1:
            raise ValueError("step counts must be >= 1")
        for name in ("lambda_n", "lambda_l2_r", "lambda_l2_rp", "eta", "beta_l2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class InversionResult:
    w_star: np.ndarray
    n_star: list[np.ndarray]
    theta_star: dict
    loss_trace: dict[str, list[float]]
    hdr_out: np.ndarray
    masks: MaskSet


def _obs_tensors(obs: np.ndarray, masks: MaskSet):
    vis = torch.from_numpy(np.asarray(masks.visibility, dtype=np.float32))
    if vis.sum() == 0:
        raise ValueError("empty observation: visibility mask is all zero")
    foc = torch.from_numpy(np.asarray(masks.focal, dtype=np.float32))
    x = torch.from_numpy(np.ascontiguousarray(obs, dtype=np.float32))
    x = x.permute(2, 0, 1)[None]
    m = vis[None, None]
    f = foc[None, None]
    return x * m, m, f


def _masked_l2(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over masked pixels (per channel)."""
    denom = mask.sum() * a.shape[1]
    return (((a - b) * mask) ** 2).sum() / denom.clamp(min=1.0)


def _check_finite(loss: torch.Tensor, phase: str, trace: list[float]):
    if not torch.isfinite(loss):
        raise InversionDiverged(f"{phase} objective became non-finite", trace)


def invert_latent(
    obs: np.ndarray,
    masks: MaskSet,
    ckpt: ModelCheckpoint,
    hp: HyperParams,
    seed: int = 0,
):
    """Phase 1: optimize (w, n) to match the masked LDR observation.

    Returns (w_star [dim], n_star list of arrays, trace of objectives).
    """
    gen = ckpt.build_generator()
    obs_t, m, f = _obs_tensors(obs, masks)
    perc = get_perceptual(hp.perceptual)

    torch.manual_seed(seed)
    rng = torch.Generator().manual_seed(seed)
    w_avg = gen.w_avg.clone()
    if torch.all(w_avg == 0):
        w_avg = estimate_w_avg(gen, seed=seed)
    w = w_avg.clone()[None].requires_grad_(True)
    noise = [n.requires_grad_(True) for n in random_noise_maps(ckpt.config, 1, rng)]
    opt = torch.optim.Adam([w] + noise, lr=hp.lr_latent)

    trace: list[float] = []
    best = (float("inf"), None, None)
    for _ in range(hp.steps_latent):
        opt.zero_grad(set_to_none=True)
        raw = gen(w, noise)
        ldr = phi_torch(raw)
        loss = perc(ldr * m, obs_t)
        loss = loss + hp.lambda_n * noise_regularizer(noise)
        if hp.beta_l2 > 0:
            loss = loss + hp.beta_l2 * _masked_l2(ldr, obs_t, f)
        _check_finite(loss, "latent", trace)
        val = loss.item()
        trace.append(val)
        if val < best[0]:
            best = (val, w.detach().clone(), [n.detach().clone() for n in noise])
        loss.backward()
        opt.step()
    _, w_best, n_best = best
    return (
        w_best[0].numpy().copy(),
        [n[0].numpy().copy() for n in n_best],
        trace,
    )


def pivotal_finetune(
    w_star: np.ndarray,
    n_star: list[np.ndarray],
    obs: np.ndarray,
    masks: MaskSet,
    ckpt: ModelCheckpoint,
    hp: HyperParams,
    seed: int = 0,
):
    """Phase 2: fine-tune generator weights around the frozen pivot.

    Each step draws a fresh random latent, interpolates it toward the pivot
    at radius ``interp_alpha``, and penalizes LDR drift there relative to the
    pre-finetune weights.  Returns (theta_star state dict, trace).
    """
    gen0 = ckpt.build_generator()  # immutable reference weights
    gen = copy.deepcopy(gen0)
    gen.train()
    obs_t, m, f = _obs_tensors(obs, masks)
    perc = get_perceptual(hp.perceptual)

    torch.manual_seed(seed + 1)
    rng = torch.Generator().manual_seed(seed + 1)
    w_t = torch.from_numpy(np.asarray(w_star, dtype=np.float32))[None]
    noise = [torch.from_numpy(np.asarray(n, dtype=np.float32))[None] for n in n_star]
    opt = torch.optim.Adam(gen.synthesis.parameters(), lr=hp.lr_pivotal)

    trace: list[float] = []
    for _ in range(hp.steps_pivotal):
        opt.zero_grad(set_to_none=True)
        ldr = phi_torch(gen(w_t, noise))
        loss_g = perc(ldr * m, obs_t)
        loss_g = loss_g + hp.lambda_l2_r * _masked_l2(ldr, obs_t, m)
        if hp.beta_l2 > 0:
            loss_g = loss_g + hp.beta_l2 * _masked_l2(ldr, obs_t, f)

        z = torch.randn(1, ckpt.config.latent_dim, generator=rng)
        with torch.no_grad():
            w_z = gen0.mapping(z)
        delta = w_z - w_t
        w_r = w_t + hp.interp_alpha * delta / delta.norm().clamp(min=1e-8)
        ldr_r = phi_torch(gen(w_r, noise))
        with torch.no_grad():
            ldr_r0 = phi_torch(gen0(w_r, noise))
        loss_r = perc(ldr_r, ldr_r0) + hp.lambda_l2_rp * torch.mean((ldr_r - ldr_r0) ** 2)

        loss = loss_g + hp.eta * loss_r
        _check_finite(loss, "pivotal", trace)
        trace.append(loss.item())
        loss.backward()
        opt.step()
    gen.eval()
    return {k: v.clone() for k, v in gen.state_dict().items()}, trace


def _render_hdr(theta: dict, w_star, n_star, ckpt: ModelCheckpoint) -> np.ndarray:
    gen = ckpt.build_generator()
    gen.load_state_dict(theta)
    gen.eval()
    w_t = torch.from_numpy(np.asarray(w_star, dtype=np.float32))[None]
    noise = [torch.from_numpy(np.asarray(n, dtype=np.float32))[None] for n in n_star]
    with torch.no_grad():
        raw = gen(w_t, noise)
    return psi(raw_to_numpy(raw), ckpt.tone_map)


def estimate_lighting(
    crop: np.ndarray,
    cam: CameraSpec,
    ckpt: ModelCheckpoint,
    hp: HyperParams | None = None,
    seed: int = 0,
) -> InversionResult:
    """Full pipeline: LFOV crop -> masked panorama -> (w*, n*, theta*) -> HDR."""
    if hp is None:
        hp = HyperParams()
    h, w = ckpt.config.resolution
    obs, vis = lfov_to_masked_pano(crop, cam, h, w)
    masks = MaskSet(visibility=vis, focal=focal_mask(obs, vis, hp.focal_fraction))
    w_star, n_star, trace1 = invert_latent(obs, masks, ckpt, hp, seed=seed)
    theta_star, trace2 = pivotal_finetune(
        w_star, n_star, obs, masks, ckpt, hp, seed=seed
    )
    hdr = _render_hdr(theta_star, w_star, n_star, ckpt)
    return InversionResult(
        w_star=w_star,
        n_star=n_star,
        theta_star=theta_star,
        loss_trace={"latent": trace1, "pivotal": trace2},
        hdr_out=check_hdr(hdr),
        masks=masks,
    )


def save_result(result: InversionResult, out_dir) -> None:
    """Persist one inversion job: latents, weights, traces and the HDR map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "w_star.npy", result.w_star)
    np.savez(out_dir / "n_star.npz", *result.n_star)
    torch.save(result.theta_star, out_dir / "theta_star.pt")
    with open(out_dir / "traces.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "step", "objective"])
        for phase, values in result.loss_trace.items():
            for i, v in enumerate(values):
                writer.writerow([phase, i, v])
    hdr_io.save_hdr(result.hdr_out, out_dir / "hdr_out.hdr")
