"""Structure-preserved lighting editing in latent space.

Starting from a known pivot latent, gradient descent moves only the latent
code: two preservation terms anchor the render outside the edit mask to the
original, while a signed mean-intensity term inside the mask raises or
lowers the light there.  A positive adjust factor decreases intensity, a
negative one increases it; noise maps and generator weights stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .models import ModelCheckpoint, raw_to_numpy
from .panorama import check_hdr, psi
from .perceptual import get_perceptual
from .training import phi_torch, psi_torch

__all__ = ["EditSpec", "edit_lighting", "add_light", "remove_light"]


@dataclass(frozen=True)
class EditSpec:
    """Edit region (bbox in panorama pixels, end-exclusive) and strength."""

    bbox: tuple[int, int, int, int]  # (u0, v0, u1, v1)
    delta: float = 1.0  # positive decreases lighting, negative increases it
    steps: int = 200
    lr: float = 0.02
    perceptual: str = "auto"
    preserve_weight: float = 1.0  # weight on the outside-mask L2 term
    # Stop once the masked max radiance crosses stop_ratio x its starting
    # value (below it for delta > 0, above it for delta < 0); None runs all
    # steps.  Early stopping keeps strong edits from dragging the rest of
    # the panorama along once the target intensity is reached.
    stop_ratio: float | None = None

    def mask(self, h: int, w: int) -> np.ndarray:
        u0, v0, u1, v1 = self.bbox
        if not (0 <= u0 < u1 <= w and 0 <= v0 < v1 <= h):
            raise ValueError(f"bbox {self.bbox} out of bounds for {h}x{w}")
        m = np.zeros((h, w), dtype=bool)
        m[v0:v1, u0:u1] = True
        if m.all():
            raise ValueError("mask must be strict subset of the panorama")
        return m


def edit_lighting(
    w0: np.ndarray,
    noise_maps: list[np.ndarray],
    ckpt: ModelCheckpoint,
    spec: EditSpec,
):
    """Optimize the latent only; returns (w_star, trace, edited HDR pano)."""
    gen = ckpt.build_generator()
    h, w = ckpt.config.resolution
    m_np = spec.mask(h, w)
    m = torch.from_numpy(m_np.astype(np.float32))[None, None]
    keep = 1.0 - m
    n_masked = float(m_np.sum())
    perc = get_perceptual(spec.perceptual)

    w0_t = torch.from_numpy(np.asarray(w0, dtype=np.float32))[None]
    noise = [torch.from_numpy(np.asarray(n, dtype=np.float32))[None] for n in noise_maps]
    mask_t = m[0, 0].bool()
    with torch.no_grad():
        raw0 = gen(w0_t, noise)
        ldr0 = phi_torch(raw0)
        radiance0 = psi_torch(raw0, ckpt.tone_map)[0].amax(0)[mask_t].max().item()
    w_opt = w0_t.clone().requires_grad_(True)
    opt = torch.optim.Adam([w_opt], lr=spec.lr)

    trace: list[float] = []
    for _ in range(spec.steps):
        opt.zero_grad(set_to_none=True)
        raw = gen(w_opt, noise)
        if spec.stop_ratio is not None and spec.delta != 0:
            with torch.no_grad():
                cur = psi_torch(raw, ckpt.tone_map)[0].amax(0)[mask_t].max().item()
            target = spec.stop_ratio * radiance0
            if (cur <= target) if spec.delta > 0 else (cur >= target):
                break
        ldr = phi_torch(raw)
        loss = perc(ldr * keep, ldr0 * keep)
        loss = loss + spec.preserve_weight * (((ldr - ldr0) * keep) ** 2).sum()
        loss = loss + spec.delta / n_masked * (ldr * m).sum()
        if not torch.isfinite(loss):
            raise RuntimeError(f"editing objective became non-finite: {trace[-5:]}")
        trace.append(loss.item())
        loss.backward()
        opt.step()

    w_star = w_opt.detach()
    with torch.no_grad():
        raw = gen(w_star, noise)
    edited = check_hdr(psi(raw_to_numpy(raw), ckpt.tone_map))
    return w_star[0].numpy().copy(), trace, edited


_STRONG_EDIT = {"delta": 500.0, "preserve_weight": 5.0, "steps": 250}


def add_light(w0, noise_maps, ckpt, bbox, **kwargs):
    """Increase lighting inside the bbox until its max radiance doubles."""
    opts = {**_STRONG_EDIT, "stop_ratio": 2.0, **kwargs}
    opts["delta"] = -abs(opts["delta"])
    spec = EditSpec(bbox=tuple(bbox), **opts)
    return edit_lighting(w0, noise_maps, ckpt, spec)


def remove_light(w0, noise_maps, ckpt, bbox, **kwargs):
    """Decrease lighting inside the bbox until its max radiance halves."""
    opts = {**_STRONG_EDIT, "stop_ratio": 0.5, **kwargs}
    opts["delta"] = abs(opts["delta"])
    spec = EditSpec(bbox=tuple(bbox), **opts)
    return edit_lighting(w0, noise_maps, ckpt, spec)
