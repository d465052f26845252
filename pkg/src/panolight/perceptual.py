"""Image distance functions and the noise-map whiteness regularizer.

Two interchangeable perceptual backends are provided:

  * ``vgg``: LPIPS-style distance over pretrained VGG16 feature maps.
    Requires torchvision with downloaded weights (cache location taken from
    the PANOLIGHT_CACHE environment variable when set).
  * ``patch_stats``: a deterministic, weight-free multi-scale distance over
    local mean and contrast statistics.  Used as the test-time fallback and
    whenever pretrained weights are unavailable.

Both are symmetric, zero iff the images match, and differentiable.
"""

from __future__ import annotations

import os

import torch
import torch.nn.functional as F

__all__ = [
    "patch_stats_distance",
    "get_perceptual",
    "perceptual_distance",
    "noise_regularizer",
]

_PATCH_SCALES = (1, 2, 4, 8)


def _to_nchw(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        img = img.permute(2, 0, 1)[None] if img.shape[-1] == 3 else img[None]
    if img.dim() != 4:
        raise ValueError(f"expected image tensor, got shape {tuple(img.shape)}")
    return img


def patch_stats_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Multi-scale local mean/contrast distance; no learned weights."""
    a = _to_nchw(a)
    b = _to_nchw(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    total = a.new_zeros(())
    for k in _PATCH_SCALES:
        if k > min(a.shape[2], a.shape[3]):
            break
        ma = F.avg_pool2d(a, k)
        mb = F.avg_pool2d(b, k)
        total = total + F.mse_loss(ma, mb)
        if k > 1:
            va = F.avg_pool2d(a * a, k) - ma * ma
            vb = F.avg_pool2d(b * b, k) - mb * mb
            sa = torch.sqrt(va.clamp(min=0.0) + 1e-12)
            sb = torch.sqrt(vb.clamp(min=0.0) + 1e-12)
            total = total + F.mse_loss(sa, sb)
    return total


class VggPerceptual:
    """LPIPS-style feature distance over pretrained VGG16 activations."""

    _LAYERS = (3, 8, 15, 22)  # relu1_2 .. relu4_3

    def __init__(self):
        cache = os.environ.get("PANOLIGHT_CACHE")
        if cache:
            torch.hub.set_dir(cache)
        from torchvision.models import VGG16_Weights, vgg16

        net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net = net
        self.mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        self.std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)

    def _features(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.mean) / self.std
        feats = []
        for i, layer in enumerate(self.net):
            x = layer(x)
            if i in self._LAYERS:
                feats.append(x / (x.norm(dim=1, keepdim=True) + 1e-8))
            if i >= self._LAYERS[-1]:
                break
        return feats

    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        a = _to_nchw(a)
        b = _to_nchw(b)
        if a.shape != b.shape:
            raise ValueError("shape mismatch")
        total = a.new_zeros(())
        for fa, fb in zip(self._features(a), self._features(b)):
            total = total + (fa - fb).square().mean()
        return total


_BACKEND_CACHE: dict = {}


def get_perceptual(kind: str = "auto"):
    """Return a distance callable; 'auto' prefers VGG, falls back silently."""
    if kind == "patch_stats":
        return patch_stats_distance
    if kind in ("vgg", "auto"):
        if "vgg" not in _BACKEND_CACHE:
            try:
                _BACKEND_CACHE["vgg"] = VggPerceptual()
            except Exception:
                _BACKEND_CACHE["vgg"] = None
        backend = _BACKEND_CACHE["vgg"]
        if backend is not None:
            return backend
        if kind == "vgg":
            raise RuntimeError("pretrained VGG16 weights are unavailable")
        return patch_stats_distance
    raise ValueError(f"unknown perceptual backend {kind!r}")


def perceptual_distance(a, b, backend: str = "auto") -> torch.Tensor:
    return get_perceptual(backend)(a, b)


def noise_regularizer(noise_maps: list[torch.Tensor]) -> torch.Tensor:
    """Multi-scale shift-autocorrelation penalty; white noise scores near 0.

    Each map is RMS-normalized, then squared one-pixel horizontal and
    vertical autocorrelations are accumulated over dyadic downscales.
    """
    total = None
    for n in noise_maps:
        if n.dim() == 2:
            n = n[None]
        x = n[:, None] if n.dim() == 3 else n
        while True:
            x = x / torch.sqrt((x * x).mean(dim=(2, 3), keepdim=True) + 1e-8)
            ac_h = (x * torch.roll(x, 1, dims=3)).mean(dim=(1, 2, 3))
            ac_v = (x * torch.roll(x, 1, dims=2)).mean(dim=(1, 2, 3))
            term = (ac_h.square() + ac_v.square()).sum()
            total = term if total is None else total + term
            if x.shape[2] <= 8 or x.shape[3] <= 8:
                break
            x = F.avg_pool2d(x, 2)
    if total is None:
        raise ValueError("no noise maps given")
    return total
