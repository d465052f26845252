"""Image-based-lighting evaluation: sphere renders and error metrics.

A unit sphere is rendered under an environment panorama with an orthographic
camera looking along +x (the panorama's forward axis).  Three materials are
supported: a perfect mirror, a normalized-Phong "matte silver" lobe, and a
Lambertian diffuse surface normalized so a uniform environment of radiance L
renders exactly L.  Metrics (RMSE, scale-invariant RMSE, angular error) are
computed over non-background sphere pixels only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .panorama import (
    check_hdr,
    direction_to_pixel,
    pixel_to_direction,
    sample_equirect,
    solid_angle_weights,
)

__all__ = [
    "SphereRenderSpec",
    "MetricsReport",
    "MATERIALS",
    "render_sphere",
    "mirror_highlight_pixel",
    "rmse",
    "si_rmse",
    "angular_error",
    "evaluate",
]

MATERIALS = ("mirror", "matte_silver", "diffuse")

_VIEW = np.array([1.0, 0.0, 0.0])  # ray direction from camera into the scene
_FILL = 0.9  # sphere diameter as a fraction of the frame


@dataclass(frozen=True)
class SphereRenderSpec:
    material: str = "mirror"
    image_size: int = 128
    glossy_exponent: float = 32.0
    albedo: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.material not in MATERIALS:
            raise ValueError(f"unknown material {self.material!r}")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if not (self.glossy_exponent > 0):
            raise ValueError("glossy_exponent must be positive")


@dataclass
class MetricsReport:
    """Per-material aggregate metrics plus the per-image breakdown."""

    per_material: dict = field(default_factory=dict)
    per_image: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"per_material": self.per_material, "per_image": self.per_image},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        return cls(per_material=obj["per_material"], per_image=obj["per_image"])


def _sphere_geometry(size: int):
    """Normals and foreground mask of the orthographic unit-sphere image."""
    px = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    y, z = np.meshgrid(px / _FILL, -px / _FILL)
    rr = y * y + z * z
    fg = rr <= 1.0
    x = np.where(fg, -np.sqrt(np.maximum(0.0, 1.0 - rr)), 0.0)
    normals = np.stack([x, y, z], axis=-1)
    return normals, fg


def _env_directions_and_weights(env: np.ndarray):
    h, w = env.shape[:2]
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = pixel_to_direction(uu, vv, h, w).reshape(-1, 3)
    dw = solid_angle_weights(h, w).reshape(-1)
    return dirs, dw


def render_sphere(env: np.ndarray, spec: SphereRenderSpec):
    """Render the sphere; returns (image H x W x 3, background bool mask)."""
    check_hdr(env)
    normals, fg = _sphere_geometry(spec.image_size)
    img = np.zeros((spec.image_size, spec.image_size, 3), dtype=np.float64)
    n = normals[fg]
    albedo = np.asarray(spec.albedo, dtype=np.float64)

    if spec.material == "mirror":
        refl = _VIEW[None, :] - 2.0 * (n @ _VIEW)[:, None] * n
        refl /= np.linalg.norm(refl, axis=-1, keepdims=True)
        u, v = direction_to_pixel(refl, env.shape[0], env.shape[1])
        img[fg] = albedo * sample_equirect(env, u, v)
    else:
        dirs, dw = _env_directions_and_weights(env)
        radiance = env.reshape(-1, 3) * dw[:, None]
        if spec.material == "diffuse":
            axes = n
        else:
            axes = _VIEW[None, :] - 2.0 * (n @ _VIEW)[:, None] * n
            axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        out = np.empty((axes.shape[0], 3))
        chunk = max(1, int(4e6 // max(1, dirs.shape[0])))
        for i in range(0, axes.shape[0], chunk):
            cos = np.maximum(0.0, axes[i:i + chunk] @ dirs.T)
            if spec.material == "diffuse":
                out[i:i + chunk] = (cos @ radiance) / math.pi
            else:
                lobe = cos ** spec.glossy_exponent
                norm = lobe @ dw
                out[i:i + chunk] = (lobe @ radiance) / norm[:, None]
        img[fg] = albedo * out
    return img, ~fg


def mirror_highlight_pixel(light_dir: np.ndarray, image_size: int):
    """Analytic image location of a mirror highlight for a distant light.

    Returns continuous (row, col) coordinates, or None when the reflecting
    normal faces away from the camera.
    """
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    half = light - _VIEW
    nh = np.linalg.norm(half)
    if nh < 1e-9:
        return None
    n = half / nh
    if n[0] >= 0:
        return None
    col = (n[1] * _FILL + 1.0) / 2.0 * image_size - 0.5
    row = (-n[2] * _FILL + 1.0) / 2.0 * image_size - 0.5
    return row, col


def _foreground(pred: np.ndarray, gt: np.ndarray, bg_mask: np.ndarray):
    if pred.shape != gt.shape:
        raise ValueError("pred/gt shape mismatch")
    fg = ~np.asarray(bg_mask, dtype=bool)
    if not np.any(fg):
        raise ValueError("empty foreground")
    return pred[fg], gt[fg]


def rmse(pred: np.ndarray, gt: np.ndarray, bg_mask: np.ndarray) -> float:
    """Root mean squared error over non-background pixels and channels."""
    p, g = _foreground(pred, gt, bg_mask)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def si_rmse(pred: np.ndarray, gt: np.ndarray, bg_mask: np.ndarray) -> float:
    """RMSE after the least-squares optimal global scaling of the prediction."""
    p, g = _foreground(pred, gt, bg_mask)
    denom = float(np.sum(p * p))
    if denom <= 0.0:
        return float(np.sqrt(np.mean((p - g) ** 2)))
    s = float(np.sum(p * g)) / denom
    return float(np.sqrt(np.mean((s * p - g) ** 2)))


def angular_error(pred: np.ndarray, gt: np.ndarray, bg_mask: np.ndarray) -> float:
    """Mean per-pixel angle (degrees) between predicted and true RGB vectors."""
    p, g = _foreground(pred, gt, bg_mask)
    np_norm = np.linalg.norm(p, axis=-1)
    ng_norm = np.linalg.norm(g, axis=-1)
    ok = (np_norm >= 1e-8) & (ng_norm >= 1e-8)
    if not np.any(ok):
        raise ValueError("all pixels skipped (zero-norm colors)")
    cosang = np.sum(p[ok] * g[ok], axis=-1) / (np_norm[ok] * ng_norm[ok])
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.mean(ang))


def evaluate(
    pred_panos: list[np.ndarray],
    gt_panos: list[np.ndarray],
    specs: dict[str, SphereRenderSpec] | None = None,
) -> MetricsReport:
    """Render all materials for each (pred, gt) pair and aggregate metrics."""
    if len(pred_panos) != len(gt_panos):
        raise ValueError("pred/gt list length mismatch")
    if specs is None:
        specs = {m: SphereRenderSpec(material=m) for m in MATERIALS}
    report = MetricsReport()
    sums = {m: {"rmse": 0.0, "si_rmse": 0.0, "angular_error_degrees": 0.0}
            for m in specs}
    for idx, (pred, gt) in enumerate(zip(pred_panos, gt_panos)):
        row = {"index": idx}
        for mat, spec in specs.items():
            pimg, bg = render_sphere(pred, spec)
            gimg, _ = render_sphere(gt, spec)
            vals = {
                "rmse": rmse(pimg, gimg, bg),
                "si_rmse": si_rmse(pimg, gimg, bg),
                "angular_error_degrees": angular_error(pimg, gimg, bg),
            }
            row[mat] = vals
            for k, v in vals.items():
                sums[mat][k] += v
        report.per_image.append(row)
    n = max(1, len(pred_panos))
    report.per_material = {
        mat: {k: v / n for k, v in acc.items()} for mat, acc in sums.items()
    }
    return report
