"""Equirectangular panorama geometry, tone mapping and mask construction.

Conventions (frozen; every other module depends on them):

  * Panoramas are H x W x 3 float arrays with W = 2H.
  * World frame is right handed, z-up.  Forward is +x.
  * A direction with longitude ``lon`` (measured from +x toward +y) and
    colatitude ``colat`` (0 at the north pole, i.e. +z) maps to continuous
    pixel coordinates

        u = (lon + pi) / (2 pi) * W        (u = 0 at lon = -pi)
        v = colat / pi * H                 (v = 0 at north pole)

    Pixel (row r, col c) has its center at (u, v) = (c + 0.5, r + 0.5).
  * HDR panoramas store nonnegative linear radiance; LDR panoramas store
    values in [0, 1].
  * Interpolation is bilinear with horizontal wrap-around and vertical edge
    clamping; masks use nearest-neighbor logic only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ToneMapParams",
    "CameraSpec",
    "MaskSet",
    "check_hdr",
    "check_ldr",
    "tonemap",
    "inverse_tonemap",
    "compute_alpha",
    "psi",
    "phi",
    "solid_angle_weights",
    "pixel_to_direction",
    "direction_to_pixel",
    "sample_equirect",
    "camera_basis",
    "crop_from_pano",
    "lfov_to_masked_pano",
    "focal_mask",
    "luminance",
]


@dataclass(frozen=True)
class ToneMapParams:
    """Parameters of the fixed gamma tone map x' = alpha * x**(1/gamma)."""

    alpha: float = 0.5
    gamma: float = 2.4

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera for limited-field-of-view crops of a panorama.

    Angles are degrees.  Yaw rotates the view direction about +z (toward +y
    for positive yaw); pitch tilts it up toward +z.
    """

    fov_h: float = 90.0
    fov_v: float = 67.5
    yaw: float = 0.0
    pitch: float = 0.0
    crop_w: int = 128
    crop_h: int = 96

    def __post_init__(self):
        if not (0.0 < self.fov_h < 180.0):
            raise ValueError(f"fov_h must be in (0, 180), got {self.fov_h}")
        if not (0.0 < self.fov_v < 180.0):
            raise ValueError(f"fov_v must be in (0, 180), got {self.fov_v}")
        if self.crop_w < 8 or self.crop_h < 8:
            raise ValueError("crop dimensions must be >= 8")
        if not (-90.0 < self.pitch < 90.0):
            raise ValueError("pitch must be in (-90, 90)")


@dataclass(frozen=True)
class MaskSet:
    """Visibility mask of an LFOV observation plus its focal (bright) mask."""

    visibility: np.ndarray  # H x W bool, True where the crop observed the pano
    focal: np.ndarray       # H x W bool, True for the top-fraction brightest

    def __post_init__(self):
        if self.visibility.shape != self.focal.shape:
            raise ValueError("visibility and focal shapes differ")
        if np.any(self.focal & ~self.visibility):
            raise ValueError("focal mask must be a subset of visibility")


def _check_pano_shape(pixels: np.ndarray) -> None:
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 array, got shape {pixels.shape}")
    h, w = pixels.shape[:2]
    if w != 2 * h:
        raise ValueError(f"panorama must satisfy W = 2H, got {h}x{w}")


def check_hdr(pixels: np.ndarray) -> np.ndarray:
    """Validate an HDR panorama: H x W x 3, W = 2H, finite, nonnegative."""
    _check_pano_shape(pixels)
    if not np.all(np.isfinite(pixels)):
        raise ValueError("HDR panorama contains NaN or Inf")
    if np.any(pixels < 0):
        raise ValueError("HDR panorama contains negative radiance")
    return pixels


def check_ldr(pixels: np.ndarray) -> np.ndarray:
    """Validate an LDR panorama: H x W x 3, W = 2H, values in [0, 1]."""
    _check_pano_shape(pixels)
    if not np.all(np.isfinite(pixels)):
        raise ValueError("LDR panorama contains NaN or Inf")
    if np.any(pixels < 0) or np.any(pixels > 1):
        raise ValueError("LDR panorama has values outside [0, 1]")
    return pixels


def tonemap(x: np.ndarray, p: ToneMapParams) -> np.ndarray:
    """Map linear radiance to the compressed domain: alpha * x**(1/gamma)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("tonemap input must be nonnegative")
    return p.alpha * np.power(x, 1.0 / p.gamma)


def inverse_tonemap(xp: np.ndarray, p: ToneMapParams) -> np.ndarray:
    """Invert :func:`tonemap`: (x' / alpha)**gamma."""
    xp = np.asarray(xp, dtype=np.float64)
    if np.any(xp < 0):
        raise ValueError("inverse_tonemap input must be nonnegative")
    return np.power(xp / p.alpha, p.gamma)


def compute_alpha(population: np.ndarray) -> float:
    """Tone-map scale: 0.5 divided by the median of the pixel population."""
    population = np.asarray(population, dtype=np.float64).ravel()
    if population.size == 0:
        raise ValueError("empty pixel population")
    if np.any(population < 0):
        raise ValueError("population must be nonnegative")
    med = float(np.median(population))
    if med <= 0.0:
        raise ValueError("degenerate median: population median is zero")
    return 0.5 / med


def psi(g: np.ndarray, p: ToneMapParams) -> np.ndarray:
    """HDR output transform: clamp raw output at 0, then inverse tone map."""
    g = np.asarray(g, dtype=np.float64)
    _check_pano_shape(g)
    return inverse_tonemap(np.maximum(g, 0.0), p)


def phi(g: np.ndarray) -> np.ndarray:
    """LDR output transform: clamp raw output to [0, 1]."""
    g = np.asarray(g, dtype=np.float64)
    _check_pano_shape(g)
    return np.clip(g, 0.0, 1.0)


def solid_angle_weights(h: int, w: int) -> np.ndarray:
    """Per-pixel solid angle (steradians) of an H x W equirectangular grid.

    Row r gets (2 pi / W) * (pi / H) * sin(colat at the row center); the sum
    over all pixels approximates 4 pi (to ~1e-3 relative for H >= 32).
    """
    if h < 1 or w != 2 * h:
        raise ValueError(f"expected W = 2H with H >= 1, got {h}x{w}")
    colat = (np.arange(h) + 0.5) * math.pi / h
    row_w = (2.0 * math.pi / w) * (math.pi / h) * np.sin(colat)
    return np.repeat(row_w[:, None], w, axis=1)


def pixel_to_direction(u, v, h: int, w: int) -> np.ndarray:
    """Continuous pixel coordinates -> unit direction(s), shape (..., 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lon = u * (2.0 * math.pi / w) - math.pi
    colat = v * (math.pi / h)
    sin_c = np.sin(colat)
    return np.stack(
        [sin_c * np.cos(lon), sin_c * np.sin(lon), np.cos(colat)], axis=-1
    )


def direction_to_pixel(d: np.ndarray, h: int, w: int):
    """Unit direction(s) -> continuous (u, v) pixel coordinates."""
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm < 1e-12):
        raise ValueError("zero direction vector")
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("direction vectors must be unit length")
    lon = np.arctan2(d[..., 1], d[..., 0])
    colat = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    u = (lon + math.pi) * (w / (2.0 * math.pi))
    v = colat * (h / math.pi)
    return u, v


def sample_equirect(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample at continuous (u, v); wraps horizontally, clamps rows."""
    h, w = img.shape[:2]
    uu = np.asarray(u, dtype=np.float64) - 0.5
    vv = np.asarray(v, dtype=np.float64) - 0.5
    c0 = np.floor(uu).astype(np.int64)
    r0 = np.floor(vv).astype(np.int64)
    fu = uu - c0
    fv = vv - r0
    c1 = (c0 + 1) % w
    c0 = c0 % w
    r1 = np.clip(r0 + 1, 0, h - 1)
    r0 = np.clip(r0, 0, h - 1)
    fu = fu[..., None]
    fv = fv[..., None]
    top = img[r0, c0] * (1.0 - fu) + img[r0, c1] * fu
    bot = img[r1, c0] * (1.0 - fu) + img[r1, c1] * fu
    return top * (1.0 - fv) + bot * fv


def _sample_clamped(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample of a flat (non-wrapping) image, edge clamped."""
    h, w = img.shape[:2]
    xx = np.asarray(x, dtype=np.float64) - 0.5
    yy = np.asarray(y, dtype=np.float64) - 0.5
    c0 = np.floor(xx).astype(np.int64)
    r0 = np.floor(yy).astype(np.int64)
    fu = xx - c0
    fv = yy - r0
    c1 = np.clip(c0 + 1, 0, w - 1)
    c0 = np.clip(c0, 0, w - 1)
    r1 = np.clip(r0 + 1, 0, h - 1)
    r0 = np.clip(r0, 0, h - 1)
    fu = fu[..., None]
    fv = fv[..., None]
    top = img[r0, c0] * (1.0 - fu) + img[r0, c1] * fu
    bot = img[r1, c0] * (1.0 - fu) + img[r1, c1] * fu
    return top * (1.0 - fv) + bot * fv


def camera_basis(cam: CameraSpec):
    """Orthonormal (forward, right, up) triple of a camera spec."""
    yaw = math.radians(cam.yaw)
    pitch = math.radians(cam.pitch)
    f = np.array(
        [
            math.cos(pitch) * math.cos(yaw),
            math.cos(pitch) * math.sin(yaw),
            math.sin(pitch),
        ]
    )
    world_up = np.array([0.0, 0.0, 1.0])
    r = np.cross(world_up, f)
    r /= np.linalg.norm(r)
    up = np.cross(f, r)
    return f, r, up


def crop_from_pano(pano: np.ndarray, cam: CameraSpec) -> np.ndarray:
    """Render a perspective crop of a panorama (bilinear sampling)."""
    _check_pano_shape(pano)
    h, w = pano.shape[:2]
    f, r, up = camera_basis(cam)
    th = math.tan(math.radians(cam.fov_h) / 2.0)
    tv = math.tan(math.radians(cam.fov_v) / 2.0)
    jj, ii = np.meshgrid(np.arange(cam.crop_w), np.arange(cam.crop_h))
    sx = (2.0 * (jj + 0.5) / cam.crop_w - 1.0) * th
    sy = (2.0 * (ii + 0.5) / cam.crop_h - 1.0) * tv
    dirs = f[None, None] + sx[..., None] * r[None, None] - sy[..., None] * up[None, None]
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    u, v = direction_to_pixel(dirs, h, w)
    return sample_equirect(pano, u, v)


def lfov_to_masked_pano(crop: np.ndarray, cam: CameraSpec, h: int, w: int):
    """Back-project an LFOV crop onto the sphere as a masked panorama.

    Returns (masked LDR panorama with zeros outside, visibility bool mask).
    """
    if crop.shape[0] != cam.crop_h or crop.shape[1] != cam.crop_w:
        raise ValueError("crop dimensions do not match the camera spec")
    if np.any(crop < 0) or np.any(crop > 1):
        raise ValueError("crop values must lie in [0, 1]")
    if w != 2 * h:
        raise ValueError("panorama must satisfy W = 2H")
    f, r, up = camera_basis(cam)
    th = math.tan(math.radians(cam.fov_h) / 2.0)
    tv = math.tan(math.radians(cam.fov_v) / 2.0)
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = pixel_to_direction(uu, vv, h, w)
    a = dirs @ f
    b = dirs @ r
    c = dirs @ up
    with np.errstate(divide="ignore", invalid="ignore"):
        bx = np.where(a > 0, b / a, np.inf)
        cy = np.where(a > 0, c / a, np.inf)
    visible = (a > 0) & (np.abs(bx) <= th) & (np.abs(cy) <= tv)
    if not np.any(visible):
        raise ValueError("camera frustum covers no panorama pixel")
    x = (bx / th + 1.0) * 0.5 * cam.crop_w
    y = (-cy / tv + 1.0) * 0.5 * cam.crop_h
    pano = np.zeros((h, w, 3), dtype=np.float64)
    pano[visible] = _sample_clamped(crop, x[visible], y[visible])
    return np.clip(pano, 0.0, 1.0), visible


def luminance(img: np.ndarray) -> np.ndarray:
    """Pixel brightness used for focal ranking: mean of the RGB channels."""
    return np.mean(img, axis=-1)


def focal_mask(
    masked_pano: np.ndarray, visibility: np.ndarray, fraction: float = 0.10
) -> np.ndarray:
    """Mark the ceil(fraction * |visible|) brightest visible pixels.

    Ties are broken by row-major scan order so the result is deterministic.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    vis = np.asarray(visibility, dtype=bool)
    n_vis = int(vis.sum())
    if n_vis == 0:
        raise ValueError("empty visibility mask")
    k = math.ceil(fraction * n_vis)
    lum = luminance(masked_pano)
    flat_idx = np.flatnonzero(vis.ravel())
    # stable sort on -lum keeps row-major order among ties
    order = np.argsort(-lum.ravel()[flat_idx], kind="stable")
    chosen = flat_idx[order[:k]]
    focal = np.zeros(vis.shape, dtype=bool)
    focal.ravel()[chosen] = True
    return focal
