"""Synthetic panorama generation, dataset preparation and diagnostics.

The synthetic scenes stand in for a real indoor HDR corpus at desk scale:
ambient radiance plus low-frequency procedural shading forms the LDR-range
content, and a few bright discs with soft falloff act as light sources whose
ground-truth parameters are known.  Real .hdr panoramas are ingested through
the same preparation path.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import hdr_io
from .panorama import (
    CameraSpec,
    ToneMapParams,
    check_hdr,
    compute_alpha,
    crop_from_pano,
    pixel_to_direction,
    tonemap,
    inverse_tonemap,
)

__all__ = [
    "LightSpec",
    "SceneSpec",
    "DatasetManifest",
    "DistributionReport",
    "random_scene",
    "synth_pano",
    "resize_area",
    "prepare_dataset",
    "load_split",
    "make_test_pair",
    "analyze_distributions",
]

# taper half-width of a light disc, as a fraction of its angular radius
_EDGE_SOFTNESS = 0.15


@dataclass(frozen=True)
class LightSpec:
    direction: tuple[float, float, float]
    angular_radius: float  # radians
    intensity: tuple[float, float, float]

    def __post_init__(self):
        if not (0.0 < self.angular_radius <= math.pi / 4):
            raise ValueError("angular_radius must be in (0, pi/4]")
        if any(i <= 0 for i in self.intensity):
            raise ValueError("light intensity must be positive")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    lights: tuple[LightSpec, ...] = ()
    ambient: tuple[float, float, float] = (0.2, 0.2, 0.2)
    wall_texture_scale: float = 0.3


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)  # {path, split, alpha_used}
    resolution: tuple[int, int] = (64, 128)
    tone_map: ToneMapParams = field(default_factory=ToneMapParams)

    def to_json(self) -> str:
        obj = {
            "entries": self.entries,
            "resolution": list(self.resolution),
            "tone_map": {"alpha": self.tone_map.alpha, "gamma": self.tone_map.gamma},
        }
        return json.dumps(obj, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        obj = json.loads(text)
        return cls(
            entries=obj["entries"],
            resolution=tuple(obj["resolution"]),
            tone_map=ToneMapParams(**obj["tone_map"]),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())


@dataclass
class DistributionReport:
    per_image: list = field(default_factory=list)
    ldr_pass_fraction: float = 0.0
    hdrminus_pass_fraction: float = 0.0


def random_scene(
    seed: int,
    n_lights: int | None = None,
    intensity_range: tuple[float, float] = (10.0, 60.0),
    radius_range: tuple[float, float] = (0.06, 0.18),
    ambient_level: float = 0.6,
) -> SceneSpec:
    """Draw a random indoor-like scene spec, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    if n_lights is None:
        n_lights = int(rng.integers(1, 4))
    lights = []
    for _ in range(n_lights):
        # keep lights away from the poles so LFOV crops can reach them
        lon = rng.uniform(-math.pi, math.pi)
        colat = rng.uniform(0.25 * math.pi, 0.7 * math.pi)
        d = (
            math.sin(colat) * math.cos(lon),
            math.sin(colat) * math.sin(lon),
            math.cos(colat),
        )
        base = rng.uniform(*intensity_range)
        tint = rng.uniform(0.85, 1.15, size=3)
        lights.append(
            LightSpec(
                direction=d,
                angular_radius=float(rng.uniform(*radius_range)),
                intensity=tuple(float(base * t) for t in tint),
            )
        )
    amb = ambient_level * rng.uniform(0.6, 1.4, size=3)
    return SceneSpec(
        seed=seed,
        lights=tuple(lights),
        ambient=tuple(float(a) for a in amb),
        wall_texture_scale=float(rng.uniform(0.2, 0.5)),
    )


def _texture_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth zero-mean field: a sum of random low-frequency sinusoids."""
    uu, vv = np.meshgrid(
        (np.arange(w) + 0.5) / w * 2 * math.pi, (np.arange(h) + 0.5) / h * math.pi
    )
    out = np.zeros((h, w))
    for _ in range(12):
        ku = int(rng.integers(0, 4))
        kv = int(rng.integers(1, 4))
        ph = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.3, 1.0)
        out += amp * np.cos(ku * uu + ph) * np.sin(kv * vv)
    out -= out.mean()
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def synth_pano(spec: SceneSpec, h: int, w: int):
    """Render a procedural HDR panorama; returns (pano, spec.lights)."""
    if w != 2 * h:
        raise ValueError("panorama must satisfy W = 2H")
    rng = np.random.default_rng(spec.seed)
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = pixel_to_direction(uu, vv, h, w)
    ambient = np.asarray(spec.ambient, dtype=np.float64)
    shade = 1.0 + spec.wall_texture_scale * _texture_field(rng, h, w)
    base = ambient[None, None, :] * np.clip(shade, 0.05, None)[..., None]
    emission = np.zeros((h, w, 3))
    occlusion = np.ones((h, w))
    for light in spec.lights:
        d = np.asarray(light.direction, dtype=np.float64)
        d /= np.linalg.norm(d)
        ang = np.arccos(np.clip(dirs @ d, -1.0, 1.0))
        rin = light.angular_radius * (1.0 - _EDGE_SOFTNESS)
        rout = light.angular_radius * (1.0 + _EDGE_SOFTNESS)
        t = np.clip((ang - rin) / (rout - rin), 0.0, 1.0)
        profile = 0.5 * (1.0 + np.cos(math.pi * t))
        emission += profile[..., None] * np.asarray(light.intensity)[None, None, :]
        occlusion *= 1.0 - profile
    # light discs replace the ambient background rather than add on top of it,
    # so a lone light's peak radiance equals its intensity
    pano = base * occlusion[..., None] + emission
    return check_hdr(pano), list(spec.lights)


def resize_area(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Radiance-preserving downscale (box average); integer factors exact."""
    h0, w0 = img.shape[:2]
    if h0 == h and w0 == w:
        return img.copy()
    if h0 % h == 0 and w0 % w == 0:
        fh, fw = h0 // h, w0 // w
        return img.reshape(h, fh, w, fw, -1).mean(axis=(1, 3)).reshape(h, w, *img.shape[2:])
    import cv2

    return cv2.resize(img, (w, h), interpolation=cv2.INTER_AREA).astype(img.dtype)


def prepare_dataset(
    source,
    out_dir: str | os.PathLike,
    resolution: tuple[int, int] = (64, 128),
    split_ratio: float = 0.8,
    seed: int = 0,
    gamma: float = 2.4,
) -> DatasetManifest:
    """Build a training-ready dataset directory from panoramas.

    ``source`` is either a directory of .hdr files or a list of HDR arrays.
    A single global tone-map alpha is computed from the training split and
    recorded in the manifest; tensors are stored tone-mapped as .npy files.
    """
    h, w = resolution
    if w != 2 * h:
        raise ValueError("resolution must satisfy W = 2H")
    if isinstance(source, (str, os.PathLike)):
        paths = sorted(Path(source).glob("*.hdr"))
        panos = [hdr_io.load_hdr(p) for p in paths]
        names = [p.stem for p in paths]
    else:
        panos = list(source)
        names = [f"pano_{i:05d}" for i in range(len(panos))]
    if len(panos) < 2:
        raise ValueError("need at least 2 panoramas")
    panos = [resize_area(check_hdr(p), h, w) for p in panos]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(panos))
    n_train = max(1, int(round(split_ratio * len(panos))))
    n_train = min(n_train, len(panos) - 1)
    train_idx = set(order[:n_train].tolist())

    train_pixels = np.concatenate(
        [panos[i].ravel() for i in sorted(train_idx)]
    )
    alpha = compute_alpha(train_pixels)
    tm = ToneMapParams(alpha=alpha, gamma=gamma)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(resolution=(h, w), tone_map=tm)
    for i, pano in enumerate(panos):
        split = "train" if i in train_idx else "test"
        rel = f"{names[i]}.npy"
        np.save(out_dir / rel, tonemap(pano, tm).astype(np.float32))
        manifest.entries.append({"path": rel, "split": split, "alpha_used": alpha})
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_split(manifest_path: str | os.PathLike, split: str = "train") -> np.ndarray:
    """Stack the tone-mapped tensors of one split into an N x H x W x 3 array."""
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    arrays = [
        np.load(manifest_path.parent / e["path"])
        for e in manifest.entries
        if e["split"] == split
    ]
    if not arrays:
        raise ValueError(f"no entries in split {split!r}")
    return np.stack(arrays)


def make_test_pair(pano: np.ndarray, cam: CameraSpec, p: ToneMapParams):
    """Crop an LDR LFOV observation; returns (crop in [0,1], ground-truth pano)."""
    check_hdr(pano)
    crop = np.clip(tonemap(crop_from_pano(pano, cam), p), 0.0, 1.0)
    return crop, pano


def _fit_ok(values: np.ndarray, rng: np.random.Generator, max_n: int = 256):
    """Gaussian plausibility of a pixel population (D'Agostino, p > 0.05).

    Returns True/False, or None when the population is too small or has
    degenerate variance.  Large populations are subsampled so the test keeps
    reasonable power instead of rejecting everything.
    """
    values = values.ravel()
    if values.size < 20:
        return None
    if values.size > max_n:
        values = rng.choice(values, size=max_n, replace=False)
    if float(np.std(values)) < 1e-12:
        return None
    _, p = stats.normaltest(values)
    return bool(p > 0.05)


def analyze_distributions(
    manifest_path: str | os.PathLike, seed: int = 0
) -> DistributionReport:
    """Per-image Gaussian-fit diagnostic of LDR vs above-LDR-range pixels."""
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    if not manifest.entries:
        raise ValueError("empty manifest")
    rng = np.random.default_rng(seed)
    report = DistributionReport()
    ldr_flags, hdr_flags = [], []
    for entry in manifest.entries:
        tens = np.load(manifest_path.parent / entry["path"]).astype(np.float64)
        tm = ToneMapParams(alpha=entry["alpha_used"], gamma=manifest.tone_map.gamma)
        linear = inverse_tonemap(tens, tm)
        lum = linear.mean(axis=-1)
        ldr_vals = lum[lum <= 1.0]
        hdr_vals = lum[lum > 1.0]
        row = {
            "path": entry["path"],
            "hdrminus_pixel_fraction": float(hdr_vals.size / lum.size),
            "max_intensity": float(lum.max()),
            "flags": [],
        }
        ldr_ok = _fit_ok(ldr_vals, rng)
        if ldr_ok is None:
            row["flags"].append("degenerate-ldr")
        else:
            ldr_flags.append(ldr_ok)
        row["ldr_gauss_fit_ok"] = ldr_ok
        if hdr_vals.size == 0:
            row["flags"].append("no-hdrminus")
            hdr_ok = None
        else:
            hdr_ok = _fit_ok(hdr_vals, rng)
            if hdr_ok is None:
                row["flags"].append("degenerate-hdrminus")
            else:
                hdr_flags.append(hdr_ok)
        row["hdrminus_gauss_fit_ok"] = hdr_ok
        report.per_image.append(row)
    report.ldr_pass_fraction = float(np.mean(ldr_flags)) if ldr_flags else 0.0
    report.hdrminus_pass_fraction = float(np.mean(hdr_flags)) if hdr_flags else 0.0
    return report
