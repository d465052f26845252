"""Command-line surface: dataset synthesis, training, inversion, editing, eval.

Every subcommand resolves its settings in three layers (built-in defaults,
then a TOML config file, then explicit flags), echoes the resolved config
into the output directory, and exits 2 on argument errors or 1 on runtime
failures with a machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import editing, hdr_io, inversion, models, spheres, synthdata, training
from .panorama import CameraSpec

__all__ = ["main", "toml_dumps"]


def toml_dumps(obj: dict, _prefix: str = "") -> str:
    """Minimal TOML emitter for nested dicts of scalars and flat lists."""
    lines = []
    sections = []
    for key, val in obj.items():
        if isinstance(val, dict):
            sections.append((key, val))
        else:
            lines.append(f"{key} = {_toml_value(val)}")
    out = "\n".join(lines)
    for key, val in sections:
        name = f"{_prefix}{key}"
        out += f"\n\n[{name}]\n" + toml_dumps(val, _prefix=name + ".")
    return out.strip() + "\n"


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (int, float)):
        return repr(val)
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in val) + "]"
    return json.dumps(str(val))


def _resolve(defaults: dict, config_path, flags: dict) -> dict:
    merged = dict(defaults)
    if config_path:
        merged.update(tomllib.loads(Path(config_path).read_text()))
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _echo_config(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.toml").write_text(toml_dumps(cfg))


def _parse_resolution(text: str) -> tuple[int, int]:
    h, w = (int(x) for x in text.lower().split("x"))
    return h, w


def _load_image(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".hdr":
        return hdr_io.load_hdr(path)
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _save_preview(img: np.ndarray, path: Path) -> None:
    from PIL import Image

    arr = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def cmd_synth_data(args) -> None:
    cfg = _resolve(
        {"count": 10, "seed": 0, "resolution": "64x128", "split_ratio": 0.8},
        args.config,
        {"count": args.count, "seed": args.seed, "resolution": args.resolution,
         "split_ratio": args.split_ratio},
    )
    if cfg["count"] < 2:
        raise SystemExit(2)
    out = Path(args.out)
    res = _parse_resolution(cfg["resolution"])
    panos = [
        synthdata.synth_pano(synthdata.random_scene(cfg["seed"] * 100003 + i), *res)[0]
        for i in range(cfg["count"])
    ]
    synthdata.prepare_dataset(
        panos, out, resolution=res, split_ratio=cfg["split_ratio"], seed=cfg["seed"]
    )
    _echo_config(out, cfg)


def cmd_train(args) -> None:
    defaults = {
        "steps": 2000, "batch": 8, "lr": 0.0025, "beta1": 0.0, "beta2": 0.99,
        "resolution": "64x128", "latent_dim": 64, "channel_base": 1024,
        "channel_max": 64, "seed": 0, "checkpoint_every": 1000,
    }
    cfg = _resolve(defaults, args.config, {
        "steps": args.steps, "batch": args.batch, "resolution": args.resolution,
        "seed": args.seed,
    })
    out = Path(args.out)
    gen_cfg = models.GeneratorConfig(
        latent_dim=cfg["latent_dim"],
        resolution=_parse_resolution(cfg["resolution"]),
        channel_base=cfg["channel_base"],
        channel_max=cfg["channel_max"],
    )
    train_cfg = training.TrainConfig(
        steps=cfg["steps"], batch=cfg["batch"], lr=cfg["lr"],
        beta1=cfg["beta1"], beta2=cfg["beta2"], seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
    )
    _echo_config(out, cfg)
    manifest = Path(args.data) / "manifest.json"
    resume = args.resume if args.resume else None
    training.train(manifest, gen_cfg, train_cfg, out, resume_from=resume)


def cmd_invert(args) -> None:
    defaults = {
        "fov_h": 90.0, "fov_v": 67.5, "yaw": 0.0, "pitch": 0.0, "seed": 0,
        "steps_latent": 500, "steps_pivotal": 350, "beta_l2": 10.0,
        "lambda_n": 1e5, "perceptual": "auto",
    }
    cfg = _resolve(defaults, args.config, {
        "fov_h": args.fov_h, "fov_v": args.fov_v, "yaw": args.yaw,
        "pitch": args.pitch, "seed": args.seed,
        "steps_latent": args.steps_latent, "steps_pivotal": args.steps_pivotal,
    })
    ckpt = models.ModelCheckpoint.load(args.ckpt)
    crop = _load_image(Path(args.image))
    cam = CameraSpec(
        fov_h=cfg["fov_h"], fov_v=cfg["fov_v"], yaw=cfg["yaw"],
        pitch=cfg["pitch"], crop_w=crop.shape[1], crop_h=crop.shape[0],
    )
    hp = inversion.HyperParams(
        steps_latent=cfg["steps_latent"], steps_pivotal=cfg["steps_pivotal"],
        beta_l2=cfg["beta_l2"], lambda_n=cfg["lambda_n"],
        perceptual=cfg["perceptual"],
    )
    out = Path(args.out)
    result = inversion.estimate_lighting(crop, cam, ckpt, hp, seed=cfg["seed"])
    inversion.save_result(result, out)
    _echo_config(out, cfg)


def cmd_edit(args) -> None:
    defaults = {"delta": 1.0, "steps": 200, "lr": 0.02, "perceptual": "auto",
                "sample_seed": 0, "truncation": 0.7}
    cfg = _resolve(defaults, args.config, {
        "delta": args.delta, "steps": args.steps, "sample_seed": args.sample_seed,
    })
    ckpt = models.ModelCheckpoint.load(args.ckpt)
    if args.latent:
        w0 = np.load(Path(args.latent) / "w_star.npy")
        with np.load(Path(args.latent) / "n_star.npz") as nz:
            noise = [nz[k] for k in nz.files]
    else:
        w0, noise = models.sample_latents(
            ckpt, cfg["sample_seed"], truncation=cfg["truncation"]
        )
    bbox = tuple(int(x) for x in args.bbox.split(","))
    if len(bbox) != 4:
        raise SystemExit(2)
    spec = editing.EditSpec(
        bbox=bbox, delta=cfg["delta"], steps=cfg["steps"], lr=cfg["lr"],
        perceptual=cfg["perceptual"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    before = inversion._render_hdr(ckpt.generator_state, w0, noise, ckpt)
    w_star, trace, after = editing.edit_lighting(w0, noise, ckpt, spec)
    hdr_io.save_hdr(before, out / "before.hdr")
    hdr_io.save_hdr(after, out / "after.hdr")
    tm = ckpt.tone_map
    from .panorama import tonemap

    _save_preview(np.clip(tonemap(before, tm), 0, 1), out / "before_ldr.png")
    _save_preview(np.clip(tonemap(after, tm), 0, 1), out / "after_ldr.png")
    np.save(out / "w_edit.npy", w_star)
    _echo_config(out, {**cfg, "bbox": list(bbox)})


def cmd_eval(args) -> None:
    pred_paths = sorted(Path(args.pred_dir).glob("*.hdr"))
    gt_paths = sorted(Path(args.gt_dir).glob("*.hdr"))
    if len(pred_paths) != len(gt_paths) or not pred_paths:
        raise SystemExit(2)
    cfg = _resolve({"image_size": 64}, args.config, {"image_size": args.image_size})
    preds = [hdr_io.load_hdr(p) for p in pred_paths]
    gts = [hdr_io.load_hdr(p) for p in gt_paths]
    specs = {
        m: spheres.SphereRenderSpec(material=m, image_size=cfg["image_size"])
        for m in spheres.MATERIALS
    }
    report = spheres.evaluate(preds, gts, specs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json())
    _echo_config(out, cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panolight")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic HDR dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution")
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the coupled dual-branch GAN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--resolution")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("invert", help="estimate HDR lighting from an LDR crop")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fov", dest="fov_h", type=float)
    p.add_argument("--fov-v", dest="fov_v", type=float)
    p.add_argument("--yaw", type=float)
    p.add_argument("--pitch", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps-latent", dest="steps_latent", type=int)
    p.add_argument("--steps-pivotal", dest="steps_pivotal", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("edit", help="edit lighting inside a bounding box")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bbox", required=True, help="u0,v0,u1,v1 in pixels")
    p.add_argument("--out", required=True)
    p.add_argument("--latent", help="inversion result directory with w/noise")
    p.add_argument("--sample-seed", dest="sample_seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="sphere-render metrics of pred vs gt panoramas")
    p.add_argument("--pred-dir", dest="pred_dir", required=True)
    p.add_argument("--gt-dir", dest="gt_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except SystemExit:
        raise
    except FileNotFoundError as exc:
        print(
            "error: " + json.dumps({"code": "missing-file", "message": str(exc)}),
            file=sys.stderr,
        )
        return 2
    except (ValueError, KeyError) as exc:
        print(
            "error: " + json.dumps({"code": "bad-input", "message": str(exc)}),
            file=sys.stderr,
        )
        return 2
    except Exception as exc:
        print(
            "error: " + json.dumps({"code": "runtime", "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
