import csv

import numpy as np
import pytest
import torch

from panolight import hdr_io
from panolight.inversion import (
    HyperParams,
    InversionResult,
    estimate_lighting,
    invert_latent,
    pivotal_finetune,
    save_result,
)
from panolight.models import random_noise_maps, raw_to_numpy, sample_latents
from panolight.panorama import (
    CameraSpec,
    MaskSet,
    crop_from_pano,
    focal_mask,
    phi,
    psi,
)

FAST = HyperParams(steps_latent=60, steps_pivotal=30, perceptual="patch_stats")


def target_observation(ckpt, seed=11):
    """A masked LDR view of a panorama the generator can produce exactly."""
    w0, noise0 = sample_latents(ckpt, seed=seed, truncation=0.7)
    gen = ckpt.build_generator()
    with torch.no_grad():
        raw = gen(
            torch.from_numpy(w0)[None],
            [torch.from_numpy(n)[None] for n in noise0],
        )
    ldr = phi(raw_to_numpy(raw))
    h, w = ckpt.config.resolution
    vis = np.zeros((h, w), dtype=bool)
    vis[:, : w // 2] = True
    obs = ldr * vis[..., None]
    masks = MaskSet(visibility=vis, focal=focal_mask(obs, vis, 0.1))
    return obs, masks, ldr


class TestHyperParams:
    def test_defaults_match_published_settings(self):
        hp = HyperParams()
        assert hp.lambda_n == 1e5
        assert hp.lambda_l2_r == 10.0
        assert hp.lambda_l2_rp == 10.0
        assert hp.eta == 1.0
        assert hp.beta_l2 == 10.0
        assert hp.interp_alpha == 30.0
        assert (hp.steps_latent, hp.steps_pivotal) == (500, 350)
        assert (hp.lr_latent, hp.lr_pivotal) == (0.1, 3e-4)

    def test_validation(self):
        with pytest.raises(ValueError):
            HyperParams(steps_latent=0)
        with pytest.raises(ValueError):
            HyperParams(lambda_n=-1.0)


class TestInvertLatent:
    def test_reduces_masked_error(self, tiny_ckpt):
        obs, masks, _ = target_observation(tiny_ckpt)
        w_star, n_star, trace = invert_latent(obs, masks, tiny_ckpt, FAST, seed=0)
        assert w_star.shape == (tiny_ckpt.config.latent_dim,)
        assert len(n_star) == tiny_ckpt.config.num_noise_maps
        assert len(trace) == FAST.steps_latent
        assert min(trace) < trace[0]

    def test_masked_reconstruction_quality(self, tiny_ckpt):
        obs, masks, _ = target_observation(tiny_ckpt)
        w_star, n_star, _ = invert_latent(obs, masks, tiny_ckpt, FAST, seed=0)
        gen = tiny_ckpt.build_generator()
        with torch.no_grad():
            raw = gen(
                torch.from_numpy(w_star)[None],
                [torch.from_numpy(n)[None] for n in n_star],
            )
        ldr = phi(raw_to_numpy(raw))
        vis = masks.visibility
        mse = float(np.mean((ldr[vis] - obs[vis]) ** 2))
        assert mse < 0.05

    def test_deterministic(self, tiny_ckpt):
        obs, masks, _ = target_observation(tiny_ckpt)
        hp = HyperParams(steps_latent=10, steps_pivotal=1, perceptual="patch_stats")
        a = invert_latent(obs, masks, tiny_ckpt, hp, seed=3)
        b = invert_latent(obs, masks, tiny_ckpt, hp, seed=3)
        assert np.array_equal(a[0], b[0])

    def test_empty_observation(self, tiny_ckpt):
        h, w = tiny_ckpt.config.resolution
        vis = np.zeros((h, w), dtype=bool)
        masks = MaskSet(visibility=vis, focal=vis.copy())
        with pytest.raises(ValueError, match="empty observation"):
            invert_latent(np.zeros((h, w, 3)), masks, tiny_ckpt, FAST)


class TestPivotalFinetune:
    def test_improves_fit_and_freezes_mapping(self, tiny_ckpt):
        obs, masks, _ = target_observation(tiny_ckpt)
        w_star, n_star, _ = invert_latent(obs, masks, tiny_ckpt, FAST, seed=0)
        gen0 = tiny_ckpt.build_generator()
        with torch.no_grad():
            raw0 = gen0(
                torch.from_numpy(w_star)[None],
                [torch.from_numpy(n)[None] for n in n_star],
            )
        before = float(
            np.mean((phi(raw_to_numpy(raw0))[masks.visibility] - obs[masks.visibility]) ** 2)
        )
        theta, trace = pivotal_finetune(w_star, n_star, obs, masks, tiny_ckpt, FAST, seed=0)
        assert len(trace) == FAST.steps_pivotal
        # mapping network is untouched by design
        for k, v in theta.items():
            if k.startswith("mapping."):
                assert torch.equal(v, tiny_ckpt.generator_state[k])
        gen1 = tiny_ckpt.build_generator()
        gen1.load_state_dict(theta)
        with torch.no_grad():
            raw1 = gen1(
                torch.from_numpy(w_star)[None],
                [torch.from_numpy(n)[None] for n in n_star],
            )
        after = float(
            np.mean((phi(raw_to_numpy(raw1))[masks.visibility] - obs[masks.visibility]) ** 2)
        )
        assert after < before


class TestEstimateLighting:
    def test_full_pipeline(self, tiny_ckpt):
        # observation generated from a scene the model itself can represent
        w0, noise0 = sample_latents(tiny_ckpt, seed=5, truncation=0.7)
        gen = tiny_ckpt.build_generator()
        with torch.no_grad():
            raw = gen(
                torch.from_numpy(w0)[None],
                [torch.from_numpy(n)[None] for n in noise0],
            )
        hdr_gt = psi(raw_to_numpy(raw), tiny_ckpt.tone_map)
        ldr_full = phi(raw_to_numpy(raw))
        cam = CameraSpec(crop_w=32, crop_h=24)
        crop = crop_from_pano(ldr_full, cam)
        result = estimate_lighting(crop, cam, tiny_ckpt, FAST, seed=0)
        assert isinstance(result, InversionResult)
        assert result.hdr_out.shape == hdr_gt.shape
        assert result.hdr_out.min() >= 0.0
        assert set(result.loss_trace) == {"latent", "pivotal"}
        # visible-region reconstruction in the LDR domain
        vis = result.masks.visibility
        tm = tiny_ckpt.tone_map
        ldr_pred = np.clip(tm.alpha * result.hdr_out ** (1 / tm.gamma), 0, 1)
        mse = float(np.mean((ldr_pred[vis] - ldr_full[vis]) ** 2))
        assert mse < 0.05

    def test_save_result(self, tiny_ckpt, tmp_path):
        w0, noise0 = sample_latents(tiny_ckpt, seed=5, truncation=0.7)
        cam = CameraSpec(crop_w=32, crop_h=24)
        gen = tiny_ckpt.build_generator()
        with torch.no_grad():
            raw = gen(
                torch.from_numpy(w0)[None],
                [torch.from_numpy(n)[None] for n in noise0],
            )
        crop = crop_from_pano(phi(raw_to_numpy(raw)), cam)
        hp = HyperParams(steps_latent=5, steps_pivotal=3, perceptual="patch_stats")
        result = estimate_lighting(crop, cam, tiny_ckpt, hp, seed=0)
        save_result(result, tmp_path)
        assert np.array_equal(np.load(tmp_path / "w_star.npy"), result.w_star)
        loaded_n = np.load(tmp_path / "n_star.npz")
        assert len(loaded_n.files) == len(result.n_star)
        hdr = hdr_io.load_hdr(tmp_path / "hdr_out.hdr")
        assert hdr.shape == result.hdr_out.shape
        with open(tmp_path / "traces.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["phase", "step", "objective"]
        assert len(rows) == 1 + hp.steps_latent + hp.steps_pivotal
