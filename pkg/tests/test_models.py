import numpy as np
import pytest
import torch

from panolight.models import (
    Discriminator,
    Generator,
    GeneratorConfig,
    ModelCheckpoint,
    build_models,
    estimate_w_avg,
    pano_pad,
    random_noise_maps,
    raw_to_numpy,
    sample,
    sample_latents,
)
from panolight.panorama import ToneMapParams
from panolight.training import toy_config


@pytest.fixture(scope="module")
def cfg():
    return toy_config(32)[0]


@pytest.fixture(scope="module")
def gen(cfg):
    torch.manual_seed(0)
    return Generator(cfg).eval()


class TestConfig:
    def test_aspect_enforced(self):
        with pytest.raises(ValueError):
            GeneratorConfig(resolution=(64, 64))

    def test_resolution_power_of_two(self):
        with pytest.raises(ValueError):
            GeneratorConfig(resolution=(48, 96))

    def test_noise_map_count(self, cfg):
        assert cfg.num_noise_maps == 1 + 2 * (cfg.num_levels - 1)
        assert len(cfg.noise_shapes()) == cfg.num_noise_maps

    def test_noise_shapes_dyadic(self, cfg):
        shapes = cfg.noise_shapes()
        assert shapes[0] == (cfg.base_h, 2 * cfg.base_h)
        assert shapes[-1] == cfg.resolution

    def test_channel_cap(self):
        c = GeneratorConfig(resolution=(32, 64), channel_base=8192, channel_max=64)
        assert all(c.channels(l) <= 64 for l in range(c.num_levels))


class TestPanoPad:
    def test_horizontal_wrap(self):
        x = torch.arange(8.0).reshape(1, 1, 2, 4)
        y = pano_pad(x, 1)
        assert y.shape == (1, 1, 4, 6)
        # left padding column comes from the right edge
        assert torch.equal(y[0, 0, 1:3, 0], x[0, 0, :, -1])
        assert torch.equal(y[0, 0, 1:3, -1], x[0, 0, :, 0])

    def test_vertical_replicate(self):
        x = torch.arange(8.0).reshape(1, 1, 2, 4)
        y = pano_pad(x, 1)
        assert torch.equal(y[0, 0, 0, 1:5], x[0, 0, 0])
        assert torch.equal(y[0, 0, -1, 1:5], x[0, 0, -1])

    def test_zero_pad_identity(self):
        x = torch.rand(1, 2, 4, 8)
        assert pano_pad(x, 0) is x


class TestGenerator:
    def test_output_shape(self, gen, cfg):
        w = torch.randn(2, cfg.latent_dim)
        noise = random_noise_maps(cfg, 2)
        out = gen(w, noise)
        assert out.shape == (2, 3, *cfg.resolution)

    def test_deterministic_given_inputs(self, gen, cfg):
        torch.manual_seed(1)
        w = torch.randn(1, cfg.latent_dim)
        noise = random_noise_maps(cfg, 1, torch.Generator().manual_seed(2))
        a = gen(w, noise)
        b = gen(w, noise)
        assert torch.equal(a, b)

    def test_horizontal_seam_continuity(self, gen, cfg):
        # with circular padding the wrap-around column jump should look like
        # any other adjacent-column jump, not an outlier
        torch.manual_seed(3)
        w = torch.randn(1, cfg.latent_dim)
        noise = random_noise_maps(cfg, 1, torch.Generator().manual_seed(4))
        out = gen(w, noise).detach()
        interior = (out[..., 1:] - out[..., :-1]).abs().mean()
        seam = (out[..., 0] - out[..., -1]).abs().mean()
        assert seam < 3.0 * interior

    def test_broadcast_ws_shapes(self, gen, cfg):
        w2 = torch.randn(1, cfg.latent_dim)
        assert gen.broadcast_ws(w2).shape == (1, cfg.num_noise_maps, cfg.latent_dim)
        w3 = torch.randn(1, cfg.num_noise_maps, cfg.latent_dim)
        assert gen.broadcast_ws(w3) is w3
        with pytest.raises(ValueError):
            gen.broadcast_ws(torch.randn(1, 5, cfg.latent_dim))

    def test_style_changes_output(self, gen, cfg):
        noise = random_noise_maps(cfg, 1, torch.Generator().manual_seed(0))
        a = gen(torch.full((1, cfg.latent_dim), 0.5), noise)
        b = gen(torch.full((1, cfg.latent_dim), -0.5), noise)
        assert not torch.allclose(a, b)


class TestDiscriminator:
    def test_scalar_logit(self, cfg):
        torch.manual_seed(0)
        d = Discriminator(cfg)
        out = d(torch.rand(3, 3, *cfg.resolution))
        assert out.shape == (3,)
        assert torch.isfinite(out).all()


class TestHelpers:
    def test_estimate_w_avg_deterministic(self, gen):
        a = estimate_w_avg(gen, n=64, seed=5)
        b = estimate_w_avg(gen, n=64, seed=5)
        assert torch.equal(a, b)
        assert a.shape == (gen.cfg.latent_dim,)

    def test_raw_to_numpy(self):
        raw = torch.arange(24.0).reshape(1, 3, 2, 4)
        arr = raw_to_numpy(raw)
        assert arr.shape == (2, 4, 3)
        assert arr.dtype == np.float64
        assert arr[0, 0, 0] == 0.0 and arr[0, 0, 1] == 8.0


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_ckpt):
        path = tmp_path / "ckpt.pt"
        tiny_ckpt.save(path)
        loaded = ModelCheckpoint.load(path)
        assert loaded.config == tiny_ckpt.config
        assert loaded.tone_map == tiny_ckpt.tone_map
        for k, v in tiny_ckpt.generator_state.items():
            assert torch.equal(loaded.generator_state[k], v)

    def test_version_check(self, tmp_path, tiny_ckpt):
        path = tmp_path / "ckpt.pt"
        tiny_ckpt.save(path)
        obj = torch.load(path, weights_only=False)
        obj["format_version"] = 99
        torch.save(obj, path)
        with pytest.raises(ValueError, match="version"):
            ModelCheckpoint.load(path)

    def test_build_generator_reproduces(self, tiny_ckpt):
        g1 = tiny_ckpt.build_generator()
        g2 = tiny_ckpt.build_generator()
        w = torch.randn(1, tiny_ckpt.config.latent_dim)
        noise = random_noise_maps(tiny_ckpt.config, 1,
                                  torch.Generator().manual_seed(0))
        assert torch.equal(g1(w, noise), g2(w, noise))


class TestSampling:
    def test_sample_shapes_and_coupling(self, tiny_ckpt):
        pairs = sample(tiny_ckpt, seed=0, count=2)
        assert len(pairs) == 2
        h, w = tiny_ckpt.config.resolution
        for hdr, ldr in pairs:
            assert hdr.shape == (h, w, 3) and ldr.shape == (h, w, 3)
            assert hdr.min() >= 0.0
            assert 0.0 <= ldr.min() and ldr.max() <= 1.0
            # both branches come from one raw image: where the LDR is
            # unsaturated, tone-mapping the HDR reproduces it
            tm = tiny_ckpt.tone_map
            mapped = tm.alpha * hdr ** (1.0 / tm.gamma)
            interior = (ldr > 1e-6) & (ldr < 1.0 - 1e-6)
            assert np.abs((mapped - ldr)[interior]).max() < 1e-5

    def test_sample_seeded(self, tiny_ckpt):
        a = sample(tiny_ckpt, seed=7, count=1)[0][0]
        b = sample(tiny_ckpt, seed=7, count=1)[0][0]
        assert np.array_equal(a, b)
        c = sample(tiny_ckpt, seed=8, count=1)[0][0]
        assert not np.array_equal(a, c)

    def test_sample_count_zero(self, tiny_ckpt):
        assert sample(tiny_ckpt, seed=0, count=0) == []

    def test_truncation_pulls_to_average(self, tiny_ckpt):
        w_full, _ = sample_latents(tiny_ckpt, seed=1, truncation=1.0)
        w_trunc, _ = sample_latents(tiny_ckpt, seed=1, truncation=0.0)
        gen = tiny_ckpt.build_generator()
        assert np.allclose(w_trunc, gen.w_avg.numpy(), atol=1e-6)
        assert not np.allclose(w_full, w_trunc)

    def test_sample_latents_shapes(self, tiny_ckpt):
        w, noise = sample_latents(tiny_ckpt, seed=0)
        assert w.shape == (tiny_ckpt.config.latent_dim,)
        assert len(noise) == tiny_ckpt.config.num_noise_maps
