import json
import math

import numpy as np
import pytest

from panolight.panorama import direction_to_pixel
from panolight.spheres import (
    MATERIALS,
    MetricsReport,
    SphereRenderSpec,
    angular_error,
    evaluate,
    mirror_highlight_pixel,
    render_sphere,
    rmse,
    si_rmse,
)


def uniform_env(value=1.0, h=32):
    return np.full((h, 2 * h, 3), float(value))


def point_light_env(direction, intensity=200.0, h=64):
    env = np.full((h, 2 * h, 3), 0.05)
    d = np.asarray(direction, dtype=float)
    u, v = direction_to_pixel(d / np.linalg.norm(d), h, 2 * h)
    env[min(int(v), h - 1), min(int(u), 2 * h - 1)] = intensity
    return env


class TestRenderSphere:
    @pytest.mark.parametrize("material", MATERIALS)
    def test_uniform_env_constant(self, material):
        spec = SphereRenderSpec(material=material, image_size=32)
        img, bg = render_sphere(uniform_env(2.0), spec)
        vals = img[~bg]
        if material == "diffuse":
            # quadrature error only; albedo 1 under uniform light reflects it all
            assert np.abs(vals / 2.0 - 1.0).max() < 0.01
        else:
            assert np.allclose(vals, 2.0)

    def test_background_zero(self):
        img, bg = render_sphere(uniform_env(), SphereRenderSpec(image_size=32))
        assert np.all(img[bg] == 0.0)

    def test_foreground_is_disc(self):
        _, bg = render_sphere(uniform_env(), SphereRenderSpec(image_size=64))
        # disc area ~ pi * (fill * size/2)^2 with fill = 0.9
        expected = math.pi * (0.9 * 32) ** 2
        assert abs((~bg).sum() - expected) / expected < 0.05

    def test_mirror_highlight_location(self):
        light_dir = np.array([0.2, 0.6, 0.5])
        light_dir /= np.linalg.norm(light_dir)
        env = point_light_env(light_dir)
        spec = SphereRenderSpec(material="mirror", image_size=64)
        img, bg = render_sphere(env, spec)
        lum = img.mean(axis=-1) * ~bg
        r, c = np.unravel_index(np.argmax(lum), lum.shape)
        pr, pc_ = mirror_highlight_pixel(light_dir, spec.image_size)
        assert math.hypot(r - pr, c - pc_) < 3.0

    def test_highlight_degenerate_directions(self):
        # light along the view axis reflects off the sphere's far side
        assert mirror_highlight_pixel(np.array([1.0, 0.0, 0.0]), 64) is None

    def test_diffuse_smoother_than_mirror(self):
        env = point_light_env([0.0, 1.0, 0.3])
        mirror, bg = render_sphere(env, SphereRenderSpec(material="mirror", image_size=32))
        diffuse, _ = render_sphere(env, SphereRenderSpec(material="diffuse", image_size=32))
        assert diffuse[~bg].std() < mirror[~bg].std()

    def test_glossy_between(self):
        env = point_light_env([0.0, 1.0, 0.3])
        peak = {}
        for m in MATERIALS:
            img, bg = render_sphere(env, SphereRenderSpec(material=m, image_size=32))
            lum = img.mean(axis=-1)[~bg]
            peak[m] = lum.max() / max(lum.mean(), 1e-9)
        assert peak["diffuse"] < peak["matte_silver"] < peak["mirror"]

    def test_invalid_material(self):
        with pytest.raises(ValueError):
            SphereRenderSpec(material="chrome")

    def test_small_image_size(self):
        with pytest.raises(ValueError):
            SphereRenderSpec(image_size=8)


def full_fg(n=8):
    return np.zeros((n, n), dtype=bool)  # background mask: nothing masked


class TestMetrics:
    def test_rmse_zero_on_identical(self):
        x = np.random.default_rng(0).random((8, 8, 3))
        assert rmse(x, x, full_fg()) == 0.0

    def test_rmse_constant_offset(self):
        x = np.zeros((8, 8, 3))
        assert rmse(x + 2.0, x, full_fg()) == pytest.approx(2.0)

    def test_rmse_masks_background(self):
        x = np.zeros((8, 8, 3))
        y = x.copy()
        y[0, 0] = 100.0
        bg = np.zeros((8, 8), dtype=bool)
        bg[0, 0] = True
        assert rmse(y, x, bg) == 0.0

    def test_si_rmse_scale_invariant(self):
        x = np.random.default_rng(1).random((8, 8, 3)) + 0.1
        assert si_rmse(7.3 * x, x, full_fg()) == pytest.approx(0.0, abs=1e-9)

    def test_si_rmse_leq_rmse(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert si_rmse(a, b, full_fg()) <= rmse(a, b, full_fg()) + 1e-12

    def test_angular_identical(self):
        x = np.random.default_rng(3).random((8, 8, 3)) + 0.1
        assert angular_error(x, x, full_fg()) == pytest.approx(0.0, abs=1e-4)

    def test_angular_orthogonal(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        a[..., 0] = 1.0
        b[..., 1] = 1.0
        assert angular_error(a, b, full_fg(4)) == pytest.approx(90.0, abs=1e-4)

    def test_angular_hue_invariant_to_scale(self):
        x = np.random.default_rng(4).random((8, 8, 3)) + 0.1
        assert angular_error(3.0 * x, x, full_fg()) == pytest.approx(0.0, abs=1e-4)

    def test_angular_skips_dark_pixels(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        a[0, 0] = [1.0, 0.0, 0.0]
        b[0, 0] = [0.0, 1.0, 0.0]
        # only one valid pixel pair contributes
        assert angular_error(a, b, full_fg(4)) == pytest.approx(90.0, abs=1e-4)

    def test_angular_all_dark_raises(self):
        z = np.zeros((4, 4, 3))
        with pytest.raises(ValueError):
            angular_error(z, z, full_fg(4))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), full_fg(4))

    def test_empty_foreground(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.ones((4, 4), dtype=bool))


class TestEvaluate:
    def _specs(self, size=24):
        return {m: SphereRenderSpec(material=m, image_size=size) for m in MATERIALS}

    def test_identical_envs(self):
        env = point_light_env([0.5, 0.5, 0.5], h=32)
        report = evaluate([env], [env], specs=self._specs())
        for material in MATERIALS:
            assert report.per_material[material]["rmse"] == pytest.approx(0.0, abs=1e-9)
            assert report.per_material[material]["si_rmse"] == pytest.approx(0.0, abs=1e-9)

    def test_scaled_env_si_zero_rmse_positive(self):
        env = point_light_env([0.5, 0.5, 0.5], h=32)
        report = evaluate([2.0 * env], [env], specs=self._specs())
        for material in MATERIALS:
            assert report.per_material[material]["si_rmse"] == pytest.approx(0.0, abs=1e-6)
            assert report.per_material[material]["rmse"] > 0.0

    def test_aggregate_is_mean(self):
        env1 = point_light_env([0.5, 0.5, 0.5], h=32)
        env2 = uniform_env(h=32)
        report = evaluate([env1, env2], [env2, env2], specs=self._specs())
        for material in MATERIALS:
            per_img = [row[material]["rmse"] for row in report.per_image]
            assert report.per_material[material]["rmse"] == pytest.approx(
                sum(per_img) / 2)

    def test_report_round_trip(self):
        env = uniform_env(h=16)
        report = evaluate([env], [env], specs=self._specs())
        again = MetricsReport.from_json(report.to_json())
        assert json.loads(again.to_json()) == json.loads(report.to_json())

    def test_length_mismatch(self):
        env = uniform_env(h=16)
        with pytest.raises(ValueError):
            evaluate([env, env], [env], specs=self._specs())
