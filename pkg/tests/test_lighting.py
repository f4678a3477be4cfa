import numpy as np
import pytest

from texsr import lighting
from texsr.lighting import (DirectionalLight, EnvironmentLight, EnvmapError,
                            eval_diffuse_irradiance, eval_directional,
                            eval_specular, load_envmap, parse_directional_spec,
                            read_pfm, write_pfm)

from .oracles import directional_shade_reference


class TestPfm:
    def test_roundtrip(self, tmp_path, rng):
        data = rng.random((8, 16, 3)).astype(np.float32) * 3.0
        path = tmp_path / "env.pfm"
        write_pfm(path, data)
        back = read_pfm(path)
        np.testing.assert_allclose(back, data, rtol=1e-6)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 12)
        with pytest.raises(EnvmapError):
            read_pfm(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.pfm"
        path.write_bytes(b"PF\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(EnvmapError):
            read_pfm(path)

    def test_nan_texels_rejected(self, tmp_path):
        data = np.full((2, 2, 3), np.nan, dtype=np.float32)
        path = tmp_path / "nan.pfm"
        write_pfm(path, data)
        with pytest.raises(EnvmapError):
            load_envmap(path)


class TestPrecompute:
    def test_constant_env_irradiance_is_one(self, const_env):
        assert np.abs(const_env.irradiance - 1.0).max() < 0.02

    def test_constant_env_prefilter_is_one(self, const_env):
        for level in const_env.prefiltered:
            assert np.abs(level - 1.0).max() < 0.02

    def test_prefilter_chain_shapes(self, const_env):
        shapes = [lvl.shape for lvl in const_env.prefiltered]
        assert shapes == [(64, 128, 3), (32, 64, 3), (16, 32, 3),
                          (8, 16, 3), (4, 8, 3), (2, 4, 3)]

    def test_lut_mirror_limit(self, const_env):
        ab, _, _ = lighting.lut_lookup(const_env, np.array([1.0]), np.array([0.0]))
        assert ab[0, 0] == pytest.approx(1.0, abs=0.05)
        assert ab[0, 1] == pytest.approx(0.0, abs=0.05)

    def test_lut_bounds(self, const_env):
        lut = const_env.brdf_lut
        assert lut.min() >= 0.0
        assert (lut[..., 0] + lut[..., 1]).max() <= 1.05

    def test_deterministic_precompute(self):
        rad = np.linspace(0.1, 2.0, 8 * 16 * 3).reshape(8, 16, 3)
        a = EnvironmentLight.from_radiance(rad)
        b = EnvironmentLight.from_radiance(rad)
        np.testing.assert_array_equal(a.irradiance, b.irradiance)
        for la, lb in zip(a.prefiltered, b.prefiltered):
            np.testing.assert_array_equal(la, lb)
        np.testing.assert_array_equal(a.brdf_lut, b.brdf_lut)

    def test_radiance_nonnegative_enforced(self):
        with pytest.raises(EnvmapError):
            EnvironmentLight.from_radiance(np.full((4, 8, 3), np.inf))


class TestDiffuseIrradiance:
    def test_constant_env_any_normal(self, const_env, rng):
        dirs = rng.normal(size=(50, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        vals = eval_diffuse_irradiance(const_env, dirs)
        assert np.abs(vals - 1.0).max() < 0.02

    def test_upper_hemisphere_light(self):
        rad = np.zeros((16, 32, 3))
        rad[:8] = 1.0  # top half of the equirect map
        env = EnvironmentLight.from_radiance(rad)
        up = eval_diffuse_irradiance(env, np.array([[0.0, 1.0, 0.0]]))
        down = eval_diffuse_irradiance(env, np.array([[0.0, -1.0, 0.0]]))
        assert up[0, 0] == pytest.approx(1.0, abs=0.05)
        assert down[0, 0] <= 0.05

    def test_mirror_symmetry(self, rng):
        u = (np.arange(32) + 0.5) / 32
        sym = 0.3 + np.cos((u - 0.5) * 2 * np.pi)[None, :, None] ** 2 * np.ones((16, 1, 3))
        env = EnvironmentLight.from_radiance(sym)
        n = np.array([[0.4, 0.5, 0.6]])
        n /= np.linalg.norm(n)
        mirrored = n * np.array([[-1.0, 1.0, 1.0]])
        a = eval_diffuse_irradiance(env, n)
        b = eval_diffuse_irradiance(env, mirrored)
        np.testing.assert_allclose(a, b, atol=0.02)


class TestEvalSpecular:
    def test_mirror_limit_on_constant_env(self, const_env):
        out = eval_specular(const_env, np.array([[0.0, 1.0, 0.0]]), np.array([1.0]),
                            np.array([0.0]), np.ones((1, 3)))
        np.testing.assert_allclose(out, 1.0, atol=0.05)

    def test_zero_ks_bounded_by_lut_bias(self, const_env):
        out = eval_specular(const_env, np.array([[0.0, 1.0, 0.0]]), np.array([1.0]),
                            np.array([0.3]), np.zeros((1, 3)))
        b_max = const_env.brdf_lut[..., 1].max()
        assert out.max() <= b_max + 1e-9

    def test_monotone_in_roughness_for_bright_texel(self):
        rad = np.full((16, 32, 3), 0.01)
        rad[4, 7] = 50.0
        env = EnvironmentLight.from_radiance(rad)
        u = (7 + 0.5) / 32
        v = (4 + 0.5) / 16
        d = lighting.uv_to_direction(np.array(u), np.array(v))[None, :]
        roughs = np.linspace(0.0, 1.0, 6)
        vals = [float(eval_specular(env, d, np.array([1.0]), np.array([r]),
                                    np.ones((1, 3)))[0, 0]) for r in roughs]
        assert all(a >= b - 1e-6 for a, b in zip(vals, vals[1:]))


class TestEvalDirectional:
    def test_lambert_hand_value(self):
        light = DirectionalLight(direction=np.array([0.0, 0.0, -1.0]),
                                 radiance=np.array([np.pi] * 3),
                                 ambient=np.zeros(3))
        out = eval_directional(light, np.full((1, 3), 0.5), np.array([1.0]),
                               np.array([0.0]), np.array([[0.0, 0.0, 1.0]]),
                               np.array([[0.0, 0.0, 1.0]]))
        # diffuse term exactly 0.5; the rough specular lobe adds a little
        assert out[0, 0] == pytest.approx(0.5, abs=0.06)
        assert out[0, 0] >= 0.5

    def test_unlit_is_ambient_only(self):
        light = DirectionalLight(direction=np.array([0.0, 0.0, 1.0]),
                                 radiance=np.ones(3), ambient=np.array([0.2, 0.1, 0.05]))
        kd = np.full((1, 3), 0.5)
        out = eval_directional(light, kd, np.array([0.5]), np.array([0.0]),
                               np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, 0.0, 1.0]]))
        np.testing.assert_allclose(out[0], light.ambient * 0.5)

    def test_fresnel_grazing_limit(self):
        # h.v -> 0 drives Schlick toward 1 regardless of F0
        ks = np.array([[0.04, 0.5, 0.9]])
        fw = (1.0 - 0.0) ** 5
        f = ks + (1 - ks) * fw
        np.testing.assert_allclose(f, 1.0)

    def test_matches_scalar_reference(self, rng, directional_light):
        for _ in range(30):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            kd = rng.random(3)
            kr = rng.random()
            km = rng.random()
            ours = eval_directional(directional_light, kd[None], np.array([kr]),
                                    np.array([km]), n[None], v[None])[0]
            ref = directional_shade_reference(kd, kr, km, n, v, directional_light)
            np.testing.assert_allclose(ours, ref, atol=1e-9)


class TestEnergySanity:
    def test_bounded_away_from_grazing(self, const_env, rng):
        # unit environment, white dielectric: diffuse + specular stays near 1
        # for n.v >= 0.5 (grazing Fresnel brightening is physical and excluded)
        for _ in range(50):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            ndv = rng.random() * 0.5 + 0.5
            rough = rng.random()
            diffuse = eval_diffuse_irradiance(const_env, n[None])[0]
            spec = eval_specular(const_env, n[None], np.array([ndv]),
                                 np.array([rough]), np.full((1, 3), 0.04))[0]
            assert (diffuse + spec).max() <= 1.1


class TestParseDirectional:
    def test_parse(self):
        light = parse_directional_spec("0,0,-1,2,2,2,0.1,0.1,0.1")
        np.testing.assert_allclose(light.direction, [0, 0, -1])
        np.testing.assert_allclose(light.radiance, 2.0)

    def test_bad_count(self):
        with pytest.raises(ValueError):
            parse_directional_spec("1,2,3")
