import numpy as np
import pytest

from texsr import lighting, procedural, texture
from texsr.camera import Camera


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_texture_set(rng, res=16):
    """Interior-valued maps so +-1e-3 perturbations stay inside [0,1]."""
    n_raw = np.stack([
        rng.random((res, res)) * 0.3 - 0.15,
        rng.random((res, res)) * 0.3 - 0.15,
        np.ones((res, res)),
    ], axis=-1)
    n_raw /= np.linalg.norm(n_raw, axis=-1, keepdims=True)
    return texture.TextureSet(
        albedo=texture.TextureMap(rng.random((res, res, 3)) * 0.6 + 0.2),
        arm=texture.TextureMap(np.stack([
            np.ones((res, res)),
            rng.random((res, res)) * 0.5 + 0.25,
            rng.random((res, res)) * 0.4 + 0.05,
        ], axis=-1)),
        normal=texture.TextureMap(texture.encode_normal(n_raw)),
    )


@pytest.fixture
def small_textures(rng):
    return random_texture_set(rng, res=16)


@pytest.fixture
def quad_mesh():
    return procedural.make_quad()


@pytest.fixture
def quad_camera():
    return Camera(position=np.array([0.0, 0.0, 3.25]), look_at=np.zeros(3),
                  up=np.array([0.0, 1.0, 0.0]), fov_y_deg=10.0, width=32, height=32)


@pytest.fixture
def directional_light():
    return lighting.DirectionalLight(
        direction=np.array([-0.3, -0.2, -1.0]),
        radiance=np.array([2.0, 1.8, 1.6]),
        ambient=np.array([0.05, 0.06, 0.07]),
    )


@pytest.fixture(scope="session")
def smooth_env():
    return lighting.EnvironmentLight.from_radiance(procedural.make_smooth_env())


@pytest.fixture(scope="session")
def const_env():
    return lighting.EnvironmentLight.from_radiance(np.ones((16, 32, 3)))


@pytest.fixture(scope="session")
def blob_env():
    return lighting.EnvironmentLight.from_radiance(procedural.make_blob_env())
