import math

import numpy as np

from texsr import procedural, texture
from texsr.camera import Camera
from texsr.geometry import Mesh, compute_tangents
from texsr.lighting import DirectionalLight
from texsr.render import TextureGrads, rasterize, shade, shade_backward

from .conftest import random_texture_set
from .fd import fd_check, random_picks, roughness_boundary_skip
from .oracles import directional_shade_reference


def fullscreen_camera(width=32, height=32, fov=10.0, half=0.5):
    # distance at which the quad exactly fills the vertical FoV, then nudged in
    dist = half / math.tan(math.radians(fov) / 2.0) * 0.999
    return Camera(position=np.array([0.0, 0.0, dist]), look_at=np.zeros(3),
                  up=np.array([0.0, 1.0, 0.0]), fov_y_deg=fov, width=width, height=height)


class TestRasterize:
    def test_fullscreen_quad_coverage_and_uv_span(self, quad_mesh):
        gb = rasterize(quad_mesh, fullscreen_camera())
        assert gb.coverage.all()
        uv = gb.uv.reshape(-1, 2)
        assert uv.min() < 0.02 and uv.max() > 0.98
        assert np.all((uv >= 0) & (uv <= 1))

    def test_empty_mesh(self):
        empty = Mesh(positions=np.zeros((3, 3)), uvs=np.zeros((3, 2)),
                     normals=np.tile([0.0, 0.0, 1.0], (3, 1)),
                     triangles=np.zeros((0, 3), dtype=int),
                     tangents=np.tile([1.0, 0.0, 0.0, 1.0], (3, 1)))
        gb = rasterize(empty, fullscreen_camera())
        assert not gb.coverage.any()

    def test_depth_order_two_quads(self):
        # camera sits on +z, so the quad at z=0.6 is the nearer one
        near = procedural.make_quad(z=0.6)
        far = procedural.make_quad(z=0.3)
        mesh = compute_tangents(Mesh(
            positions=np.concatenate([far.positions, near.positions]),
            uvs=np.concatenate([far.uvs * 0.0, near.uvs * 0.0 + 1.0]),
            normals=np.concatenate([far.normals, near.normals]),
            triangles=np.concatenate([far.triangles, near.triangles + 4]),
        ))
        gb = rasterize(mesh, fullscreen_camera())
        covered = gb.coverage
        assert covered.any()
        # the near quad (uv == 1) must win everywhere both overlap
        np.testing.assert_allclose(gb.uv[covered], 1.0)

    def test_depth_tie_lower_triangle_wins(self):
        quad = procedural.make_quad()
        doubled = compute_tangents(Mesh(
            positions=np.concatenate([quad.positions, quad.positions]),
            uvs=np.concatenate([quad.uvs * 0.0, quad.uvs * 0.0 + 1.0]),
            normals=np.concatenate([quad.normals, quad.normals]),
            triangles=np.concatenate([quad.triangles, quad.triangles + 4]),
        ))
        gb = rasterize(doubled, fullscreen_camera())
        np.testing.assert_allclose(gb.uv[gb.coverage], 0.0)

    def test_covered_pixels_have_unit_frames(self, quad_mesh):
        sphere = procedural.make_icosphere(1)
        cam = Camera(position=np.array([0.0, 0.5, 3.2]), look_at=np.zeros(3),
                     up=np.array([0.0, 1.0, 0.0]), fov_y_deg=10.0, width=48, height=48)
        gb = rasterize(sphere, cam)
        m = gb.coverage
        assert m.any()
        np.testing.assert_allclose(np.linalg.norm(gb.normal[m], axis=1), 1.0, atol=1e-4)
        np.testing.assert_allclose(np.linalg.norm(gb.tangent[m], axis=1), 1.0, atol=1e-4)
        np.testing.assert_allclose(np.linalg.norm(gb.view_dir[m], axis=1), 1.0, atol=1e-6)
        assert np.all(np.isfinite(gb.uv[m]))

    def test_deterministic(self, quad_mesh, small_textures, directional_light):
        cam = fullscreen_camera()
        a = rasterize(quad_mesh, cam)
        b = rasterize(quad_mesh, cam)
        np.testing.assert_array_equal(a.depth, b.depth)
        ia = shade(a, small_textures, directional_light)
        ib = shade(b, small_textures, directional_light)
        np.testing.assert_array_equal(ia.rgb, ib.rgb)


class TestShade:
    def test_metallic_kills_diffuse(self, quad_mesh):
        # ambient-only light isolates the diffuse factor k_d (1 - k_m)
        light = DirectionalLight(direction=np.array([0.0, 0.0, -1.0]),
                                 radiance=np.zeros(3), ambient=np.array([0.3, 0.3, 0.3]))
        flat_n = texture.encode_normal(np.broadcast_to([0.0, 0.0, 1.0], (8, 8, 3)))
        metal = texture.TextureSet(
            albedo=texture.TextureMap(np.full((8, 8, 3), 0.8)),
            arm=texture.TextureMap(np.stack([np.ones((8, 8)), np.full((8, 8), 0.5),
                                             np.ones((8, 8))], axis=-1)),
            normal=texture.TextureMap(flat_n),
        )
        gb = rasterize(quad_mesh, fullscreen_camera())
        img = shade(gb, metal, light)
        np.testing.assert_array_equal(img.rgb, 0.0)

    def test_background_black(self, small_textures, directional_light):
        sphere = procedural.make_icosphere(1, radius=0.2)
        cam = Camera(position=np.array([0.0, 0.0, 3.25]), look_at=np.zeros(3),
                     up=np.array([0.0, 1.0, 0.0]), fov_y_deg=10.0, width=32, height=32)
        gb = rasterize(sphere, cam)
        img = shade(gb, small_textures, directional_light)
        assert not img.mask.all()
        np.testing.assert_array_equal(img.rgb[~img.mask], 0.0)

    def test_quad_matches_perpixel_oracle(self, quad_mesh, rng, directional_light):
        ts = random_texture_set(rng, res=8)
        gb = rasterize(quad_mesh, fullscreen_camera(16, 16))
        img = shade(gb, ts, directional_light)
        for yy in range(16):
            for xx in range(16):
                u, v = gb.uv[yy, xx]
                kd = texture.bilinear_sample(ts.albedo, (u, v))
                arm = texture.bilinear_sample(ts.arm, (u, v))
                enc = texture.bilinear_sample(ts.normal, (u, v))
                n_t = texture.decode_normal(enc)
                t = gb.tangent[yy, xx]
                n = gb.normal[yy, xx]
                b = gb.handedness[yy, xx] * np.cross(n, t)
                world = n_t[0] * t + n_t[1] * b + n_t[2] * n
                world = world / np.linalg.norm(world)
                ref = directional_shade_reference(kd, arm[1], arm[2], world,
                                                  gb.view_dir[yy, xx], directional_light)
                np.testing.assert_allclose(img.rgb[yy, xx], np.clip(ref, 0, 1), atol=1e-6)

    def test_lambertian_sphere_constant_env(self, const_env):
        sphere = procedural.make_icosphere(2)
        flat_n = texture.encode_normal(np.broadcast_to([0.0, 0.0, 1.0], (8, 8, 3)))
        white = texture.TextureSet(
            albedo=texture.TextureMap(np.ones((8, 8, 3))),
            arm=texture.TextureMap(np.stack([np.ones((8, 8)), np.ones((8, 8)),
                                             np.zeros((8, 8))], axis=-1)),
            normal=texture.TextureMap(flat_n),
        )
        cam = Camera(position=np.array([1.2, 0.9, 2.6]), look_at=np.zeros(3),
                     up=np.array([0.0, 1.0, 0.0]), fov_y_deg=10.0, width=48, height=48)
        gb = rasterize(sphere, cam)
        img = shade(gb, white, const_env)
        vals = img.rgb[img.mask]
        assert vals.size > 0
        assert np.abs(vals - 1.0).max() <= 0.02

    def test_ks_identity_at_every_shaded_pixel(self, quad_mesh, rng):
        from texsr.render import _surface_inputs
        ts = random_texture_set(rng, res=8)
        gb = rasterize(quad_mesh, fullscreen_camera(16, 16))
        inputs = _surface_inputs(gb, ts)
        ks = texture.specular_reflectance(inputs["kd"], inputs["km"])
        expect = 0.04 * (1 - inputs["km"][:, None]) + inputs["km"][:, None] * inputs["kd"]
        np.testing.assert_allclose(ks, expect, atol=1e-12)


class TestShadeBackward:
    def test_zero_upstream_zero_grads(self, quad_mesh, small_textures, directional_light):
        gb = rasterize(quad_mesh, fullscreen_camera())
        grads = shade_backward(gb, small_textures, directional_light,
                               np.zeros((32, 32, 3)))
        np.testing.assert_array_equal(grads.albedo, 0.0)
        np.testing.assert_array_equal(grads.arm, 0.0)
        np.testing.assert_array_equal(grads.normal, 0.0)

    def test_single_pixel_diffuse_hand_chain(self, quad_mesh):
        # diffuse-only: k_m = 0 decouples k_s from k_d, so
        # dL/dkd = upstream * (1-km)/pi * radiance * (n.l) * bilinear weight
        light = DirectionalLight(direction=np.array([0.0, 0.0, -1.0]),
                                 radiance=np.array([1.5, 1.5, 1.5]), ambient=np.zeros(3))
        flat_n = texture.encode_normal(np.broadcast_to([0.0, 0.0, 1.0], (4, 4, 3)))
        ts = texture.TextureSet(
            albedo=texture.TextureMap(np.full((4, 4, 3), 0.5)),
            arm=texture.TextureMap(np.stack([np.ones((4, 4)), np.full((4, 4), 0.7),
                                             np.zeros((4, 4))], axis=-1)),
            normal=texture.TextureMap(flat_n),
        )
        gb = rasterize(procedural.make_quad(), fullscreen_camera(8, 8))
        up = np.zeros((8, 8, 3))
        up[3, 4, 0] = 1.0
        grads = shade_backward(gb, ts, light, up)
        u, v = gb.uv[3, 4]
        n = gb.normal[3, 4]
        ndl = max(float(n @ np.array([0.0, 0.0, 1.0])), 0.0)
        entries = texture.bilinear_sample_backward((4, 4), (u, v), 1.0)
        expect = np.zeros((4, 4))
        for iy, ix, w, _ in entries:
            expect[iy, ix] = w * (1.0 / math.pi) * 1.5 * ndl
        np.testing.assert_allclose(grads.albedo[:, :, 0], expect, atol=1e-12)
        np.testing.assert_array_equal(grads.albedo[:, :, 1:], 0.0)

    def test_untouched_texels_have_zero_grad(self, rng, directional_light):
        # camera zoomed into the quad center: border texels are never sampled
        ts = random_texture_set(rng, res=32)
        cam = Camera(position=np.array([0.0, 0.0, 3.25]), look_at=np.zeros(3),
                     up=np.array([0.0, 1.0, 0.0]), fov_y_deg=4.0, width=16, height=16)
        gb = rasterize(procedural.make_quad(), cam)
        assert gb.coverage.all()
        grads = shade_backward(gb, ts, directional_light, np.ones((16, 16, 3)))
        uv = gb.uv.reshape(-1, 2)
        footprint = np.zeros((32, 32), dtype=bool)
        for u, v in uv:
            for iy, ix, w, _ in texture.bilinear_sample_backward((32, 32), (u, v), 1.0):
                footprint[iy, ix] = True
        assert footprint.sum() < 32 * 32
        np.testing.assert_array_equal(grads.albedo[~footprint], 0.0)
        np.testing.assert_array_equal(grads.normal[~footprint], 0.0)

    def test_fd_directional(self, rng, directional_light):
        ts = random_texture_set(rng, res=12)
        gb = rasterize(procedural.make_quad(), fullscreen_camera(20, 20))
        weights = rng.random((20, 20, 3))

        def loss_fn(t):
            return float((shade(gb, t, directional_light).rgb * weights).sum())

        grads = shade_backward(gb, ts, directional_light, weights)
        picks = random_picks(rng, ts, 30)
        failures, checked = fd_check(loss_fn, ts, grads, picks, h=1e-3, rtol=1e-3)
        assert checked >= 25
        assert not failures, failures[:5]

    def test_fd_ibl(self, rng, smooth_env):
        ts = random_texture_set(rng, res=12)
        gb = rasterize(procedural.make_quad(), fullscreen_camera(20, 20))
        weights = rng.random((20, 20, 3))

        def loss_fn(t):
            return float((shade(gb, t, smooth_env).rgb * weights).sum())

        grads = shade_backward(gb, ts, smooth_env, weights)
        picks = random_picks(rng, ts, 30)
        failures, checked = fd_check(loss_fn, ts, grads, picks, h=1e-3, rtol=3e-3,
                                     skip=roughness_boundary_skip(ts))
        assert checked >= 20
        assert not failures, failures[:5]

    def test_grads_deterministic(self, rng, quad_mesh, small_textures, directional_light):
        gb = rasterize(quad_mesh, fullscreen_camera())
        up = rng.random((32, 32, 3))
        a = shade_backward(gb, small_textures, directional_light, up)
        b = shade_backward(gb, small_textures, directional_light, up)
        np.testing.assert_array_equal(a.albedo, b.albedo)
        np.testing.assert_array_equal(a.arm, b.arm)
        np.testing.assert_array_equal(a.normal, b.normal)


class TestTextureGrads:
    def test_zeros_like_and_ops(self, small_textures):
        g = TextureGrads.zeros_like(small_textures)
        g.albedo += 1.0
        g.scale_(0.5)
        assert g.albedo.max() == 0.5
        g2 = TextureGrads.zeros_like(small_textures)
        g2.add_(g)
        assert g2.albedo.min() == 0.5
