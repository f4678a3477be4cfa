import numpy as np
import pytest

from texsr import procedural
from texsr.geometry import (GeometryError, Mesh, compute_tangents, load_mesh,
                            normalize_mesh, save_mesh)

UNIT_QUAD_OBJ = """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1
f 1/1/1 3/3/1 4/4/1
"""

QUAD_FACE_OBJ = """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1 4/4/1
"""

NO_UV_OBJ = """
v 0 0 0
v 1 0 0
v 0 1 0
vn 0 0 1
f 1//1 2//1 3//1
"""


class TestLoadMesh:
    def test_unit_quad(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text(UNIT_QUAD_OBJ)
        mesh = load_mesh(p)
        assert mesh.num_vertices == 4
        assert mesh.num_triangles == 2

    def test_quad_face_triangulated(self, tmp_path):
        p = tmp_path / "quad4.obj"
        p.write_text(QUAD_FACE_OBJ)
        mesh = load_mesh(p)
        assert mesh.num_triangles == 2
        assert mesh.num_vertices == 4

    def test_missing_uv_is_hard_error(self, tmp_path):
        p = tmp_path / "nouv.obj"
        p.write_text(NO_UV_OBJ)
        with pytest.raises(GeometryError, match="no UV parameterization"):
            load_mesh(p)

    def test_icosphere_fixture(self, tmp_path):
        sphere = procedural.make_icosphere(2)
        p = tmp_path / "ico.obj"
        save_mesh(p, sphere)
        loaded = load_mesh(p)
        assert loaded.num_triangles == 320
        norms = np.linalg.norm(loaded.normals, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-4)

    def test_roundtrip_identical(self, tmp_path):
        mesh = procedural.make_slab_grid(cells=3)
        p1 = tmp_path / "a.obj"
        save_mesh(p1, mesh)
        m1 = load_mesh(p1)
        p2 = tmp_path / "b.obj"
        save_mesh(p2, m1)
        m2 = load_mesh(p2)
        np.testing.assert_array_equal(m1.positions, m2.positions)
        np.testing.assert_array_equal(m1.uvs, m2.uvs)
        np.testing.assert_array_equal(m1.normals, m2.normals)
        np.testing.assert_array_equal(m1.triangles, m2.triangles)


class TestNormalizeMesh:
    def test_offset_cube(self):
        base = procedural.make_icosphere(0, radius=2.0)
        shifted = Mesh(positions=base.positions + np.array([10.0, 0.0, 0.0]),
                       uvs=base.uvs, normals=base.normals, triangles=base.triangles)
        out = normalize_mesh(shifted)
        lo, hi = out.positions.min(axis=0), out.positions.max(axis=0)
        np.testing.assert_allclose((lo + hi) / 2, 0.0, atol=1e-12)
        assert (hi - lo).max() == pytest.approx(1.0)

    def test_idempotent(self, rng):
        pts = rng.random((30, 3)) * 4 - 1
        mesh = Mesh(positions=pts, uvs=rng.random((30, 2)),
                    normals=np.tile([0.0, 0.0, 1.0], (30, 1)),
                    triangles=rng.integers(0, 30, (20, 3)))
        once = normalize_mesh(mesh)
        twice = normalize_mesh(once)
        np.testing.assert_allclose(once.positions, twice.positions, atol=1e-7)

    def test_random_cloud_max_extent(self, rng):
        pts = rng.random((50, 3)) * np.array([3.0, 1.0, 0.5])
        mesh = Mesh(positions=pts, uvs=rng.random((50, 2)),
                    normals=np.tile([0.0, 0.0, 1.0], (50, 1)),
                    triangles=rng.integers(0, 50, (30, 3)))
        out = normalize_mesh(mesh)
        extent = out.positions.max(axis=0) - out.positions.min(axis=0)
        assert extent.max() == pytest.approx(1.0, abs=1e-6)

    def test_degenerate_errors(self):
        mesh = Mesh(positions=np.zeros((3, 3)), uvs=np.zeros((3, 2)),
                    normals=np.tile([0.0, 0.0, 1.0], (3, 1)),
                    triangles=np.array([[0, 1, 2]]))
        with pytest.raises(GeometryError):
            normalize_mesh(mesh)


class TestComputeTangents:
    def test_identity_uv_quad(self):
        quad = procedural.make_quad()
        np.testing.assert_allclose(quad.tangents[:, :3], [[1.0, 0.0, 0.0]] * 4, atol=1e-12)
        np.testing.assert_allclose(quad.tangents[:, 3], 1.0)

    def test_mirrored_u_flips_tangent(self):
        quad = procedural.make_quad(mirror_u=True)
        np.testing.assert_allclose(quad.tangents[:, :3], [[-1.0, 0.0, 0.0]] * 4, atol=1e-12)
        np.testing.assert_allclose(quad.tangents[:, 3], -1.0)

    def test_sphere_orthogonality(self):
        sphere = procedural.make_icosphere(2)
        dots = (sphere.tangents[:, :3] * sphere.normals).sum(axis=1)
        assert np.abs(dots).max() < 1e-5
        lengths = np.linalg.norm(sphere.tangents[:, :3], axis=1)
        np.testing.assert_allclose(lengths, 1.0, atol=1e-5)

    def test_degenerate_uv_gets_arbitrary_frame(self):
        mesh = Mesh(
            positions=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float),
            uvs=np.array([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]),
            normals=np.tile([0.0, 0.0, 1.0], (3, 1)),
            triangles=np.array([[0, 1, 2]]),
        )
        out = compute_tangents(mesh)
        lengths = np.linalg.norm(out.tangents[:, :3], axis=1)
        np.testing.assert_allclose(lengths, 1.0, atol=1e-9)
        dots = (out.tangents[:, :3] * out.normals).sum(axis=1)
        np.testing.assert_allclose(dots, 0.0, atol=1e-9)
