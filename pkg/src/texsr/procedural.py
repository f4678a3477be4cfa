"""Procedural meshes, texture sets and environment maps.

These fixtures back the validation experiments: a quad for per-pixel
oracle checks, a two-layer rippled slab whose full UV chart is visible from
both hemispheres of a surrounding camera rig, an icosphere for constant
environment tests, and textures with structure at several spatial scales so
downsampling actually loses (and recovery actually restores) detail.
"""
from __future__ import annotations

import numpy as np

from .geometry import Mesh, compute_tangents
from .texture import TextureMap, TextureSet, encode_normal


def make_quad(half: float = 0.5, z: float = 0.0, mirror_u: bool = False) -> Mesh:
    """Two-triangle quad in the XY plane, UVs spanning [0,1]^2, facing +Z."""
    positions = np.array([
        [-half, -half, z],
        [half, -half, z],
        [half, half, z],
        [-half, half, z],
    ])
    u0, u1 = (1.0, 0.0) if mirror_u else (0.0, 1.0)
    uvs = np.array([[u0, 0.0], [u1, 0.0], [u1, 1.0], [u0, 1.0]])
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    return compute_tangents(Mesh(positions=positions, uvs=uvs, normals=normals,
                                 triangles=triangles))


def make_slab_grid(cells: int = 8, ripple: float = 0.04, gap: float = 0.1,
                   frequency: float = 1.5) -> Mesh:
    """Two-layer rippled quad grid sharing one full [0,1]^2 UV chart.

    The top layer faces +Z and the bottom layer (offset by -gap, reversed
    winding) faces -Z, so cameras in either hemisphere supervise the same
    texels.
    """
    n = cells + 1
    g = np.linspace(-0.5, 0.5, n)
    xx, yy = np.meshgrid(g, g)
    height = ripple * np.sin(2 * np.pi * frequency * xx) * np.cos(2 * np.pi * frequency * yy)
    dhdx = ripple * 2 * np.pi * frequency * np.cos(2 * np.pi * frequency * xx) \
        * np.cos(2 * np.pi * frequency * yy)
    dhdy = -ripple * 2 * np.pi * frequency * np.sin(2 * np.pi * frequency * xx) \
        * np.sin(2 * np.pi * frequency * yy)

    uv = np.stack([xx + 0.5, yy + 0.5], axis=-1).reshape(-1, 2)
    top_pos = np.stack([xx, yy, height], axis=-1).reshape(-1, 3)
    top_nrm = np.stack([-dhdx, -dhdy, np.ones_like(dhdx)], axis=-1).reshape(-1, 3)
    top_nrm /= np.linalg.norm(top_nrm, axis=1, keepdims=True)
    bot_pos = top_pos + np.array([0.0, 0.0, -gap])
    bot_nrm = -top_nrm

    def grid_tris(offset: int, flip: bool) -> list:
        tris = []
        for j in range(cells):
            for i in range(cells):
                a = offset + j * n + i
                b = a + 1
                c = a + n + 1
                d = a + n
                if flip:
                    tris += [[a, c, b], [a, d, c]]
                else:
                    tris += [[a, b, c], [a, c, d]]
        return tris

    positions = np.concatenate([top_pos, bot_pos])
    uvs = np.concatenate([uv, uv])
    normals = np.concatenate([top_nrm, bot_nrm])
    triangles = np.array(grid_tris(0, False) + grid_tris(n * n, True))
    return compute_tangents(Mesh(positions=positions, uvs=uvs, normals=normals,
                                 triangles=triangles))


def make_icosphere(subdivisions: int = 2, radius: float = 0.5) -> Mesh:
    """Subdivided icosahedron; 20 * 4^n faces (320 at two subdivisions)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple, int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(verts[i]) + np.asarray(verts[j])
                m = m / np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    pos = np.asarray(verts) * radius
    nrm = np.asarray(verts)
    u = np.arctan2(nrm[:, 0], -nrm[:, 2]) / (2 * np.pi) + 0.5
    v = np.arccos(np.clip(nrm[:, 1], -1, 1)) / np.pi
    uvs = np.stack([u, v], axis=1)
    return compute_tangents(Mesh(positions=pos, uvs=uvs, normals=nrm,
                                 triangles=np.asarray(faces)))


def _block_noise(rng: np.random.Generator, res: int, block: int) -> np.ndarray:
    coarse = rng.random((res // block, res // block))
    return np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)


def make_gt_textures(res: int = 256, seed: int = 7) -> TextureSet:
    """Structured texture set with content at several spatial scales."""
    rng = np.random.default_rng(seed)
    g = (np.arange(res) + 0.5) / res
    xx, yy = np.meshgrid(g, g)

    def plaid(fx, fy, px=0.0, py=0.0):
        return 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xx + px)) * np.sin(2 * np.pi * (fy * yy + py))

    albedo = np.stack([
        0.25 + 0.35 * plaid(6, 5) + 0.3 * _block_noise(rng, res, 4),
        0.2 + 0.3 * plaid(4, 7, 0.25) + 0.3 * _block_noise(rng, res, 8),
        0.3 + 0.25 * plaid(9, 3, 0.0, 0.25) + 0.25 * _block_noise(rng, res, 4),
    ], axis=-1)
    albedo = np.clip(albedo, 0.02, 0.98)

    rough = np.clip(0.3 + 0.35 * plaid(5, 4, 0.1) + 0.2 * _block_noise(rng, res, 8), 0.15, 0.9)
    metal_field = _block_noise(rng, res, 32)
    metal = np.clip((metal_field - 0.72) * 3.0, 0.0, 0.85)
    arm = np.stack([np.ones_like(rough), rough, metal], axis=-1)

    height = (
        0.6 * np.sin(2 * np.pi * 4 * xx) * np.cos(2 * np.pi * 3 * yy)
        + 0.4 * (_block_noise(rng, res, 16) - 0.5)
    )
    dhy, dhx = np.gradient(height)
    slope = 18.0
    normal = np.stack([-dhx * slope, -dhy * slope, np.ones_like(height)], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    return TextureSet(
        albedo=TextureMap(albedo),
        arm=TextureMap(arm),
        normal=TextureMap(encode_normal(normal)),
    )


def make_blob_env(width: int = 64, height: int = 32, base: float = 0.25,
                  blob_sigma: float = 0.05, amplitude: float = 6.0) -> np.ndarray:
    """Gray environment with a vertical gradient and a few bright blobs."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v)
    rad = np.zeros((height, width, 3))
    rad += base + 0.2 * (1.0 - vv)[..., None]
    blobs = [
        (0.2, 0.3, (1.0, 0.9, 0.7)),
        (0.6, 0.25, (0.7, 0.8, 1.0)),
        (0.85, 0.6, (1.0, 0.6, 0.6)),
        (0.45, 0.75, (0.6, 1.0, 0.7)),
    ]
    for bu, bv, color in blobs:
        du = np.minimum(np.abs(uu - bu), 1.0 - np.abs(uu - bu))  # longitude wraps
        d2 = du * du + (vv - bv) ** 2
        rad += amplitude * np.exp(-d2 / (2 * blob_sigma * blob_sigma))[..., None] * np.asarray(color)
    return rad


def make_smooth_env(width: int = 32, height: int = 16) -> np.ndarray:
    """Low-contrast, large-feature environment for gradient checks."""
    return make_blob_env(width, height, base=0.35, blob_sigma=0.16, amplitude=1.2)
