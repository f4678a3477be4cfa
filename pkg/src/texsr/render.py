"""Software rasterization to per-view G-buffers and differentiable
Cook-Torrance shading.

Geometry, cameras and lights are fixed; gradients are only propagated into
the four texture maps, which removes any need for visibility or edge
gradients. One sample per pixel; the depth test breaks ties by lower
triangle index. All outputs are deterministic for identical inputs, and
gradient accumulation uses in-order scatters so results are bit-identical
across runs and thread counts.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import lighting, texture
from .camera import Camera, view_proj
from .geometry import Mesh
from .lighting import DirectionalLight, EnvironmentLight
from .texture import TextureSet

_W_EPS = 1e-6  # minimum clip-space w; triangles closer than this are dropped


@dataclasses.dataclass(frozen=True)
class GBuffer:
    """Per-pixel rasterization output, fixed per view."""

    width: int
    height: int
    coverage: np.ndarray    # (H, W) bool
    uv: np.ndarray          # (H, W, 2)
    normal: np.ndarray      # (H, W, 3) world, renormalized
    tangent: np.ndarray     # (H, W, 3) world, renormalized
    handedness: np.ndarray  # (H, W) +-1
    view_dir: np.ndarray    # (H, W, 3) unit, surface toward camera
    depth: np.ndarray       # (H, W) NDC z, +inf where empty

    @property
    def uv_is_valid(self) -> np.ndarray:
        return self.coverage


@dataclasses.dataclass(frozen=True)
class RenderImage:
    rgb: np.ndarray   # (H, W, 3) in [0, 1], black outside the mask
    mask: np.ndarray  # (H, W) bool


@dataclasses.dataclass
class TextureGrads:
    """Dense per-texel gradients for the three optimizable maps."""

    albedo: np.ndarray
    arm: np.ndarray
    normal: np.ndarray

    @classmethod
    def zeros_like(cls, textures: TextureSet) -> "TextureGrads":
        return cls(
            albedo=np.zeros(textures.albedo.data.shape),
            arm=np.zeros(textures.arm.data.shape),
            normal=np.zeros(textures.normal.data.shape),
        )

    def add_(self, other: "TextureGrads") -> "TextureGrads":
        self.albedo += other.albedo
        self.arm += other.arm
        self.normal += other.normal
        return self

    def scale_(self, factor: float) -> "TextureGrads":
        self.albedo *= factor
        self.arm *= factor
        self.normal *= factor
        return self


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize(mesh: Mesh, camera: Camera) -> GBuffer:
    """Edge-function rasterization with perspective-correct interpolation."""
    if mesh.tangents is None:
        raise ValueError("mesh needs tangents; call compute_tangents first")
    w_img, h_img = camera.width, camera.height
    view, proj = view_proj(camera)
    mvp = proj @ view
    n_verts = mesh.num_vertices
    clip = np.concatenate([mesh.positions, np.ones((n_verts, 1))], axis=1) @ mvp.T

    depth = np.full((h_img, w_img), np.inf)
    coverage = np.zeros((h_img, w_img), dtype=bool)
    uv_buf = np.zeros((h_img, w_img, 2))
    nrm_buf = np.zeros((h_img, w_img, 3))
    tan_buf = np.zeros((h_img, w_img, 3))
    hand_buf = np.zeros((h_img, w_img))
    pos_buf = np.zeros((h_img, w_img, 3))

    # per-vertex attribute block: uv(2) normal(3) tangent(3) handedness(1) pos(3)
    attrs = np.concatenate([
        mesh.uvs,
        mesh.normals,
        mesh.tangents[:, :3],
        mesh.tangents[:, 3:4],
        mesh.positions,
    ], axis=1)

    # vectorized prepass: project every vertex, cull triangles that touch
    # the near plane, are degenerate, or have an empty pixel bounding box
    cw = clip[:, 3]
    safe_w = np.maximum(cw, _W_EPS)
    ndc_all = clip[:, :3] / safe_w[:, None]
    sx_all = (ndc_all[:, 0] + 1.0) * 0.5 * w_img
    sy_all = (1.0 - ndc_all[:, 1]) * 0.5 * h_img
    tris = mesh.triangles
    tsx = sx_all[tris]
    tsy = sy_all[tris]
    valid = (cw[tris] > _W_EPS).all(axis=1)
    bx0 = np.maximum(np.floor(tsx.min(axis=1) - 0.5), 0.0).astype(np.int64)
    bx1 = np.minimum(np.ceil(tsx.max(axis=1) - 0.5), w_img - 1).astype(np.int64)
    by0 = np.maximum(np.floor(tsy.min(axis=1) - 0.5), 0.0).astype(np.int64)
    by1 = np.minimum(np.ceil(tsy.max(axis=1) - 0.5), h_img - 1).astype(np.int64)
    area_all = ((tsx[:, 1] - tsx[:, 0]) * (tsy[:, 2] - tsy[:, 0])
                - (tsy[:, 1] - tsy[:, 0]) * (tsx[:, 2] - tsx[:, 0]))
    valid &= (bx1 >= bx0) & (by1 >= by0) & (np.abs(area_all) > 1e-12)

    for t in np.nonzero(valid)[0]:
        tri = tris[t]
        sx = tsx[t]
        sy = tsy[t]
        x0, x1, y0, y1 = bx0[t], bx1[t], by0[t], by1[t]
        area = area_all[t]
        cx = (np.arange(x0, x1 + 1) + 0.5)[None, :]
        cy = (np.arange(y0, y1 + 1) + 0.5)[:, None]
        b0 = _edge(sx[1], sy[1], sx[2], sy[2], cx, cy) / area
        b1 = _edge(sx[2], sy[2], sx[0], sy[0], cx, cy) / area
        b2 = 1.0 - b0 - b1
        z = b0 * ndc_all[tri[0], 2] + b1 * ndc_all[tri[1], 2] + b2 * ndc_all[tri[2], 2]
        tile = depth[y0:y1 + 1, x0:x1 + 1]
        sel = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0) & (z < tile)
        if not sel.any():
            continue
        tw = cw[tri]
        bw0 = b0[sel] / tw[0]
        bw1 = b1[sel] / tw[1]
        bw2 = b2[sel] / tw[2]
        denom = bw0 + bw1 + bw2
        pc = np.stack([bw0, bw1, bw2], axis=1) / denom[:, None]
        vals = pc @ attrs[tri]
        yy, xx = np.nonzero(sel)
        yy = yy + y0
        xx = xx + x0
        depth[yy, xx] = z[sel]
        coverage[yy, xx] = True
        uv_buf[yy, xx] = vals[:, 0:2]
        nrm_buf[yy, xx] = vals[:, 2:5]
        tan_buf[yy, xx] = vals[:, 5:8]
        hand_buf[yy, xx] = np.where(vals[:, 8] >= 0.0, 1.0, -1.0)
        pos_buf[yy, xx] = vals[:, 9:12]

    if coverage.any():
        m = coverage
        nrm_buf[m] /= np.maximum(np.linalg.norm(nrm_buf[m], axis=1, keepdims=True), 1e-12)
        tan_buf[m] /= np.maximum(np.linalg.norm(tan_buf[m], axis=1, keepdims=True), 1e-12)
        vdir = camera.position[None, :] - pos_buf[m]
        pos_buf = pos_buf  # world positions only feed view_dir
        view_dir = np.zeros((h_img, w_img, 3))
        view_dir[m] = vdir / np.maximum(np.linalg.norm(vdir, axis=1, keepdims=True), 1e-12)
    else:
        view_dir = np.zeros((h_img, w_img, 3))

    return GBuffer(
        width=w_img,
        height=h_img,
        coverage=coverage,
        uv=uv_buf,
        normal=nrm_buf,
        tangent=tan_buf,
        handedness=hand_buf,
        view_dir=view_dir,
        depth=depth,
    )


# ---------------------------------------------------------------------------
# shading

def _surface_inputs(gbuffer: GBuffer, textures: TextureSet):
    """Flattened per-covered-pixel material and frame arrays."""
    mask = gbuffer.coverage
    u = gbuffer.uv[..., 0][mask]
    v = gbuffer.uv[..., 1][mask]
    kd = texture.sample_bilinear_many(textures.albedo.data, u, v)
    arm = texture.sample_bilinear_many(textures.arm.data, u, v)
    enc = texture.sample_bilinear_many(textures.normal.data, u, v)
    n_t = texture.decode_normal(enc)
    t_geo = gbuffer.tangent[mask]
    n_geo = gbuffer.normal[mask]
    b_geo = gbuffer.handedness[mask][:, None] * np.cross(n_geo, t_geo)
    m_vec = n_t[:, 0:1] * t_geo + n_t[:, 1:2] * b_geo + n_t[:, 2:3] * n_geo
    m_len = np.maximum(np.linalg.norm(m_vec, axis=1, keepdims=True), 1e-9)
    n_world = m_vec / m_len
    return {
        "u": u,
        "v": v,
        "kd": kd,
        "kr": arm[:, 1],
        "km": arm[:, 2],
        "frame": (t_geo, b_geo, n_geo),
        "m_len": m_len,
        "n_world": n_world,
        "view": gbuffer.view_dir[mask],
    }


def _shade_core(inputs, light, with_grad: bool):
    """Pre-clamp shaded rgb and, optionally, partials w.r.t. kd/kr/km/n_world."""
    kd, kr, km = inputs["kd"], inputs["kr"], inputs["km"]
    n_w, view = inputs["n_world"], inputs["view"]
    if isinstance(light, DirectionalLight):
        return lighting.eval_directional(light, kd, kr, km, n_w, view, with_grad=with_grad)

    env: EnvironmentLight = light
    ks = texture.specular_reflectance(kd, km)
    irr, irr_grad = lighting.equirect_lookup(env.irradiance, n_w, with_grad=with_grad)
    one_minus_km = (1.0 - km)[:, None]
    diffuse = kd * one_minus_km * irr

    ndv_raw = (n_w * view).sum(axis=1)
    ndv = np.clip(ndv_raw, 1e-4, 1.0)
    reflect = 2.0 * ndv_raw[:, None] * n_w - view
    pf, pf_ddir, pf_drough = lighting.prefilter_lookup(env, reflect, kr, with_grad=with_grad)
    ab, ab_dndv, ab_drough = lighting.lut_lookup(env, ndv, kr, with_grad=with_grad)
    a_col = ab[:, 0:1]
    b_col = ab[:, 1:2]
    fres = ks * a_col + b_col
    out = diffuse + pf * fres
    if not with_grad:
        return out

    d_kd = one_minus_km * irr + pf * a_col * km[:, None]
    d_km = -kd * irr + pf * a_col * (kd - 0.04)
    d_kr = pf_drough * fres + pf * (ks * ab_drough[:, 0:1] + ab_drough[:, 1:2])

    # normal path: irradiance lookup, reflect-direction lookup, and n.v
    d_n = (kd * one_minus_km)[..., None] * irr_grad
    # dr/dn: dr_i/dn_j = 2 n_i v_j + 2 (n.v) delta_ij
    pf_dot_n = (pf_ddir * n_w[:, None, :]).sum(axis=2)  # (P, C)
    d_reflect = 2.0 * pf_dot_n[..., None] * view[:, None, :] + 2.0 * ndv_raw[:, None, None] * pf_ddir
    d_n = d_n + fres[..., None] * d_reflect
    ndv_active = ((ndv_raw > 1e-4) & (ndv_raw < 1.0)).astype(np.float64)
    d_ab = pf * (ks * ab_dndv[:, 0:1] + ab_dndv[:, 1:2])
    d_n = d_n + (d_ab * ndv_active[:, None])[..., None] * view[:, None, :]
    return out, {"d_kd": d_kd, "d_kr": d_kr, "d_km": d_km, "d_normal": d_n}


def shade(gbuffer: GBuffer, textures: TextureSet, light) -> RenderImage:
    """Shade covered pixels; output clamped to [0,1], black background."""
    rgb = np.zeros((gbuffer.height, gbuffer.width, 3))
    mask = gbuffer.coverage
    if mask.any():
        inputs = _surface_inputs(gbuffer, textures)
        shaded = _shade_core(inputs, light, with_grad=False)
        rgb[mask] = np.clip(shaded, 0.0, 1.0)
    return RenderImage(rgb=rgb, mask=mask.copy())


def shade_with_partials(gbuffer: GBuffer, textures: TextureSet, light):
    """Forward shade plus a closure that backpropagates dL/dRGB.

    Sharing the forward pass with the backward chain halves the shading work
    when both the image and its texture gradients are needed.
    """
    rgb = np.zeros((gbuffer.height, gbuffer.width, 3))
    mask = gbuffer.coverage
    if not mask.any():
        image = RenderImage(rgb=rgb, mask=mask.copy())
        return image, lambda upstream: TextureGrads.zeros_like(textures)
    inputs = _surface_inputs(gbuffer, textures)
    shaded, part = _shade_core(inputs, light, with_grad=True)
    rgb[mask] = np.clip(shaded, 0.0, 1.0)
    image = RenderImage(rgb=rgb, mask=mask.copy())

    def backprop(upstream: np.ndarray) -> TextureGrads:
        grads = TextureGrads.zeros_like(textures)
        up = np.asarray(upstream, dtype=np.float64)[mask]
        # hard clamp: saturated pixels carry no gradient
        up = up * ((shaded > 0.0) & (shaded < 1.0))

        g_kd = up * part["d_kd"]
        g_kr = (up * part["d_kr"]).sum(axis=1)
        g_km = (up * part["d_km"]).sum(axis=1)
        g_nw = (up[..., None] * part["d_normal"]).sum(axis=1)

        # world normal -> raw tangent-space vector -> encoded texel values
        t_geo, b_geo, n_geo = inputs["frame"]
        n_w = inputs["n_world"]
        m_len = inputs["m_len"]
        g_m = (g_nw - n_w * (n_w * g_nw).sum(axis=1, keepdims=True)) / m_len
        g_ntex = 2.0 * np.stack([
            (g_m * t_geo).sum(axis=1),
            (g_m * b_geo).sum(axis=1),
            (g_m * n_geo).sum(axis=1),
        ], axis=1)

        u, v = inputs["u"], inputs["v"]
        texture.scatter_bilinear_many(grads.albedo, u, v, g_kd)
        arm_up = np.zeros((u.shape[0], 3))
        arm_up[:, 1] = g_kr
        arm_up[:, 2] = g_km
        texture.scatter_bilinear_many(grads.arm, u, v, arm_up)
        texture.scatter_bilinear_many(grads.normal, u, v, g_ntex)
        return grads

    return image, backprop


def shade_backward(gbuffer: GBuffer, textures: TextureSet, light,
                   upstream: np.ndarray) -> TextureGrads:
    """Chain upstream dL/dRGB (H,W,3) into per-texel gradients.

    Scatter into the maps reuses the bilinear sampling weights, and
    accumulation is in-order deterministic.
    """
    _, backprop = shade_with_partials(gbuffer, textures, light)
    return backprop(upstream)
