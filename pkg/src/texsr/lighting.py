"""Environment lighting for split-sum image-based shading, plus a
directional light used in gradient-validation mode.

An EnvironmentLight bundles the equirectangular radiance map with three
derived assets: a cosine-convolved irradiance map (Lambertian 1/pi folded
in, so a unit-radiance environment yields irradiance 1), a prefiltered
specular chain indexed by roughness, and a 2-channel BRDF integration
table over (n.v, roughness). All precomputation uses a fixed low-discrepancy
sequence, so the assets are bit-reproducible.

Lookup helpers optionally return analytic derivatives with respect to the
lookup direction and scalar coordinates; the renderer chains these into
texture gradients.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

IRRADIANCE_SHAPE = (16, 32)       # H, W
PREFILTER_BASE_SHAPE = (64, 128)  # H, W of the sharpest level
PREFILTER_LEVELS = 6
LUT_SIZE = 32
PREFILTER_SAMPLES = 256
LUT_SAMPLES = 1024
_MAX_SOURCE_SHAPE = (128, 256)    # cap for precomputation inputs


class EnvmapError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PFM I/O (little-endian RGB, rows stored bottom-to-top)

def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"PF":
            raise EnvmapError(f"not a color PFM file: {path} (header {header!r})")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise EnvmapError(f"malformed PFM dimensions in {path}")
        try:
            w, h = int(dims[0]), int(dims[1])
            scale = float(fh.readline().strip())
        except ValueError as exc:
            raise EnvmapError(f"malformed PFM header in {path}: {exc}") from exc
        if w < 1 or h < 1:
            raise EnvmapError(f"bad PFM dimensions {w}x{h} in {path}")
        endian = "<" if scale < 0 else ">"
        raw = fh.read(w * h * 3 * 4)
        if len(raw) != w * h * 3 * 4:
            raise EnvmapError(f"truncated PFM payload in {path}")
        data = np.frombuffer(raw, dtype=endian + "f4").reshape(h, w, 3)
    data = np.flipud(data).astype(np.float64) * abs(scale)
    if not np.all(np.isfinite(data)):
        raise EnvmapError(f"PFM contains non-finite texels: {path}")
    return np.clip(data, 0.0, None)


def write_pfm(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise EnvmapError(f"PFM data must be HxWx3, got {arr.shape}")
    h, w = arr.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# equirectangular mapping

def uv_to_direction(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    theta = v * np.pi          # angle from +Y
    phi = (u - 0.5) * 2.0 * np.pi
    st = np.sin(theta)
    return np.stack([st * np.sin(phi), np.cos(theta), -st * np.cos(phi)], axis=-1)


def direction_to_uv(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(dirs, dtype=np.float64)
    u = np.arctan2(d[..., 0], -d[..., 2]) / (2.0 * np.pi) + 0.5
    v = np.arccos(np.clip(d[..., 1], -1.0, 1.0)) / np.pi
    return u, v


def _texel_directions(h: int, w: int) -> np.ndarray:
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    uu, vv = np.meshgrid(u, v)
    return uv_to_direction(uu, vv)


def _texel_solid_angles(h: int, w: int) -> np.ndarray:
    v = (np.arange(h) + 0.5) / h
    sa_row = np.sin(v * np.pi) * (np.pi / h) * (2.0 * np.pi / w)
    return np.broadcast_to(sa_row[:, None], (h, w))


def _area_downsample(arr: np.ndarray, dst_h: int, dst_w: int) -> np.ndarray:
    """Mean-pool by floor assignment of source texels to destination cells."""
    h, w = arr.shape[:2]
    if h <= dst_h and w <= dst_w:
        return arr
    iy = np.minimum((np.arange(h) * dst_h) // h, dst_h - 1)
    ix = np.minimum((np.arange(w) * dst_w) // w, dst_w - 1)
    flat = iy[:, None] * dst_w + ix[None, :]
    acc = np.zeros((dst_h * dst_w, arr.shape[2]))
    cnt = np.zeros(dst_h * dst_w)
    np.add.at(acc, flat.ravel(), arr.reshape(-1, arr.shape[2]))
    np.add.at(cnt, flat.ravel(), 1.0)
    return (acc / cnt[:, None]).reshape(dst_h, dst_w, arr.shape[2])


# ---------------------------------------------------------------------------
# bilinear lookup with optional derivative (wrap-x for longitude)

def _bilinear_grid(table: np.ndarray, x: np.ndarray, y: np.ndarray, wrap_x: bool, with_grad: bool):
    """Sample table (H,W,C) at continuous grid coords (x in texels, y in texels).

    Returns (value, dvalue_dx, dvalue_dy); the derivative outputs are None
    unless with_grad. x/y follow the texel-center convention (texel i at
    coordinate i).
    """
    h, w = table.shape[:2]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    if wrap_x:
        ix0 = x0.astype(np.int64) % w
        ix1 = (x0.astype(np.int64) + 1) % w
    else:
        ix0 = np.clip(x0.astype(np.int64), 0, w - 1)
        ix1 = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    iy0 = np.clip(y0.astype(np.int64), 0, h - 1)
    iy1 = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    t00 = table[iy0, ix0]
    t01 = table[iy0, ix1]
    t10 = table[iy1, ix0]
    t11 = table[iy1, ix1]
    fxc = fx[..., None]
    fyc = fy[..., None]
    top = t00 * (1 - fxc) + t01 * fxc
    bot = t10 * (1 - fxc) + t11 * fxc
    val = top * (1 - fyc) + bot * fyc
    if not with_grad:
        return val, None, None
    dvdx = (t01 - t00) * (1 - fyc) + (t11 - t10) * fyc
    dvdy = bot - top
    return val, dvdx, dvdy


def equirect_lookup(table: np.ndarray, dirs: np.ndarray, with_grad: bool = False):
    """Bilinear equirectangular lookup; optionally d(value)/d(direction).

    Returns (values (N,C), grad (N,C,3) or None). Direction gradients are
    zeroed at the poles where the parameterization is singular.
    """
    h, w = table.shape[:2]
    d = np.asarray(dirs, dtype=np.float64)
    u, v = direction_to_uv(d)
    x = u * w - 0.5
    y = v * h - 0.5
    val, dvdx, dvdy = _bilinear_grid(table, x, y, wrap_x=True, with_grad=with_grad)
    if not with_grad:
        return val, None
    dx, dy_, dz = d[..., 0], d[..., 1], d[..., 2]
    planar = dx * dx + dz * dz
    safe = planar > 1e-12
    inv_planar = np.where(safe, 1.0 / np.maximum(planar, 1e-12), 0.0)
    du_ddir = np.stack([
        -dz * inv_planar, np.zeros_like(dx), dx * inv_planar,
    ], axis=-1) / (2.0 * np.pi)
    sin_t = np.sqrt(np.maximum(1.0 - np.clip(dy_, -1.0, 1.0) ** 2, 1e-12))
    dv_ddir = np.zeros_like(d)
    dv_ddir[..., 1] = np.where(sin_t > 1e-6, -1.0 / (np.pi * sin_t), 0.0)
    grad = dvdx[..., None] * (du_ddir * w)[..., None, :] + dvdy[..., None] * (dv_ddir * h)[..., None, :]
    return val, grad


# ---------------------------------------------------------------------------
# low-discrepancy sampling for the precomputation

def _hammersley(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.uint32)
    bits = i.copy()
    bits = (bits << np.uint32(16)) | (bits >> np.uint32(16))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    radical = bits.astype(np.float64) * 2.3283064365386963e-10
    return np.stack([i.astype(np.float64) / n, radical], axis=1)


def _ggx_half_vectors(xi: np.ndarray, alpha: float) -> np.ndarray:
    """Importance-sampled half vectors around +Z for the GGX distribution."""
    phi = 2.0 * np.pi * xi[:, 0]
    cos_t = np.sqrt((1.0 - xi[:, 1]) / (1.0 + (alpha * alpha - 1.0) * xi[:, 1]))
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


def _tangent_frames(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    up = np.where(np.abs(n[:, 1:2]) < 0.999, np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    t = np.cross(up, n)
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(n, t)
    return t, b


def _prefilter_level(source: np.ndarray, h: int, w: int, roughness: float) -> np.ndarray:
    dirs = _texel_directions(h, w).reshape(-1, 3)
    if roughness <= 0.0:
        val, _ = equirect_lookup(source, dirs)
        return val.reshape(h, w, 3)
    alpha = roughness * roughness
    half = _ggx_half_vectors(_hammersley(PREFILTER_SAMPLES), alpha)
    cos_t = half[:, 2]
    # with N = V, the sample weight n.l = 2 cos^2(theta_h) - 1 per sample
    ndl = 2.0 * cos_t * cos_t - 1.0
    keep = ndl > 0.0
    half = half[keep]
    cos_t = cos_t[keep]
    ndl = ndl[keep]
    out = np.empty((dirs.shape[0], 3))
    chunk = 2048
    for s in range(0, dirs.shape[0], chunk):
        n = dirs[s:s + chunk]
        t, b = _tangent_frames(n)
        h_world = (
            t[:, None, :] * half[None, :, 0:1]
            + b[:, None, :] * half[None, :, 1:2]
            + n[:, None, :] * half[None, :, 2:3]
        )
        l_world = 2.0 * cos_t[None, :, None] * h_world - n[:, None, :]
        val, _ = equirect_lookup(source, l_world.reshape(-1, 3))
        val = val.reshape(n.shape[0], -1, 3)
        out[s:s + chunk] = (val * ndl[None, :, None]).sum(axis=1) / ndl.sum()
    return out.reshape(h, w, 3)


def _schlick_ggx(c: np.ndarray, k: float) -> np.ndarray:
    return c / (c * (1.0 - k) + k)


def _integrate_brdf_lut() -> np.ndarray:
    """Scale/bias table over (n.v, roughness): specular = F0 * A + B."""
    grid = (np.arange(LUT_SIZE) + 0.5) / LUT_SIZE
    xi = _hammersley(LUT_SAMPLES)
    lut = np.empty((LUT_SIZE, LUT_SIZE, 2))
    for j, rough in enumerate(grid):
        alpha = rough * rough
        k = alpha / 2.0
        half = _ggx_half_vectors(xi, alpha)
        for i, ndv in enumerate(grid):
            v = np.array([np.sqrt(max(1.0 - ndv * ndv, 0.0)), 0.0, ndv])
            vdh = half @ v
            l = 2.0 * vdh[:, None] * half - v[None, :]
            ndl = l[:, 2]
            sel = ndl > 0.0
            if not sel.any():
                lut[j, i] = 0.0
                continue
            ndh = np.maximum(half[sel, 2], 0.0)
            vdh_s = np.maximum(vdh[sel], 0.0)
            g = _schlick_ggx(max(ndv, 1e-4), k) * _schlick_ggx(ndl[sel], k)
            g_vis = g * vdh_s / np.maximum(ndh * max(ndv, 1e-4), 1e-8)
            fc = (1.0 - vdh_s) ** 5
            lut[j, i, 0] = ((1.0 - fc) * g_vis).sum() / LUT_SAMPLES
            lut[j, i, 1] = (fc * g_vis).sum() / LUT_SAMPLES
    return lut


_LUT_CACHE: np.ndarray | None = None


def _brdf_lut() -> np.ndarray:
    global _LUT_CACHE
    if _LUT_CACHE is None:
        _LUT_CACHE = _integrate_brdf_lut()
    return _LUT_CACHE


# ---------------------------------------------------------------------------
# light types

@dataclasses.dataclass(frozen=True)
class DirectionalLight:
    """Validation-mode light: one directional source plus flat ambient."""

    direction: np.ndarray  # unit, pointing toward the surface
    radiance: np.ndarray   # (3,) >= 0
    ambient: np.ndarray    # (3,) >= 0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            d = d / n
        rad = np.clip(np.asarray(self.radiance, dtype=np.float64), 0.0, None)
        amb = np.clip(np.asarray(self.ambient, dtype=np.float64), 0.0, None)
        for name, v in (("direction", d), ("radiance", rad), ("ambient", amb)):
            v = np.ascontiguousarray(v)
            v.flags.writeable = False
            object.__setattr__(self, name, v)


@dataclasses.dataclass(frozen=True)
class EnvironmentLight:
    radiance: np.ndarray           # (H, W, 3)
    irradiance: np.ndarray         # IRRADIANCE_SHAPE + (3,)
    prefiltered: tuple             # PREFILTER_LEVELS equirect maps, sharp to blurry
    brdf_lut: np.ndarray           # (LUT_SIZE, LUT_SIZE, 2): rows roughness, cols n.v

    @classmethod
    def from_radiance(cls, radiance: np.ndarray) -> "EnvironmentLight":
        rad = np.asarray(radiance, dtype=np.float64)
        if rad.ndim != 3 or rad.shape[2] != 3:
            raise EnvmapError(f"radiance must be HxWx3, got {rad.shape}")
        if not np.all(np.isfinite(rad)):
            raise EnvmapError("radiance contains non-finite texels")
        rad = np.clip(rad, 0.0, None)

        source = _area_downsample(rad, *_MAX_SOURCE_SHAPE)

        # diffuse irradiance, Lambertian 1/pi folded in
        ih, iw = IRRADIANCE_SHAPE
        conv_src = _area_downsample(source, 32, 64)
        src_dirs = _texel_directions(*conv_src.shape[:2]).reshape(-1, 3)
        src_sa = _texel_solid_angles(*conv_src.shape[:2]).reshape(-1)
        out_dirs = _texel_directions(ih, iw).reshape(-1, 3)
        cos = np.clip(out_dirs @ src_dirs.T, 0.0, None)
        irr = (cos * src_sa[None, :]) @ conv_src.reshape(-1, 3) / np.pi
        irradiance = irr.reshape(ih, iw, 3)

        levels = []
        bh, bw = PREFILTER_BASE_SHAPE
        for lvl in range(PREFILTER_LEVELS):
            rough = lvl / (PREFILTER_LEVELS - 1)
            levels.append(_prefilter_level(source, bh >> lvl, bw >> lvl, rough))

        env = cls(
            radiance=rad,
            irradiance=irradiance,
            prefiltered=tuple(levels),
            brdf_lut=_brdf_lut().copy(),
        )
        for arr in (env.radiance, env.irradiance, env.brdf_lut, *env.prefiltered):
            arr.flags.writeable = False
        return env

    @classmethod
    def load(cls, path) -> "EnvironmentLight":
        return cls.from_radiance(read_pfm(path))


def load_envmap(path) -> EnvironmentLight:
    return EnvironmentLight.load(path)


# ---------------------------------------------------------------------------
# lighting evaluation

def eval_diffuse_irradiance(env: EnvironmentLight, normals: np.ndarray, with_grad: bool = False):
    """Cosine-convolved incoming light along each normal; (N,3).

    With with_grad, also returns d(irradiance)/d(normal) as (N,3,3).
    """
    n = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    val, grad = equirect_lookup(env.irradiance, n, with_grad=with_grad)
    if with_grad:
        return val, grad
    return val


def lut_lookup(env: EnvironmentLight, n_dot_v: np.ndarray, roughness: np.ndarray, with_grad: bool = False):
    """(A, B) scale/bias pair; optionally derivatives w.r.t. both coords."""
    lut = env.brdf_lut
    size = lut.shape[0]
    x = np.clip(n_dot_v, 0.0, 1.0) * size - 0.5
    y = np.clip(roughness, 0.0, 1.0) * size - 0.5
    val, dvdx, dvdy = _bilinear_grid(lut, x, y, wrap_x=False, with_grad=with_grad)
    if not with_grad:
        return val, None, None
    inside_x = ((n_dot_v > 0.0) & (n_dot_v < 1.0))[..., None]
    inside_y = ((roughness > 0.0) & (roughness < 1.0))[..., None]
    return val, np.where(inside_x, dvdx * size, 0.0), np.where(inside_y, dvdy * size, 0.0)


def prefilter_lookup(env: EnvironmentLight, dirs: np.ndarray, roughness: np.ndarray, with_grad: bool = False):
    """Prefiltered radiance along dirs with trilinear level blending.

    Returns (value (N,3), dvalue_ddir (N,3,3) | None, dvalue_drough (N,3) | None).
    """
    n_levels = len(env.prefiltered)
    lvl = np.clip(roughness, 0.0, 1.0) * (n_levels - 1)
    l0 = np.clip(np.floor(lvl).astype(np.int64), 0, n_levels - 1)
    frac = lvl - l0
    val = np.empty((dirs.shape[0], 3))
    grad_dir = np.empty((dirs.shape[0], 3, 3)) if with_grad else None
    grad_rough = np.empty((dirs.shape[0], 3)) if with_grad else None
    for a in range(n_levels):
        sel = l0 == a
        if not sel.any():
            continue
        b = min(a + 1, n_levels - 1)
        d = dirs[sel]
        f = frac[sel][:, None]
        va, ga = equirect_lookup(env.prefiltered[a], d, with_grad=with_grad)
        if b == a:
            vb, gb = va, ga
        else:
            vb, gb = equirect_lookup(env.prefiltered[b], d, with_grad=with_grad)
        val[sel] = va * (1 - f) + vb * f
        if with_grad:
            grad_dir[sel] = ga * (1 - f[..., None]) + gb * f[..., None]
            inside = (roughness[sel] > 0.0) & (roughness[sel] < 1.0)
            grad_rough[sel] = np.where(inside[:, None], (vb - va) * (n_levels - 1), 0.0)
    return val, grad_dir, grad_rough


def eval_specular(env: EnvironmentLight, reflect_dir: np.ndarray, n_dot_v: np.ndarray,
                  roughness: np.ndarray, k_s: np.ndarray) -> np.ndarray:
    """Split-sum specular: prefiltered(reflect, roughness) * (k_s * A + B)."""
    pf, _, _ = prefilter_lookup(env, np.atleast_2d(reflect_dir), np.atleast_1d(roughness))
    ab, _, _ = lut_lookup(env, np.atleast_1d(n_dot_v), np.atleast_1d(roughness))
    return pf * (np.atleast_2d(k_s) * ab[:, 0:1] + ab[:, 1:2])


def eval_directional(light: DirectionalLight, k_d, k_r, k_m, normal, view_dir,
                     with_grad: bool = False):
    """Cook-Torrance shading for one directional light plus ambient.

    GGX distribution, Schlick Fresnel with F0 = k_s, Smith height-correlated
    visibility; alpha = roughness^2. Inputs are per-pixel arrays; k_d (N,3),
    k_r/k_m (N,), normal/view_dir (N,3) unit. Returns rgb (N,3) and, with
    with_grad, a dict of partials d_kd (N,3), d_kr (N,3), d_km (N,3),
    d_normal (N,3,3).
    """
    kd = np.atleast_2d(np.asarray(k_d, dtype=np.float64))
    kr = np.atleast_1d(np.asarray(k_r, dtype=np.float64))
    km = np.atleast_1d(np.asarray(k_m, dtype=np.float64))
    n = np.atleast_2d(np.asarray(normal, dtype=np.float64))
    v = np.atleast_2d(np.asarray(view_dir, dtype=np.float64))
    rad = light.radiance[None, :]
    amb = light.ambient[None, :]

    l = -light.direction[None, :]
    h = l + v
    h = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
    ndl_raw = (n * l).sum(axis=1)
    ndv_raw = (n * v).sum(axis=1)
    ndh = np.clip((n * h).sum(axis=1), 0.0, 1.0)
    hdv = np.clip((h * v).sum(axis=1), 0.0, 1.0)
    lit = ndl_raw > 0.0
    ndl = np.where(lit, ndl_raw, 0.0)
    ndv = np.clip(ndv_raw, 1e-4, None)

    ks = 0.04 * (1.0 - km[:, None]) + km[:, None] * kd
    alpha = np.maximum(kr * kr, 1e-4)
    a2 = alpha * alpha
    t = ndh * ndh * (a2 - 1.0) + 1.0
    d_ndf = a2 / (np.pi * t * t)
    fw = (1.0 - hdv) ** 5
    fresnel = ks + (1.0 - ks) * fw[:, None]
    qv = np.sqrt(ndv * ndv * (1.0 - a2) + a2)
    ql = np.sqrt(ndl * ndl * (1.0 - a2) + a2)
    s_vis = np.maximum(ndl * qv + ndv * ql, 1e-9)
    vis = 0.5 / s_vis

    lam = (1.0 - km[:, None]) / np.pi
    diffuse = kd * lam * rad * ndl[:, None]
    spec_scalar = d_ndf * vis * ndl  # per-pixel, channel-independent part
    specular = fresnel * (spec_scalar[:, None] * rad)
    specular = np.where(lit[:, None], specular, 0.0)
    diffuse = np.where(lit[:, None], diffuse, 0.0)
    ambient = amb * kd * (1.0 - km[:, None])
    out = diffuse + specular + ambient
    if not with_grad:
        return out

    dfresnel_dks = 1.0 - fw[:, None]
    lit_col = lit[:, None]
    # kd and km reach the specular term only through k_s
    d_kd = np.where(lit_col, lam * rad * ndl[:, None], 0.0) \
        + np.where(lit_col, spec_scalar[:, None] * rad * dfresnel_dks * km[:, None], 0.0) \
        + amb * (1.0 - km[:, None])
    d_km = np.where(lit_col, -kd / np.pi * rad * ndl[:, None], 0.0) \
        + np.where(lit_col, spec_scalar[:, None] * rad * dfresnel_dks * (kd - 0.04), 0.0) \
        - amb * kd

    # roughness via alpha = kr^2
    dd_dalpha = 2.0 * alpha / (np.pi * t * t) - 4.0 * alpha * a2 * ndh * ndh / (np.pi * t ** 3)
    dqv_dalpha = alpha * (1.0 - ndv * ndv) / np.maximum(qv, 1e-9)
    dql_dalpha = alpha * (1.0 - ndl * ndl) / np.maximum(ql, 1e-9)
    dvis_dalpha = -0.5 * (ndl * dqv_dalpha + ndv * dql_dalpha) / (s_vis * s_vis)
    dspec_dalpha = (dd_dalpha * vis + d_ndf * dvis_dalpha) * ndl
    dalpha_dkr = np.where(kr * kr > 1e-4, 2.0 * kr, 0.0)
    d_kr = np.where(lit_col, fresnel * (dspec_dalpha * dalpha_dkr)[:, None] * rad, 0.0)

    # normal: through ndh, ndl, ndv
    dd_dndh = -4.0 * a2 * ndh * (a2 - 1.0) / (np.pi * t ** 3)
    dvis_dndl = -0.5 * (qv + ndv * ndl * (1.0 - a2) / np.maximum(ql, 1e-9)) / (s_vis * s_vis)
    dvis_dndv = -0.5 * (ndl * ndv * (1.0 - a2) / np.maximum(qv, 1e-9) + ql) / (s_vis * s_vis)
    dss_dndh = dd_dndh * vis * ndl
    dss_dndl = d_ndf * (dvis_dndl * ndl + vis)
    dss_dndv = d_ndf * dvis_dndv * ndl
    ndv_active = (ndv_raw > 1e-4).astype(np.float64)
    dn_scalar = (
        dss_dndh[:, None] * h
        + dss_dndl[:, None] * l
        + (dss_dndv * ndv_active)[:, None] * v
    )
    d_normal = np.where(lit_col, 1.0, 0.0)[..., None] * (
        fresnel[..., None] * (dn_scalar[:, None, :] * rad[..., None])
    )
    d_normal = d_normal + np.where(lit_col, 1.0, 0.0)[..., None] * (
        (kd * lam * rad)[..., None] * l[:, None, :]
    )
    return out, {"d_kd": d_kd, "d_kr": d_kr, "d_km": d_km, "d_normal": d_normal}


def parse_directional_spec(spec: str) -> DirectionalLight:
    """Parse 'dx,dy,dz,r,g,b,ar,ag,ab' into a DirectionalLight."""
    parts = [float(x) for x in spec.split(",")]
    if len(parts) != 9:
        raise ValueError("directional light needs 9 numbers: dx,dy,dz,r,g,b,ar,ag,ab")
    return DirectionalLight(
        direction=np.array(parts[0:3]),
        radiance=np.array(parts[3:6]),
        ambient=np.array(parts[6:9]),
    )
