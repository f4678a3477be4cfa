"""Texture maps: storage, bilinear sampling with exact backward scatter,
pooling, total variation, bicubic resampling and SR initialization.

All maps are float64 arrays shaped (height, width, channels) with values in
[0, 1]. Sampling places texel centers at (i + 0.5) / size and uses
clamp-to-edge addressing; backward passes reuse the forward interpolation
weights exactly, so gradients are exact rather than approximate.
"""
from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import numpy as np

DTYPE = np.float64


class TextureError(ValueError):
    """Invalid texture data or incompatible texture dimensions."""


def _as_map_data(data) -> np.ndarray:
    arr = np.asarray(data, dtype=DTYPE)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise TextureError(f"texture data must be HxWxC, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclasses.dataclass(frozen=True)
class TextureMap:
    """A single texture map, immutable after construction."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_map_data(self.data)
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise TextureError(f"texture must be at least 1x1, got {w}x{h}")
        if not 1 <= c <= 4:
            raise TextureError(f"texture must have 1..4 channels, got {c}")
        if not np.all(np.isfinite(arr)):
            raise TextureError("texture contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise TextureError("texture values must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclasses.dataclass(frozen=True)
class TextureSet:
    """Albedo / ARM / normal triple sharing one resolution.

    ARM channel order is ambient occlusion, roughness, metallic. The normal
    map stores tangent-space normals encoded as (n + 1) / 2; decoded vectors
    are renormalized at shading time, not here.
    """

    albedo: TextureMap
    arm: TextureMap
    normal: TextureMap

    def __post_init__(self):
        for name, m in (("albedo", self.albedo), ("arm", self.arm), ("normal", self.normal)):
            if m.channels != 3:
                raise TextureError(f"{name} map must have 3 channels, got {m.channels}")
        shapes = {m.data.shape[:2] for m in (self.albedo, self.arm, self.normal)}
        if len(shapes) != 1:
            raise TextureError(f"texture set maps must share resolution, got {sorted(shapes)}")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.albedo.height, self.albedo.width

    def maps(self) -> dict[str, TextureMap]:
        return {"albedo": self.albedo, "arm": self.arm, "normal": self.normal}


def specular_reflectance(k_d: np.ndarray, k_m) -> np.ndarray:
    """F0 blend between dielectric 0.04 and the conductor albedo."""
    kd = np.asarray(k_d, dtype=DTYPE)
    km = np.asarray(k_m, dtype=DTYPE)
    if km.ndim == kd.ndim - 1:
        km = km[..., None]
    return 0.04 * (1.0 - km) + km * kd


@dataclasses.dataclass(frozen=True)
class MaterialSample:
    """One shaded point's material values; k_s is derived from k_d and k_m."""

    k_d: np.ndarray
    k_r: float
    k_m: float
    k_n: np.ndarray
    k_s: np.ndarray = None

    def __post_init__(self):
        kd = np.asarray(self.k_d, dtype=DTYPE)
        kn = np.asarray(self.k_n, dtype=DTYPE)
        kn = kn / np.linalg.norm(kn)
        ks = specular_reflectance(kd, float(self.k_m)) if self.k_s is None else np.asarray(self.k_s, dtype=DTYPE)
        object.__setattr__(self, "k_d", kd)
        object.__setattr__(self, "k_n", kn)
        object.__setattr__(self, "k_s", ks)


def decode_normal(encoded: np.ndarray) -> np.ndarray:
    """[0,1] RGB -> tangent-space vector in [-1,1] (not normalized)."""
    return 2.0 * np.asarray(encoded, dtype=DTYPE) - 1.0


def encode_normal(vec: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(vec, dtype=DTYPE) + 1.0) * 0.5, 0.0, 1.0)


# ---------------------------------------------------------------------------
# bilinear sampling

def _bilinear_setup(h: int, w: int, u: np.ndarray, v: np.ndarray):
    """Indices and weights of the four texels covering each (u, v).

    Clamp-to-edge: uv is clipped to [0,1] and border texels repeat. Returns
    (iy0, iy1, ix0, ix1, fy, fx) with fx/fy the fractional weights of the
    +1 neighbors.
    """
    x = np.clip(u, 0.0, 1.0) * w - 0.5
    y = np.clip(v, 0.0, 1.0) * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = np.clip(x0.astype(np.int64), 0, w - 1)
    ix1 = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    iy0 = np.clip(y0.astype(np.int64), 0, h - 1)
    iy1 = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    return iy0, iy1, ix0, ix1, fy, fx


def sample_bilinear_many(data: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized bilinear lookup; data is (H,W,C), u and v are (N,).

    Lerp form, so constant maps are reproduced exactly.
    """
    h, w = data.shape[:2]
    iy0, iy1, ix0, ix1, fy, fx = _bilinear_setup(h, w, u, v)
    fy = fy[:, None]
    fx = fx[:, None]
    t00 = data[iy0, ix0]
    t01 = data[iy0, ix1]
    top = t00 + fx * (t01 - t00)
    t10 = data[iy1, ix0]
    t11 = data[iy1, ix1]
    bot = t10 + fx * (t11 - t10)
    return top + fy * (bot - top)


def scatter_bilinear_many(grad: np.ndarray, u: np.ndarray, v: np.ndarray, upstream: np.ndarray) -> None:
    """Accumulate upstream (N,C) into grad (H,W,C) with forward weights.

    Uses an unbuffered in-order accumulation, so results are deterministic.
    """
    h, w = grad.shape[:2]
    iy0, iy1, ix0, ix1, fy, fx = _bilinear_setup(h, w, u, v)
    fy = fy[:, None]
    fx = fx[:, None]
    np.add.at(grad, (iy0, ix0), upstream * (1 - fy) * (1 - fx))
    np.add.at(grad, (iy0, ix1), upstream * (1 - fy) * fx)
    np.add.at(grad, (iy1, ix0), upstream * fy * (1 - fx))
    np.add.at(grad, (iy1, ix1), upstream * fy * fx)


def bilinear_sample(tex: TextureMap, uv) -> np.ndarray:
    """Sample one uv location; returns a (channels,) vector."""
    u, v = float(uv[0]), float(uv[1])
    if not (np.isfinite(u) and np.isfinite(v)):
        raise TextureError(f"uv must be finite, got {uv}")
    out = sample_bilinear_many(tex.data, np.array([u]), np.array([v]))
    return out[0]


def bilinear_sample_backward(map_shape: tuple[int, int], uv, upstream_grad):
    """Sparse gradient of bilinear_sample w.r.t. the texels (<= 4 entries).

    Returns a list of (iy, ix, weight, grad) where grad = weight * upstream
    and the weights are the forward interpolation weights (they sum to 1).
    """
    h, w = map_shape
    up = np.atleast_1d(np.asarray(upstream_grad, dtype=DTYPE))
    iy0, iy1, ix0, ix1, fy, fx = _bilinear_setup(h, w, np.array([float(uv[0])]), np.array([float(uv[1])]))
    fy, fx = float(fy[0]), float(fx[0])
    corners = [
        (int(iy0[0]), int(ix0[0]), (1 - fy) * (1 - fx)),
        (int(iy0[0]), int(ix1[0]), (1 - fy) * fx),
        (int(iy1[0]), int(ix0[0]), fy * (1 - fx)),
        (int(iy1[0]), int(ix1[0]), fy * fx),
    ]
    merged: dict[tuple[int, int], float] = {}
    for iy, ix, wgt in corners:
        merged[(iy, ix)] = merged.get((iy, ix), 0.0) + wgt
    return [
        (iy, ix, wgt, wgt * up)
        for (iy, ix), wgt in merged.items()
        if wgt > 0.0
    ]


# ---------------------------------------------------------------------------
# pooling and total variation

def avg_pool(tex: TextureMap, factor: int) -> TextureMap:
    """Unweighted mean over factor x factor blocks."""
    if factor < 1:
        raise TextureError(f"pool factor must be >= 1, got {factor}")
    h, w, c = tex.data.shape
    if h % factor or w % factor:
        raise TextureError(f"dimensions {w}x{h} not divisible by pool factor {factor}")
    pooled = tex.data.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    return TextureMap(pooled)


def avg_pool_backward(hr_shape: tuple[int, int, int], factor: int, upstream: np.ndarray) -> np.ndarray:
    """Adjoint of avg_pool: spread each upstream value over its block / f^2."""
    h, w, c = hr_shape
    spread = np.repeat(np.repeat(upstream, factor, axis=0), factor, axis=1)
    return spread / float(factor * factor)


def tv_loss(tex: TextureMap) -> tuple[float, np.ndarray]:
    """Anisotropic total variation: sum of |forward differences|, no wrap.

    Returns (loss, gradient). The gradient is the exact subgradient with
    sign(0) = 0.
    """
    d = tex.data
    if d.shape[0] < 2 and d.shape[1] < 2:
        raise TextureError("tv_loss needs width or height >= 2")
    dx = d[:, 1:, :] - d[:, :-1, :]
    dy = d[1:, :, :] - d[:-1, :, :]
    loss = float(np.abs(dx).sum() + np.abs(dy).sum())
    grad = np.zeros_like(d)
    sx = np.sign(dx)
    sy = np.sign(dy)
    grad[:, 1:, :] += sx
    grad[:, :-1, :] -= sx
    grad[1:, :, :] += sy
    grad[:-1, :, :] -= sy
    return loss, grad


# ---------------------------------------------------------------------------
# Catmull-Rom bicubic resampling

def _catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Kernel weights for the 4 taps at offsets -1..2, a = -0.5."""
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return np.stack([w0, w1, w2, w3], axis=-1)


def _bicubic_axis(n_src: int, n_dst: int):
    """Tap indices (n_dst, 4) and weights (n_dst, 4) for one axis."""
    pos = (np.arange(n_dst, dtype=DTYPE) + 0.5) * (n_src / n_dst) - 0.5
    base = np.floor(pos).astype(np.int64)
    t = pos - base
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    taps = np.clip(taps, 0, n_src - 1)
    return taps, _catmull_rom_weights(t)


def bicubic_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom resize of an (H,W,C) array, clamped to [0,1]."""
    taps_x, wx = _bicubic_axis(data.shape[1], out_w)
    taps_y, wy = _bicubic_axis(data.shape[0], out_h)
    mid = (data[:, taps_x, :] * wx[None, :, :, None]).sum(axis=2)
    out = (mid[taps_y, :, :] * wy[:, :, None, None]).sum(axis=1)
    return np.clip(out, 0.0, 1.0)


def bicubic_upsample(tex: TextureMap, factor: int) -> TextureMap:
    if factor < 1:
        raise TextureError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return tex
    return TextureMap(bicubic_resize(tex.data, tex.height * factor, tex.width * factor))


# ---------------------------------------------------------------------------
# SR texture initialization

def initialize_sr_textures(lr: TextureSet, factor: int, oracle) -> TextureSet:
    """Build the initial high-resolution texture set from a low-res one.

    The albedo goes through the SR oracle; ARM and normal maps are bicubic
    upsampled. The normal map is renormalized after decode so the initial
    vectors are unit length.
    """
    from .oracle import SrRequest  # local import to avoid a cycle

    if factor not in (1, 2, 4, 8):
        raise TextureError(f"unsupported upscale factor {factor}")
    if factor == 1:
        return lr
    albedo_hr = oracle.upscale(SrRequest(image=lr.albedo.data, scale=factor, view_id=-1))
    albedo_hr = np.clip(np.asarray(albedo_hr, dtype=DTYPE), 0.0, 1.0)
    arm_hr = bicubic_upsample(lr.arm, factor)
    normal_hr = bicubic_upsample(lr.normal, factor).data
    vec = decode_normal(normal_hr)
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    vec = vec / np.maximum(norm, 1e-8)
    return TextureSet(
        albedo=TextureMap(albedo_hr),
        arm=arm_hr,
        normal=TextureMap(encode_normal(vec)),
    )


# ---------------------------------------------------------------------------
# sRGB transfer (images exchanged with SR models are sRGB-encoded)

def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(linear, dtype=DTYPE), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(encoded, dtype=DTYPE), 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


# ---------------------------------------------------------------------------
# PNG I/O (8- or 16-bit; internal values stay floating point)

def read_png(path) -> np.ndarray:
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise TextureError(f"cannot read image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    if raw.shape[2] >= 3:
        raw = raw[:, :, [2, 1, 0] + list(range(3, raw.shape[2]))]  # BGR -> RGB
        raw = raw[:, :, :3]
    if raw.dtype == np.uint8:
        return raw.astype(DTYPE) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(DTYPE) / 65535.0
    raise TextureError(f"unsupported PNG sample type {raw.dtype} in {path}")


def write_png(path, data: np.ndarray, bit_depth: int = 8) -> None:
    import cv2

    arr = np.clip(np.asarray(data, dtype=DTYPE), 0.0, 1.0)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if bit_depth == 8:
        q = np.round(arr * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        q = np.round(arr * 65535.0).astype(np.uint16)
    else:
        raise TextureError(f"bit depth must be 8 or 16, got {bit_depth}")
    q = q[:, :, [2, 1, 0]]  # RGB -> BGR
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), q):
        raise TextureError(f"cannot write image: {path}")


MAP_SUFFIXES = {"albedo": "_albedo.png", "arm": "_arm.png", "normal": "_normal.png"}


def load_texture_set(stem, flip_normal_green: bool = False) -> TextureSet:
    """Load <stem>_albedo.png, <stem>_arm.png, <stem>_normal.png."""
    stem = str(stem)
    maps = {}
    for name, suffix in MAP_SUFFIXES.items():
        path = Path(stem + suffix)
        if not path.exists():
            raise FileNotFoundError(f"missing texture map: {path}")
        maps[name] = read_png(path)
    if flip_normal_green:
        n = maps["normal"].copy()
        n[:, :, 1] = 1.0 - n[:, :, 1]
        maps["normal"] = n
    norms = np.linalg.norm(decode_normal(maps["normal"]), axis=-1)
    if norms.min() < 0.5 or norms.max() > 1.5:
        print(
            f"warning: normal map {stem}_normal.png has decoded norms in "
            f"[{norms.min():.3f}, {norms.max():.3f}], outside [0.5, 1.5]",
            file=sys.stderr,
        )
    return TextureSet(
        albedo=TextureMap(maps["albedo"]),
        arm=TextureMap(maps["arm"]),
        normal=TextureMap(maps["normal"]),
    )


def save_texture_set(stem, textures: TextureSet, bit_depth: int = 16) -> None:
    stem = str(stem)
    for name, tex in textures.maps().items():
        write_png(stem + MAP_SUFFIXES[name], tex.data, bit_depth=bit_depth)
