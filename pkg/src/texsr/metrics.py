"""PSNR / SSIM and the texture + rendering evaluation protocol.

SSIM uses the classic 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03)
over valid window positions only, per channel, then averaged. The SSIM
backward pass is analytic and is shared with the texture-consistency loss.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.signal import convolve2d

from .camera import build_rig
from .render import rasterize, shade
from .texture import TextureSet

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical inputs give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    sel = np.asarray(mask, dtype=bool)
    if sel.ndim == a.ndim - 1:
        sel = np.broadcast_to(sel[..., None], a.shape)
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))[sel]
    if diff.size == 0:
        raise ValueError("empty mask")
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_kernel_1d() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


_KERNEL_1D = _ssim_kernel_1d()


def _filt_valid(img: np.ndarray) -> np.ndarray:
    # separable Gaussian; the kernel is an outer product of _KERNEL_1D
    mid = convolve2d(img, _KERNEL_1D[:, None], mode="valid")
    return convolve2d(mid, _KERNEL_1D[None, :], mode="valid")


def _filt_full(img: np.ndarray) -> np.ndarray:
    mid = convolve2d(img, _KERNEL_1D[:, None], mode="full")
    return convolve2d(mid, _KERNEL_1D[None, :], mode="full")


def _ssim_channel(x: np.ndarray, y: np.ndarray, with_grad: bool):
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    mu_x = _filt_valid(x)
    mu_y = _filt_valid(y)
    xx = _filt_valid(x * x) - mu_x * mu_x
    yy = _filt_valid(y * y) - mu_y * mu_y
    xy = _filt_valid(x * y) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * xy + c2
    b1 = mu_x * mu_x + mu_y * mu_y + c1
    b2 = xx + yy + c2
    ssim_map = (a1 * a2) / (b1 * b2)
    mean = float(ssim_map.mean())
    if not with_grad:
        return mean, None
    # d(mean)/dx through mu_x, sigma_x^2 and sigma_xy
    npix = ssim_map.size
    d_mu = (2.0 * mu_y * a2) / (b1 * b2) - (2.0 * mu_x * a1 * a2) / (b1 * b1 * b2)
    d_sxx = -(a1 * a2) / (b1 * b2 * b2)
    d_sxy = (2.0 * a1) / (b1 * b2)
    grad = (
        _filt_full(d_mu + d_sxx * (-2.0 * mu_x) + d_sxy * (-mu_y))
        + 2.0 * x * _filt_full(d_sxx)
        + y * _filt_full(d_sxy)
    ) / npix
    return mean, grad


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM in [-1, 1]; per channel, then channel-averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs min dimension >= {SSIM_WINDOW}, got {a.shape[:2]}")
    vals = [_ssim_channel(a[:, :, c], b[:, :, c], with_grad=False)[0] for c in range(a.shape[2])]
    return float(np.mean(vals))


def ssim_with_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM and d(mean SSIM)/dx; x and y are (H, W, C)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    vals = []
    grad = np.zeros_like(x)
    for c in range(x.shape[2]):
        val, g = _ssim_channel(x[:, :, c], y[:, :, c], with_grad=True)
        vals.append(val)
        grad[:, :, c] = g
    return float(np.mean(vals)), grad / x.shape[2]


# ---------------------------------------------------------------------------
# evaluation protocol

@dataclasses.dataclass
class EvalReport:
    psnr_albedo: float
    psnr_roughness: float
    psnr_metallic: float
    psnr_normal: float
    psnr_renderings: float
    per_view: list

    def to_dict(self) -> dict:
        def enc(x):
            return "inf" if math.isinf(x) else x
        return {
            "psnr_albedo": enc(self.psnr_albedo),
            "psnr_roughness": enc(self.psnr_roughness),
            "psnr_metallic": enc(self.psnr_metallic),
            "psnr_normal": enc(self.psnr_normal),
            "psnr_renderings": enc(self.psnr_renderings),
            "per_view": [enc(x) for x in self.per_view],
        }

    def table(self) -> str:
        cols = ["Albedo", "Roughness", "Metallic", "Normal", "Renderings"]
        vals = [self.psnr_albedo, self.psnr_roughness, self.psnr_metallic,
                self.psnr_normal, self.psnr_renderings]
        head = " ".join(f"{c:>10}" for c in cols)
        row = " ".join(f"{v:10.3f}" for v in vals)
        return head + "\n" + row


def uv_chart_mask(mesh, height: int, width: int) -> np.ndarray:
    """Texels whose centers fall inside a UV-space triangle."""
    mask = np.zeros((height, width), dtype=bool)
    uv = mesh.uvs
    for tri in mesh.triangles:
        pts = uv[tri] * np.array([width, height])
        x0 = max(0, int(np.floor(pts[:, 0].min() - 0.5)))
        x1 = min(width - 1, int(np.ceil(pts[:, 0].max() - 0.5)))
        y0 = max(0, int(np.floor(pts[:, 1].min() - 0.5)))
        y1 = min(height - 1, int(np.ceil(pts[:, 1].max() - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        area = (pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1]) \
            - (pts[1, 1] - pts[0, 1]) * (pts[2, 0] - pts[0, 0])
        if abs(area) < 1e-12:
            continue
        cx = (np.arange(x0, x1 + 1) + 0.5)[None, :]
        cy = (np.arange(y0, y1 + 1) + 0.5)[:, None]
        b0 = ((pts[2, 0] - pts[1, 0]) * (cy - pts[1, 1])
              - (pts[2, 1] - pts[1, 1]) * (cx - pts[1, 0])) / area
        b1 = ((pts[0, 0] - pts[2, 0]) * (cy - pts[2, 1])
              - (pts[0, 1] - pts[2, 1]) * (cx - pts[2, 0])) / area
        inside = (b0 >= 0) & (b1 >= 0) & (1.0 - b0 - b1 >= 0)
        mask[y0:y1 + 1, x0:x1 + 1] |= inside
    return mask


def texture_psnrs(sr: TextureSet, gt: TextureSet, chart_mask: np.ndarray | None = None) -> dict:
    """Per-channel texture PSNRs; roughness/metallic are ARM G and B."""
    if sr.resolution != gt.resolution:
        raise ValueError(f"texture resolution mismatch: {sr.resolution} vs {gt.resolution}")

    def p(a, b):
        if chart_mask is None:
            return psnr(a, b)
        return masked_psnr(a, b, chart_mask)

    return {
        "albedo": p(sr.albedo.data, gt.albedo.data),
        "roughness": p(sr.arm.data[:, :, 1], gt.arm.data[:, :, 1]),
        "metallic": p(sr.arm.data[:, :, 2], gt.arm.data[:, :, 2]),
        "normal": p(sr.normal.data, gt.normal.data),
    }


def evaluate(sr: TextureSet, gt: TextureSet, mesh, env, resolution: int = 256,
             mask_uv: bool = False, threads: int = 1) -> EvalReport:
    """Texture PSNRs plus mean masked rendering PSNR over the eval rig.

    Both sides are rendered by this engine at the same views, so rendering
    PSNR measures texture differences only. Masking to coverage makes the
    score independent of the background color.
    """
    chart = uv_chart_mask(mesh, *sr.resolution) if mask_uv else None
    tex = texture_psnrs(sr, gt, chart)
    rig = build_rig("eval", resolution=resolution)

    def one_view(cam):
        gb = rasterize(mesh, cam)
        if not gb.coverage.any():
            return None
        img_sr = shade(gb, sr, env)
        img_gt = shade(gb, gt, env)
        return masked_psnr(img_sr.rgb, img_gt.rgb, gb.coverage)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_view = list(pool.map(one_view, rig.cameras))
    else:
        per_view = [one_view(c) for c in rig.cameras]
    per_view = [v for v in per_view if v is not None]
    if not per_view:
        raise ValueError("no eval view covers the mesh")
    finite = [v for v in per_view if math.isfinite(v)]
    # identical views report +inf and drop out of the mean; all identical -> inf
    mean_render = float(np.mean(finite)) if finite else math.inf
    return EvalReport(
        psnr_albedo=tex["albedo"],
        psnr_roughness=tex["roughness"],
        psnr_metallic=tex["metallic"],
        psnr_normal=tex["normal"],
        psnr_renderings=mean_render,
        per_view=per_view,
    )
