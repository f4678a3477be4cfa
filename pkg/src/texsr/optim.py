"""Loss assembly, robust per-view weight maps, Adam, and the optimization
loop that refines high-resolution texture maps against super-resolved
multi-view renderings.

The loss over a batch of views is

    total = lambda_pix * mean_i(pix_i) + lambda_reg * sum_i(reg_i)
          + lambda_pbr * consistency + lambda_tv * tv

where pix_i is a per-image normalized weighted MSE over covered pixels,
reg_i pulls each view's weight map toward one, consistency ties pooled
high-res maps to the low-res input (L1 + SSIM), and tv is an anisotropic
total-variation smoothness term. The tv component is normalized per texel
so its scale is independent of texture resolution.

Everything here is deterministic for a fixed seed: views are drawn from a
seeded generator, per-view gradients are reduced in batch order, and all
scatters are in-order.
"""
from __future__ import annotations

import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import texture as tx
from .camera import Camera, build_rig
from .oracle import OracleError, SrRequest
from .render import (RenderImage, TextureGrads, rasterize, shade,
                     shade_with_partials)
from .texture import TextureMap, TextureSet

WEIGHT_RES = 64


class OptimizationError(RuntimeError):
    pass


class DegenerateWeightsError(OptimizationError):
    """All weights are zero under the coverage mask."""


@dataclasses.dataclass
class OptimConfig:
    """Scalars of the optimization; defaults follow the reference recipe."""

    lambda_pix: float = 100.0
    lambda_reg: float = 0.5
    lambda_pbr: float = 10.0
    lambda_tv: float = 0.5
    lambda_ssim: float = 10.0
    w_albedo: float = 1.0
    w_rough: float = 1.0
    w_normal: float = 1.0
    w_metal: float = 0.1
    batch: int = 4
    lr: float = 1e-4
    # weight maps see each view only a handful of times per run, so their
    # effective step is lr * lr_weights_mult to converge within the budget
    lr_weights_mult: float = 1.0
    iters: int = 2000
    pseudo_gt_res: int = 1024
    seed: int = 0
    robust: bool = True
    tv: bool = True
    pbr: bool = True
    refresh_pseudo_gt: bool = False

    def __post_init__(self):
        for name in ("lambda_pix", "lambda_reg", "lambda_pbr", "lambda_tv", "lambda_ssim"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")


@dataclasses.dataclass
class ViewWeightMap:
    """Learnable per-view robustness map, optimized at 64x64."""

    values: np.ndarray

    @classmethod
    def create(cls) -> "ViewWeightMap":
        return cls(values=np.ones((WEIGHT_RES, WEIGHT_RES)))


@dataclasses.dataclass(frozen=True)
class PseudoGt:
    view_id: int
    image: np.ndarray  # (res, res, 3) linear-light
    mask: np.ndarray   # (res, res) coverage of the matching render


# ---------------------------------------------------------------------------
# loss terms

_UPSAMPLE_GRID: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _upsample_weights(values: np.ndarray, height: int, width: int):
    """Bilinear upsample of the 64x64 weight grid to image resolution.

    Returns (full map, (u, v) pixel-center lookup coords) so the backward
    pass can scatter with the same weights.
    """
    key = (height, width)
    if key not in _UPSAMPLE_GRID:
        ys, xs = np.mgrid[0:height, 0:width]
        _UPSAMPLE_GRID[key] = ((xs.ravel() + 0.5) / width, (ys.ravel() + 0.5) / height)
    u, v = _UPSAMPLE_GRID[key]
    w_full = tx.sample_bilinear_many(values[:, :, None], u, v).reshape(height, width)
    return w_full, (u, v)


def robust_pixel_loss(pred: RenderImage, gt: PseudoGt, weights: ViewWeightMap):
    """Normalized weighted MSE over masked pixels for one view.

    loss = sum(W^2 ||pred - gt||^2) / sum(W^2), W bilinearly upsampled from
    the 64x64 weight grid. Returns (loss, d/dpred (H,W,3), d/dweights (64,64)).
    """
    if pred.rgb.shape != gt.image.shape:
        raise ValueError(f"pred/gt shape mismatch: {pred.rgb.shape} vs {gt.image.shape}")
    h, w = pred.rgb.shape[:2]
    mask = pred.mask & gt.mask
    w_full, (uu, vv) = _upsample_weights(weights.values, h, w)
    w2 = w_full * w_full
    denom = float(w2[mask].sum())
    if denom <= 0.0:
        raise DegenerateWeightsError("all weights are zero under the coverage mask")
    err = pred.rgb - gt.image
    se = (err * err).sum(axis=2)
    loss = float((w2[mask] * se[mask]).sum() / denom)

    grad_pred = np.zeros_like(pred.rgb)
    grad_pred[mask] = (2.0 * w2[mask, None] / denom) * err[mask]
    dw_full = np.zeros((h, w))
    dw_full[mask] = (2.0 * w_full[mask] / denom) * (se[mask] - loss)
    grad_w = np.zeros((WEIGHT_RES, WEIGHT_RES, 1))
    flat = dw_full.ravel()
    tx.scatter_bilinear_many(grad_w, uu, vv, flat[:, None])
    return loss, grad_pred, grad_w[:, :, 0]


def weight_regularizer(weights: ViewWeightMap):
    """Mean (1 - W^2)^2 over the native weight grid, plus its gradient."""
    w = weights.values
    dev = 1.0 - w * w
    loss = float((dev * dev).mean())
    grad = -4.0 * w * dev / w.size
    return loss, grad


def robust_loss(per_view_pix: list[float], per_view_reg: list[float], config: OptimConfig) -> float:
    """lambda_pix * batch-mean pixel loss + lambda_reg * batch-summed regularizer."""
    if not per_view_pix:
        raise ValueError("empty batch")
    pix = float(np.mean(per_view_pix))
    reg = float(np.sum(per_view_reg)) if per_view_reg else 0.0
    return config.lambda_pix * pix + config.lambda_reg * reg


def _consistency_unit(hr_channelmap: np.ndarray, lr_channelmap: np.ndarray, factor: int,
                      weight: float, lambda_ssim: float):
    """Weighted L1 + SSIM between Pool(hr) and lr for one map (or channel).

    Maps smaller than the 11x11 SSIM window carry the L1 term only.
    """
    from . import metrics

    pooled = tx.avg_pool(TextureMap(np.clip(hr_channelmap, 0.0, 1.0)), factor).data
    diff = pooled - lr_channelmap
    l1 = float(np.abs(diff).mean())
    g_pooled = np.sign(diff) / diff.size
    if min(pooled.shape[:2]) >= metrics.SSIM_WINDOW and lambda_ssim > 0.0:
        ssim_val, ssim_grad = metrics.ssim_with_grad(pooled, lr_channelmap)
        loss = weight * (l1 + lambda_ssim * (1.0 - ssim_val))
        g_pooled = weight * (g_pooled + lambda_ssim * (-ssim_grad))
    else:
        loss = weight * l1
        g_pooled = weight * g_pooled
    g_hr = tx.avg_pool_backward(hr_channelmap.shape, factor, g_pooled)
    return loss, g_hr


def pbr_consistency_loss(hr: TextureSet, lr: TextureSet, factor: int,
                         config: OptimConfig | None = None):
    """Consistency between pooled high-res maps and the low-res input.

    Albedo and normal are weighted as whole maps; the ARM map is split per
    channel so roughness and metallic carry their own weights and ambient
    occlusion carries weight zero. Returns (loss, TextureGrads).
    """
    cfg = config if config is not None else OptimConfig()
    hr_h = hr.albedo.height
    if hr_h != lr.albedo.height * factor or hr.albedo.width != lr.albedo.width * factor:
        raise ValueError(
            f"Pool({hr.resolution}) by {factor} does not match lr resolution {lr.resolution}")
    grads = TextureGrads.zeros_like(hr)
    total = 0.0

    loss, g = _consistency_unit(hr.albedo.data, lr.albedo.data, factor,
                                cfg.w_albedo, cfg.lambda_ssim)
    total += loss
    grads.albedo += g
    loss, g = _consistency_unit(hr.normal.data, lr.normal.data, factor,
                                cfg.w_normal, cfg.lambda_ssim)
    total += loss
    grads.normal += g
    for channel, weight in ((1, cfg.w_rough), (2, cfg.w_metal)):
        if weight == 0.0:
            continue
        loss, g = _consistency_unit(
            hr.arm.data[:, :, channel:channel + 1], lr.arm.data[:, :, channel:channel + 1],
            factor, weight, cfg.lambda_ssim)
        total += loss
        grads.arm[:, :, channel:channel + 1] += g
    return total, grads


def tv_term(textures: TextureSet):
    """Per-texel-normalized total variation over all maps (AO included)."""
    grads = TextureGrads.zeros_like(textures)
    total = 0.0
    for name, tex in textures.maps().items():
        loss, grad = tx.tv_loss(tex)
        scale = 1.0 / tex.data.size
        total += loss * scale
        getattr(grads, name)[...] += grad * scale
    return total, grads


def total_loss(pix: float, reg: float, pbr: float, tv: float, config: OptimConfig) -> float:
    """Composition of the loss components with the configured weights."""
    return (config.lambda_pix * pix + config.lambda_reg * reg
            + config.lambda_pbr * pbr + config.lambda_tv * tv)


# ---------------------------------------------------------------------------
# Adam

@dataclasses.dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              clamp: tuple[float, float] | None = (0.0, 1.0),
              name: str = "param") -> np.ndarray:
    """One bias-corrected Adam update; the result is clamped to [0, 1]."""
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise OptimizationError(f"non-finite gradient for {name}: {bad} bad entries")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    out = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    if clamp is not None:
        out = np.clip(out, clamp[0], clamp[1])
    return out


# ---------------------------------------------------------------------------
# batch loss (pure: fixed views in, loss and gradients out)

@dataclasses.dataclass
class BatchItem:
    view_id: int
    gbuffer: object
    pseudo: PseudoGt
    weights: ViewWeightMap | None  # None when the robust term is disabled


@dataclasses.dataclass
class LossBreakdown:
    pix: float
    reg: float
    pbr: float
    tv: float
    total: float


def batch_loss_and_grads(textures: TextureSet, lr_textures: TextureSet, scale: int,
                         items: list[BatchItem], light, config: OptimConfig,
                         threads: int = 1):
    """Total loss over a fixed batch plus gradients for textures and weights.

    Per-view work may run on a thread pool; gradients are reduced in batch
    order so the result is identical for any thread count.
    """
    ones = ViewWeightMap.create()

    def per_view(item: BatchItem):
        pred, backprop = shade_with_partials(item.gbuffer, textures, light)
        wmap = item.weights if item.weights is not None else ones
        pix, g_pred, g_w = robust_pixel_loss(pred, item.pseudo, wmap)
        tex_g = backprop((config.lambda_pix / len(items)) * g_pred)
        if item.weights is not None:
            reg, g_reg = weight_regularizer(item.weights)
            g_w_total = (config.lambda_pix / len(items)) * g_w + config.lambda_reg * g_reg
        else:
            reg, g_w_total = 0.0, None
        return pix, reg, tex_g, g_w_total

    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(per_view, items))
    else:
        results = [per_view(it) for it in items]

    tex_grads = TextureGrads.zeros_like(textures)
    weight_grads: dict[int, np.ndarray] = {}
    pix_values, reg_values = [], []
    for item, (pix, reg, tex_g, g_w) in zip(items, results):
        pix_values.append(pix)
        reg_values.append(reg)
        tex_grads.add_(tex_g)
        if g_w is not None:
            weight_grads[item.view_id] = g_w

    pix_mean = float(np.mean(pix_values))
    reg_sum = float(np.sum(reg_values))

    pbr_value = 0.0
    if config.pbr and config.lambda_pbr > 0.0:
        pbr_value, pbr_grads = pbr_consistency_loss(textures, lr_textures, scale, config)
        tex_grads.add_(pbr_grads.scale_(config.lambda_pbr))
    tv_value = 0.0
    if config.tv and config.lambda_tv > 0.0:
        tv_value, tv_grads = tv_term(textures)
        tex_grads.add_(tv_grads.scale_(config.lambda_tv))

    breakdown = LossBreakdown(
        pix=pix_mean,
        reg=reg_sum,
        pbr=pbr_value,
        tv=tv_value,
        total=total_loss(pix_mean, reg_sum, pbr_value, tv_value, config),
    )
    return breakdown, tex_grads, weight_grads


# ---------------------------------------------------------------------------
# the optimization loop

class _WeightBank:
    """All views' weight maps in one stacked array with one Adam state.

    Slots are assigned in discovery order so the active rows form a prefix;
    every known map steps each iteration (zero gradient off-batch), which
    lets momentum keep moving recently supervised maps. Bias correction uses
    each map's own step count.
    """

    def __init__(self, capacity: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.slot_of: dict[int, int] = {}
        self.values = np.ones((capacity, WEIGHT_RES, WEIGHT_RES))
        self.m = np.zeros_like(self.values)
        self.v = np.zeros_like(self.values)
        self.t = np.zeros(capacity, dtype=np.int64)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def ensure(self, view_id: int) -> int:
        if view_id not in self.slot_of:
            self.slot_of[view_id] = len(self.slot_of)
        return self.slot_of[view_id]

    def map_for(self, view_id: int) -> ViewWeightMap:
        return ViewWeightMap(values=self.values[self.ensure(view_id)])

    def step(self, grads_by_view: dict[int, np.ndarray], lr: float) -> None:
        n = len(self.slot_of)
        if n == 0:
            return
        g = np.zeros((n, WEIGHT_RES, WEIGHT_RES))
        for view_id, grad in grads_by_view.items():
            if not np.all(np.isfinite(grad)):
                raise OptimizationError(f"non-finite gradient for weights[{view_id}]")
            g[self.slot_of[view_id]] = grad
        self.t[:n] += 1
        self.m[:n] = self.beta1 * self.m[:n] + (1.0 - self.beta1) * g
        self.v[:n] = self.beta2 * self.v[:n] + (1.0 - self.beta2) * g * g
        bc1 = (1.0 - self.beta1 ** self.t[:n])[:, None, None]
        bc2 = (1.0 - self.beta2 ** self.t[:n])[:, None, None]
        step = lr * (self.m[:n] / bc1) / (np.sqrt(self.v[:n] / bc2) + self.eps)
        self.values[:n] = np.clip(self.values[:n] - step, 0.0, 1.0)

    def as_dict(self) -> dict[int, ViewWeightMap]:
        return {vid: ViewWeightMap(values=self.values[slot].copy())
                for vid, slot in self.slot_of.items()}


@dataclasses.dataclass
class OptimizeResult:
    textures: TextureSet
    weight_maps: dict[int, ViewWeightMap]
    loss_log: list[dict]
    skipped_views: int


def _low_res_camera(cam: Camera, scale: int) -> Camera:
    return Camera(
        position=cam.position, look_at=cam.look_at, up=cam.up,
        fov_y_deg=cam.fov_y_deg, width=cam.width // scale, height=cam.height // scale,
    )


def make_pseudo_gt(mesh, init_textures: TextureSet, cam: Camera, gbuffer, view_id: int,
                   scale: int, oracle, light, prompt: str | None = None) -> PseudoGt:
    """Render the initialized textures small, upscale through the oracle.

    The oracle sees sRGB-encoded values; the cached target is converted back
    to linear light. The mask is the coverage of the full-resolution
    rasterization at the same view.
    """
    lo = shade(rasterize(mesh, _low_res_camera(cam, scale)), init_textures, light)
    req = SrRequest(image=tx.srgb_encode(lo.rgb), scale=scale, view_id=view_id, prompt=prompt)
    out = np.asarray(oracle.upscale(req), dtype=np.float64)
    want = (cam.height, cam.width, 3)
    if out.shape != want:
        raise OracleError(f"oracle returned shape {out.shape}, expected {want}")
    image = tx.srgb_decode(np.clip(out, 0.0, 1.0))
    return PseudoGt(view_id=view_id, image=image, mask=gbuffer.coverage.copy())


def run_optimization(mesh, lr_textures: TextureSet, light, oracle, scale: int,
                     config: OptimConfig, threads: int = 1,
                     prompt: str | None = None,
                     elev_min: float = -75.0, elev_max: float = 75.0,
                     progress=None) -> OptimizeResult:
    """Full loop: initialize, then iterate batches of views with Adam.

    Pseudo-GT targets are rendered once per view from the frozen initialized
    textures and cached (refresh_pseudo_gt re-renders from current textures
    instead). Oracle failures skip the view; more than 5% skipped aborts.
    """
    from .geometry import compute_tangents

    if mesh.tangents is None:
        mesh = compute_tangents(mesh)
    init = tx.initialize_sr_textures(lr_textures, scale, oracle)
    if config.iters == 0:
        return OptimizeResult(textures=init, weight_maps={}, loss_log=[], skipped_views=0)
    if config.pseudo_gt_res % scale != 0:
        raise ValueError(f"pseudo_gt_res {config.pseudo_gt_res} not divisible by scale {scale}")

    rig = build_rig("train", resolution=config.pseudo_gt_res,
                    elev_min=elev_min, elev_max=elev_max)
    rng = np.random.default_rng(config.seed)

    params = {name: np.array(m.data) for name, m in init.maps().items()}
    adam = {name: AdamState.like(p) for name, p in params.items()}
    weights = _WeightBank(capacity=len(rig))
    pseudo_cache: dict[int, PseudoGt] = {}
    loss_log: list[dict] = []
    skipped = 0
    attempted = 0

    for it in range(config.iters):
        current = TextureSet(
            albedo=TextureMap(params["albedo"]),
            arm=TextureMap(params["arm"]),
            normal=TextureMap(params["normal"]),
        )
        ids = rng.choice(len(rig), size=min(config.batch, len(rig)), replace=False)
        items: list[BatchItem] = []
        for vid in (int(i) for i in ids):
            attempted += 1
            cam = rig.cameras[vid]
            gb = rasterize(mesh, cam)
            if not gb.coverage.any():
                skipped += 1
                print(f"warning: view {vid} has empty coverage, skipped", file=sys.stderr)
                continue
            try:
                if config.refresh_pseudo_gt:
                    pgt = make_pseudo_gt(mesh, current, cam, gb, vid, scale, oracle, light, prompt)
                elif vid in pseudo_cache:
                    pgt = pseudo_cache[vid]
                else:
                    pgt = make_pseudo_gt(mesh, init, cam, gb, vid, scale, oracle, light, prompt)
                    pseudo_cache[vid] = pgt
            except OracleError as exc:
                skipped += 1
                print(f"warning: oracle failed for view {vid}: {exc}", file=sys.stderr)
                if attempted >= 20 and skipped / attempted > 0.05:
                    raise OptimizationError(
                        f"oracle failure rate too high: {skipped}/{attempted} views skipped") from exc
                continue
            wmap = weights.map_for(vid) if config.robust else None
            items.append(BatchItem(view_id=vid, gbuffer=gb, pseudo=pgt, weights=wmap))
        if not items:
            skipped_total = skipped
            if attempted >= 20 and skipped_total / attempted > 0.05:
                raise OptimizationError(
                    f"oracle failure rate too high: {skipped_total}/{attempted} views skipped")
            continue

        breakdown, tex_grads, weight_grads = batch_loss_and_grads(
            current, lr_textures, scale, items, light, config, threads=threads)

        for name in ("albedo", "arm", "normal"):
            params[name] = adam_step(params[name], getattr(tex_grads, name), adam[name],
                                     config.lr, name=name)
        if config.robust:
            weights.step(weight_grads, config.lr * config.lr_weights_mult)

        if it % 100 == 0 or it == config.iters - 1:
            entry = {"iteration": it, "total": breakdown.total, "pix": breakdown.pix,
                     "reg": breakdown.reg, "pbr": breakdown.pbr, "tv": breakdown.tv}
            loss_log.append(entry)
            if progress is not None:
                progress(entry)

    final = TextureSet(
        albedo=TextureMap(params["albedo"]),
        arm=TextureMap(params["arm"]),
        normal=TextureMap(params["normal"]),
    )
    return OptimizeResult(textures=final, weight_maps=weights.as_dict(),
                          loss_log=loss_log, skipped_views=skipped)


def optimize(mesh, lr_textures: TextureSet, light, oracle, scale: int,
             config: OptimConfig, threads: int = 1) -> TextureSet:
    """Convenience wrapper returning only the optimized texture set."""
    return run_optimization(mesh, lr_textures, light, oracle, scale, config,
                            threads=threads).textures
