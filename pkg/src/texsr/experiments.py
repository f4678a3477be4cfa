"""The texture-recovery experiment: a procedurally textured slab whose
ground-truth renderings replay through the cheat oracle, bounding how much
of the pooled-away detail the optimization can recover.

The store can optionally supersample its renders; the default replays exact
renderings, since box-averaged targets look blurrier than any
one-sample-per-pixel render and bias the recovered roughness upward.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .camera import build_rig
from .geometry import normalize_mesh
from .lighting import EnvironmentLight
from .optim import OptimConfig, OptimizeResult, run_optimization
from .oracle import CheatOracle
from .procedural import make_blob_env, make_gt_textures, make_slab_grid
from .render import rasterize, shade
from .texture import TextureSet, avg_pool, srgb_encode


class SupersampledGtStore:
    """Lazily rendered ground-truth views, supersampled then box-pooled.

    Values are sRGB-encoded, exactly what a file-based SR model would see.
    """

    def __init__(self, mesh, textures: TextureSet, env, res: int, supersample: int = 2):
        self.mesh = mesh
        self.textures = textures
        self.env = env
        self.res = res
        self.supersample = supersample
        self.rig = build_rig("train", resolution=res * supersample)
        self._cache: dict[int, np.ndarray] = {}

    def __getitem__(self, view_id: int) -> np.ndarray:
        if view_id not in self._cache:
            if not 0 <= view_id < len(self.rig):
                raise KeyError(view_id)
            cam = self.rig.cameras[view_id]
            img = shade(rasterize(self.mesh, cam), self.textures, self.env).rgb
            s = self.supersample
            if s > 1:
                img = img.reshape(self.res, s, self.res, s, 3).mean(axis=(1, 3))
            self._cache[view_id] = srgb_encode(img)
        return self._cache[view_id]


class CorruptingStore:
    """Blacks out a square patch on selected views of a backing store."""

    def __init__(self, store, corrupt_ids, patch_size: int = 32):
        self.store = store
        self.corrupt_ids = set(int(i) for i in corrupt_ids)
        self.patch_size = patch_size

    def patch_origin(self, view_id: int, res: int) -> tuple[int, int]:
        # deterministic and spread over the whole frame so repeated hits do
        # not concentrate on the same texels
        span = max(res - self.patch_size, 1)
        y = (view_id * 37) % span
        x = (view_id * 61 + 17) % span
        return y, x

    def __getitem__(self, view_id: int) -> np.ndarray:
        img = self.store[view_id]
        if view_id in self.corrupt_ids:
            img = img.copy()
            y, x = self.patch_origin(view_id, img.shape[0])
            img[y:y + self.patch_size, x:x + self.patch_size] = 0.0
        return img


@dataclasses.dataclass
class RecoverySetup:
    mesh: object
    gt_textures: TextureSet
    lr_textures: TextureSet
    env: EnvironmentLight
    store: SupersampledGtStore
    scale: int
    pseudo_res: int


def build_recovery_setup(gt_res: int = 256, scale: int = 4, pseudo_res: int = 128,
                         supersample: int = 1, seed: int = 7) -> RecoverySetup:
    mesh = normalize_mesh(make_slab_grid(cells=6))
    gt = make_gt_textures(gt_res, seed=seed)
    lr = TextureSet(**{name: avg_pool(m, scale) for name, m in gt.maps().items()})
    env = EnvironmentLight.from_radiance(make_blob_env())
    store = SupersampledGtStore(mesh, gt, env, pseudo_res, supersample)
    return RecoverySetup(mesh=mesh, gt_textures=gt, lr_textures=lr, env=env,
                         store=store, scale=scale, pseudo_res=pseudo_res)


def recovery_config(setup: RecoverySetup, iters: int = 500, batch: int = 4,
                    seed: int = 0, **overrides) -> OptimConfig:
    """Experiment defaults for the budgeted 500-iteration run.

    The step size balances three measured pressures: large enough to recover
    detail within 500 iterations, small enough that a corrupted view's first
    full-weight batch appearance stays repairable, with the weight maps
    stepping faster (lr * mult) since each view is only drawn a few times.
    """
    base = dict(batch=batch, iters=iters, lr=2e-3, lr_weights_mult=100.0,
                pseudo_gt_res=setup.pseudo_res, seed=seed)
    base.update(overrides)
    return OptimConfig(**base)


def run_recovery(setup: RecoverySetup, config: OptimConfig, threads: int = 1,
                 corrupt_ids=None, patch_size: int = 32) -> OptimizeResult:
    store = setup.store
    if corrupt_ids is not None:
        store = CorruptingStore(store, corrupt_ids, patch_size)
    oracle = CheatOracle(store)
    return run_optimization(setup.mesh, setup.lr_textures, setup.env, oracle,
                            setup.scale, config, threads=threads)
