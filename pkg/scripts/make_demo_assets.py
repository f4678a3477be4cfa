#!/usr/bin/env python3
"""Write a small demo scene to disk: slab mesh, LR/GT texture sets and an
environment map, ready for the CLI:

    python3 scripts/make_demo_assets.py demo/
    texsr upscale --mesh demo/slab.obj --tex-lr demo/lr --scale 4 \
        --env demo/env.pfm --oracle sharpen --out demo/out \
        --iters 200 --pseudo-res 256 --lr 0.005
    texsr eval --sr demo/out --gt demo/gt --mesh demo/slab.obj \
        --env demo/env.pfm --out demo/report.json
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from texsr.geometry import normalize_mesh, save_mesh
from texsr.lighting import write_pfm
from texsr.procedural import make_blob_env, make_gt_textures, make_slab_grid
from texsr.texture import TextureSet, avg_pool, save_texture_set


def main() -> int:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo")
    out.mkdir(parents=True, exist_ok=True)
    mesh = normalize_mesh(make_slab_grid(cells=6))
    save_mesh(out / "slab.obj", mesh)
    gt = make_gt_textures(256, seed=7)
    lr = TextureSet(**{name: avg_pool(m, 4) for name, m in gt.maps().items()})
    save_texture_set(out / "gt", gt)
    save_texture_set(out / "lr", lr)
    write_pfm(out / "env.pfm", make_blob_env().astype(np.float32))
    print(f"wrote {out}/slab.obj, gt_*.png, lr_*.png, env.pfm")
    return 0


if __name__ == "__main__":
    sys.exit(main())
