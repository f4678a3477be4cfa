"""Command-line front end: upscale / render / eval / rig.

Every failure exits nonzero with one machine-parseable line on stderr:
    error category=<category>: <message>
Categories map to exit codes: usage=2 (argparse), missing-file=3,
oracle-transport=4, protocol=5, data=6, internal=1.

The upscale command serializes its full configuration into run.json next to
its outputs; re-invoking with --config run.json reproduces the run.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import texture as tx
from .camera import build_rig
from .geometry import GeometryError, compute_tangents, load_mesh, normalize_mesh
from .lighting import (EnvironmentLight, EnvmapError, parse_directional_spec)
from .metrics import evaluate
from .optim import OptimConfig, OptimizationError, run_optimization
from .oracle import (OracleError, OracleProtocolError, OracleTransportError,
                     parse_oracle_spec)
from .render import rasterize, shade
from .texture import TextureError

EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_ORACLE = 4
EXIT_PROTOCOL = 5
EXIT_DATA = 6


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category = category
        self.code = code


@dataclasses.dataclass
class RunConfig:
    """Everything needed to reproduce an upscale run."""

    mesh: str = ""
    tex_lr: str = ""
    out: str = ""
    env: str = ""
    light: str = ""
    oracle: str = "bicubic"
    scale: int = 4
    iters: int = 2000
    batch: int = 4
    lr: float = 1e-4
    seed: int = 0
    pseudo_res: int = 1024
    threads: int = 0  # 0 = hardware count
    robust: bool = True
    tv: bool = True
    pbr_loss: bool = True
    refresh_pseudo_gt: bool = False
    flip_normal_green: bool = False
    elev_min: float = -75.0
    elev_max: float = 75.0
    prompt: str = ""
    lambda_pix: float = 100.0
    lambda_reg: float = 0.5
    lambda_pbr: float = 10.0
    lambda_tv: float = 0.5
    lambda_ssim: float = 10.0
    w_albedo: float = 1.0
    w_rough: float = 1.0
    w_normal: float = 1.0
    w_metal: float = 0.1

    def to_flat(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        cfg = cls()
        for f in dataclasses.fields(cls):
            if f.name not in flat:
                continue
            raw = flat[f.name]
            if f.type == "bool" or isinstance(getattr(cfg, f.name), bool):
                val = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes")
            elif isinstance(getattr(cfg, f.name), int):
                val = int(raw)
            elif isinstance(getattr(cfg, f.name), float):
                val = float(raw)
            else:
                val = str(raw)
            setattr(cfg, f.name, val)
        return cfg

    def optim_config(self) -> OptimConfig:
        return OptimConfig(
            lambda_pix=self.lambda_pix, lambda_reg=self.lambda_reg,
            lambda_pbr=self.lambda_pbr, lambda_tv=self.lambda_tv,
            lambda_ssim=self.lambda_ssim, w_albedo=self.w_albedo,
            w_rough=self.w_rough, w_normal=self.w_normal, w_metal=self.w_metal,
            batch=self.batch, lr=self.lr, iters=self.iters,
            pseudo_gt_res=self.pseudo_res, seed=self.seed, robust=self.robust,
            tv=self.tv, pbr=self.pbr_loss, refresh_pseudo_gt=self.refresh_pseudo_gt,
        )


def read_config_file(path) -> dict:
    """Flat key=value file ('#' comments) or a run.json with a config object."""
    path = Path(path)
    if not path.exists():
        raise CliError("missing-file", f"config file not found: {path}", EXIT_MISSING_FILE)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return data.get("config", data)
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("data", f"{path}:{lineno}: expected key = value", EXIT_DATA)
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"{what} not found: {p}", EXIT_MISSING_FILE)
    return p


def _load_scene_mesh(path, normalize: bool = True):
    mesh = load_mesh(_require_file(path, "mesh"))
    if normalize:
        mesh = normalize_mesh(mesh)
    return compute_tangents(mesh)


def _load_light(env_path: str, light_spec: str):
    if light_spec:
        if not light_spec.startswith("directional:"):
            raise CliError("data", f"unknown light spec {light_spec!r}", EXIT_DATA)
        return parse_directional_spec(light_spec[len("directional:"):])
    if not env_path:
        raise CliError("data", "either --env or --light is required", EXIT_DATA)
    return EnvironmentLight.load(_require_file(env_path, "environment map"))


def _resolve_stem(path_or_stem: str) -> str:
    p = Path(path_or_stem)
    if p.is_dir():
        candidates = sorted(p.glob("*_albedo.png"))
        if len(candidates) != 1:
            raise CliError(
                "data",
                f"{p} must contain exactly one *_albedo.png (found {len(candidates)})",
                EXIT_DATA)
        return str(candidates[0])[: -len("_albedo.png")]
    return path_or_stem


def _threads(n: int) -> int:
    return n if n > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# subcommands

def cmd_upscale(args) -> int:
    flat = {}
    if args.config:
        flat.update(read_config_file(args.config))
    cfg = RunConfig.from_flat(flat)
    for field in dataclasses.fields(RunConfig):
        cli_val = getattr(args, field.name, None)
        if cli_val is not None:
            setattr(cfg, field.name, cli_val)
    if not cfg.mesh or not cfg.tex_lr or not cfg.out:
        raise CliError("data", "--mesh, --tex-lr and --out are required", EXIT_DATA)

    mesh = _load_scene_mesh(cfg.mesh)
    lr_textures = tx.load_texture_set(_resolve_stem(cfg.tex_lr),
                                      flip_normal_green=cfg.flip_normal_green)
    light = _load_light(cfg.env, cfg.light)
    oracle = parse_oracle_spec(cfg.oracle, prompt=cfg.prompt or None)

    result = run_optimization(
        mesh, lr_textures, light, oracle, cfg.scale, cfg.optim_config(),
        threads=_threads(cfg.threads), prompt=cfg.prompt or None,
        elev_min=cfg.elev_min, elev_max=cfg.elev_max,
        progress=lambda e: print(
            f"iter {e['iteration']:5d}  total {e['total']:.6f}  pix {e['pix']:.6f}", flush=True),
    )

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tx.save_texture_set(out_dir / "sr", result.textures, bit_depth=16)
    run_info = {
        "config": cfg.to_flat(),
        "loss_log": result.loss_log,
        "skipped_views": result.skipped_views,
    }
    (out_dir / "run.json").write_text(json.dumps(run_info, indent=1))
    print(f"wrote {out_dir / 'sr_albedo.png'}, sr_arm.png, sr_normal.png, run.json")
    return 0


def cmd_render(args) -> int:
    mesh = _load_scene_mesh(args.mesh)
    textures = tx.load_texture_set(_resolve_stem(args.tex),
                                   flip_normal_green=args.flip_normal_green)
    light = _load_light(args.env, args.light)
    rig = build_rig(args.preset, resolution=args.res)
    if not 0 <= args.cam_index < len(rig):
        raise CliError("data", f"--cam-index must be in [0, {len(rig)})", EXIT_DATA)
    gbuffer = rasterize(mesh, rig.cameras[args.cam_index])
    image = shade(gbuffer, textures, light)
    tx.write_png(args.out, tx.srgb_encode(image.rgb), bit_depth=8)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    mesh = _load_scene_mesh(args.mesh)
    sr = tx.load_texture_set(_resolve_stem(args.sr))
    gt = tx.load_texture_set(_resolve_stem(args.gt))
    light = _load_light(args.env, args.light)
    report = evaluate(sr, gt, mesh, light, resolution=args.res,
                      mask_uv=args.mask_uv, threads=_threads(args.threads))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=1))
    print(report.table())
    print(f"wrote {args.out}")
    return 0


def cmd_rig(args) -> int:
    rig = build_rig(args.preset, resolution=args.res,
                    elev_min=args.elev_min, elev_max=args.elev_max)
    rig.dump_json(args.dump)
    print(f"wrote {args.dump} ({len(rig)} cameras)")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texsr",
        description="Upscale PBR texture sets by optimizing against super-resolved renderings.")
    sub = parser.add_subparsers(dest="command", required=True)

    up = sub.add_parser("upscale", help="optimize high-resolution textures")
    up.add_argument("--config", help="key=value file or a previous run.json")
    up.add_argument("--mesh")
    up.add_argument("--tex-lr", dest="tex_lr", help="low-res texture stem or directory")
    up.add_argument("--out")
    up.add_argument("--scale", type=int, choices=(1, 2, 4, 8))
    up.add_argument("--env", help="equirectangular PFM environment map")
    up.add_argument("--light", help="directional:dx,dy,dz,r,g,b,ar,ag,ab")
    up.add_argument("--oracle", help="bicubic | sharpen | cheat:DIR | sidecar:HOST:PORT")
    up.add_argument("--iters", type=int)
    up.add_argument("--batch", type=int)
    up.add_argument("--lr", type=float)
    up.add_argument("--seed", type=int)
    up.add_argument("--pseudo-res", dest="pseudo_res", type=int)
    up.add_argument("--threads", type=int)
    up.add_argument("--no-robust", dest="robust", action="store_false", default=None)
    up.add_argument("--no-tv", dest="tv", action="store_false", default=None)
    up.add_argument("--no-pbr-loss", dest="pbr_loss", action="store_false", default=None)
    up.add_argument("--refresh-pseudo-gt", dest="refresh_pseudo_gt",
                    action="store_true", default=None)
    up.add_argument("--flip-normal-green", dest="flip_normal_green",
                    action="store_true", default=None)
    up.add_argument("--elev-min", dest="elev_min", type=float)
    up.add_argument("--elev-max", dest="elev_max", type=float)
    up.add_argument("--prompt", help="free-text prompt forwarded to the sidecar")
    for lam in ("lambda_pix", "lambda_reg", "lambda_pbr", "lambda_tv", "lambda_ssim",
                "w_albedo", "w_rough", "w_normal", "w_metal"):
        up.add_argument(f"--{lam.replace('_', '-')}", dest=lam, type=float)
    up.set_defaults(func=cmd_upscale)

    rn = sub.add_parser("render", help="render one rig view to a PNG")
    rn.add_argument("--mesh", required=True)
    rn.add_argument("--tex", required=True, help="texture stem or directory")
    rn.add_argument("--env", default="")
    rn.add_argument("--light", default="")
    rn.add_argument("--preset", choices=("train", "eval"), default="eval")
    rn.add_argument("--cam-index", dest="cam_index", type=int, required=True)
    rn.add_argument("--res", type=int, default=1024)
    rn.add_argument("--out", required=True)
    rn.add_argument("--flip-normal-green", action="store_true")
    rn.set_defaults(func=cmd_render)

    ev = sub.add_parser("eval", help="texture and rendering PSNR report")
    ev.add_argument("--sr", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--mesh", required=True)
    ev.add_argument("--env", default="")
    ev.add_argument("--light", default="")
    ev.add_argument("--res", type=int, default=256)
    ev.add_argument("--mask-uv", dest="mask_uv", action="store_true")
    ev.add_argument("--threads", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    rg = sub.add_parser("rig", help="dump a camera rig as JSON")
    rg.add_argument("--preset", choices=("train", "eval"), required=True)
    rg.add_argument("--dump", required=True)
    rg.add_argument("--res", type=int, default=256)
    rg.add_argument("--elev-min", dest="elev_min", type=float, default=-75.0)
    rg.add_argument("--elev-max", dest="elev_max", type=float, default=75.0)
    rg.set_defaults(func=cmd_rig)
    return parser


_ERROR_MAP = [
    (OracleTransportError, "oracle-transport", EXIT_ORACLE),
    (OracleProtocolError, "protocol", EXIT_PROTOCOL),
    (OracleError, "oracle", EXIT_ORACLE),
    (FileNotFoundError, "missing-file", EXIT_MISSING_FILE),
    (TextureError, "data", EXIT_DATA),
    (GeometryError, "data", EXIT_DATA),
    (EnvmapError, "data", EXIT_DATA),
    (OptimizationError, "data", EXIT_DATA),
    (ValueError, "data", EXIT_DATA),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error category={exc.category}: {exc}", file=sys.stderr)
        return exc.code
    except tuple(e for e, _, _ in _ERROR_MAP) as exc:
        for etype, category, code in _ERROR_MAP:
            if isinstance(exc, etype):
                print(f"error category={category}: {exc}", file=sys.stderr)
                return code
        raise
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error category=internal: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
