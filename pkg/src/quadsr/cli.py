"""``quadsr`` command-line interface.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numeric failure.
The seed comes from ``--seed``, else the ``QDM_SEED`` environment variable,
else ``[run] seed`` in the config file, else 0.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import imageio
from .config import RunConfig, load_run_config, merge
from .data import VALIDATION_OFFSET, make_batch, upsample_lr
from .errors import ConfigError, DataError, DimensionError, NumericError
from .metrics import evaluate
from .model import load_checkpoint
from .quadtree import build_partition, generate_mask_any, pad_to_pow2, render_partition
from .runtime import TilePlan, bench_threshold_sweep, fuse_tiles, rows_to_csv, sample, train, uhr_sr
from .runtime.sampling import sample_from_y0

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("quadsr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $QDM_SEED, config, 0)")
    common.add_argument("--jobs", type=int, default=None, help="maximum worker threads")
    common.add_argument("--config", type=Path, default=None, help="INI-style run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="quadsr", description="Quadtree sparse-diffusion super-resolution")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mask", parents=[common], help="image -> PBM mask + PNG partition overlay")
    p.add_argument("input", type=Path)
    p.add_argument("--s", type=float, default=0.15, help="homogeneity threshold in [-1,1] units")
    p.add_argument("--factor", type=int, default=1, help="mask side = image side / factor")
    p.add_argument("--out", type=Path, default=None, help="PBM path (default: <input>.pbm)")
    p.add_argument("--overlay", type=Path, default=None, help="PNG overlay path (default: <input>_quadtree.png)")

    p = sub.add_parser("train", parents=[common], help="train on synthetic pairs")
    p.add_argument("--preset", default=None, help="model preset (tiny, s, b, l)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lam1", type=float, default=None)
    p.add_argument("--lam2", type=float, default=None)
    p.add_argument("--lam3", type=float, default=None)
    p.add_argument("--no-perceptual", action="store_true", help="drop the feature-space loss term")
    p.add_argument("--s", type=float, default=None, help="mask threshold used while training")
    p.add_argument("--size", type=int, default=None, help="HR side of synthetic images")
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--out-dir", type=Path, default=None)

    p = sub.add_parser("sr", parents=[common], help="LR image -> SR PNG")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--oracle-predictor", action="store_true", help="replace the network by the HR image given with --hr")
    p.add_argument("--hr", type=Path, default=None)
    p.add_argument("--trajectory", type=Path, default=None, help="directory for per-step PNG frames")

    p = sub.add_parser("uhr", parents=[common], help="tiled SR of a large LR image")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None, help="fusion weight sigma in output pixels")
    p.add_argument("--bypass-model", action="store_true", help="use the bilinear upsample as the tile operator")

    p = sub.add_parser("bench", parents=[common], help="threshold sweep CSV")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--thresholds", type=_float_list, default=[0.0, 0.15, 0.3, 0.6, 0.9])
    p.add_argument("--images", type=Path, nargs="*", default=None, help="LR images (default: synthetic validation set)")
    p.add_argument("--hr", type=Path, nargs="*", default=None, help="HR references matching --images")
    p.add_argument("--n-images", type=int, default=8)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--no-metrics", action="store_true")
    p.add_argument("--full-row", action="store_true", help="add a row with every window selected")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of an image pair")
    p.add_argument("pred", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("--luma", action="store_true", help="score RGB inputs on BT.601 luma")

    sub.add_parser("selftest", parents=[common], help="run the built-in property checks")
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    env = os.environ.get("QDM_SEED")
    seed = args.seed
    if seed is None and env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"QDM_SEED must be an integer, got {env!r}") from None
    return merge(cfg, "run", {"seed": seed, "jobs": args.jobs})


def _batch(img: np.ndarray) -> np.ndarray:
    return img[None] if img.ndim == 3 else img


def _load_model(path: Path | None):
    if path is None:
        raise UsageError("--checkpoint is required")
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    params, mcfg, _ = load_checkpoint(path)
    return params, mcfg


def _per_channel(img: np.ndarray, in_channels: int) -> np.ndarray:
    """Fold channels into the batch when the model is single-channel."""
    if img.shape[1] != in_channels and in_channels == 1:
        return img.reshape(-1, 1, *img.shape[2:])
    return img


def cmd_mask(args, cfg: RunConfig) -> int:
    img = _batch(imageio.read_image(args.input))
    _, _, h, w = img.shape
    if args.factor < 1 or h % args.factor or w % args.factor:
        raise DimensionError(f"--factor {args.factor} must divide the image size {h}×{w}")
    mask = generate_mask_any(img, args.s, h // args.factor, w // args.factor)
    out = args.out or args.input.with_suffix(".pbm")
    imageio.write_pbm(out, mask.bits[0])
    padded = pad_to_pow2(img)
    part = build_partition(padded, args.s)
    overlay = render_partition(padded, part)[:h, :w]
    imageio.write_rgb(args.overlay or args.input.with_name(args.input.stem + "_quadtree.png"), overlay)
    print(f"density {mask.density():.6f} leaves {len(part.leaves)} -> {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    cfg = merge(cfg, "model", {"preset": args.preset})
    cfg = merge(
        cfg,
        "train",
        {
            "steps": args.steps,
            "batch": args.batch,
            "lr": args.lr,
            "lam1": args.lam1,
            "lam2": args.lam2,
            "lam3": args.lam3,
            "perceptual": False if args.no_perceptual else None,
            "threshold": args.s,
            "checkpoint_every": args.checkpoint_every,
            "seed": cfg.run.seed,
        },
    )
    cfg = merge(cfg, "data", {"size": args.size})
    cfg = merge(cfg, "paths", {"out_dir": str(args.out_dir) if args.out_dir else None})
    result = train(cfg.train, cfg.model(), cfg.data, out_dir=cfg.paths.out_dir)
    n = min(50, len(result.losses))
    print(f"steps {len(result.losses)} first-{n} {np.mean(result.losses[:n]):.6f} last-{n} {np.mean(result.losses[-n:]):.6f}")
    print(f"checkpoint {Path(cfg.paths.out_dir) / 'final.bin'}")
    return EXIT_OK


def cmd_sr(args, cfg: RunConfig) -> int:
    if args.oracle_predictor and args.hr is None:
        raise UsageError("--oracle-predictor needs --hr")
    if not args.oracle_predictor and args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    lr = _batch(imageio.read_image(args.input))
    seed = cfg.run.seed
    trace = None
    if args.trajectory is not None:
        args.trajectory.mkdir(parents=True, exist_ok=True)

        def write_step(t, x, x_next, pix):
            imageio.write_image(args.trajectory / f"step_{t:03d}.png", np.clip(x_next[0], -1, 1))

        trace = write_step

    if args.oracle_predictor:
        hr = _batch(imageio.read_image(args.hr))
        y0 = upsample_lr(lr, args.scale)
        if hr.shape != y0.shape:
            raise DimensionError(f"HR shape {hr.shape} does not match upsampled LR {y0.shape}")
        out = sample_from_y0(y0, args.s, seed, lambda x, y, m, t: hr, trace=trace)
    else:
        params, mcfg = _load_model(args.checkpoint)
        batch = _per_channel(lr, mcfg.in_channels)
        out = sample(params, mcfg, batch, args.s, seed, scale=args.scale, trace=trace)
        out = out.reshape(lr.shape[0], -1, *out.shape[2:])
    imageio.write_image(args.out, out[0])
    print(f"wrote {args.out} ({out.shape[-2]}×{out.shape[-1]})")
    return EXIT_OK


def cmd_uhr(args, cfg: RunConfig) -> int:
    cfg = merge(cfg, "tile", {"patch": args.patch, "stride": args.stride, "scale": args.scale, "sigma": args.sigma})
    plan: TilePlan = cfg.tile
    big = _batch(imageio.read_image(args.input))
    if args.bypass_model:
        out = fuse_tiles(big, plan, lambda tile, k: upsample_lr(tile, plan.scale), jobs=cfg.run.jobs)
    else:
        params, mcfg = _load_model(args.checkpoint)
        batch = _per_channel(big, mcfg.in_channels)
        out = uhr_sr(params, mcfg, batch, plan, args.s, cfg.run.seed, jobs=cfg.run.jobs)
        out = out.reshape(big.shape[0], -1, *out.shape[2:])
    imageio.write_image(args.out, out[0])
    print(f"wrote {args.out} ({out.shape[-2]}×{out.shape[-1]})")
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    params = mcfg = None
    if args.checkpoint is not None:
        params, mcfg = _load_model(args.checkpoint)
    else:
        mcfg = cfg.model()
    hr = None
    if args.images:
        lr = np.concatenate([_batch(imageio.read_image(p)) for p in args.images])
        if args.hr:
            if len(args.hr) != len(args.images):
                raise UsageError("--hr needs one reference per --images entry")
            hr = np.concatenate([_batch(imageio.read_image(p)) for p in args.hr])
    else:
        spec = cfg.data
        if spec.scale != args.scale:
            raise UsageError(f"synthetic data scale {spec.scale} differs from --scale {args.scale}")
        idx = np.arange(VALIDATION_OFFSET, VALIDATION_OFFSET + args.n_images)
        hr, lr, _ = make_batch(spec, cfg.run.seed, idx)
    rows = bench_threshold_sweep(
        params,
        mcfg,
        lr,
        args.thresholds,
        hr_images=hr,
        scale=args.scale,
        seed=cfg.run.seed,
        metrics=not args.no_metrics,
        full_row=args.full_row,
    )
    text = rows_to_csv(rows)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    pred = imageio.read_image(args.pred)
    target = imageio.read_image(args.target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    report = evaluate(pred, target, luma=args.luma)
    print(f"psnr {report.psnr:.4f}\nssim {report.ssim:.6f}\nn_images {report.n_images}")
    return EXIT_OK


def cmd_selftest(args, cfg: RunConfig) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_NUMERIC


COMMANDS = {
    "mask": cmd_mask,
    "train": cmd_train,
    "sr": cmd_sr,
    "uhr": cmd_uhr,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = _run_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
