"""Command-line entry point.

Exit codes: 0 success, 1 usage / invalid configuration, 2 I/O, 3 numeric failure.

Config files hold flat ``key = value`` lines (``#`` starts a comment) whose
keys are the long option names with dashes or underscores, e.g.::

    iters = 20000
    sigma_max = 50
    width = 32

Command-line flags override file values, which override the defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, restore_params, save_checkpoint
from .data import ImageError, Image, NoiseSpec, Rng, add_awgn, load_dataset, load_image, save_image, training_stream
from .gradcheck import TOLERANCE, run_suite
from .losses import LossConfig
from .metrics import UnpairedFileError, evaluate_dir
from .network import ModelConfig, build, forward, param_count
from .tensor import ShapeError, Tensor, no_grad
from .trainer import NonFiniteLossError, Schedule, TrainConfig, train

log = logging.getLogger("twostage_denoise")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

def _flag(s) -> bool:
    return str(s).strip().lower() in ("1", "true", "yes", "on")


# option name -> (type, default); defaults follow the published training setup
TRAIN_OPTIONS = {
    "sigma_min": (float, 0.0),
    "sigma_max": (float, 50.0),
    "iters": (int, 500_000),
    "seed": (int, 0),
    "loss": (str, "mse"),
    "batch": (int, 4),
    "patch": (int, 128),
    "lr": (float, None),  # 1e-4 for mse, 2e-4 for charbonnier
    "schedule": (str, None),  # step for mse, cosine for charbonnier
    "lr_period": (int, 100_000),
    "lr_min": (float, 1e-6),
    "k": (int, 5),
    "m": (int, 2),
    "width": (int, 64),
    "growth": (int, 32),
    "ca_ratio": (int, 8),
    "channel_policy": (str, "double"),
    "color": (_flag, False),
    "log_every": (int, 100),
    "checkpoint_every": (int, 1000),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in TRAIN_OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_train_options(args) -> dict:
    opts = {k: default for k, (_, default) in TRAIN_OPTIONS.items()}
    if args.config:
        for k, v in read_config_file(args.config).items():
            opts[k] = TRAIN_OPTIONS[k][0](v)
    for k in TRAIN_OPTIONS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    if opts["loss"] not in ("mse", "charbonnier"):
        raise UsageError(f"--loss must be mse or charbonnier, got {opts['loss']!r}")
    charb = opts["loss"] == "charbonnier"
    if opts["lr"] is None:
        opts["lr"] = 2e-4 if charb else 1e-4
    if opts["schedule"] is None:
        opts["schedule"] = "cosine" if charb else "step"
    return opts


def configs_from_options(opts):
    model = ModelConfig(
        k=opts["k"], m=opts["m"], width=opts["width"], growth=opts["growth"],
        image_channels=3 if opts["color"] else 1, ca_ratio=opts["ca_ratio"],
        channel_policy=opts["channel_policy"],
    )
    iters = opts["iters"]
    period = min(opts["lr_period"], iters)
    if period < opts["lr_period"] and opts["schedule"] == "step":
        log.info("step period %d clipped to the %d-iteration budget", opts["lr_period"], iters)
    schedule = Schedule(opts["schedule"], lr_init=opts["lr"], period=period, lr_min=opts["lr_min"], horizon=iters)
    train_cfg = TrainConfig(
        total_iterations=iters, batch=opts["batch"], patch=opts["patch"], schedule=schedule,
        seed=opts["seed"], loss=LossConfig("charbonnier_edge" if opts["loss"] == "charbonnier" else "mse"),
        log_every=opts["log_every"], checkpoint_every=opts["checkpoint_every"],
    )
    noise = NoiseSpec(opts["sigma_min"], opts["sigma_max"])
    return model, train_cfg, noise


def cmd_train(args) -> int:
    opts = resolve_train_options(args)
    model_cfg, cfg, noise = configs_from_options(opts)
    images = load_dataset(args.data, grayscale=not opts["color"], min_size=cfg.patch)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log")
    start, state = 0, None
    if args.resume and out.exists():
        ckpt = load_checkpoint(out)
        if ckpt.config != model_cfg:
            raise UsageError(f"{out} was trained with a different model config")
        params, state, start = restore_params(ckpt), ckpt.optimizer, ckpt.iteration
        log.info("resuming from iteration %d", start)
    else:
        params = build(model_cfg, seed=cfg.seed)
        log_path.unlink(missing_ok=True)
    stream = training_stream(images, cfg.patch, cfg.batch, noise, Rng(cfg.seed), start=start)
    result = train(params, stream, cfg, state=state, start=start, log_path=log_path,
                   checkpoint_path=out, meta={"noise": [noise.sigma_min, noise.sigma_max]})
    last = result.log[-1] if result.log else None
    print(f"trained to iteration {result.iteration}" + (f", loss {last[1]:.6g}" if last else "") + f"; checkpoint {out}")
    return EXIT_OK


def denoise_image(params, pixels: np.ndarray):
    with no_grad():
        x1, x2 = forward(params, Tensor(pixels[None].astype(params.dtype)))
    return x1.data[0], x2.data[0]


def cmd_denoise(args) -> int:
    params = restore_params(load_checkpoint(args.ckpt))
    img = load_image(args.input)
    want = params.config.image_channels
    if img.channels != want:
        raise UsageError(f"model expects {want}-channel images but {args.input} has {img.channels}")
    x1, x2 = denoise_image(params, img.pixels)
    out = Path(args.output)
    save_image(Image(x2), out)
    if args.save_stage1:
        save_image(Image(x1), out.with_name(f"{out.stem}_stage1{out.suffix}"))
    return EXIT_OK


def cmd_add_noise(args) -> int:
    img = load_image(args.input)
    save_image(add_awgn(img, args.sigma, np.random.default_rng(args.seed)), args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_dir(args.denoised, args.reference)
    lines = report.lines()
    if args.report:
        report.write(args.report)
    print("\n".join(lines))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    def show(r):
        print(f"{r.name:40s} max_rel_err={r.max_rel_error:.3e} n={r.n_checked} kinks_skipped={r.n_skipped} {'ok' if r.ok else 'FAIL'}", flush=True)

    results = run_suite(seed=args.seed, include_network=not args.no_network, verbose=show)
    worst = max(r.max_rel_error for r in results)
    print(f"worst relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


def cmd_info(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    print("model config:")
    for k, v in ckpt.config.to_dict().items():
        print(f"  {k} = {v}")
    print(f"param_count = {ckpt.param_count()}")
    print(f"iteration = {ckpt.iteration}")
    print(f"optimizer state = {'yes (step %d)' % ckpt.optimizer.t if ckpt.optimizer else 'no'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="twostage-denoise", description="Two-stage residual dense attention denoiser")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train on a directory of clean images with synthetic AWGN")
    t.add_argument("--data", required=True, help="directory of PNG/PGM/PPM images")
    t.add_argument("--out", required=True, help="checkpoint path (rewritten every --checkpoint-every iterations)")
    t.add_argument("--config", help="flat key = value file; flags take precedence")
    t.add_argument("--log", help="training log path (default: <out>.log)")
    t.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--gray", dest="color", action="store_false", default=None, help="grayscale model (default)")
    g.add_argument("--color", dest="color", action="store_true", default=None, help="RGB model")
    t.add_argument("--sigma-min", type=float, help="lowest noise level, 0-255 scale (default 0)")
    t.add_argument("--sigma-max", type=float, help="highest noise level, 0-255 scale (default 50)")
    t.add_argument("--iters", type=int, help="total iterations (default 500000)")
    t.add_argument("--seed", type=int, help="seed for init and data (default 0)")
    t.add_argument("--loss", choices=["mse", "charbonnier"], help="loss regime (default mse)")
    t.add_argument("--batch", type=int, help="patches per batch (default 4)")
    t.add_argument("--patch", type=int, help="patch side length (default 128)")
    t.add_argument("--lr", type=float, help="initial learning rate (default 1e-4 mse, 2e-4 charbonnier)")
    t.add_argument("--schedule", choices=["step", "cosine"], help="lr schedule (default step for mse, cosine otherwise)")
    t.add_argument("--lr-period", type=int, help="halving period of the step schedule (default 100000)")
    t.add_argument("--lr-min", type=float, help="final lr of the cosine schedule (default 1e-6)")
    t.add_argument("--k", type=int, help="modules per stage (default 5)")
    t.add_argument("--m", type=int, help="down/up-sampling pairs in stage 1 (default 2)")
    t.add_argument("--width", type=int, help="base feature channels (default 64)")
    t.add_argument("--growth", type=int, help="dense block growth rate (default 32)")
    t.add_argument("--ca-ratio", type=int, help="channel attention reduction ratio (default 8)")
    t.add_argument("--channel-policy", choices=["double", "constant"], help="width across scales (default double)")
    t.add_argument("--log-every", type=int, help="iterations between log lines (default 100)")
    t.add_argument("--checkpoint-every", type=int, help="iterations between checkpoints (default 1000)")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="denoise one image with a trained checkpoint")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", dest="output", required=True)
    d.add_argument("--save-stage1", action="store_true", help="also write the first-stage estimate as <out>_stage1")
    d.set_defaults(func=cmd_denoise)

    a = sub.add_parser("add-noise", help="add white Gaussian noise to an image")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--out", dest="output", required=True)
    a.add_argument("--sigma", type=float, required=True, help="noise std on the 0-255 scale")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_add_noise)

    e = sub.add_parser("eval", help="PSNR/SSIM of a denoised directory against references")
    e.add_argument("--denoised", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--report", help="write the comma-separated report here")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--no-network", action="store_true", help="skip the whole-network case")
    gc.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("info", help="print a checkpoint's config, parameter count and iteration")
    i.add_argument("--ckpt", required=True)
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ImageError, CheckpointError, UnpairedFileError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
