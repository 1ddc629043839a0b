"""Command-line entry point: ``sbufogen {verify,synth,train,enhance,sweep}``.

Logging verbosity comes from the ``SBF_LOG_LEVEL`` environment variable
(default ``WARNING``); logs go to stderr so stdout stays machine-readable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .kernels import SAMPLER_MODES

log = logging.getLogger("sbufogen")


def _steps_list(text: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("step counts must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, default=1, help="parallel workers (default 1)")
    common.add_argument("--out", type=Path, help="output directory or file")

    parser = argparse.ArgumentParser(prog="sbufogen", description="Few-step signal enhancement on a Gaussian bridge.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("verify", parents=[common], help="run analytic and Monte-Carlo self-checks")
    p.add_argument("--corrupt-wy", action="store_true", help="negative control: flip the sign of w_y in one check")

    sub.add_parser("synth", parents=[common], help="write a synthetic paired dataset")

    p = sub.add_parser("train", parents=[common], help="train a generator")
    p.add_argument("--train-steps", type=int, help="override the number of optimizer steps")
    p.add_argument("--manifest", type=Path, help="training manifest (default: synthesize in memory)")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")

    p = sub.add_parser("enhance", parents=[common], help="enhance one WAV file")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--mode", choices=SAMPLER_MODES, default="marginal")
    p.add_argument("--raw", action="store_true", help="use raw instead of EMA weights")

    p = sub.add_parser("sweep", parents=[common], help="evaluate a checkpoint over step counts")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="test manifest (default: synthesize from the checkpoint config)")
    p.add_argument("--steps", type=_steps_list, help="comma-separated step counts")
    p.add_argument("--mode", choices=SAMPLER_MODES, action="append", help="sampler mode (repeatable)")
    p.add_argument("--timing", action="store_true", help="fill proc_per_sec (not reproducible)")
    p.add_argument("--plot", action="store_true", help="also render sweep_si_sdr.png")
    p.add_argument("--raw", action="store_true", help="use raw instead of EMA weights")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SBF_LOG_LEVEL", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"SBF_LOG_LEVEL={level!r} is not a logging level")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_verify(args) -> int:
    from .verify import format_report, format_result, run_checks

    seed = args.seed if args.seed is not None else 0
    results = run_checks(seed, corrupt_wy=args.corrupt_wy, progress=lambda r: log.info(format_result(r)))
    report = format_report(results)
    sys.stdout.write(report)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report)
    return 0 if all(r.passed for r in results) else 1


def cmd_synth(args) -> int:
    from .pipeline import write_dataset

    cfg = _config(args)
    out = args.out or Path(cfg.output_dir) / "data"
    paths = write_dataset(cfg, out)
    (Path(out) / "config.ini").write_text(dump_config(cfg))
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args) -> int:
    from .pipeline import train

    cfg = _config(args)
    if args.train_steps is not None:
        cfg = replace(cfg, train=replace(cfg.train, total_steps=args.train_steps))
    torch.set_num_threads(max(1, args.workers))
    ckpt = train(cfg, args.out or cfg.output_dir, args.manifest, args.resume)
    print(ckpt)
    return 0


def cmd_enhance(args) -> int:
    from .pipeline import enhance

    out = args.out or args.input.with_name(args.input.stem + "_enhanced.wav")
    seed = args.seed if args.seed is not None else 0
    enhance(args.checkpoint, args.input, out, args.steps, args.mode, seed, use_ema=not args.raw)
    print(out)
    return 0


def cmd_sweep(args) -> int:
    from .pipeline import load_generator, run_sweep

    _, ck_cfg = load_generator(args.checkpoint, not args.raw)
    cfg = load_config(args.config) if args.config else ck_cfg
    seed = args.seed if args.seed is not None else cfg.seed
    paths = run_sweep(
        args.checkpoint,
        args.out or Path(cfg.output_dir) / "sweep",
        args.steps or cfg.eval.steps,
        args.mode or cfg.eval.modes,
        seed=seed,
        manifest=args.manifest,
        workers=args.workers,
        timing=args.timing or cfg.eval.timing,
        plot=args.plot or cfg.eval.plots,
        use_ema=not args.raw,
    )
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


_COMMANDS = {"verify": cmd_verify, "synth": cmd_synth, "train": cmd_train, "enhance": cmd_enhance, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return _COMMANDS[args.verb](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
