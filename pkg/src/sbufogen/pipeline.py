"""End-to-end workflows behind the command line: synth, train, enhance, sweep."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from torch.func import functional_call

from .autodiff import load_container
from .config import ExperimentConfig, dump_config, parse_config
from .kernels import ufogen_infer
from .metrics import EvalItem, _cell_seed, aggregate, input_si_sdr, records_to_csv, summary_json, sweep
from .nets import build_discriminator, build_generator, param_count
from .signal import SynthSpec, read_manifest, read_wav, synth_pair, write_manifest, write_wav
from .training import PairBank, Trainer

log = logging.getLogger(__name__)

_SPLITS = {"train": 1, "test": 2}


def item_seed(run_seed: int, split: str, index: int) -> int:
    state = np.random.SeedSequence([int(run_seed), _SPLITS[split], int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> 1)


def synth_items(cfg: ExperimentConfig, split: str) -> list:
    """Deterministic paired examples for one split, as ``(item_id, PairedSample)``."""
    s = cfg.synth
    count = s.n_train if split == "train" else s.n_test
    rir = (s.rir_decay, s.rir_length) if s.rir_decay > 0 else None
    out = []
    for i in range(count):
        spec = SynthSpec(
            sample_rate=s.sample_rate,
            duration=s.duration,
            clean_kind=s.kinds[i % len(s.kinds)],
            snr_db=(s.snr_low, s.snr_high),
            noise_kind=s.noise_kind,
            rir=rir,
            seed=item_seed(cfg.seed, split, i),
        )
        out.append((f"{split}_{i:05d}", synth_pair(spec)))
    return out


def write_dataset(cfg: ExperimentConfig, out_dir) -> dict:
    """Write WAV pairs plus one JSONL manifest per split; returns manifest paths."""
    out_dir = Path(out_dir)
    paths = {}
    for split in ("train", "test"):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for item_id, pair in synth_items(cfg, split):
            clean_path = split_dir / f"{item_id}_clean.wav"
            degraded_path = split_dir / f"{item_id}_degraded.wav"
            write_wav(clean_path, pair.clean, pair.sample_rate)
            write_wav(degraded_path, pair.degraded, pair.sample_rate)
            records.append(
                {
                    "item": item_id,
                    "clean": str(clean_path.relative_to(out_dir)),
                    "degraded": str(degraded_path.relative_to(out_dir)),
                    "snr_db": pair.snr_db,
                    "task": pair.task,
                    "kind": pair.meta["kind"],
                    "seed": pair.meta["seed"],
                }
            )
        paths[split] = out_dir / f"{split}.jsonl"
        write_manifest(paths[split], records)
    return paths


def load_manifest_items(path, sample_rate: int) -> list:
    """Read a manifest written by :func:`write_dataset` into ``EvalItem`` objects."""
    path = Path(path)
    items = []
    for rec in read_manifest(path):
        clean, _ = read_wav(path.parent / rec["clean"], sample_rate)
        degraded, _ = read_wav(path.parent / rec["degraded"], sample_rate)
        items.append(EvalItem(rec["item"], clean, degraded, float(rec["snr_db"]), rec.get("task", "denoise")))
    return items


def eval_items(cfg: ExperimentConfig, manifest=None) -> list:
    if manifest is not None:
        return load_manifest_items(manifest, cfg.synth.sample_rate)
    return [EvalItem(i, p.clean, p.degraded, p.snr_db, p.task) for i, p in synth_items(cfg, "test")]


def train_bank(cfg: ExperimentConfig, manifest=None) -> PairBank:
    if manifest is not None:
        items = load_manifest_items(manifest, cfg.synth.sample_rate)
        return PairBank(np.stack([it.clean for it in items]), np.stack([it.degraded for it in items]))
    pairs = [p for _, p in synth_items(cfg, "train")]
    return PairBank(np.stack([p.clean for p in pairs]), np.stack([p.degraded for p in pairs]))


def make_trainer(cfg: ExperimentConfig) -> Trainer:
    torch.manual_seed(cfg.seed)
    gen = build_generator(cfg.generator)
    disc = build_discriminator(cfg.discriminator) if cfg.train.mode == "sb_ufogen" else None
    train_cfg = replace(cfg.train, task=cfg.task)
    return Trainer(gen, disc, cfg.schedule, train_cfg, cfg.recon, seed=cfg.seed)


def train(cfg: ExperimentConfig, out_dir, manifest=None, resume=None) -> Path:
    """Train per ``cfg``; writes ``checkpoint.sbuf`` and ``train.log`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tr = make_trainer(cfg)
    if resume is not None:
        tr.load(resume)
        log.info("resumed from %s at step %d", resume, tr.step)
    log.info("generator parameters: %d", param_count(tr.gen))
    ckpt = out_dir / "checkpoint.sbuf"
    meta = {"config": dump_config(cfg)}
    tr.fit(train_bank(cfg, manifest), log_path=out_dir / "train.log", checkpoint_path=ckpt, metadata=meta)
    tr.save(ckpt, meta)
    return ckpt


def load_generator(path, use_ema: bool = True):
    """Rebuild a generator from a checkpoint; returns ``(callable, config)``."""
    tensors, meta = load_container(path)
    if "config" not in meta:
        raise ValueError(f"{path}: checkpoint carries no experiment config")
    cfg = parse_config(meta["config"])
    gen = build_generator(cfg.generator)
    prefix = "gen_ema/" if use_ema else "gen/"
    params = {}
    for name, p in gen.named_parameters():
        key = prefix + name
        if key not in tensors:
            raise ValueError(f"{path}: missing tensor {key}")
        params[name] = tensors[key].to(p.dtype)
    gen.eval()
    return (lambda x, y, t: functional_call(gen, params, (x, y, t))), cfg


def enhance(checkpoint, in_path, out_path, n_steps: int, mode: str = "marginal", seed: int = 0, use_ema: bool = True) -> np.ndarray:
    gen, cfg = load_generator(checkpoint, use_ema)
    y, rate = read_wav(in_path, cfg.synth.sample_rate)
    rng = torch.Generator().manual_seed(_cell_seed(seed, Path(in_path).name, n_steps, mode))
    sched = cfg.schedule.with_steps(max(n_steps, cfg.schedule.n_steps))
    with torch.no_grad():
        out = ufogen_infer(torch.as_tensor(y, dtype=torch.float32)[None], gen, n_steps, sched, rng, mode)
    out = out[0].double().numpy()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_wav(out_path, out, rate)
    return out


def _sweep_chunk(args):
    checkpoint, use_ema, items, steps, modes, seed, timing = args
    torch.set_num_threads(1)
    gen, cfg = load_generator(checkpoint, use_ema)
    sched = cfg.schedule.with_steps(max(max(steps), cfg.schedule.n_steps))
    return sweep(gen, items, steps, sched, modes, seed, cfg.synth.sample_rate, timing)


def run_sweep(checkpoint, out_dir, steps, modes, seed=0, manifest=None, workers=1, timing=False, plot=False, use_ema=True) -> dict:
    """Evaluate a checkpoint; writes ``sweep.csv``, ``sweep.json`` and optionally a figure."""
    _, cfg = load_generator(checkpoint, use_ema)
    items = eval_items(cfg, manifest)
    steps, modes = sorted(set(int(s) for s in steps)), list(modes)
    # contiguous chunks keep the row order identical for any worker count
    workers = max(1, min(int(workers), len(items)))
    bounds = np.linspace(0, len(items), workers + 1).astype(int)
    jobs = [(str(checkpoint), use_ema, items[a:b], steps, modes, seed, timing) for a, b in zip(bounds, bounds[1:])]
    if workers == 1:
        parts = [_sweep_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_sweep_chunk, jobs))
    rows = [r for part in parts for r in part]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / "sweep.csv", "json": out_dir / "sweep.json"}
    paths["csv"].write_text(records_to_csv(rows))
    paths["json"].write_text(summary_json(rows, items, cfg.eval.snr_bins, extra={"steps": steps, "modes": modes, "seed": seed}) + "\n")
    if plot:
        from .plotting import plot_sweep

        paths["figure"] = out_dir / "sweep_si_sdr.png"
        plot_sweep(aggregate(rows, cfg.eval.snr_bins), paths["figure"], input_si_sdr(items, cfg.eval.snr_bins))
    return paths


__all__ = [
    "item_seed",
    "synth_items",
    "write_dataset",
    "load_manifest_items",
    "eval_items",
    "train_bank",
    "make_trainer",
    "train",
    "load_generator",
    "enhance",
    "run_sweep",
]
