"""Experiment configuration: a sectioned ``key = value`` text file.

Example::

    [run]
    seed = 0
    output_dir = runs/demo

    [schedule]
    c = 0.4
    k = 2.6
    t_eps = 0.03
    n_steps = 4

Unknown sections or keys are rejected so typos surface immediately.
Missing keys take the defaults of the dataclasses below.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .losses import ReconConfig
from .metrics import DEFAULT_SNR_BINS
from .nets import DEFAULT_SCALES, DiscriminatorConfig, GeneratorConfig
from .schedule import ScheduleParams
from .signal import CompressionConfig, StftConfig
from .training import TrainRunConfig

__all__ = ["SynthSettings", "EvalSettings", "ExperimentConfig", "load_config", "parse_config", "dump_config"]


class ConfigError(ValueError):
    pass


@dataclass
class SynthSettings:
    sample_rate: int = 8000
    duration: float = 1.0
    kinds: tuple = ("harmonic", "chirp", "filtered_noise_burst")
    snr_low: float = -5.0
    snr_high: float = 15.0
    noise_kind: str = "white"
    rir_decay: float = 0.0
    rir_length: float = 0.25
    n_train: int = 300
    n_test: int = 45

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("item counts must be non-negative")
        if self.snr_low > self.snr_high:
            raise ConfigError("snr_low exceeds snr_high")


@dataclass
class EvalSettings:
    steps: tuple = (1, 2, 4)
    modes: tuple = ("marginal",)
    snr_bins: tuple = DEFAULT_SNR_BINS
    timing: bool = False
    plots: bool = False
    use_ema: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    stft: StftConfig = field(default_factory=StftConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainRunConfig = field(default_factory=TrainRunConfig)
    synth: SynthSettings = field(default_factory=SynthSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned value, got {self.seed}")
        # the shared signal settings feed both networks
        self.generator = replace(self.generator, stft=self.stft, compression=self.compression)
        self.discriminator = replace(self.discriminator, compression=self.compression)

    @property
    def recon(self) -> ReconConfig:
        return ReconConfig(
            alpha_l1=self.train.alpha_l1,
            mel_weight=self.train.mel_weight,
            stft=self.stft,
            compression=self.compression,
            sample_rate=self.synth.sample_rate,
        )

    @property
    def task(self) -> str:
        return "dereverb" if self.synth.rir_decay > 0 else "denoise"


# section name -> (attribute, keys that are not plain dataclass fields)
_SECTIONS = {
    "schedule": ("schedule", ScheduleParams),
    "stft": ("stft", StftConfig),
    "compression": ("compression", CompressionConfig),
    "generator": ("generator", GeneratorConfig),
    "discriminator": ("discriminator", DiscriminatorConfig),
    "train": ("train", TrainRunConfig),
    "synth": ("synth", SynthSettings),
    "eval": ("eval", EvalSettings),
}
_SKIP = {"generator": {"stft", "compression"}, "discriminator": {"compression"}, "schedule": {"t_end"}}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        if value and isinstance(value[0], (tuple, list)):
            return "; ".join(",".join(_format(v) for v in pair) for pair in value)
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_like(text: str, default, name: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if not text:
                return ()
            if default and isinstance(default[0], tuple):
                return tuple(tuple(_num(v) for v in pair.split(",")) for pair in text.split(";") if pair.strip())
            sample = default[0] if default else ""
            return tuple(_parse_like(v, sample, name) for v in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name} = {text!r}") from exc


def _num(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    kwargs = {}
    for section in parser.sections():
        if section == "run":
            for key, val in parser.items(section):
                if key == "seed":
                    kwargs["seed"] = int(val)
                elif key == "output_dir":
                    kwargs["output_dir"] = val.strip()
                else:
                    raise ConfigError(f"unknown key [run] {key}")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        attr, cls = _SECTIONS[section]
        defaults = cls()
        known = {f.name for f in fields(cls)} - _SKIP.get(section, set())
        values = {}
        for key, val in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key [{section}] {key}")
            values[key] = _parse_like(val, getattr(defaults, key), f"[{section}] {key}")
        try:
            kwargs[attr] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    out = io.StringIO()
    out.write("[run]\n")
    out.write(f"seed = {cfg.seed}\n")
    out.write(f"output_dir = {cfg.output_dir}\n")
    for section, (attr, cls) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        out.write(f"\n[{section}]\n")
        for f in fields(cls):
            if f.name in _SKIP.get(section, set()):
                continue
            out.write(f"{f.name} = {_format(getattr(obj, f.name))}\n")
    return out.getvalue()
