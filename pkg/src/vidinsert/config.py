"""Run configuration: nested sub-configs plus key-value file round-trip.

The on-disk format is UTF-8 key=value text with section headers (INI).
Every run writes its fully-resolved config next to its outputs so a run
is reproducible from its artifacts alone.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .codec import CodecConfig
from .conditioning import DropoutPolicy
from .errors import ContractError
from .model import ModelConfig
from .sampler import GuidanceConfig


@dataclass(frozen=True)
class ScheduleConfig:
    timesteps: int = 1000
    kind: str = "scaled-linear"
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-6
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-4


@dataclass
class RunConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(channels=24))
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dropout: DropoutPolicy = field(default_factory=DropoutPolicy)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    batch_size: int = 4
    max_steps: int = 2000
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.model.channels != self.codec.channels:
            raise ContractError(
                f"model channels {self.model.channels} != codec channels "
                f"{self.codec.channels}"
            )
        if self.seed is None:
            raise ContractError("seed is mandatory")


def desk_config(seed: int = 0) -> RunConfig:
    """The 32x32, 9-frame configuration that trains in minutes on a CPU.

    The optimizer default lr (5e-6) is a large-model finetuning rate; a
    from-scratch desk model needs a working rate, so the preset raises it.
    """
    return RunConfig(
        codec=CodecConfig(spatial_factor=2, temporal_factor=2, channels=24),
        model=ModelConfig(
            channels=24,
            depth=4,
            width=128,
            heads=4,
            max_prompt_tokens=32,
            vocab_size=256,
            max_frames=12,
            latent_h=16,
            latent_w=16,
        ),
        optimizer=OptimizerConfig(lr=1e-3),
        batch_size=4,
        max_steps=2000,
        seed=seed,
    )


_SECTIONS = ("codec", "model", "schedule", "optimizer", "dropout", "guidance", "run")


def save_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    data = asdict(cfg)
    run_section = {
        k: data[k] for k in ("batch_size", "max_steps", "checkpoint_every", "seed")
    }
    for section in _SECTIONS:
        values = run_section if section == "run" else data[section]
        parser[section] = {k: repr(v) if isinstance(v, str) else str(v) for k, v in values.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def _coerce(raw: str, template):
    if isinstance(template, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if raw.startswith(("'", '"')) and raw.endswith(("'", '"')):
        return raw[1:-1]
    return raw


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    path = Path(path)
    if not path.exists():
        raise ContractError(f"config file {path} does not exist")
    parser.read(path, encoding="utf-8")
    defaults = RunConfig()

    def read_section(name: str, template) -> dict:
        out = {}
        if name not in parser:
            return out
        base = asdict(template)
        for key, raw in parser[name].items():
            if key not in base:
                raise ContractError(f"unknown key {key!r} in section [{name}]")
            out[key] = _coerce(raw, base[key])
        return out

    codec = CodecConfig(**{**asdict(defaults.codec), **read_section("codec", defaults.codec)})
    model = ModelConfig(**{**asdict(defaults.model), **read_section("model", defaults.model)})
    schedule = ScheduleConfig(
        **{**asdict(defaults.schedule), **read_section("schedule", defaults.schedule)}
    )
    optimizer = OptimizerConfig(
        **{**asdict(defaults.optimizer), **read_section("optimizer", defaults.optimizer)}
    )
    dropout = DropoutPolicy(
        **{**asdict(defaults.dropout), **read_section("dropout", defaults.dropout)}
    )
    guidance = GuidanceConfig(
        **{**asdict(defaults.guidance), **read_section("guidance", defaults.guidance)}
    )
    run_raw = {}
    if "run" in parser:
        known = {"batch_size": 4, "max_steps": 2000, "checkpoint_every": 500, "seed": 0}
        for key, raw in parser["run"].items():
            if key not in known:
                raise ContractError(f"unknown key {key!r} in section [run]")
            run_raw[key] = _coerce(raw, known[key])
    return RunConfig(
        codec=codec,
        model=model,
        schedule=schedule,
        optimizer=optimizer,
        dropout=dropout,
        guidance=guidance,
        **run_raw,
    )
