"""Run configuration shared by the CLI and the service.

Defaults pin the reference hyperparameters (mask rate 0.15, overlap 0.5,
pretrain lr 1e-5 / batch 64 / 10-step accumulation, finetune lr 1e-6 /
batch 8). Unknown keys are rejected so typos never silently fall back to
defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .model import EncoderConfig
from .pretrain import TrainPlan
from .tasks import TaskSpec


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "tiny"
    seed: int = 0
    dropout: float = 0.1
    prompt_attn_source: str = "tabunit"
    # pretraining
    mask_rate: float = 0.15
    overlap: float = 0.5
    lr: float = 1e-5
    batch_size: int = 64
    accum_steps: int = 10
    cl_temperature: float = 0.1
    max_steps: int = 1000
    objective_cycle: str = "mcm,cl"
    checkpoint_interval: int = 0
    vocab_min_count: int = 1
    shuffle_columns: bool = True
    # finetuning
    finetune_lr: float = 1e-6
    finetune_batch_size: int = 8
    finetune_steps: int = 500
    dev_fraction: float = 0.0
    early_stop_patience: int | None = None

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def merged(self, overrides: dict) -> "RunConfig":
        unknown = set(overrides) - self.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_preset(
            self.preset, dropout=self.dropout, prompt_attn_source=self.prompt_attn_source
        )

    def train_plan(self) -> TrainPlan:
        cycle = tuple(part.strip() for part in self.objective_cycle.split(",") if part.strip())
        return TrainPlan(
            mask_rate=self.mask_rate,
            overlap=self.overlap,
            lr=self.lr,
            batch_size=self.batch_size,
            accum_steps=self.accum_steps,
            cl_temperature=self.cl_temperature,
            max_steps=self.max_steps,
            seed=self.seed,
            objective_cycle=cycle,
            checkpoint_interval=self.checkpoint_interval,
            shuffle_columns=self.shuffle_columns,
            vocab_min_count=self.vocab_min_count,
        )

    def task_spec(
        self,
        kind: str,
        target: str,
        labels: tuple[str, ...] = (),
        prompt: str | None = None,
    ) -> TaskSpec:
        return TaskSpec(
            kind=kind,
            target=target,
            labels=labels,
            prompt=prompt,
            lr=self.finetune_lr,
            batch_size=self.finetune_batch_size,
        )

    def log_lines(self) -> list[str]:
        return [f"config.{k}={v}" for k, v in sorted(self.to_dict().items())]
