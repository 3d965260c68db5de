"""Run configuration: a JSON file plus environment (.env) defaults.

{
  "seed": 13,
  "out": "runs/ner",
  "trainer": {"mode": "STL", "lr": 0.001, "max_epochs": 30, ...},
  "encoder": {"embed_dim": 100, "bilstm_layers": 3, ...},
  "tasks": [{"name": "NER", "train": "data/ner/train", "dev": "data/ner/dev",
             "test": "data/ner/test", "overrides": {"max_span_length": 8}}]
}
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from errors import ConfigError
from helpers import default_seed

load_dotenv()

TOP_LEVEL_KEYS = {'seed', 'out', 'trainer', 'encoder', 'tasks'}
TASK_KEYS = {'name', 'train', 'dev', 'test', 'overrides'}
ENCODER_KEYS = {
    'embed_dim', 'pretrained_vectors', 'freeze_embeddings', 'bilstm_layers', 'bilstm_hidden',
    'attn_layers', 'attn_heads', 'dropout', 'mlp_hidden', 'mlp_layers', 'min_count',
}
MODES = ('STL', 'MTL', 'MTL_FT')


@dataclass
class TrainerConfig:
    mode: str = 'STL'
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    batch_size: int = 8
    max_epochs: int = 30
    patience: int = 3
    seed: int = 13
    fine_tune_task: Optional[str] = None
    clip_norm: float = 5.0
    train_fraction: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"trainer mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.patience < 1:
            raise ConfigError('patience must be at least 1')
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError('batch_size must be positive and max_epochs non-negative')
        if not 0 < self.train_fraction <= 1:
            raise ConfigError('train_fraction must lie in (0, 1]')
        if self.mode == 'MTL_FT' and not self.fine_tune_task:
            raise ConfigError('MTL_FT needs fine_tune_task')

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown trainer key(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TaskSpec:
    name: str
    train: Optional[Path] = None
    dev: Optional[Path] = None
    test: Optional[Path] = None
    overrides: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    seed: int
    out: Path
    trainer: TrainerConfig
    encoder: dict
    tasks: list
    base_dir: Path = Path('.')

    def task(self, name):
        for spec in self.tasks:
            if spec.name.lower() == name.lower():
                return spec
        raise ConfigError(f"task {name!r} is not in the run config")


def _resolve(base, value):
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def parse_run_config(data, base_dir='.', seed=None, out=None, task=None):
    """Validate a run-config dict; CLI flags (seed/out/task) take precedence over the file."""
    if not isinstance(data, dict):
        raise ConfigError('run config must be a JSON object')
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown run-config key(s): {sorted(unknown)}")
    base = Path(base_dir).resolve()

    # 1. seed: flag, then file, then SPANREL_SEED
    if seed is None:
        seed = data.get('seed', default_seed())
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None

    # 2. tasks
    specs = []
    for entry in data.get('tasks', []):
        if not isinstance(entry, dict) or 'name' not in entry:
            raise ConfigError('every task entry needs a name')
        bad = set(entry) - TASK_KEYS
        if bad:
            raise ConfigError(f"unknown key(s) in task {entry['name']!r}: {sorted(bad)}")
        specs.append(TaskSpec(
            name=entry['name'],
            train=_resolve(base, entry.get('train')),
            dev=_resolve(base, entry.get('dev')),
            test=_resolve(base, entry.get('test')),
            overrides=dict(entry.get('overrides') or {}),
        ))
    if task:
        specs = [s for s in specs if s.name.lower() == task.lower()] or [TaskSpec(name=task)]

    # 3. trainer and encoder sections
    trainer_data = dict(data.get('trainer') or {})
    trainer_data['seed'] = seed
    trainer = TrainerConfig.from_dict(trainer_data)
    if trainer.fine_tune_task and trainer.fine_tune_task.lower() not in {s.name.lower() for s in specs}:
        raise ConfigError(f"fine_tune_task {trainer.fine_tune_task!r} is not one of the configured tasks")
    encoder = dict(data.get('encoder') or {})
    bad = set(encoder) - ENCODER_KEYS
    if bad:
        raise ConfigError(f"unknown encoder key(s): {sorted(bad)}")
    if encoder.get('pretrained_vectors'):
        encoder['pretrained_vectors'] = str(_resolve(base, encoder['pretrained_vectors']))

    out_dir = out if out is not None else data.get('out', os.getenv('SPANREL_OUT', 'runs/latest'))
    return RunConfig(seed=seed, out=_resolve(base, out_dir) if out is None else Path(out),
                     trainer=trainer, encoder=encoder, tasks=specs, base_dir=base)


def load_run_config(path, seed=None, out=None, task=None):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON (line {e.lineno}): {e.msg}") from None
    return parse_run_config(data, base_dir=path.parent, seed=seed, out=out, task=task)
