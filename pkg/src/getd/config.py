"""Flat ``key = value`` experiment configuration files.

Blank lines and ``#`` comments are ignored. Lists (``ranks``,
``reshape_shape``, ``synth_ratios``) are comma-separated. Unknown keys are
rejected.

Keys
----
model            getd | ntucker | ncp
data_dir         directory with train.txt / valid.txt / test.txt
synth_entities, synth_relations, synth_arity, synth_facts, synth_seed, synth_ratios
                 generate a rank-1 synthetic KB instead of reading data_dir
entities, relations, arity
                 vocabulary sizes for ``params`` when no data is given
d_e, d_r, k, ranks, reshape_shape, init_seed
                 model shape and initialisation
learning_rate, lr_decay, batch_size, max_epochs, patience, dropout,
weight_decay, seed, eval_every, early_stopping, workers
                 training
output_dir       where checkpoints, logs and reports go (relative paths are
                 resolved against $GETD_OUTPUT_ROOT when set)
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError
from .models import MODEL_KINDS
from .training import TrainConfig

OUTPUT_ROOT_ENV = "GETD_OUTPUT_ROOT"


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    model: str = "getd"
    data_dir: str | None = None
    synth_entities: int | None = None
    synth_relations: int | None = None
    synth_arity: int | None = None
    synth_facts: int | None = None
    synth_seed: int = 0
    synth_ratios: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    entities: int | None = None
    relations: int | None = None
    arity: int | None = None
    d_e: int = 50
    d_r: int | None = None
    k: int | None = None
    ranks: list[int] | None = None
    reshape_shape: list[int] | None = None
    init_seed: int = 0
    learning_rate: float = 0.01
    lr_decay: float = 1.0
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    dropout: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 1
    early_stopping: bool = True
    workers: int = 1
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")

    @property
    def synthetic(self) -> bool:
        return self.synth_facts is not None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience_epochs=self.patience,
            dropout=self.dropout,
            weight_decay=self.weight_decay,
            seed=self.seed,
            eval_every=self.eval_every,
            early_stopping=self.early_stopping,
            workers=self.workers,
        )

    def resolved_output_dir(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_CONVERTERS = {
    "model": str,
    "data_dir": str,
    "output_dir": str,
    "synth_ratios": _floats,
    "ranks": _ints,
    "reshape_shape": _ints,
    "learning_rate": float,
    "lr_decay": float,
    "dropout": float,
    "weight_decay": float,
    "early_stopping": _bool,
}


def _convert(key: str, text: str):
    conv = _CONVERTERS.get(key, int)
    try:
        return conv(text.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {text!r} ({exc})") from None


def parse_config(text: str, overrides: dict[str, str] | None = None, source: str = "<config>") -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict[str, object] = {}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value
    raw.update(overrides or {})
    for key, value in raw.items():
        if key not in known:
            raise ConfigurationError(f"{source}: unknown config key {key!r}")
        values[key] = _convert(key, value)
    return ExperimentConfig(**values)


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), overrides, str(path))


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes)
