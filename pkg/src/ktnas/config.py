"""Run configuration: one YAML file, validated on load, with dotted overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dataset import FEATURES


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    interactions: str | None = None  # JSONL/CSV log; None -> synthetic
    prepared: str | None = None  # directory written by `prepare`
    n_students: int = 2000
    n_exercises: int = 50
    window_length: int = 100
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    fold: int = 0
    features: tuple[str, ...] = FEATURES


@dataclass
class ModelSection:
    n_blocks: int = 4
    d_model: int = 128
    d_ff: int = 128
    n_heads: int = 8
    dropout: float = 0.1
    depthwise_conv: bool = False


@dataclass
class TrainSection:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 128
    warmup: int = 4000
    checkpoint_every: int = 1


def _supernet_defaults() -> TrainSection:
    return TrainSection(epochs=60, warmup=8000)


@dataclass
class SearchSection:
    pop: int = 20
    gen: int = 30
    reduction: bool = True
    budget: int | None = None
    eval_batches: int | None = 64


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    threads: int = 1
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    supernet: TrainSection = field(default_factory=_supernet_defaults)
    retrain: TrainSection = field(default_factory=TrainSection)
    search: SearchSection = field(default_factory=SearchSection)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def validate(self) -> "RunConfig":
        problems = []
        d, m, s = self.data, self.model, self.search
        if d.window_length < 2:
            problems.append(f"data.window_length: must be >= 2, got {d.window_length}")
        if len(d.ratios) != 3 or abs(sum(d.ratios) - 1.0) > 1e-9 or min(d.ratios) <= 0:
            problems.append(f"data.ratios: three positive numbers summing to 1, got {list(d.ratios)}")
        if not 0 <= d.fold < 5:
            problems.append(f"data.fold: must be in 0..4, got {d.fold}")
        unknown = [f for f in d.features if f not in FEATURES]
        if unknown or not d.features:
            problems.append(f"data.features: unknown or empty {unknown} (choose from {list(FEATURES)})")
        if d.n_students < 5 or d.n_exercises < 1:
            problems.append("data.n_students must be >= 5 and data.n_exercises >= 1")
        for name in ("n_blocks", "d_model", "d_ff", "n_heads"):
            if getattr(m, name) < 1:
                problems.append(f"model.{name}: must be positive")
        if m.n_heads >= 1 and m.d_model % m.n_heads:
            problems.append(f"model.d_model ({m.d_model}) must be divisible by model.n_heads ({m.n_heads})")
        if not 0.0 <= m.dropout < 1.0:
            problems.append(f"model.dropout: must be in [0, 1), got {m.dropout}")
        for sec in ("supernet", "retrain"):
            t = getattr(self, sec)
            if t.epochs < 0 or t.batch_size < 1 or t.warmup < 1 or t.lr < 0 or t.checkpoint_every < 1:
                problems.append(f"{sec}: epochs >= 0, batch_size >= 1, warmup >= 1, lr >= 0, checkpoint_every >= 1")
        if s.pop < 2:
            problems.append(f"search.pop: must be >= 2, got {s.pop}")
        if s.gen < 0:
            problems.append(f"search.gen: must be >= 0, got {s.gen}")
        if s.budget is not None and s.budget < 1:
            problems.append("search.budget: must be positive or null")
        if self.threads < 1:
            problems.append("threads: must be >= 1")
        if problems:
            raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
        return self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(base, payload: Any, where: str):
    cls = type(base)
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(payload).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in payload.items():
        key = f"{where}.{name}" if where else name
        current = getattr(base, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(current, value, key)
        else:
            kwargs[name] = _coerce(value, current, key)
    return dataclasses.replace(base, **kwargs)


def _coerce(value, default, key: str):
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(value)
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def apply_overrides(payload: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    payload = dict(payload)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        node = payload
        for p in parts[:-1]:
            child = node.get(p)
            node[p] = dict(child) if isinstance(child, dict) else {}
            node = node[p]
        node[parts[-1]] = yaml.safe_load(raw)
    return payload


def load_config(path: str | Path | None = None, overrides=()) -> RunConfig:
    payload = {}
    if path is not None:
        try:
            payload = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    payload = apply_overrides(payload, overrides)
    return _build(RunConfig(), payload, "").validate()


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
