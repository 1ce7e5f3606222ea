"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every key maps onto one field
of :class:`ExperimentConfig` (possibly inside a nested section); unknown
keys, malformed values and missing required keys raise
:class:`~freqcl.errors.ConfigError` carrying the line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import DataSource, DatasetSpec
from .errors import ConfigError
from .model import AggregatorVariant, BackboneConfig, ScalingMode
from .rehearsal import StrategyConfig, StrategyKind
from .wavelet import Selection

REQUIRED_KEYS = ("dataset",)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    tasks: int = 2
    class_order: tuple | None = None
    buffer_capacity: int = 125
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    backbone: BackboneConfig = field(default_factory=lambda: BackboneConfig(num_classes=4))
    variant: AggregatorVariant = AggregatorVariant.MUTUAL
    selection: Selection = Selection.FUSE_NO_LL
    seed: int = 0
    epochs: int = 5
    lr: float = 0.03
    momentum: float = 0.0
    weight_decay: float = 0.0
    batch_size: int = 32
    replay_batch_size: int = 32
    freeze_fuser: bool = True
    precision: str = "float32"
    output_dir: str = "runs/default"

    def __post_init__(self):
        n_classes = self.dataset.num_classes
        if self.tasks < 1 or n_classes % self.tasks:
            raise ConfigError(f"{self.tasks} tasks do not divide {n_classes} classes", key="tasks")
        if self.class_order is not None and sorted(self.class_order) != list(range(n_classes)):
            raise ConfigError(f"must be a permutation of 0..{n_classes - 1}", key="class_order")
        if self.backbone.num_classes != n_classes:
            raise ConfigError(f"backbone has {self.backbone.num_classes} outputs for {n_classes} classes",
                              key="backbone.num_classes")
        if self.buffer_capacity < 0:
            raise ConfigError("must be >= 0", key="buffer_capacity")
        if self.epochs < 1:
            raise ConfigError("must be >= 1", key="epochs")
        if self.lr < 0:
            raise ConfigError("must be >= 0", key="lr")
        if self.batch_size < 2 or self.replay_batch_size < 2:
            raise ConfigError("batch sizes must be >= 2 (batch statistics)", key="batch_size")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("must be float32 or float64", key="precision")


def _bool(text):
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _optional(parse):
    def inner(text):
        return None if text.lower() in ("", "none", "default") else parse(text)
    return inner


def _fmt_seq(values):
    return "none" if values is None else ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return value.value
    return str(value)


# flat key -> (section or None, field name, parser)
KEYS = {
    "dataset": ("dataset", "source", DataSource),
    "data_path": ("dataset", "path", str),
    "classes": ("dataset", "classes", int),
    "samples_per_class": ("dataset", "samples_per_class", int),
    "test_samples_per_class": ("dataset", "test_samples_per_class", int),
    "image_size": ("dataset", "image_size", int),
    "data_seed": ("dataset", "seed", int),
    "norm_mean": ("dataset", "mean", _optional(_floats)),
    "norm_std": ("dataset", "std", _optional(_floats)),
    "tasks": (None, "tasks", int),
    "class_order": (None, "class_order", _optional(_ints)),
    "buffer_capacity": (None, "buffer_capacity", int),
    "strategy": ("strategy", "kind", StrategyKind),
    "alpha": ("strategy", "alpha", float),
    "beta": ("strategy", "beta", float),
    "plastic_decay": ("strategy", "plastic_decay", float),
    "stable_decay": ("strategy", "stable_decay", float),
    "plastic_update_prob": ("strategy", "plastic_update_prob", float),
    "stable_update_prob": ("strategy", "stable_update_prob", float),
    "consistency_weight": ("strategy", "consistency_weight", float),
    "base_width": ("backbone", "base_width", int),
    "blocks_per_stage": ("backbone", "blocks_per_stage", _ints),
    "scaling_mode": ("backbone", "scaling_mode", ScalingMode),
    "variant": (None, "variant", AggregatorVariant),
    "selection": (None, "selection", Selection),
    "seed": (None, "seed", int),
    "epochs": (None, "epochs", int),
    "lr": (None, "lr", float),
    "momentum": (None, "momentum", float),
    "weight_decay": (None, "weight_decay", float),
    "batch_size": (None, "batch_size", int),
    "replay_batch_size": (None, "replay_batch_size", int),
    "freeze_fuser": (None, "freeze_fuser", _bool),
    "precision": (None, "precision", str),
    "output_dir": (None, "output_dir", str),
}

FIELD_PATHS = {key: (f"{sec}.{name}" if sec else name) for key, (sec, name, _) in KEYS.items()}


def _split_lines(text):
    """Yield ``(line_number, key, value)`` for each assignment."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        yield lineno, key, value


def config_from_pairs(pairs, require=REQUIRED_KEYS):
    """Build a config from ``[(line, key, value_text), ...]``."""
    sections = {"dataset": {}, "strategy": {}, "backbone": {}}
    top = {}
    lines = {}
    for lineno, key, value in pairs:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", line=lineno, key=key)
        section, name, parse = KEYS[key]
        try:
            parsed = parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", line=lineno, key=key) from None
        (sections[section] if section else top)[name] = parsed
        lines[key] = lineno
    for key in require:
        if key not in lines:
            raise ConfigError("missing required key", key=key)

    def line_for(path):
        for key, fp in FIELD_PATHS.items():
            if fp == path and key in lines:
                return lines[key]
        return None

    try:
        dataset = DatasetSpec(**sections["dataset"])
        strategy = StrategyConfig(**sections["strategy"])
        backbone = BackboneConfig(num_classes=dataset.num_classes, **sections["backbone"])
        return ExperimentConfig(dataset=dataset, strategy=strategy, backbone=backbone, **top)
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            raise ConfigError(exc.message, line=line_for(exc.key), key=exc.key) from None
        raise


def parse_config_text(text, overrides=()):
    pairs = list(_split_lines(text))
    if overrides:
        pairs = merge_overrides(pairs, overrides)
    return config_from_pairs(pairs)


def parse_config(path, overrides=()):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides)


def merge_overrides(pairs, overrides):
    """Replace or append ``key=value`` overrides (reported as line 0)."""
    merged = {key: (line, key, value) for line, key, value in pairs}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", line=0)
        key, value = (part.strip() for part in item.split("=", 1))
        merged[key] = (0, key, value)
    return list(merged.values())


def config_pairs(config):
    """Flat ``{key: value_text}`` for every key."""
    out = {}
    for key, (section, name, _) in KEYS.items():
        value = getattr(getattr(config, section) if section else config, name)
        if key in ("blocks_per_stage", "class_order", "norm_mean", "norm_std"):
            out[key] = _fmt_seq(value)
        else:
            out[key] = _fmt(value)
    return out


def format_config(config):
    return "".join(f"{key} = {value}\n" for key, value in config_pairs(config).items())


def with_overrides(config, **values):
    """Copy of ``config`` with flat keys replaced, revalidated."""
    pairs = config_pairs(config)
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", key=key)
        pairs[key] = _fmt_seq(value) if isinstance(value, (tuple, list)) else _fmt(value)
    return config_from_pairs([(0, k, v) for k, v in pairs.items()])


__all__ = [
    "ExperimentConfig",
    "KEYS",
    "config_pairs",
    "format_config",
    "parse_config",
    "parse_config_text",
    "with_overrides",
]
