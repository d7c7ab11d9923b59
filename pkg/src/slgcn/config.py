"""Experiment configuration: flat "section.key = value" text files.

Every key is registered with a type and default; unknown keys are hard
errors. serialize(parse(text)) is canonical and idempotent, which the
pipeline relies on for artifact lineage hashes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .errors import ConfigError

_TRUE = ("true", "yes", "1", "on")
_FALSE = ("false", "no", "0", "off")


def _cast_bool(s: str) -> bool:
    low = s.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _cast_ratios(s: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated ratios, got {s!r}")
    return tuple(float(p) for p in parts)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _choice(options):
    def cast(s: str) -> str:
        if s not in options:
            raise ConfigError(f"expected one of {options}, got {s!r}")
        return s

    return cast


# key -> (caster, default); registry order is the canonical file order
KEYS: dict[str, tuple] = {
    "dataset.path": (str, ""),
    "dataset.synthetic": (_choice(("none", "planted", "lastfm")), "none"),
    "dataset.synth_users": (int, 200),
    "dataset.synth_items": (int, 100),
    "dataset.synth_interactions": (int, 2000),
    "dataset.synth_clusters": (int, 4),
    "dataset.synth_affinity": (float, 0.85),
    "dataset.synth_ratings": (_cast_bool, False),
    "dataset.columns": (str, "user,item,weight"),
    "dataset.delimiter": (_choice(("auto", "tab", "comma")), "auto"),
    "dataset.has_header": (_cast_bool, False),
    "dataset.rating_threshold": (float, 4.0),
    "split.ratios": (_cast_ratios, (0.8, 0.1, 0.1)),
    "similarity.metric": (_choice(("da-l1", "da-l2", "da-kl")), "da-l1"),
    "similarity.epsilon": (float, 1e-3),
    "sampler.strategy": (_choice(("random", "walk", "1ord", "2ord", "da")), "da"),
    "sampler.k": (int, 25),
    "sampler.mode": (_choice(("topk", "importance")), "topk"),
    "sampler.walks": (int, 1000),
    "sampler.walk_length": (int, 4),
    "features.source": (_choice(("seeded", "file")), "seeded"),
    "features.dim": (int, 128),
    "features.path": (str, ""),
    "model.head": (_choice(("std", "lin", "vcos", "cos")), "std"),
    "model.repr_dim": (int, 256),
    "model.head_width": (int, 512),
    "model.head_layers": (int, 3),
    "model.trainable_features": (_cast_bool, False),
    "model.dtype": (_choice(("float32", "float64")), "float32"),
    "train.epochs": (int, 200),
    "train.warmup_batch_size": (int, 100),
    "train.batch_size": (int, 10240),
    "train.warmup_batches": (int, 100),
    "train.neg_ratio": (int, 4),
    "train.lr": (float, 0.01),
    "train.l2": (float, 1e-5),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.adam_eps": (float, 1e-8),
    "train.early_stop": (_cast_bool, True),
    "train.patience": (int, 10),
    "protocol.negatives": (int, 50),
    "protocol.ndcg_k": (int, 10),
    "protocol.auc_pool": (_choice(("pooled", "lists")), "pooled"),
    "run.output_dir": (str, "out"),
    "run.seed": (int, 7),
}

WEIGHT_PREFIX = "similarity.weight."


@dataclass
class ExperimentConfig:
    values: dict[str, object]
    slice_weights: dict[tuple[str, str], float] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        for key, value in overrides.items():
            key = key.replace("__", ".")
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            vals[key] = value
        return ExperimentConfig(vals, dict(self.slice_weights))


def default_config() -> ExperimentConfig:
    return ExperimentConfig({k: default for k, (_, default) in KEYS.items()})


def parse(text: str) -> ExperimentConfig:
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith(WEIGHT_PREFIX):
            parts = key[len(WEIGHT_PREFIX) :].split(".")
            if len(parts) != 2:
                raise ConfigError(
                    f"line {lineno}: weight keys look like {WEIGHT_PREFIX}<relation>.<type>"
                )
            w = float(value)
            if w < 0:
                raise ConfigError(f"line {lineno}: weights must be >= 0")
            cfg.slice_weights[(parts[0], parts[1])] = w
            continue
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        caster, _ = KEYS[key]
        try:
            cfg.values[key] = caster(value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def parse_file(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def serialize(cfg: ExperimentConfig) -> str:
    lines = [f"{key} = {_fmt(cfg.values[key])}" for key in KEYS]
    for (rel, tgt), w in sorted(cfg.slice_weights.items()):
        lines.append(f"{WEIGHT_PREFIX}{rel}.{tgt} = {w!r}")
    return "\n".join(lines) + "\n"


def validate(cfg: ExperimentConfig) -> None:
    """Checks that need filesystem context or cross-key consistency."""
    if cfg["dataset.synthetic"] == "none" and not cfg["dataset.path"]:
        raise ConfigError("dataset.path is required unless dataset.synthetic is set")
    if cfg["dataset.synthetic"] == "none" and not os.path.exists(cfg["dataset.path"]):
        raise ConfigError(f"dataset file not found: {cfg['dataset.path']}")
    if cfg["features.source"] == "file":
        if not cfg["features.path"]:
            raise ConfigError("features.path is required with features.source = file")
        if not os.path.exists(cfg["features.path"]):
            raise ConfigError(f"feature file not found: {cfg['features.path']}")
    if cfg["sampler.k"] < 1:
        raise ConfigError("sampler.k must be >= 1")
    if cfg["features.dim"] < 1:
        raise ConfigError("features.dim must be >= 1")
    ratios = cfg["split.ratios"]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split.ratios must be non-negative and sum to 1")

    cols = [c.strip() for c in str(cfg["dataset.columns"]).split(",")]
    if "user" not in cols or "item" not in cols:
        raise ConfigError("dataset.columns must include 'user' and 'item'")
