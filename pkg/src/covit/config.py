"""Flat key=value run configuration.

One documented schema covers sketching, model, training, simulation and
dataset handling.  Values from a config file are overridden by flags, and
the fully resolved set is written next to every run's outputs for
provenance.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from .model import ModelConfig
from .sketcher import SketchConfig
from .synthlab import SimConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Unknown key, malformed value or inconsistent configuration."""


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple[Any, Any]] = {
    "seed": (int, 0),
    "sketch.k": (int, 16),
    "sketch.f": (int, 256),
    "sketch.n": (int, 256),
    "sketch.hash_seed": (int, 0),
    "model.L": (int, 4),
    "model.h": (int, 18),
    "model.d_k": (int, 96),
    "model.d_v": (int, 96),
    "model.d_ff": (int, 1536),
    "model.dropout_rate": (float, 0.2),
    "train.batch_size": (int, 32),
    "train.lr": (float, 1e-4),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.weight_decay": (float, 1e-4),
    "train.max_epochs": (int, 100),
    "train.patience": (int, 10),
    "data.per_class_cap": (int, 1024),
    "data.min_class_size": (int, 1),
    "data.val_count": (int, 0),
    "sim.ref_length": (int, 30000),
    "sim.num_lineages": (int, 8),
    "sim.lineage_divergence": (int, 25),
    "sim.within_lineage_noise": (int, 3),
    "sim.samples_per_lineage": (int, 64),
    "sim.indel_rate": (float, 0.0),
}


class RunConfig:
    """Resolved configuration: schema defaults, then file, then overrides."""

    def __init__(self, values: dict[str, Any]):
        self.values = values

    @classmethod
    def resolve(
        cls,
        config_file: str | Path | None = None,
        overrides: dict[str, Any] | None = None,
    ) -> "RunConfig":
        values = {key: default for key, (_, default) in SCHEMA.items()}
        if config_file:
            values.update(parse_config_text(Path(config_file).read_text()))
        for key, raw in (overrides or {}).items():
            values[key] = _convert(key, raw)
        return cls(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def resolved_text(self) -> str:
        lines = [f"{k}={self.values[k]!r}" if isinstance(self.values[k], float)
                 else f"{k}={self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def sketch_config(self) -> SketchConfig:
        try:
            return SketchConfig(
                k=self["sketch.k"],
                f=self["sketch.f"],
                n=self["sketch.n"],
                hash_seed=self["sketch.hash_seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self, num_classes: int) -> ModelConfig:
        try:
            return ModelConfig(
                num_classes=num_classes,
                L=self["model.L"],
                d_model=self["sketch.f"],  # fragment length is the model width
                h=self["model.h"],
                d_k=self["model.d_k"],
                d_v=self["model.d_v"],
                d_ff=self["model.d_ff"],
                n_fragments=self["sketch.n"],
                f=self["sketch.f"],
                dropout_rate=self["model.dropout_rate"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=self["train.batch_size"],
                lr=self["train.lr"],
                beta1=self["train.beta1"],
                beta2=self["train.beta2"],
                eps=self["train.eps"],
                weight_decay=self["train.weight_decay"],
                max_epochs=self["train.max_epochs"],
                patience=self["train.patience"],
                seed=self["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sim_config(self) -> SimConfig:
        try:
            return SimConfig(
                ref_length=self["sim.ref_length"],
                num_lineages=self["sim.num_lineages"],
                lineage_divergence=self["sim.lineage_divergence"],
                within_lineage_noise=self["sim.within_lineage_noise"],
                samples_per_lineage=self["sim.samples_per_lineage"],
                indel_rate=self["sim.indel_rate"],
                seed=self["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _convert(key: str, raw: Any) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser, _ = SCHEMA[key]
    if parser is bool:
        parser = _parse_bool
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse 'key=value' lines; '#' starts a comment; unknown keys fail."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        out[key] = _convert(key, raw)
    return out
