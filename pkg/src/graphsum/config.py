"""Configuration dataclasses with layered loading (defaults < file < flags)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    vocab_size: int = 0
    d_model: int = 64
    d_ff: int = 256
    heads: int = 4
    token_layers: int = 2
    graph_layers: int = 1
    decoder_layers: int = 2
    sigma: float = 2.0
    dropout: float = 0.1
    max_paragraphs: int = 40
    max_paragraph_tokens: int = 70
    max_summary_tokens: int = 150
    ln_eps: float = 1e-8
    # "interpolate" keeps the central position trainable; "round" snaps to the nearest row.
    graph_row: str = "interpolate"
    ablate_graph_enc: bool = False
    ablate_graph_dec: bool = False

    def validate(self) -> "ModelConfig":
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.graph_row not in ("interpolate", "round"):
            raise ConfigError(f"graph_row must be 'interpolate' or 'round', got {self.graph_row!r}")
        for name in ("d_model", "d_ff", "heads", "max_paragraphs", "max_paragraph_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Full-size settings: 256 hidden, 1024 feed-forward, 8 heads, 6/2/8 layers."""
        base = dict(d_model=256, d_ff=1024, heads=8, token_layers=6, graph_layers=2, decoder_layers=8)
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainConfig:
    lr_factor: float = 1.0
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.998
    adam_eps: float = 1e-9
    clip_norm: float = 2.0
    accumulation: int = 4
    batch_size: int = 1
    label_smoothing: float = 0.1
    max_steps: int = 2000
    seed: int = 1
    checkpoint_every: int = 500
    log_every: int = 50

    def validate(self) -> "TrainConfig":
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.accumulation < 1 or self.batch_size < 1:
            raise ConfigError("accumulation and batch_size must be >= 1")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        return self

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        base = dict(lr_factor=2.0, warmup_steps=8000, max_steps=500_000)
        base.update(overrides)
        return cls(**base)


@dataclass
class DecodeConfig:
    beam: int = 5
    alpha: float = 0.6
    max_len: int = 150
    min_len: int = 0
    block_trigrams: bool = True

    def validate(self) -> "DecodeConfig":
        if self.beam < 1:
            raise ConfigError("beam must be >= 1")
        if self.max_len < 1 or self.min_len < 0:
            raise ConfigError("invalid decode length limits")
        return self


@dataclass
class GraphConfig:
    type: str = "similarity"
    threshold: float = 0.0
    lda_topics: int = 10
    lda_iterations: int = 500
    lda_alpha: float | None = None
    lda_beta: float = 0.01
    lda_seed: int = 0
    markers_path: str | None = None
    entity_min_len: int = 1


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    vocab_min_freq: int = 1
    vocab_max_size: int = 30000

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "Config":
        cfg = cls()
        merge(cfg, obj)
        return cfg


def _apply(target, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(target)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {where}{key}")
        current = getattr(target, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be an object")
            _apply(current, value, f"{where}{key}.")
        else:
            setattr(target, key, value)


def merge(cfg: Config, values: dict) -> Config:
    _apply(cfg, values, "")
    return cfg


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> Config:
    cfg = Config()
    if path is not None:
        try:
            merge(cfg, json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if overrides:
        merge(cfg, overrides)
    cfg.model.validate()
    cfg.train.validate()
    cfg.decode.validate()
    return cfg


def model_config_from_dict(obj: dict) -> ModelConfig:
    cfg = ModelConfig()
    _apply(cfg, obj, "model.")
    return cfg.validate()
