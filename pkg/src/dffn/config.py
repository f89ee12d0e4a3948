"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from dffn.corpus import TaskVariant
from dffn.errors import ConfigError
from dffn.fusion import DecodeThresholds
from dffn.knowledge import KnowledgeConfig
from dffn.nnkernel import PoolSpec, RReluConfig
from dffn.sentence_encoder import SentenceCnnConfig

ABLATIONS = ("none", "no_hcf", "no_cnn")


@dataclass
class Config:
    variant: str = "Binary2016"
    # sentence model
    max_tokens: int = 100
    embedding_dim: int = 300
    conv1_filters: int = 8
    conv1_kernel: tuple = (5, 5)
    conv1_stride: tuple = (1, 1)
    pool1_window: tuple = (3, 3)
    pool1_stride: tuple = (3, 3)
    conv2_filters: int = 16
    conv2_kernel: tuple = (3, 3)
    conv2_stride: tuple = (1, 1)
    pool2_window: tuple = (3, 3)
    pool2_stride: tuple = (3, 3)
    sentence_dim: int = 270
    # fusion network
    fusion_hidden: tuple = (300, 50)
    rrelu_lower: float = 0.125
    rrelu_upper: float = 0.333
    rrelu_eval_rule: str = "mean_slope"
    # training
    learning_rate: float = 0.01
    adagrad_epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    ablation: str = "none"
    # decoding
    binary_cut: float = 0.0
    three_class_low: float = -1.0 / 3.0
    three_class_high: float = 1.0 / 3.0
    # hand-crafted features
    knowledge_k: int = 100
    edit_threshold: float = 0.8
    top_concepts: int = 10
    hash_seed: int = 0
    trigram_dim: int = 64
    trigram_buckets: int = 2048
    embedder_seed: int = 0

    def __post_init__(self):
        self.variant = TaskVariant.parse(self.variant).value
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        for f in fields(self):
            if f.type == "tuple":
                setattr(self, f.name, tuple(int(v) for v in getattr(self, f.name)))
        try:
            self.sentence_cnn().shapes()
            self.rrelu()
            self.thresholds()
            self.knowledge()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def task_variant(self) -> TaskVariant:
        return TaskVariant(self.variant)

    def rrelu(self) -> RReluConfig:
        return RReluConfig(self.rrelu_lower, self.rrelu_upper, self.rrelu_eval_rule)

    def sentence_cnn(self) -> SentenceCnnConfig:
        return SentenceCnnConfig(
            max_tokens=self.max_tokens,
            embedding_dim=self.embedding_dim,
            conv1_filters=self.conv1_filters,
            conv1_kernel=self.conv1_kernel,
            conv1_stride=self.conv1_stride,
            pool1=PoolSpec(self.pool1_window, self.pool1_stride),
            conv2_filters=self.conv2_filters,
            conv2_kernel=self.conv2_kernel,
            conv2_stride=self.conv2_stride,
            pool2=PoolSpec(self.pool2_window, self.pool2_stride),
            rrelu=self.rrelu(),
            output_dim=self.sentence_dim,
        )

    def thresholds(self) -> DecodeThresholds:
        return DecodeThresholds(self.binary_cut, self.three_class_low, self.three_class_high)

    def knowledge(self) -> KnowledgeConfig:
        return KnowledgeConfig(self.knowledge_k, self.edit_threshold, self.top_concepts)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(types[key], value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text, str(path))

    def dumps(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(kind: str, value: str):
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "tuple":
        return tuple(int(v) for v in value.replace("x", ",").split(",") if v.strip())
    return value


MICRO = Config(
    max_tokens=12,
    embedding_dim=8,
    conv1_filters=2,
    conv1_kernel=(3, 3),
    pool1_window=(2, 2),
    pool1_stride=(2, 2),
    conv2_filters=3,
    conv2_kernel=(2, 2),
    pool2_window=(2, 2),
    pool2_stride=(2, 2),
    sentence_dim=8,
    fusion_hidden=(12, 6),
)
