"""Metadata encoding, the 601-d fusion input, the second-stage scorer, label decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dffn.corpus import AuthorStats, CategoryStats, Label, LabelCounts, TaskVariant
from dffn.errors import ShapeError
from dffn.hashing import stable_hash
from dffn.nnkernel import DEFAULT_DTYPE, EVAL, FcLayer, Mode, RReLU, RReluConfig, Sequential

METADATA_LAYOUT_VERSION = 1
HASH_BUCKETS = 7
BLOCK_DIM = 4 + HASH_BUCKETS
METADATA_DIM = 3 * BLOCK_DIM
PAIR_DIM = 540
FUSION_DIM = PAIR_DIM + 28 + METADATA_DIM


def metadata_block(identifier: str, counts: LabelCounts | None, hash_seed: int = 0) -> np.ndarray:
    """[log1p total, log1p good, log1p potential, log1p bad, hashed one-hot * log1p total]."""
    block = np.zeros(BLOCK_DIM)
    if counts is None or counts.total == 0:
        return block
    scale = math.log1p(counts.total)
    block[:4] = [scale, math.log1p(counts.good), math.log1p(counts.potential), math.log1p(counts.bad)]
    block[4 + stable_hash(identifier, hash_seed) % HASH_BUCKETS] = scale
    return block


def encode_metadata(category: str, q_author: str, a_author: str,
                    authors: AuthorStats, categories: CategoryStats, hash_seed: int = 0) -> np.ndarray:
    """Three 11-slot blocks: question category, question author, answer author."""
    return np.concatenate([
        metadata_block(category, categories.get(category), hash_seed),
        metadata_block(q_author, authors.get(q_author), hash_seed),
        metadata_block(a_author, authors.get(a_author), hash_seed),
    ])


def fuse(pair, hcf, meta, pair_dim: int = PAIR_DIM) -> np.ndarray:
    """Concatenate [pair | hcf | metadata]; each segment length is checked."""
    for name, seg, size in (("pair", pair, pair_dim), ("hcf", hcf, 28), ("metadata", meta, METADATA_DIM)):
        if np.shape(seg)[-1] != size:
            raise ShapeError(f"{name} segment has length {np.shape(seg)[-1]}, expected {size}")
    return np.concatenate([pair, hcf, meta], axis=-1)


class FusionMlp(Sequential):
    """FC -> RReLU per hidden size, then a linear FC to one score."""

    @classmethod
    def build(cls, input_dim: int, hidden=(300, 50), rrelu: RReluConfig | None = None,
              rng=None, dtype=DEFAULT_DTYPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        rrelu = rrelu or RReluConfig()
        layers, width = [], input_dim
        for h in hidden:
            layers += [FcLayer.init(rng, width, h, dtype), RReLU(rrelu)]
            width = h
        layers.append(FcLayer.init(rng, width, 1, dtype))
        return cls(layers)

    def astype(self, dtype):
        return FusionMlp([layer.astype(dtype) for layer in self.layers])

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in


def score(x, mlp: FusionMlp, mode: Mode = EVAL) -> float:
    return float(mlp.forward(np.asarray(x)[None], mode)[0, 0])


@dataclass(frozen=True)
class DecodeThresholds:
    binary_cut: float = 0.0
    low: float = -1.0 / 3.0
    high: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("three-class thresholds need low < high")


def decode_label(value: float, variant: TaskVariant, thresholds: DecodeThresholds = DecodeThresholds()) -> Label:
    if TaskVariant(variant) is TaskVariant.BINARY_2016:
        return Label.GOOD if value > thresholds.binary_cut else Label.BAD
    if value > thresholds.high:
        return Label.GOOD
    if value < thresholds.low:
        return Label.BAD
    return Label.POTENTIALLY_USEFUL
