"""Word embeddings, fixed-size sentence matrices, and the CNN sentence model."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from dffn.errors import FormatError, ShapeError
from dffn.nnkernel import (
    DEFAULT_DTYPE,
    EVAL,
    ConvLayer,
    FcLayer,
    Flatten,
    MaxPool,
    Mode,
    PoolSpec,
    RReLU,
    RReluConfig,
    Sequential,
    conv_output_hw,
)

logger = logging.getLogger(__name__)


class EmbeddingTable:
    """Immutable word -> vector map. Row 0 of ``matrix`` is the zero (OOV/padding) row."""

    def __init__(self, words: list[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=DEFAULT_DTYPE)
        if vectors.ndim != 2 or len(words) != vectors.shape[0]:
            raise ShapeError(f"{len(words)} words but vectors of shape {vectors.shape}")
        self.dim = vectors.shape[1]
        self.index = {w: i + 1 for i, w in enumerate(words)}
        self.matrix = np.vstack([np.zeros((1, self.dim), dtype=DEFAULT_DTYPE), vectors])
        self.matrix.setflags(write=False)

    def __len__(self):
        return len(self.index)

    def __contains__(self, word):
        return word in self.index

    def vector(self, word: str) -> np.ndarray:
        return self.matrix[self.index.get(word, 0)]

    def oov_rate(self, tokens: Iterable[str]) -> float:
        tokens = list(tokens)
        if not tokens:
            return 0.0
        return sum(t not in self.index for t in tokens) / len(tokens)


def load_embeddings(source: TextIO | str | os.PathLike, expected_d: int | None = None) -> EmbeddingTable:
    """Read GloVe-style text: a word followed by ``d`` floats per line.

    Duplicate words keep their first vector.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as f:
            return load_embeddings(f, expected_d)
    words, rows, seen = [], [], set()
    d = expected_d
    for lineno, line in enumerate(source, start=1):
        parts = line.rstrip("\n").rstrip().split(" ")
        if not parts or parts == [""]:
            continue
        word, values = parts[0], parts[1:]
        if d is None:
            d = len(values)
        if len(values) != d:
            raise FormatError(f"expected {d} floats, found {len(values)}", lineno)
        try:
            vec = [float(v) for v in values]
        except ValueError:
            raise FormatError(f"non-numeric value in vector for {word!r}", lineno) from None
        if word in seen:
            continue
        seen.add(word)
        words.append(word)
        rows.append(vec)
    if d is None:
        d = 0
    return EmbeddingTable(words, np.array(rows, dtype=DEFAULT_DTYPE).reshape(len(rows), d))


def _texts(tokens) -> list[str]:
    return [getattr(t, "text", t) for t in tokens]


@dataclass(frozen=True)
class SentenceMatrix:
    matrix: np.ndarray
    effective_length: int


def token_ids(tokens, table: EmbeddingTable, max_tokens: int) -> np.ndarray:
    """Embedding-row ids for the first ``max_tokens`` tokens, zero-padded."""
    ids = np.zeros(max_tokens, dtype=np.int64)
    texts = _texts(tokens)[:max_tokens]
    ids[: len(texts)] = [table.index.get(t, 0) for t in texts]
    return ids


def build_sentence_matrix(tokens, table: EmbeddingTable, max_tokens: int) -> SentenceMatrix:
    """Truncate to ``max_tokens`` rows or zero-pad up to it; OOV rows are zero."""
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    ids = token_ids(tokens, table, max_tokens)
    return SentenceMatrix(table.matrix[ids].copy(), min(len(tokens), max_tokens))


@dataclass(frozen=True)
class SentenceCnnConfig:
    max_tokens: int = 100
    embedding_dim: int = 300
    conv1_filters: int = 8
    conv1_kernel: tuple[int, int] = (5, 5)
    conv1_stride: tuple[int, int] = (1, 1)
    pool1: PoolSpec = PoolSpec((3, 3), (3, 3))
    conv2_filters: int = 16
    conv2_kernel: tuple[int, int] = (3, 3)
    conv2_stride: tuple[int, int] = (1, 1)
    pool2: PoolSpec = PoolSpec((3, 3), (3, 3))
    rrelu: RReluConfig = field(default_factory=RReluConfig)
    output_dim: int = 270

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shapes after each stage; raises ShapeError if the stack does not fit."""
        shape = (1, self.max_tokens, self.embedding_dim)
        out = [shape]
        stages = [
            ("conv1", self.conv1_filters, self.conv1_kernel, self.conv1_stride),
            ("pool1", None, self.pool1.window, self.pool1.stride),
            ("conv2", self.conv2_filters, self.conv2_kernel, self.conv2_stride),
            ("pool2", None, self.pool2.window, self.pool2.stride),
        ]
        for name, filters, kernel, stride in stages:
            c, h, w = shape
            if h < kernel[0] or w < kernel[1]:
                raise ShapeError(f"{name} window {kernel} does not fit input plane {(h, w)}")
            shape = (filters or c, *conv_output_hw(h, w, kernel, stride))
            out.append(shape)
        return out

    @property
    def flatten_dim(self) -> int:
        return int(np.prod(self.shapes()[-1]))


class SentenceCnn(Sequential):
    """conv1 -> pool1 -> RReLU -> conv2 -> pool2 -> RReLU -> flatten -> FC -> RReLU."""

    def __init__(self, config: SentenceCnnConfig, layers):
        super().__init__(layers)
        self.config = config

    @classmethod
    def build(cls, config: SentenceCnnConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        flat = config.flatten_dim  # validates geometry
        layers = [
            ConvLayer.init(rng, 1, config.conv1_filters, config.conv1_kernel, config.conv1_stride, dtype),
            MaxPool(config.pool1),
            RReLU(config.rrelu),
            ConvLayer.init(rng, config.conv1_filters, config.conv2_filters, config.conv2_kernel,
                           config.conv2_stride, dtype),
            MaxPool(config.pool2),
            RReLU(config.rrelu),
            Flatten(),
            FcLayer.init(rng, flat, config.output_dim, dtype),
            RReLU(config.rrelu),
        ]
        return cls(config, layers)

    def astype(self, dtype):
        return SentenceCnn(self.config, [layer.astype(dtype) for layer in self.layers])

    def forward(self, x, mode: Mode = EVAL, rng=None):
        """``x`` is ``(n, L, d)`` or ``(n, 1, L, d)``; returns ``(n, output_dim)``."""
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[:, None]
        expected = (1, self.config.max_tokens, self.config.embedding_dim)
        if x.shape[1:] != expected:
            raise ShapeError(f"sentence batch shape {x.shape[1:]} does not match config {expected}")
        return super().forward(x, mode, rng)


def encode_sentence(matrix: SentenceMatrix | np.ndarray, cnn: SentenceCnn, mode: Mode = EVAL, rng=None) -> np.ndarray:
    m = matrix.matrix if isinstance(matrix, SentenceMatrix) else np.asarray(matrix)
    return cnn.forward(m[None], mode, rng)[0]


def encode_pair(q_matrix, a_matrix, q_cnn: SentenceCnn, a_cnn: SentenceCnn, mode: Mode = EVAL) -> np.ndarray:
    """[question representation | answer representation]."""
    rng = mode.rng()
    q = encode_sentence(q_matrix, q_cnn, mode, rng)
    a = encode_sentence(a_matrix, a_cnn, mode, rng)
    return np.concatenate([q, a])
