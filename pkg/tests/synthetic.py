"""Synthetic feature sets whose labels depend on a text cue and a hand-crafted cue."""

from __future__ import annotations

import numpy as np

from dffn.config import MICRO, Config
from dffn.corpus import Label
from dffn.fusion import METADATA_DIM
from dffn.hcf import HCF_DIM, SLOT
from dffn.trainer import FeatureSet

FILLER_WORDS = 40
CUE_GOOD, CUE_BAD = FILLER_WORDS + 1, FILLER_WORDS + 2


def embedding_matrix(config: Config = MICRO, seed: int = 0) -> np.ndarray:
    """Row 0 is padding, rows 1..40 are filler words, the last two are the text cues."""
    rng = np.random.default_rng(seed)
    d = config.embedding_dim
    matrix = np.zeros((FILLER_WORDS + 3, d), dtype=np.float32)
    matrix[1 : FILLER_WORDS + 1] = rng.normal(0.0, 0.3, (FILLER_WORDS, d))
    matrix[CUE_GOOD] = 1.5
    matrix[CUE_BAD] = -1.5
    return matrix


RULES = {
    "and": lambda word, url: word & url,
    "text": lambda word, url: word,
    "hcf": lambda word, url: url,
}


def cue_corpus(n: int, rule: str = "and", config: Config = MICRO, seed: int = 0) -> FeatureSet:
    """QA pairs labeled from two independent fair-coin cues.

    The text cue is a marker word placed somewhere in the answer; the
    hand-crafted cue is the ``has_url`` slot. Under ``"and"`` a pair is Good
    only when both cues fire, so a model blind to either one tops out at 75%
    accuracy by always answering Bad. ``"text"`` and ``"hcf"`` use one cue.
    """
    rng = np.random.default_rng(seed)
    L = config.max_tokens
    length = max(2, L - 2)
    word_cue = rng.random(n) < 0.5
    url_cue = rng.random(n) < 0.5
    q_ids = np.zeros((n, L), dtype=np.int64)
    a_ids = np.zeros((n, L), dtype=np.int64)
    q_ids[:, :length] = rng.integers(1, FILLER_WORDS + 1, (n, length))
    a_ids[:, :length] = rng.integers(1, FILLER_WORDS + 1, (n, length))
    where = rng.integers(0, length, n)
    a_ids[np.arange(n), where] = np.where(word_cue, CUE_GOOD, CUE_BAD)
    hcf = rng.random((n, HCF_DIM))
    hcf[:, SLOT["has_url"]] = url_cue
    meta = rng.random((n, METADATA_DIM))
    good = RULES[rule](word_cue, url_cue)
    gold = [Label.GOOD if g else Label.BAD for g in good]
    ids = [f"S{i}" for i in range(n)]
    return FeatureSet(q_ids, a_ids, hcf, meta, gold, ids, [f"{i}_C1" for i in ids])
