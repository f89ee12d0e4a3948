"""The 28-slot hand-crafted feature vector for a question-answer pair."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from dffn.corpus import (
    EMAIL_RE,
    HAPPY_EMOTICONS,
    SAD_EMOTICONS,
    URL_RE,
    Answer,
    AuthorStats,
    CategoryStats,
    Label,
    LabelCounts,
    Thread,
    Token,
    tokenize,
)
from dffn.errors import FormatError, ShapeError
from dffn.hashing import stable_hash
from dffn.knowledge import (
    KnowledgeBase,
    cooccurrence_sim,
    link_concepts,
    named_entities,
    nouns,
    relatedness,
    top_concepts,
)
from dffn.sentence_encoder import EmbeddingTable

HCF_LAYOUT_VERSION = 1
HCF_SLOTS = (
    "tagme_sim", "gcd_sim", "ne_sim", "para_cos", "dssm_cos", "cdssm_cos",
    "rep_good", "rep_bad", "is_seeker",
    "qa_commented_before", "qa_commented_after", "before_is_question", "after_is_question",
    "category_good", "category_potential", "category_bad",
    "relative_position", "log_position",
    "has_url", "has_email", "has_qmark", "log_qmark_count", "has_exclam", "log_exclam_count",
    "happy_emoticon", "sad_emoticon", "log_answer_tokens", "length_ratio",
)
HCF_DIM = len(HCF_SLOTS)
SLOT = {name: i for i, name in enumerate(HCF_SLOTS)}

_HAPPY = {e.lower() for e in HAPPY_EMOTICONS}
_SAD = {e.lower() for e in SAD_EMOTICONS}


def _dedup(items: Iterable) -> list:
    return list(dict.fromkeys(items))


def mean_pair_similarity(a: Sequence, b: Sequence, sim: Callable) -> float:
    """Average ``sim`` over all cross pairs; 0 when either side is empty."""
    a, b = _dedup(a), _dedup(b)
    if not a or not b:
        return 0.0
    total = math.fsum(sim(x, y) for x in a for y in b)
    return total / (len(a) * len(b))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"cosine of vectors with lengths {u.size} and {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


# --- knowledge similarities -------------------------------------------------------


def concept_relatedness(kb: KnowledgeBase) -> Callable[[str, str], float]:
    """Relatedness that scores concepts missing from the link graph as unrelated."""

    def sim(c1, c2):
        if c1 == c2:
            return 1.0
        if c1 not in kb.graph or c2 not in kb.graph:
            return 0.0
        return relatedness(c1, c2, kb.graph)

    return sim


def tagme_sim(q_tokens, a_tokens, kb: KnowledgeBase) -> float:
    return mean_pair_similarity(
        sorted(link_concepts(q_tokens, kb.anchors)),
        sorted(link_concepts(a_tokens, kb.anchors)),
        concept_relatedness(kb),
    )


def gcd_concepts(tokens: list[Token], kb: KnowledgeBase) -> list[str]:
    found = []
    for noun in nouns(tokens, kb.annotator.annotate(tokens)):
        found.extend(top_concepts(noun, kb.anchors, kb.config.top_concepts))
    return _dedup(found)


def gcd_sim(q_tokens, a_tokens, kb: KnowledgeBase) -> float:
    return mean_pair_similarity(gcd_concepts(q_tokens, kb), gcd_concepts(a_tokens, kb), concept_relatedness(kb))


def ne_sim(q_tokens, a_tokens, kb: KnowledgeBase) -> float:
    q_ne = named_entities(q_tokens, kb.annotator.annotate(q_tokens))
    a_ne = named_entities(a_tokens, kb.annotator.annotate(a_tokens))
    return mean_pair_similarity(q_ne, a_ne, lambda x, y: cooccurrence_sim(x, y, kb.index, kb.config))


# --- sentence-vector embedders ------------------------------------------------------


class TextEmbedder(Protocol):
    dim: int

    def embed(self, text: str, item_id: str | None = None) -> np.ndarray: ...


class IdfDocEmbedder:
    """IDF-weighted mean of word embeddings; IDF fitted on a document corpus."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim
        self.n_docs = 0
        self.df: dict[str, int] = {}

    def fit(self, documents: Iterable[str]) -> "IdfDocEmbedder":
        df: Counter = Counter()
        n = 0
        for doc in documents:
            n += 1
            df.update({t.text for t in tokenize(doc)})
        self.n_docs, self.df = n, dict(df)
        return self

    def idf(self, word: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(word, 0))) + 1.0

    def embed(self, text: str, item_id: str | None = None) -> np.ndarray:
        acc = np.zeros(self.dim)
        weight = 0.0
        for tok in tokenize(text):
            if tok.text in self.table:
                w = self.idf(tok.text)
                acc += w * self.table.vector(tok.text)
                weight += w
        return acc / weight if weight > 0 else acc

    def state(self) -> dict:
        return {"n_docs": self.n_docs, "df": self.df}

    def load_state(self, state: dict) -> "IdfDocEmbedder":
        self.n_docs, self.df = int(state["n_docs"]), dict(state["df"])
        return self


def letter_trigrams(word: str) -> list[str]:
    padded = f"#{word}#"
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


class LetterTrigramEmbedder:
    """Untrained letter-trigram projection embedder.

    ``bag``: hashed trigram counts of the whole text, projected then tanh.
    ``windowed``: each 3-word window is projected position-wise, tanh, then
    max-pooled over windows.
    """

    def __init__(self, kind: str = "bag", dim: int = 64, buckets: int = 2048, seed: int = 0):
        if kind not in ("bag", "windowed"):
            raise ValueError(f"unknown trigram embedder kind {kind!r}")
        self.kind, self.dim, self.buckets, self.seed = kind, dim, buckets, seed
        rng = np.random.default_rng(seed)
        n_proj = 1 if kind == "bag" else 3
        self.proj = rng.standard_normal((n_proj, buckets, dim))
        self._word_cache: dict[str, np.ndarray] = {}

    def _word_vector(self, word: str) -> np.ndarray:
        v = self._word_cache.get(word)
        if v is None:
            v = np.zeros(self.buckets)
            for tri in letter_trigrams(word):
                v[stable_hash(tri, self.seed) % self.buckets] += 1.0
            self._word_cache[word] = v
        return v

    def embed(self, text: str, item_id: str | None = None) -> np.ndarray:
        words = [t.text for t in tokenize(text)]
        if not words:
            return np.zeros(self.dim)
        if self.kind == "bag":
            v = sum(self._word_vector(w) for w in words)
            return np.tanh(v / np.linalg.norm(v) @ self.proj[0])
        vecs = [self._word_vector(w) for w in words]
        vecs = [v / np.linalg.norm(v) for v in vecs]
        zero = np.zeros(self.buckets)
        padded = [zero] + vecs + [zero]
        windows = [
            np.tanh(sum(padded[t + k] @ self.proj[k] for k in range(3)))
            for t in range(len(vecs))
        ]
        return np.max(windows, axis=0)


class PrecomputedEmbedder:
    """Vectors read from a TSV file ``item_id<TAB>d<TAB>f1<TAB>...``; missing ids embed to zero."""

    def __init__(self, path):
        self.vectors: dict[str, np.ndarray] = {}
        self.dim = None
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                try:
                    d = int(parts[1])
                    vec = np.array([float(x) for x in parts[2:]])
                except (IndexError, ValueError):
                    raise FormatError("malformed precomputed-vector line", lineno) from None
                if len(vec) != d or (self.dim is not None and d != self.dim):
                    raise FormatError(f"vector length {len(vec)} does not match declared/previous dim", lineno)
                self.dim = d
                self.vectors[parts[0]] = vec
        self.dim = self.dim or 0

    def embed(self, text: str, item_id: str | None = None) -> np.ndarray:
        return self.vectors.get(item_id, np.zeros(self.dim))


@dataclass
class Embedders:
    doc: TextEmbedder
    dssm: TextEmbedder
    cdssm: TextEmbedder

    @classmethod
    def default(cls, table: EmbeddingTable, seed: int = 0, dim: int = 64, buckets: int = 2048) -> "Embedders":
        return cls(
            IdfDocEmbedder(table),
            LetterTrigramEmbedder("bag", dim, buckets, seed),
            LetterTrigramEmbedder("windowed", dim, buckets, seed + 1),
        )


def good_pair_documents(threads: Iterable[Thread]) -> list[str]:
    """One document per Good-labeled QA pair (question text + answer)."""
    return [
        f"{t.question.text} {a.body}"
        for t in threads
        for a in t.answers
        if a.gold_label is Label.GOOD
    ]


# --- metadata / behaviour -----------------------------------------------------------


def reputation(author_id: str, authors: AuthorStats) -> tuple[float, float]:
    """(good, bad) counts of ``author_id`` over the forum-wide maximum of each."""
    counts = authors.get(author_id)
    if counts is None:
        return 0.0, 0.0
    max_good = max((c.good for c in authors.values()), default=0)
    max_bad = max((c.bad for c in authors.values()), default=0)
    return (
        counts.good / max_good if max_good else 0.0,
        counts.bad / max_bad if max_bad else 0.0,
    )


def response_pattern(thread: Thread, position: int) -> tuple[bool, bool, bool, bool]:
    """Did the asker comment strictly before/after ``position``, and was it a question?"""
    if not 1 <= position <= len(thread.answers):
        raise IndexError(f"position {position} outside 1..{len(thread.answers)}")
    asker = thread.question.author_id
    before = [a for a in thread.answers if a.author_id == asker and a.position < position]
    after = [a for a in thread.answers if a.author_id == asker and a.position > position]
    return (
        bool(before),
        bool(after),
        any("?" in a.body for a in before),
        any("?" in a.body for a in after),
    )


def _fractions(counts: LabelCounts | None) -> tuple[float, float, float]:
    if counts is None or counts.total == 0:
        return 0.0, 0.0, 0.0
    return counts.good / counts.total, counts.potential / counts.total, counts.bad / counts.total


@dataclass
class HcfExtractor:
    """Bundles the frozen providers needed by :func:`extract_hcf`."""

    kb: KnowledgeBase
    embedders: Embedders
    authors: AuthorStats = field(default_factory=dict)
    categories: CategoryStats = field(default_factory=dict)

    def __post_init__(self):
        self._max_good = max((c.good for c in self.authors.values()), default=0)
        self._max_bad = max((c.bad for c in self.authors.values()), default=0)

    def _reputation(self, author_id):
        c = self.authors.get(author_id)
        if c is None:
            return 0.0, 0.0
        return (c.good / self._max_good if self._max_good else 0.0,
                c.bad / self._max_bad if self._max_bad else 0.0)

    def extract(self, thread: Thread, answer: Answer) -> np.ndarray:
        q = thread.question
        q_tokens = tokenize(q.text)
        a_tokens = tokenize(answer.body)
        kb, emb = self.kb, self.embedders
        v = np.zeros(HCF_DIM)

        v[0] = tagme_sim(q_tokens, a_tokens, kb)
        v[1] = gcd_sim(q_tokens, a_tokens, kb)
        v[2] = ne_sim(q_tokens, a_tokens, kb)
        # negative cosines carry no similarity; clamp keeps slots in [0, 1]
        v[3] = max(0.0, cosine(emb.doc.embed(q.text, q.id), emb.doc.embed(answer.body, answer.id)))
        v[4] = max(0.0, cosine(emb.dssm.embed(q.text, q.id), emb.dssm.embed(answer.body, answer.id)))
        v[5] = max(0.0, cosine(emb.cdssm.embed(q.text, q.id), emb.cdssm.embed(answer.body, answer.id)))

        v[6], v[7] = self._reputation(answer.author_id)
        v[8] = float(answer.author_id == q.author_id)
        v[9:13] = response_pattern(thread, answer.position)
        v[13:16] = _fractions(self.categories.get(q.category))
        v[16] = answer.position / len(thread.answers)
        v[17] = math.log1p(answer.position)

        body = answer.body
        n_q, n_x = body.count("?"), body.count("!")
        texts = {t.text for t in a_tokens}
        v[18] = float(URL_RE.search(body) is not None)
        v[19] = float(EMAIL_RE.search(body) is not None)
        v[20] = float(n_q > 0)
        v[21] = math.log1p(n_q)
        v[22] = float(n_x > 0)
        v[23] = math.log1p(n_x)
        v[24] = float(bool(texts & _HAPPY))
        v[25] = float(bool(texts & _SAD))
        v[26] = math.log1p(len(a_tokens))
        if a_tokens:
            ratio = len(a_tokens) / len(q_tokens) if q_tokens else 4.0
            v[27] = min(max(ratio, 0.0), 4.0) / 4.0
        return v

    def extract_thread(self, thread: Thread) -> np.ndarray:
        return np.array([self.extract(thread, a) for a in thread.answers]).reshape(-1, HCF_DIM)


def extract_hcf(thread: Thread, answer: Answer, stats: tuple[AuthorStats, CategoryStats],
                kb: KnowledgeBase, embedders: Embedders) -> np.ndarray:
    authors, categories = stats
    return HcfExtractor(kb, embedders, authors, categories).extract(thread, answer)


def hcf_record(vector) -> dict:
    return {name: float(x) for name, x in zip(HCF_SLOTS, vector)}
