"""File-backed knowledge providers: anchor linking, link-graph relatedness,
concept retrieval, fuzzy co-occurrence, and token annotation.

Snapshot directory layout (UTF-8 TSV, first line is a header
``#dffn-snapshot<TAB><kind><TAB>version=1[<TAB>key=value...]``):

- ``anchors.tsv``: surface, concept_id, count
- ``links.tsv``: concept_id, direction (in|out), neighbor_id
- ``docs.tsv``: doc_id, text
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol

from dffn.corpus import Token, token_texts
from dffn.errors import ConceptLookupError, ConfigError, FormatError

SNAPSHOT_VERSION = 1
SNAPSHOT_FILES = ("anchors.tsv", "links.tsv", "docs.tsv")
MAX_ANCHOR_NGRAM = 4


@dataclass(frozen=True)
class KnowledgeConfig:
    k: int = 100
    edit_threshold: float = 0.8
    top_concepts: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("retrieval depth k must be >= 1")
        if not 0.0 < self.edit_threshold <= 1.0:
            raise ValueError("edit threshold must lie in (0, 1]")
        if self.top_concepts < 1:
            raise ValueError("top_concepts must be >= 1")


# --- anchors --------------------------------------------------------------------


def _norm_surface(surface: str) -> str:
    return " ".join(token_texts(surface))


class AnchorDictionary:
    """Lowercased surface string -> [(concept_id, count)] by descending count."""

    def __init__(self, rows: Iterable[tuple[str, str, int]] = ()):
        merged: dict[str, Counter] = defaultdict(Counter)
        for surface, concept, count in rows:
            if count <= 0:
                raise ValueError(f"anchor count must be positive: {surface!r} -> {concept!r}")
            merged[_norm_surface(surface)][concept] += int(count)
        merged.pop("", None)
        self.entries: dict[str, list[tuple[str, int]]] = {
            s: sorted(c.items(), key=lambda kv: (-kv[1], kv[0])) for s, c in merged.items()
        }
        self._by_word: dict[str, set[str]] = defaultdict(set)
        for surface in self.entries:
            for word in surface.split():
                self._by_word[word].add(surface)

    @classmethod
    def from_dict(cls, mapping: dict[str, list[tuple[str, int]]]) -> "AnchorDictionary":
        return cls((s, c, n) for s, pairs in mapping.items() for c, n in pairs)

    def __len__(self):
        return len(self.entries)

    def lookup(self, surface: str) -> list[tuple[str, int]]:
        return self.entries.get(_norm_surface(surface), [])

    def surfaces_with_word(self, word: str) -> set[str]:
        return self._by_word.get(word, set())


def _texts(tokens) -> list[str]:
    return [getattr(t, "text", t) for t in tokens]


def link_concepts(tokens, anchors: AnchorDictionary, max_n: int = MAX_ANCHOR_NGRAM) -> set[str]:
    """Greedy left-to-right longest match over n-grams (n <= max_n).

    Each matched span contributes its highest-count concept; spans overlapping
    an accepted match are skipped.
    """
    words = _texts(tokens)
    found = set()
    i = 0
    while i < len(words):
        for n in range(min(max_n, len(words) - i), 0, -1):
            senses = anchors.entries.get(" ".join(words[i : i + n]))
            if senses:
                found.add(senses[0][0])
                i += n
                break
        else:
            i += 1
    return found


def top_concepts(term: str, anchors: AnchorDictionary, limit: int = 10) -> list[str]:
    """Concepts whose anchors contain ``term`` as whole word(s), by anchor count.

    A concept reachable from several anchors is ranked by its best count; ties
    go to the smaller concept id.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    words = token_texts(term)
    if not words:
        return []
    candidates = set.intersection(*(anchors.surfaces_with_word(w) for w in words))
    needle = " ".join(words)
    best: dict[str, int] = {}
    for surface in candidates:
        if f" {needle} " not in f" {surface} ":
            continue
        for concept, count in anchors.entries[surface]:
            if count > best.get(concept, 0):
                best[concept] = count
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return [c for c, _ in ranked[:limit]]


# --- link graph -----------------------------------------------------------------


class LinkGraph:
    def __init__(self, rows: Iterable[tuple[str, str, str]] = (), total_concepts: int | None = None):
        inlinks: dict[str, set] = defaultdict(set)
        outlinks: dict[str, set] = defaultdict(set)
        concepts = set()
        for concept, direction, neighbor in rows:
            if direction == "in":
                inlinks[concept].add(neighbor)
            elif direction == "out":
                outlinks[concept].add(neighbor)
            else:
                raise ValueError(f"link direction must be 'in' or 'out', got {direction!r}")
            concepts.update((concept, neighbor))
        self.inlinks = {c: frozenset(inlinks.get(c, ())) for c in concepts}
        self.outlinks = {c: frozenset(outlinks.get(c, ())) for c in concepts}
        self.total = max(total_concepts or 0, len(concepts))

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]], total_concepts: int | None = None) -> "LinkGraph":
        """Build from directed ``source -> target`` hyperlinks."""
        rows = []
        for src, dst in edges:
            rows.append((src, "out", dst))
            rows.append((dst, "in", src))
        return cls(rows, total_concepts)

    def __contains__(self, concept):
        return concept in self.inlinks

    def links(self, concept: str) -> frozenset:
        if concept not in self.inlinks:
            raise ConceptLookupError(concept)
        return self.inlinks[concept] | self.outlinks[concept]


def relatedness(c1: str, c2: str, graph: LinkGraph) -> float:
    """Normalized link-overlap relatedness in [0, 1] over in- and outlinks."""
    a = graph.links(c1)
    b = graph.links(c2)
    if c1 == c2:
        return 1.0
    common = len(a & b)
    if common == 0:
        return 0.0
    big, small = max(len(a), len(b)), min(len(a), len(b))
    denom = math.log(graph.total) - math.log(small)
    if denom <= 0:
        return 1.0 if common == big else 0.0
    score = 1.0 - (math.log(big) - math.log(common)) / denom
    return min(1.0, max(0.0, score))


# --- documents ------------------------------------------------------------------


@lru_cache(maxsize=1 << 16)
def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


class DocumentIndex:
    """Doc id -> tokens, plus term -> doc ids ranked by term frequency (then id)."""

    def __init__(self, docs: Iterable[tuple[str, str]] = ()):
        self.docs: dict[str, list[str]] = {}
        tf: dict[str, Counter] = defaultdict(Counter)
        for doc_id, text in docs:
            if doc_id in self.docs:
                raise ValueError(f"duplicate document id {doc_id!r}")
            toks = token_texts(text)
            self.docs[doc_id] = toks
            for t in toks:
                tf[t][doc_id] += 1
        self._tf = tf
        self.postings = {t: [d for d, _ in sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))]
                         for t, c in tf.items()}

    def retrieve(self, term: str, k: int) -> list[str]:
        words = token_texts(term)
        if len(words) == 1:
            return self.postings.get(words[0], [])[:k]
        scores: Counter = Counter()
        for w in words:
            scores.update(self._tf.get(w, {}))
        return [d for d, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]

    def fuzzy_contains(self, doc_id: str, term: str, threshold: float) -> bool:
        words = token_texts(term)
        if not words:
            return False
        needle = " ".join(words)
        toks = self.docs[doc_id]
        n = len(words)
        for i in range(len(toks) - n + 1):
            cand = " ".join(toks[i : i + n])
            longest = max(len(cand), len(needle))
            # the length gap bounds the distance from below; same arithmetic as edit_similarity
            if 1.0 - abs(len(cand) - len(needle)) / longest < threshold:
                continue
            if edit_similarity(cand, needle) >= threshold:
                return True
        return False


def cooccurrence_sim(term_a: str, term_b: str, index: DocumentIndex, cfg: KnowledgeConfig) -> float:
    """Share of the top-k documents for one term in which both terms fuzzy-match,
    averaged over both query directions."""

    def one_way(query, other):
        hits = 0
        for doc in index.retrieve(query, cfg.k):
            if index.fuzzy_contains(doc, query, cfg.edit_threshold) and index.fuzzy_contains(
                doc, other, cfg.edit_threshold
            ):
                hits += 1
        return hits / cfg.k

    return 0.5 * (one_way(term_a, term_b) + one_way(term_b, term_a))


# --- annotation -----------------------------------------------------------------

STOPWORDS = frozenset(
    """a about above after again against all am an and any are as at be because been before being
    below between both but by can could did do does doing down during each few for from further had
    has have having he her here hers herself him himself his how i if in into is it its itself just
    me more most my myself no nor not now of off on once only or other our ours ourselves out over own
    same she should so some such than that the their theirs them themselves then there these they
    this those through to too under until up very was we were what when where which while who whom
    why will with would you your yours yourself yourselves also any anyone anything plz please hi
    hello thanks thank ok okay yes yeah im i'm dont don't can't cant is are get got like know one""".split()
)
SENTENCE_END = frozenset({".", "!", "?"})


@dataclass(frozen=True)
class TokenAnnotation:
    is_common_noun: bool = False
    is_proper_noun: bool = False
    is_named_entity: bool = False

    def __post_init__(self):
        if self.is_named_entity and not self.is_proper_noun:
            raise ValueError("a named entity token must also be a proper noun")


class Annotator(Protocol):
    def annotate(self, tokens: list[Token]) -> list[TokenAnnotation]: ...


class HeuristicAnnotator:
    """Capitalization-based noun / named-entity tagger.

    Alphabetic non-stopwords are common-noun candidates; capitalized tokens not
    at a sentence start are proper nouns; maximal proper-noun runs are named
    entities (so every proper noun is part of one).
    """

    def annotate(self, tokens: list[Token]) -> list[TokenAnnotation]:
        out = []
        prev = None
        for tok in tokens:
            text, orig = tok.text, tok.orig
            content = text.isalpha() and text not in STOPWORDS
            initial = prev is None or prev in SENTENCE_END
            proper = content and not initial and orig[:1].isupper()
            out.append(TokenAnnotation(content and not proper, proper, proper))
            prev = text
        return out


class FileAnnotator:
    """Precomputed tags keyed by the space-joined lowercased token text.

    Each JSON line: ``{"text": "...", "tags": ["O"|"NOUN"|"PROPN"|"NE", ...]}``.
    Unknown sentences fall back to ``fallback``.
    """

    TAGS = {
        "O": TokenAnnotation(),
        "NOUN": TokenAnnotation(is_common_noun=True),
        "PROPN": TokenAnnotation(is_proper_noun=True),
        "NE": TokenAnnotation(is_proper_noun=True, is_named_entity=True),
    }

    def __init__(self, path, fallback: Annotator | None = None):
        self.table: dict[str, list[TokenAnnotation]] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                try:
                    tags = [self.TAGS[t] for t in rec["tags"]]
                except KeyError as exc:
                    raise FormatError(f"unknown tag {exc.args[0]!r}", lineno) from None
                if len(tags) != len(rec["text"].split()):
                    raise FormatError("tag count differs from token count", lineno)
                self.table[rec["text"]] = tags
        self.fallback = fallback or HeuristicAnnotator()

    def annotate(self, tokens: list[Token]) -> list[TokenAnnotation]:
        key = " ".join(t.text for t in tokens)
        if key in self.table:
            return self.table[key]
        return self.fallback.annotate(tokens)


def annotate(tokens: list[Token], annotator: Annotator | None = None) -> list[TokenAnnotation]:
    return (annotator or HeuristicAnnotator()).annotate(tokens)


def nouns(tokens: list[Token], annotations: list[TokenAnnotation]) -> list[str]:
    seen = {}
    for tok, ann in zip(tokens, annotations):
        if ann.is_common_noun or ann.is_proper_noun:
            seen.setdefault(tok.text, None)
    return list(seen)


def named_entities(tokens: list[Token], annotations: list[TokenAnnotation]) -> list[str]:
    """Maximal runs of named-entity tokens, joined by spaces, deduplicated in order."""
    seen, run = {}, []
    for tok, ann in list(zip(tokens, annotations)) + [(None, TokenAnnotation())]:
        if ann.is_named_entity:
            run.append(tok.text)
        elif run:
            seen.setdefault(" ".join(run), None)
            run = []
    return list(seen)


# --- snapshots ------------------------------------------------------------------


@dataclass
class KnowledgeBase:
    anchors: AnchorDictionary
    graph: LinkGraph
    index: DocumentIndex
    config: KnowledgeConfig = KnowledgeConfig()
    annotator: Annotator = HeuristicAnnotator()
    checksum: str = ""

    @classmethod
    def empty(cls, config: KnowledgeConfig | None = None) -> "KnowledgeBase":
        return cls(AnchorDictionary(), LinkGraph(), DocumentIndex(), config or KnowledgeConfig())


def _header(kind: str, **extra) -> str:
    fields = ["#dffn-snapshot", kind, f"version={SNAPSHOT_VERSION}"]
    fields += [f"{k}={v}" for k, v in extra.items()]
    return "\t".join(fields) + "\n"


def _read_snapshot(path: Path, kind: str, ncols: int):
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if len(header) < 3 or header[0] != "#dffn-snapshot" or header[1] != kind:
            raise FormatError(f"{path}: missing or wrong snapshot header", 1)
        meta = dict(field.split("=", 1) for field in header[2:] if "=" in field)
        if int(meta.get("version", -1)) != SNAPSHOT_VERSION:
            raise FormatError(f"{path}: unsupported snapshot version {meta.get('version')!r}", 1)
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", ncols - 1)
            if len(parts) != ncols:
                raise FormatError(f"{path}: expected {ncols} columns", lineno)
            rows.append(parts)
    return meta, rows


def load_snapshots(directory, config: KnowledgeConfig | None = None,
                   annotator: Annotator | None = None) -> KnowledgeBase:
    directory = Path(directory)
    missing = [name for name in SNAPSHOT_FILES if not (directory / name).is_file()]
    if missing:
        raise ConfigError(f"snapshot directory {directory} lacks {', '.join(missing)}")
    digest = hashlib.sha256()
    for name in SNAPSHOT_FILES:
        digest.update((directory / name).read_bytes())

    _, anchor_rows = _read_snapshot(directory / "anchors.tsv", "anchors", 3)
    try:
        anchors = AnchorDictionary((s, c, int(n)) for s, c, n in anchor_rows)
    except ValueError as exc:
        raise FormatError(f"anchors.tsv: {exc}") from None
    meta, link_rows = _read_snapshot(directory / "links.tsv", "links", 3)
    total = int(meta["total_concepts"]) if "total_concepts" in meta else None
    graph = LinkGraph((tuple(r) for r in link_rows), total)
    _, doc_rows = _read_snapshot(directory / "docs.tsv", "docs", 2)
    index = DocumentIndex((d, t) for d, t in doc_rows)
    return KnowledgeBase(anchors, graph, index, config or KnowledgeConfig(),
                         annotator or HeuristicAnnotator(), digest.hexdigest())


def _read_source(path: Path, ncols: int):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t", ncols - 1)
            if len(parts) != ncols:
                raise FormatError(f"{path}: expected {ncols} tab-separated columns", lineno)
            rows.append(parts)
    return rows


def build_snapshots(anchors_src, links_src, docs_src, out_dir, total_concepts: int | None = None) -> dict:
    """Compile raw TSV sources into a snapshot directory.

    Sources: anchors ``surface, concept_id, count`` (repeats are summed,
    surfaces lowercased); links ``source_id, target_id`` hyperlinks; docs
    ``doc_id, text``. Writes the snapshot files and ``manifest.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    counts: Counter = Counter()
    for lineno, (surface, concept, n) in enumerate(_read_source(Path(anchors_src), 3), start=1):
        try:
            value = int(n)
        except ValueError:
            raise FormatError(f"{anchors_src}: count {n!r} is not an integer", lineno) from None
        if value <= 0:
            raise FormatError(f"{anchors_src}: count must be positive", lineno)
        surface = _norm_surface(surface)
        if surface:
            counts[(surface, concept)] += value
    with open(out_dir / "anchors.tsv", "w", encoding="utf-8") as f:
        f.write(_header("anchors"))
        for (surface, concept), n in sorted(counts.items(), key=lambda kv: (kv[0][0], -kv[1], kv[0][1])):
            f.write(f"{surface}\t{concept}\t{n}\n")

    edges = sorted({(s, t) for s, t in _read_source(Path(links_src), 2)})
    rows = sorted({r for s, t in edges for r in ((s, "out", t), (t, "in", s))})
    concepts = {s for s, _ in edges} | {t for _, t in edges}
    extra = {"total_concepts": max(total_concepts or 0, len(concepts))}
    with open(out_dir / "links.tsv", "w", encoding="utf-8") as f:
        f.write(_header("links", **extra))
        for row in rows:
            f.write("\t".join(row) + "\n")

    docs = _read_source(Path(docs_src), 2)
    with open(out_dir / "docs.tsv", "w", encoding="utf-8") as f:
        f.write(_header("docs"))
        for doc_id, text in sorted(docs):
            f.write(f"{doc_id}\t{' '.join(text.split())}\n")

    manifest = {
        "version": SNAPSHOT_VERSION,
        "files": {name: hashlib.sha256((out_dir / name).read_bytes()).hexdigest() for name in SNAPSHOT_FILES},
        "anchors": len(counts),
        "links": len(edges),
        "docs": len(docs),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest
