"""SemEval-style cQA threads: XML parsing, labels, tokenization, forum statistics."""

from __future__ import annotations

import enum
import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from importlib import resources
from typing import BinaryIO, Iterable, NamedTuple

from dffn.errors import LabelError, SchemaError, UnlabeledError, XmlParseError


class Label(str, enum.Enum):
    GOOD = "Good"
    POTENTIALLY_USEFUL = "PotentiallyUseful"
    BAD = "Bad"


class TaskVariant(str, enum.Enum):
    THREE_CLASS_2015 = "ThreeClass2015"
    BINARY_2016 = "Binary2016"

    @classmethod
    def parse(cls, raw: str) -> "TaskVariant":
        key = str(raw).strip().lower()
        if key in ("2015", "threeclass2015", "three_class_2015"):
            return cls.THREE_CLASS_2015
        if key in ("2016", "binary2016", "binary_2016"):
            return cls.BINARY_2016
        raise ValueError(f"unknown task variant {raw!r}")

    @property
    def labels(self) -> tuple[Label, ...]:
        if self is TaskVariant.BINARY_2016:
            return (Label.GOOD, Label.BAD)
        return (Label.GOOD, Label.POTENTIALLY_USEFUL, Label.BAD)

    def collapse(self, label: Label) -> Label:
        """Map a raw three-way label onto this variant's label set."""
        if self is TaskVariant.BINARY_2016 and label is not Label.GOOD:
            return Label.BAD
        return label


@dataclass(frozen=True)
class Question:
    id: str
    category: str
    author_id: str
    subject: str = ""
    body: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be non-empty")

    @property
    def text(self) -> str:
        return f"{self.subject} {self.body}".strip()


@dataclass(frozen=True)
class Answer:
    id: str
    author_id: str
    body: str
    position: int
    gold_label: Label | None = None

    def __post_init__(self):
        if self.position < 1:
            raise ValueError(f"answer position must be >= 1, got {self.position}")


@dataclass(frozen=True)
class Thread:
    question: Question
    answers: tuple[Answer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        positions = [a.position for a in self.answers]
        if positions != list(range(1, len(positions) + 1)):
            raise ValueError(f"thread {self.question.id}: answer positions must be 1..n in order")

    @property
    def id(self) -> str:
        return self.question.id


@dataclass(frozen=True)
class LabelCounts:
    good: int = 0
    potential: int = 0
    bad: int = 0

    @property
    def total(self) -> int:
        return self.good + self.potential + self.bad

    def add(self, label: Label) -> "LabelCounts":
        if label is Label.GOOD:
            return LabelCounts(self.good + 1, self.potential, self.bad)
        if label is Label.POTENTIALLY_USEFUL:
            return LabelCounts(self.good, self.potential + 1, self.bad)
        return LabelCounts(self.good, self.potential, self.bad + 1)


AuthorStats = dict[str, LabelCounts]
CategoryStats = dict[str, LabelCounts]


def _load_dialects() -> dict:
    with resources.files("dffn.data").joinpath("dialects.json").open("r", encoding="utf-8") as f:
        return json.load(f)


DIALECTS = _load_dialects()
LABEL_SYNONYMS: dict[str, str] = DIALECTS["label_synonyms"]


def normalize_label(raw: str, synonyms: dict[str, str] | None = None) -> Label:
    """Map a raw gold-label string onto the closed label set (case-insensitive)."""
    table = LABEL_SYNONYMS if synonyms is None else synonyms
    key = " ".join(str(raw).strip().lower().split())
    try:
        return Label(table[key])
    except KeyError:
        raise LabelError(raw) from None


# --- tokenization -----------------------------------------------------------

HAPPY_EMOTICONS = (":)", ":-)", ":D", ":-D", ";)", ";-)", ":P", ":-P", "=)", "^_^")
SAD_EMOTICONS = (":(", ":-(", ":'(", ":'-(", ":-/", "=(")
EMOTICONS = HAPPY_EMOTICONS + SAD_EMOTICONS

URL_PATTERN = r"(?:https?://|www\.)[^\s]*[^\s.,!?;:)\]\"'>]"
EMAIL_PATTERN = r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+"
_EMOTICON_PATTERN = "|".join(
    re.escape(e) for e in sorted(EMOTICONS, key=len, reverse=True)
)
_TOKEN_RE = re.compile(
    rf"(?P<url>{URL_PATTERN})"
    rf"|(?P<email>{EMAIL_PATTERN})"
    rf"|(?P<emo>{_EMOTICON_PATTERN})"
    r"|(?P<word>\w+(?:'\w+)*)"
    r"|(?P<punct>[^\w\s])",
    re.IGNORECASE,
)
URL_RE = re.compile(URL_PATTERN, re.IGNORECASE)
EMAIL_RE = re.compile(EMAIL_PATTERN)


class Token(NamedTuple):
    text: str
    orig: str


def tokenize(text: str) -> list[Token]:
    """Split into lowercased tokens; URLs, e-mails and emoticons stay whole."""
    return [Token(m.group(0).lower(), m.group(0)) for m in _TOKEN_RE.finditer(text or "")]


def token_texts(text: str) -> list[str]:
    return [t.text for t in tokenize(text)]


# --- XML --------------------------------------------------------------------


def _first_attr(el: ET.Element, names: list[str]) -> str | None:
    for name in names:
        if name in el.attrib:
            return el.attrib[name]
    return None


def _required_attr(el: ET.Element, names: list[str]) -> str:
    value = _first_attr(el, names)
    if value is None:
        raise SchemaError(el.tag, names[0])
    return value


def _child_text(el: ET.Element, names: list[str]) -> str:
    for name in names:
        child = el.find(name)
        if child is not None:
            return "".join(child.itertext()).strip()
    return ""


def _byte_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(chunk) + 1 for chunk in lines[: max(line - 1, 0)]) + column


def parse_threads(document: bytes | str | BinaryIO, variant: TaskVariant) -> list[Thread]:
    """Parse one SemEval XML document into threads for the given dialect."""
    if hasattr(document, "read"):
        document = document.read()
    if isinstance(document, str):
        document = document.encode("utf-8")
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, column = exc.position
        raise XmlParseError(f"malformed XML: {exc}", _byte_offset(document, line, column)) from None

    dialect = DIALECTS[TaskVariant(variant).value]
    threads = []
    for thread_el in root.iter(dialect["thread_tag"]):
        if dialect["question_tag"] is None:
            q_el = thread_el
        else:
            q_el = thread_el.find(dialect["question_tag"])
            if q_el is None:
                raise SchemaError(thread_el.tag, dialect["question_tag"])
        question = Question(
            id=_required_attr(q_el, dialect["question_id"]),
            category=_required_attr(q_el, dialect["question_category"]),
            author_id=_required_attr(q_el, dialect["question_author"]),
            subject=_child_text(q_el, dialect["question_subject"]),
            body=_child_text(q_el, dialect["question_body"]),
        )
        answers = []
        for position, c_el in enumerate(thread_el.findall(dialect["comment_tag"]), start=1):
            raw_label = _first_attr(c_el, dialect["comment_label"])
            answers.append(
                Answer(
                    id=_required_attr(c_el, dialect["comment_id"]),
                    author_id=_required_attr(c_el, dialect["comment_author"]),
                    body=_child_text(c_el, dialect["comment_body"]),
                    position=position,
                    gold_label=None if raw_label is None else normalize_label(raw_label),
                )
            )
        threads.append(Thread(question, tuple(answers)))
    return threads


def parse_files(paths: Iterable, variant: TaskVariant) -> list[Thread]:
    threads = []
    for path in paths:
        with open(path, "rb") as f:
            threads.extend(parse_threads(f, variant))
    return threads


def threads_to_xml(threads: Iterable[Thread], variant: TaskVariant) -> bytes:
    """Serialize threads back into the variant's XML dialect."""
    d = DIALECTS[TaskVariant(variant).value]
    root = ET.Element("root" if d["question_tag"] is None else "xml")
    for thread in threads:
        q = thread.question
        thread_el = ET.SubElement(root, d["thread_tag"])
        q_el = thread_el if d["question_tag"] is None else ET.SubElement(thread_el, d["question_tag"])
        q_el.set(d["question_id"][0], q.id)
        q_el.set(d["question_category"][0], q.category)
        q_el.set(d["question_author"][0], q.author_id)
        ET.SubElement(q_el, d["question_subject"][0]).text = q.subject
        ET.SubElement(q_el, d["question_body"][0]).text = q.body
        for a in thread.answers:
            c_el = ET.SubElement(thread_el, d["comment_tag"])
            c_el.set(d["comment_id"][0], a.id)
            c_el.set(d["comment_author"][0], a.author_id)
            if a.gold_label is not None:
                c_el.set(d["comment_label"][0], a.gold_label.value)
            ET.SubElement(c_el, d["comment_body"][0]).text = a.body
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# --- JSON lines -------------------------------------------------------------


def thread_to_dict(thread: Thread) -> dict:
    q = thread.question
    return {
        "question": {"id": q.id, "category": q.category, "author_id": q.author_id,
                     "subject": q.subject, "body": q.body},
        "answers": [
            {"id": a.id, "author_id": a.author_id, "body": a.body, "position": a.position,
             "gold_label": None if a.gold_label is None else a.gold_label.value}
            for a in thread.answers
        ],
    }


def thread_from_dict(record: dict) -> Thread:
    answers = tuple(
        Answer(
            id=a["id"], author_id=a["author_id"], body=a["body"], position=a["position"],
            gold_label=None if a.get("gold_label") is None else Label(a["gold_label"]),
        )
        for a in record["answers"]
    )
    return Thread(Question(**record["question"]), answers)


def dump_jsonl(threads: Iterable[Thread], stream) -> int:
    n = 0
    for thread in threads:
        stream.write(json.dumps(thread_to_dict(thread), ensure_ascii=False, sort_keys=True))
        stream.write("\n")
        n += 1
    return n


def load_jsonl(stream) -> list[Thread]:
    return [thread_from_dict(json.loads(line)) for line in stream if line.strip()]


def load_threads(path, variant: TaskVariant) -> list[Thread]:
    """Read either an XML file or a JSON-lines thread dump."""
    path = str(path)
    if path.endswith((".jsonl", ".json")):
        with open(path, encoding="utf-8") as f:
            return load_jsonl(f)
    return parse_files([path], variant)


# --- statistics -------------------------------------------------------------


def compute_stats(threads: Iterable[Thread]) -> tuple[AuthorStats, CategoryStats]:
    """Per-author and per-category gold-label counts over a labeled split."""
    authors: AuthorStats = {}
    categories: CategoryStats = {}
    for thread in threads:
        cat = thread.question.category
        for answer in thread.answers:
            if answer.gold_label is None:
                raise UnlabeledError(answer.id)
            authors[answer.author_id] = authors.get(answer.author_id, LabelCounts()).add(answer.gold_label)
            categories[cat] = categories.get(cat, LabelCounts()).add(answer.gold_label)
    return authors, categories


def qa_pair_count(threads: Iterable[Thread]) -> int:
    return sum(len(t.answers) for t in threads)
