"""MAP, F1 and accuracy over answer predictions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from dffn.corpus import Label, TaskVariant
from dffn.errors import DomainError, ShapeError


def average_precision(ranking: Sequence[bool]) -> float:
    """Mean precision@r over the ranks r holding a relevant item."""
    hits, total = 0, 0.0
    for rank, relevant in enumerate(ranking, start=1):
        if relevant:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise DomainError("average precision is undefined without a relevant item")
    return total / hits


@dataclass(frozen=True)
class RankedThread:
    thread_id: str
    relevance: tuple[bool, ...]


def rank_thread(thread_id: str, scores: Sequence[float], relevant: Sequence[bool]) -> RankedThread:
    """Sort by descending score; equal scores keep their original order."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return RankedThread(thread_id, tuple(bool(relevant[i]) for i in order))


def map_score(threads: Iterable[RankedThread]) -> float:
    aps = [average_precision(t.relevance) for t in threads if any(t.relevance)]
    if not aps:
        raise DomainError("no thread has a relevant (Good) answer")
    return sum(aps) / len(aps)


@dataclass
class ClassStats:
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass
class EvalReport:
    variant: str
    accuracy: float
    f1: float
    total: int
    correct: int
    per_class: dict[str, ClassStats] = field(default_factory=dict)
    map_score: float | None = None
    label_set: list[str] = field(default_factory=list)
    f1_kind: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        data["per_class"] = {k: ClassStats(**v) for k, v in data.get("per_class", {}).items()}
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self) -> str:
        def pct(x):
            return "-" if x is None else f"{100 * x:.2f}"

        rows = [("Model", "MAP", "F1", "Acc."), ("DFFN", pct(self.map_score), pct(self.f1), pct(self.accuracy))]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
                 for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append("")
        lines.append(f"labels evaluated: {', '.join(self.label_set)} (F1 = {self.f1_kind})")
        for name, c in self.per_class.items():
            lines.append(f"  {name:<18} P={c.precision:.4f} R={c.recall:.4f} F1={c.f1:.4f} n={c.support}")
        return "\n".join(lines)


def _safe_div(a, b):
    return a / b if b else 0.0


def classification_metrics(gold: Sequence[Label], predicted: Sequence[Label], variant: TaskVariant) -> EvalReport:
    """Accuracy plus per-class P/R/F1 on the variant's label set (0/0 counts as 0).

    F1 is the macro mean over three classes for the 2015 task and the Good-class
    F1 for the binary 2016 task. Gold labels are collapsed to the variant first.
    """
    if len(gold) != len(predicted):
        raise ShapeError(f"{len(gold)} gold labels but {len(predicted)} predictions")
    if not gold:
        raise DomainError("no labels to evaluate")
    variant = TaskVariant(variant)
    g = [variant.collapse(Label(x)) for x in gold]
    p = [variant.collapse(Label(x)) for x in predicted]
    correct = sum(a is b for a, b in zip(g, p))
    per_class = {}
    for label in variant.labels:
        tp = sum(a is label and b is label for a, b in zip(g, p))
        support = sum(a is label for a in g)
        n_pred = sum(b is label for b in p)
        prec, rec = _safe_div(tp, n_pred), _safe_div(tp, support)
        per_class[label.value] = ClassStats(prec, rec, _safe_div(2 * prec * rec, prec + rec), support, n_pred)
    if variant is TaskVariant.BINARY_2016:
        f1, kind = per_class[Label.GOOD.value].f1, "Good-class F1"
    else:
        f1, kind = sum(c.f1 for c in per_class.values()) / len(per_class), "macro F1 over 3 classes"
    return EvalReport(
        variant=variant.value,
        accuracy=correct / len(g),
        f1=f1,
        total=len(g),
        correct=correct,
        per_class=per_class,
        label_set=[lab.value for lab in variant.labels],
        f1_kind=kind,
    )


def evaluate(threads, predictions: dict[tuple[str, str], tuple[float, Label]], variant: TaskVariant) -> EvalReport:
    """Full report for gold ``threads`` against ``(thread_id, answer_id) -> (score, label)``.

    MAP (Good = relevant) is only reported for the binary 2016 task.
    """
    variant = TaskVariant(variant)
    gold, pred, ranked = [], [], []
    for thread in threads:
        scores, relevant = [], []
        for answer in thread.answers:
            key = (thread.id, answer.id)
            if key not in predictions:
                raise ShapeError(f"no prediction for thread {thread.id} answer {answer.id}")
            if answer.gold_label is None:
                raise DomainError(f"answer {answer.id} has no gold label")
            score, label = predictions[key]
            gold.append(answer.gold_label)
            pred.append(label)
            scores.append(score)
            relevant.append(answer.gold_label is Label.GOOD)
        ranked.append(rank_thread(thread.id, scores, relevant))
    report = classification_metrics(gold, pred, variant)
    if variant is TaskVariant.BINARY_2016:
        report.map_score = map_score(ranked)
    return report
