"""Featurization, end-to-end training, checkpoints and batch prediction."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from dffn.config import Config
from dffn.corpus import (
    Answer,
    Label,
    LabelCounts,
    TaskVariant,
    Thread,
    compute_stats,
    tokenize,
)
from dffn.errors import CheckpointVersionError, ConfigError, IntegrityError, NumericError, UnlabeledError
from dffn.fusion import METADATA_DIM, METADATA_LAYOUT_VERSION, decode_label, encode_metadata
from dffn.hcf import HCF_DIM, HCF_LAYOUT_VERSION, Embedders, HcfExtractor, good_pair_documents
from dffn.knowledge import KnowledgeBase
from dffn.model import Batch, DffnModel
from dffn.nnkernel import EVAL, AdagradState, Mode, adagrad_step, smooth_l1, smooth_l1_grad
from dffn.sentence_encoder import EmbeddingTable, token_ids

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"DFFNCKPT"


# --- targets ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingExample:
    thread: Thread
    answer: Answer
    target: float


def target_for(label: Label, variant: TaskVariant) -> float:
    if label is Label.GOOD:
        return 1.0
    if label is Label.POTENTIALLY_USEFUL and TaskVariant(variant) is TaskVariant.THREE_CLASS_2015:
        return 0.0
    return -1.0


def make_targets(threads: Iterable[Thread], variant: TaskVariant) -> list[TrainingExample]:
    examples = []
    for thread in threads:
        for answer in thread.answers:
            if answer.gold_label is None:
                raise UnlabeledError(answer.id)
            examples.append(TrainingExample(thread, answer, target_for(answer.gold_label, variant)))
    return examples


# --- features -------------------------------------------------------------------


@dataclass
class FeatureSet:
    """Model inputs for a list of QA pairs, in thread/answer order."""

    q_ids: np.ndarray
    a_ids: np.ndarray
    hcf: np.ndarray
    meta: np.ndarray
    gold: list
    thread_ids: list[str]
    answer_ids: list[str]

    def __len__(self):
        return len(self.hcf)

    @property
    def labeled(self) -> bool:
        return all(g is not None for g in self.gold)

    def targets(self, variant: TaskVariant) -> np.ndarray:
        if not self.labeled:
            raise UnlabeledError(next(a for a, g in zip(self.answer_ids, self.gold) if g is None))
        return np.array([target_for(g, variant) for g in self.gold])

    def batch(self, idx, matrix: np.ndarray) -> Batch:
        idx = np.asarray(idx)
        return Batch(matrix[self.q_ids[idx]], matrix[self.a_ids[idx]], self.hcf[idx], self.meta[idx])

    def subset(self, idx) -> "FeatureSet":
        idx = list(np.asarray(idx))
        return FeatureSet(
            self.q_ids[idx], self.a_ids[idx], self.hcf[idx], self.meta[idx],
            [self.gold[i] for i in idx], [self.thread_ids[i] for i in idx], [self.answer_ids[i] for i in idx],
        )


def _counts_to_json(stats: dict[str, LabelCounts]) -> dict:
    return {k: [c.good, c.potential, c.bad] for k, c in sorted(stats.items())}


def _counts_from_json(data: dict) -> dict[str, LabelCounts]:
    return {k: LabelCounts(*v) for k, v in data.items()}


class Featurizer:
    """Turns threads into :class:`FeatureSet` rows.

    ``fit`` computes forum statistics and fits the document embedder on the
    training split only; the fitted state travels inside checkpoints.
    """

    def __init__(self, config: Config, table: EmbeddingTable, kb: KnowledgeBase,
                 embedders: Embedders | None = None):
        if table.dim != config.embedding_dim:
            raise ConfigError(f"embedding file has d={table.dim}, config expects {config.embedding_dim}")
        self.config = config
        self.table = table
        self.kb = kb
        self.embedders = embedders or Embedders.default(
            table, config.embedder_seed, config.trigram_dim, config.trigram_buckets
        )
        self.authors: dict[str, LabelCounts] = {}
        self.categories: dict[str, LabelCounts] = {}

    def fit(self, train_threads: list[Thread]) -> "Featurizer":
        self.authors, self.categories = compute_stats(train_threads)
        fit = getattr(self.embedders.doc, "fit", None)
        if fit is not None:
            fit(good_pair_documents(train_threads))
        return self

    def state(self) -> dict:
        doc_state = getattr(self.embedders.doc, "state", None)
        return {
            "authors": _counts_to_json(self.authors),
            "categories": _counts_to_json(self.categories),
            "doc_embedder": doc_state() if doc_state else None,
        }

    def load_state(self, state: dict) -> "Featurizer":
        self.authors = _counts_from_json(state["authors"])
        self.categories = _counts_from_json(state["categories"])
        if state.get("doc_embedder") is not None and hasattr(self.embedders.doc, "load_state"):
            self.embedders.doc.load_state(state["doc_embedder"])
        return self

    def transform(self, threads: list[Thread]) -> FeatureSet:
        cfg = self.config
        extractor = HcfExtractor(self.kb, self.embedders, self.authors, self.categories)
        q_ids, a_ids, hcf, meta, gold, tids, aids = [], [], [], [], [], [], []
        for thread in threads:
            q = thread.question
            q_row = token_ids(tokenize(q.text), self.table, cfg.max_tokens)
            for answer in thread.answers:
                q_ids.append(q_row)
                a_ids.append(token_ids(tokenize(answer.body), self.table, cfg.max_tokens))
                hcf.append(extractor.extract(thread, answer))
                meta.append(encode_metadata(q.category, q.author_id, answer.author_id,
                                            self.authors, self.categories, cfg.hash_seed))
                gold.append(answer.gold_label)
                tids.append(thread.id)
                aids.append(answer.id)
        n = len(hcf)
        return FeatureSet(
            np.array(q_ids, dtype=np.int64).reshape(n, cfg.max_tokens),
            np.array(a_ids, dtype=np.int64).reshape(n, cfg.max_tokens),
            np.array(hcf).reshape(n, HCF_DIM),
            np.array(meta).reshape(n, METADATA_DIM),
            gold, tids, aids,
        )


# --- training -------------------------------------------------------------------


def score_features(model: DffnModel, fs: FeatureSet, matrix: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [model.forward(fs.batch(np.arange(i, min(i + batch_size, len(fs))), matrix), EVAL)
           for i in range(0, len(fs), batch_size)]
    return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def accuracy(scores, gold, config: Config) -> float:
    variant = config.task_variant
    thresholds = config.thresholds()
    if not len(gold):
        return 0.0
    hits = sum(decode_label(s, variant, thresholds) is variant.collapse(g) for s, g in zip(scores, gold))
    return hits / len(gold)


def step_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1)[0])


@dataclass
class TrainResult:
    model: DffnModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = 0.0


def fit_model(model: DffnModel, train_fs: FeatureSet, dev_fs: FeatureSet | None, matrix: np.ndarray,
              config: Config, log: TextIO | None = None) -> TrainResult:
    """Adagrad on SmoothL1; keeps the parameters of the best dev-accuracy epoch.

    Without a dev set the training split is used for model selection.
    """
    variant = config.task_variant
    targets = train_fs.targets(variant)
    dev = dev_fs if dev_fs is not None and len(dev_fs) else train_fs
    rng = np.random.default_rng(config.seed)
    state = AdagradState(config.learning_rate, config.adagrad_epsilon)
    result = TrainResult(model)
    best_params, best_acc, stale = model.copy_parameters(), -1.0, 0
    n = len(train_fs)

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            scores = model.forward(train_fs.batch(idx, matrix), Mode.train(step_seed(config.seed, epoch, b)))
            loss = smooth_l1(scores, targets[idx])
            if not np.isfinite(loss):
                norms = {k: float(np.linalg.norm(v)) for k, v in model.parameters().items()}
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}; parameter norms {norms}")
            model.backward(smooth_l1_grad(scores, targets[idx]))
            adagrad_step(model.parameters(), model.gradients(), state)
            total += loss * len(idx)
        dev_acc = accuracy(score_features(model, dev, matrix), dev.gold, config)
        record = {"epoch": epoch, "train_loss": total / n, "dev_acc": dev_acc,
                  "seconds": round(time.perf_counter() - started, 4)}
        result.history.append(record)
        if log is not None:
            log.write(json.dumps(record) + "\n")
            log.flush()
        logger.info("epoch %d loss %.5f dev_acc %.4f", epoch, record["train_loss"], dev_acc)
        if dev_acc > best_acc:
            best_acc, best_params, stale = dev_acc, model.copy_parameters(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_parameters(best_params)
    result.best_dev_accuracy = best_acc
    return result


@dataclass
class Checkpoint:
    config: Config
    model: DffnModel
    featurizer_state: dict
    metrics: dict = field(default_factory=dict)
    snapshot_checksum: str = ""


def train(train_threads: list[Thread], dev_threads: list[Thread], config: Config,
          table: EmbeddingTable, kb: KnowledgeBase, log: TextIO | None = None) -> Checkpoint:
    featurizer = Featurizer(config, table, kb).fit(train_threads)
    train_fs = featurizer.transform(train_threads)
    dev_fs = featurizer.transform(dev_threads) if dev_threads else None
    model = DffnModel.build(config)
    result = fit_model(model, train_fs, dev_fs, table.matrix, config, log)
    metrics = {"best_epoch": result.best_epoch, "best_dev_accuracy": result.best_dev_accuracy,
               "epochs_run": len(result.history)}
    return Checkpoint(config, model, featurizer.state(), metrics, kb.checksum)


# --- checkpoints ----------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write magic, header length (u64 LE), JSON header, then float32 LE blocks."""
    blocks, chunks, offset = [], [], 0
    for name, value in ckpt.model.parameters().items():
        raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
        blocks.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    cfg = ckpt.config
    header = {
        "format_version": FORMAT_VERSION,
        "hcf_layout_version": HCF_LAYOUT_VERSION,
        "metadata_layout_version": METADATA_LAYOUT_VERSION,
        "config": cfg.to_dict(),
        "dims": {"sentence": cfg.sentence_dim, "pair": 2 * cfg.sentence_dim, "hcf": HCF_DIM,
                 "metadata": METADATA_DIM, "fusion_input": ckpt.model.input_dim},
        "seed": cfg.seed,
        "metrics": ckpt.metrics,
        "featurizer": ckpt.featurizer_state,
        "snapshot_checksum": ckpt.snapshot_checksum,
        "blocks": blocks,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(payload)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC or len(data) < len(MAGIC) + 8:
        raise IntegrityError(f"{path} is not a checkpoint file")
    (head_len,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + head_len > len(data):
        raise IntegrityError(f"{path}: header truncated")
    try:
        header = json.loads(data[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header ({exc})") from None
    expected = {
        "format_version": FORMAT_VERSION,
        "hcf_layout_version": HCF_LAYOUT_VERSION,
        "metadata_layout_version": METADATA_LAYOUT_VERSION,
    }
    for key, version in expected.items():
        if header.get(key) != version:
            raise CheckpointVersionError(f"{path}: {key} is {header.get(key)!r}, this build reads {version}")
    payload = data[start + head_len :]
    declared = sum(b["nbytes"] for b in header["blocks"])
    if len(payload) != header["payload_bytes"] or declared != len(payload):
        raise IntegrityError(
            f"{path}: payload is {len(payload)} bytes, header declares {header['payload_bytes']} "
            f"(blocks sum to {declared})"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError(f"{path}: payload checksum mismatch")

    config = Config.from_dict(header["config"])
    model = DffnModel.build(config)
    values = {}
    for block in header["blocks"]:
        raw = payload[block["offset"] : block["offset"] + block["nbytes"]]
        values[block["name"]] = np.frombuffer(raw, dtype="<f4").reshape(block["shape"])
    model.load_parameters(values)
    return Checkpoint(config, model, header["featurizer"], header.get("metrics", {}),
                      header.get("snapshot_checksum", ""))


# --- prediction -----------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    thread_id: str
    answer_id: str
    score: float
    label: Label

    def to_json(self) -> str:
        return json.dumps({"thread_id": self.thread_id, "answer_id": self.answer_id,
                           "score": self.score, "label": self.label.value})


def predict(ckpt: Checkpoint, threads: list[Thread], table: EmbeddingTable,
            kb: KnowledgeBase | None) -> list[Prediction]:
    """Eval-mode scores and decoded labels for every answer, in input order."""
    if kb is None:
        raise ConfigError("prediction needs the knowledge snapshots used for the hand-crafted features")
    if ckpt.snapshot_checksum and kb.checksum and ckpt.snapshot_checksum != kb.checksum:
        logger.warning("knowledge snapshots differ from the ones used in training")
    cfg = ckpt.config
    featurizer = Featurizer(cfg, table, kb).load_state(ckpt.featurizer_state)
    fs = featurizer.transform(threads)
    scores = score_features(ckpt.model, fs, table.matrix)
    return [
        Prediction(t, a, float(s), decode_label(float(s), cfg.task_variant, cfg.thresholds()))
        for t, a, s in zip(fs.thread_ids, fs.answer_ids, scores)
    ]
