"""Command-line toolchain.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 a check ran but failed (``gradcheck``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dffn.config import MICRO, Config
from dffn.corpus import Label, TaskVariant, dump_jsonl, load_threads, parse_files, qa_pair_count
from dffn.errors import (
    CheckpointVersionError,
    ConfigError,
    DataError,
    IntegrityError,
    ShapeError,
)
from dffn.fusion import METADATA_DIM
from dffn.hcf import HCF_DIM, hcf_record
from dffn.knowledge import build_snapshots, load_snapshots
from dffn.metrics import evaluate
from dffn.model import Batch, DffnModel
from dffn.nnkernel import grad_check
from dffn.sentence_encoder import load_embeddings
from dffn.trainer import Featurizer, load_checkpoint, predict, save_checkpoint, train

log = logging.getLogger("dffn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK_FAILED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _config(args) -> Config:
    cfg = Config.from_file(args.config) if getattr(args, "config", None) else Config()
    overrides = {}
    if getattr(args, "variant", None):
        overrides["variant"] = TaskVariant.parse(args.variant).value
    if getattr(args, "ablation", None):
        overrides["ablation"] = args.ablation
    for key in ("epochs", "seed", "learning_rate", "batch_size"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return cfg.replace(**overrides) if overrides else cfg


def _threads(paths, variant):
    out = []
    for p in paths:
        out.extend(load_threads(p, variant))
    return out


def _providers(args, cfg):
    table = load_embeddings(args.embeddings, cfg.embedding_dim)
    kb = load_snapshots(args.snapshots, cfg.knowledge())
    return table, kb


def cmd_ingest(args):
    variant = TaskVariant.parse(args.variant)
    threads = parse_files(args.input, variant)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        dump_jsonl(threads, out)
    finally:
        if args.out:
            out.close()
    print(f"{len(threads)} threads, {qa_pair_count(threads)} QA pairs", file=sys.stderr)
    return EXIT_OK


def cmd_build_snapshots(args):
    manifest = build_snapshots(args.anchors, args.links, args.docs, args.out, args.total_concepts)
    print(json.dumps(manifest, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_features(args):
    cfg = _config(args)
    table, kb = _providers(args, cfg)
    threads = _threads(args.threads, cfg.task_variant)
    stats_threads = _threads(args.train, cfg.task_variant) if args.train else threads
    featurizer = Featurizer(cfg, table, kb).fit(stats_threads)
    fs = featurizer.transform(threads)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i in range(len(fs)):
            rec = {"thread_id": fs.thread_ids[i], "answer_id": fs.answer_ids[i],
                   "hcf": hcf_record(fs.hcf[i]), "metadata": [float(x) for x in fs.meta[i]]}
            out.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    table, kb = _providers(args, cfg)
    train_threads = _threads(args.train, cfg.task_variant)
    dev_threads = _threads(args.dev, cfg.task_variant) if args.dev else []
    log_stream = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        ckpt = train(train_threads, dev_threads, cfg, table, kb, log_stream)
    finally:
        if log_stream:
            log_stream.close()
    save_checkpoint(ckpt, args.out)
    print(json.dumps(ckpt.metrics, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_predict(args):
    ckpt = load_checkpoint(args.model)
    cfg = ckpt.config
    table, kb = _providers(args, cfg)
    threads = _threads(args.threads, cfg.task_variant)
    preds = predict(ckpt, threads, table, kb)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for p in preds:
            out.write(p.to_json() + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def read_predictions(path) -> dict:
    preds = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                preds[(rec["thread_id"], rec["answer_id"])] = (float(rec["score"]), Label(rec["label"]))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return preds


def cmd_eval(args):
    variant = TaskVariant.parse(args.variant)
    gold = _threads(args.gold, variant)
    report = evaluate(gold, read_predictions(args.pred), variant)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    else:
        print(report.to_json())
    print(report.table())
    return EXIT_OK


def gradcheck_batch(cfg: Config, n: int, seed: int):
    rng = np.random.default_rng(seed)
    shape = (n, cfg.max_tokens, cfg.embedding_dim)
    batch = Batch(rng.standard_normal(shape), rng.standard_normal(shape),
                  rng.uniform(size=(n, HCF_DIM)), rng.uniform(size=(n, METADATA_DIM)))
    targets = rng.choice([-1.0, 1.0], size=n)
    return batch, targets


def cmd_gradcheck(args):
    cfg = Config.from_file(args.config) if args.config else MICRO
    model = DffnModel.build(cfg, seed=args.seed)
    batch, targets = gradcheck_batch(cfg, args.batch, args.seed)
    report = grad_check(model, batch, targets, args.epsilon, args.tolerance, seed=args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dffn", description="Answer quality prediction with a deep feature fusion network.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def providers(sp):
        sp.add_argument("--embeddings", required=True, help="GloVe-format text embeddings")
        sp.add_argument("--snapshots", required=True, help="knowledge snapshot directory")

    sp = sub.add_parser("ingest", help="SemEval XML -> JSON-lines threads")
    sp.add_argument("--input", nargs="+", required=True)
    sp.add_argument("--variant", required=True, help="2015 or 2016")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("build-snapshots", help="compile TSV sources into knowledge snapshots")
    sp.add_argument("--anchors", required=True)
    sp.add_argument("--links", required=True)
    sp.add_argument("--docs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--total-concepts", type=int)
    sp.set_defaults(func=cmd_build_snapshots)

    sp = sub.add_parser("features", help="dump hand-crafted and metadata vectors")
    sp.add_argument("--threads", nargs="+", required=True)
    sp.add_argument("--train", nargs="+", help="labeled split for forum statistics (default: --threads)")
    sp.add_argument("--config")
    sp.add_argument("--variant")
    sp.add_argument("--out")
    providers(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("train", help="train and write a checkpoint")
    sp.add_argument("--train", nargs="+", required=True)
    sp.add_argument("--dev", nargs="+")
    sp.add_argument("--config")
    sp.add_argument("--variant")
    sp.add_argument("--ablation", choices=("none", "no_hcf", "no_cnn"))
    sp.add_argument("--no-hcf", dest="ablation", action="store_const", const="no_hcf")
    sp.add_argument("--no-cnn", dest="ablation", action="store_const", const="no_cnn")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="JSON-lines training log")
    providers(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="score answers with a checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--threads", nargs="+", required=True)
    sp.add_argument("--out")
    providers(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="MAP / F1 / accuracy of predictions")
    sp.add_argument("--gold", nargs="+", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--variant", required=True)
    sp.add_argument("--report", help="write the JSON report here instead of stdout")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    sp.add_argument("--config", help="key=value config (default: built-in micro config)")
    sp.add_argument("--epsilon", type=float, default=1e-3)
    sp.add_argument("--tolerance", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--batch", type=int, default=4)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DataError, ConfigError, CheckpointVersionError, IntegrityError, ShapeError, OSError, ValueError) as exc:
        print(f"dffn {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
