"""Acceptance criteria; each test prints one PASS/FAIL/SKIP line in the summary."""

import itertools
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from synthetic import cue_corpus, embedding_matrix
from dffn.cli import gradcheck_batch
from dffn.config import MICRO
from dffn.corpus import Answer, Label, LabelCounts, Question, TaskVariant, Thread, parse_files, qa_pair_count
from dffn.fusion import encode_metadata, fuse
from dffn.hcf import Embedders, HcfExtractor, mean_pair_similarity
from dffn.knowledge import KnowledgeBase, LinkGraph, relatedness
from dffn.metrics import average_precision, classification_metrics
from dffn.model import DffnModel
from dffn.nnkernel import (
    EVAL,
    ConvLayer,
    FcLayer,
    PoolSpec,
    RReluConfig,
    conv2d_forward,
    fc_forward,
    grad_check,
    maxpool_forward,
    rrelu,
    smooth_l1,
)
from dffn.sentence_encoder import EmbeddingTable, SentenceCnn, SentenceCnnConfig, encode_pair, encode_sentence
from dffn.trainer import Checkpoint, accuracy, fit_model, load_checkpoint, save_checkpoint, score_features

pytestmark = pytest.mark.acceptance


def measured(request, text):
    request.node.user_properties.append(("measured", text))


@pytest.mark.acceptance(1, "gradient fidelity on the micro network")
def test_gradient_fidelity(request):
    assert (MICRO.sentence_dim, 2 * MICRO.sentence_dim) == (8, 16)
    started = time.perf_counter()
    model = DffnModel.build(MICRO, seed=0)
    assert model.input_dim == 16 + 28 + 33
    batch, targets = gradcheck_batch(MICRO, 4, seed=0)
    report = grad_check(model, batch, targets, epsilon=1e-3, tolerance=1e-3, seed=0)
    elapsed = time.perf_counter() - started
    names = {layer.name for layer in report.layers}
    measured(request, f"max rel err {report.max_rel_error:.2e}, {elapsed:.1f} s")
    assert {n.split(".")[0] for n in names} == {"q_cnn", "a_cnn", "fusion"}
    assert sum(layer.n_params for layer in report.layers) == sum(p.size for p in model.parameters().values())
    assert report.passed and report.max_rel_error < 1e-3
    assert elapsed < 60


@pytest.mark.acceptance(2, "kernel outputs equal naive loops on 200 shapes")
def test_kernel_oracles(request):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        c, o = rng.integers(1, 4, size=2)
        kh, kw = rng.integers(1, 4, size=2)
        sh, sw = rng.integers(1, 3, size=2)
        h, w = rng.integers(kh, 11), rng.integers(kw, 11)
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        W = rng.standard_normal((o, c, kh, kw)).astype(np.float32)
        b = rng.standard_normal(o).astype(np.float32)
        out = conv2d_forward(x, ConvLayer(W, b, (sh, sw)))
        worst = max(worst, np.abs(out - oracles.conv2d(x, W, b, (sh, sw))).max())

        ph, pw = rng.integers(1, min(h, 4) + 1), rng.integers(1, min(w, 4) + 1)
        pooled, arg = maxpool_forward(x, PoolSpec((ph, pw), (sh, sw)))
        ref, ref_arg = oracles.maxpool(x, (ph, pw), (sh, sw))
        worst = max(worst, np.abs(pooled - ref).max())
        assert np.array_equal(arg, ref_arg)

        n_in, n_out = rng.integers(1, 30, size=2)
        v = rng.standard_normal(n_in).astype(np.float32)
        Wf = rng.standard_normal((n_out, n_in)).astype(np.float32)
        bf = rng.standard_normal(n_out).astype(np.float32)
        worst = max(worst, np.abs(fc_forward(v, FcLayer(Wf, bf)) - oracles.fc(v, Wf, bf)).max())
    measured(request, f"max |delta| {worst:.2e}")
    assert worst <= 1e-5


@pytest.mark.acceptance(3, "SmoothL1 values and eval RReLU slope")
def test_loss_and_activation(request):
    assert smooth_l1([0.0], [1.0]) == 0.5
    assert smooth_l1([0.5], [1.0]) == 0.125
    for eps in (1e-9, 1e-6):
        assert abs(smooth_l1([1.0 - eps], [0.0]) - smooth_l1([1.0 + eps], [0.0])) < 3 * eps
    out, _ = rrelu(np.array([-1.0]), RReluConfig(), EVAL)
    measured(request, f"eval RReLU(-1) = {out[0]:.4f}")
    assert out[0] == pytest.approx(-(0.125 + 0.333) / 2, abs=1e-12)
    assert round(out[0], 3) == -0.229


@pytest.mark.acceptance(4, "pair-mean similarity equals the double sum")
def test_pair_mean_oracle(request):
    rng = np.random.default_rng(4)
    worst = 0.0
    for n, m in itertools.product(range(9), repeat=2):
        for _ in range(3):
            table = rng.random((n, m))
            a, b = [f"a{i}" for i in range(n)], [f"b{j}" for j in range(m)]

            def sim(x, y):
                return table[int(x[1:]), int(y[1:])]

            got = mean_pair_similarity(a, b, sim)
            worst = max(worst, abs(got - oracles.mean_pair(a, b, sim)))
    measured(request, f"max |delta| {worst:.1e} over sizes 0..8 x 0..8")
    assert worst <= 1e-12


@pytest.mark.acceptance(5, "relatedness worked value")
def test_relatedness_value(request):
    rows = [("c1", "out", x) for x in ("x1", "x2", "x3", "x4")] + [("c2", "in", x) for x in ("x1", "x2")]
    value = relatedness("c1", "c2", LinkGraph(rows, total_concepts=64))
    measured(request, f"{value:.12f}")
    assert abs(value - 0.8) <= 1e-9


def _overfit_run():
    cfg = MICRO.replace(epochs=200, batch_size=4, seed=0)
    fs = cue_corpus(16, "and", cfg, seed=3)
    matrix = embedding_matrix(cfg)
    model = DffnModel.build(cfg)
    result = fit_model(model, fs, fs, matrix, cfg)
    scores = score_features(model, fs, matrix)
    hits = round(accuracy(scores, fs.gold, cfg) * len(fs))
    return hits, [h["train_loss"] for h in result.history], scores


@pytest.mark.acceptance(6, "overfit 16 synthetic pairs")
def test_overfit(request):
    started = time.perf_counter()
    hits, losses, scores = _overfit_run()
    hits2, losses2, scores2 = _overfit_run()
    elapsed = (time.perf_counter() - started) / 2
    measured(request, f"{hits}/16 after {len(losses)} epochs, {elapsed:.1f} s per run")
    assert hits >= 15
    assert len(losses) <= 200 and elapsed < 120
    assert losses == losses2 and np.array_equal(scores, scores2) and hits == hits2


def _dev_accuracy(ablation, seed):
    cfg = MICRO.replace(ablation=ablation, seed=seed, epochs=60, patience=60, batch_size=16)
    fs = cue_corpus(400, "and", cfg, seed=seed + 1)
    train_fs, dev_fs = fs.subset(range(320)), fs.subset(range(320, 400))
    matrix = embedding_matrix(cfg)
    model = DffnModel.build(cfg)
    fit_model(model, train_fs, dev_fs, matrix, cfg)
    return accuracy(score_features(model, dev_fs, matrix), dev_fs.gold, cfg)


@pytest.mark.slow
@pytest.mark.acceptance(7, "fusion beats each ablation by 10 points")
def test_ablation_ordering(request):
    medians = {ab: statistics.median(_dev_accuracy(ab, s) for s in range(3)) for ab in ("none", "no_hcf", "no_cnn")}
    measured(request, ", ".join(f"{k} {100 * v:.1f}" for k, v in medians.items()))
    assert medians["none"] >= medians["no_hcf"] + 0.10
    assert medians["none"] >= medians["no_cnn"] + 0.10


@pytest.mark.acceptance(8, "metric oracles")
def test_metric_oracles(request):
    n = 0
    for ranking in oracles.all_rankings(8):
        assert average_precision(ranking) == pytest.approx(oracles.average_precision(list(ranking)), abs=1e-12)
        n += 1
    G, B = Label.GOOD, Label.BAD
    report = classification_metrics([G, B, G, B], [G, G, G, B], TaskVariant.BINARY_2016)
    measured(request, f"{n} rankings; acc {report.accuracy}, Good-F1 {report.f1:.12f}")
    assert report.accuracy == 0.75
    assert abs(report.f1 - 0.8) < 1e-15


@pytest.fixture(scope="module")
def full_cnns():
    rng = np.random.default_rng(9)
    cfg = SentenceCnnConfig()
    return SentenceCnn.build(cfg, rng), SentenceCnn.build(cfg, rng)


@pytest.mark.acceptance(9, "dimensional contracts 270/540/28/33/601")
@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    n_q=st.integers(0, 140), n_a=st.integers(0, 140),
    question=st.text(max_size=60), answer=st.text(max_size=60),
    counts=st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50)),
    author=st.sampled_from(["known", "stranger"]),
    seed=st.integers(0, 2**16),
)
def test_dimensional_contracts(full_cnns, n_q, n_a, question, answer, counts, author, seed):
    q_cnn, a_cnn = full_cnns
    rng = np.random.default_rng(seed)
    q = np.zeros((100, 300), dtype=np.float32)
    a = np.zeros((100, 300), dtype=np.float32)
    q[: min(n_q, 100)] = rng.standard_normal((min(n_q, 100), 300))
    a[: min(n_a, 100)] = rng.standard_normal((min(n_a, 100), 300))
    assert encode_sentence(q, q_cnn).shape == (270,)
    pair = encode_pair(q, a, q_cnn, a_cnn)
    assert pair.shape == (540,)

    thread = Thread(Question("Q", "cat", "known", "", question), (Answer("C1", author, answer, 1),))
    emb = Embedders.default(EmbeddingTable(["w"], np.ones((1, 4))), dim=8, buckets=64)
    stats = {"known": LabelCounts(*counts)}
    hcf = HcfExtractor(KnowledgeBase.empty(), emb, stats, {"cat": LabelCounts(*counts)}).extract(thread, thread.answers[0])
    assert hcf.shape == (28,)
    meta = encode_metadata("cat", "known", author, stats, {"cat": LabelCounts(*counts)})
    assert meta.shape == (33,)
    assert fuse(pair, hcf, meta).shape == (601,)


SEMEVAL = os.environ.get("DFFN_SEMEVAL_DIR")
EXPECTED_PAIRS = {
    ("2016", "train"): 36198, ("2016", "dev"): 2440, ("2016", "test"): 3270,
    ("2015", "train"): 16541, ("2015", "dev"): 1645, ("2015", "test"): 1976,
}


@pytest.mark.acceptance(10, "SemEval QA-pair counts (needs DFFN_SEMEVAL_DIR)")
def test_semeval_counts(request):
    if not SEMEVAL or not Path(SEMEVAL).is_dir():
        pytest.skip("DFFN_SEMEVAL_DIR not set; SemEval files absent")
    counts = {}
    for (year, split), expected in EXPECTED_PAIRS.items():
        files = sorted((Path(SEMEVAL) / year / split).glob("*.xml"))
        if not files:
            pytest.skip(f"no XML files under {year}/{split}")
        counts[(year, split)] = qa_pair_count(parse_files(files, TaskVariant.parse(year)))
    measured(request, ", ".join(f"{y}/{s} {n}" for (y, s), n in counts.items()))
    assert counts == EXPECTED_PAIRS


@pytest.mark.acceptance(11, "checkpoint round-trip is bit-identical")
def test_checkpoint_round_trip(request, tmp_path):
    cfg = MICRO.replace(epochs=3, batch_size=8)
    fs = cue_corpus(40, "and", cfg, seed=5)
    matrix = embedding_matrix(cfg)
    model = DffnModel.build(cfg)
    fit_model(model, fs.subset(range(30)), None, matrix, cfg)

    path = tmp_path / "probe.ckpt"
    save_checkpoint(Checkpoint(cfg, model, {"authors": {}, "categories": {}, "doc_embedder": None}), path)
    probe = fs.subset(range(30, 40))
    before = score_features(model, probe, matrix)
    after = score_features(load_checkpoint(path).model, probe, matrix)
    measured(request, f"max |delta| {np.abs(before - after).max():.1e} on {len(probe)} probes")
    assert len(probe) == 10
    assert np.array_equal(before, after)
