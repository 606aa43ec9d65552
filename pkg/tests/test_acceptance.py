"""Acceptance gate. Each test prints one PASS/FAIL line with its measurements.

Run with ``pytest -v -s tests/test_acceptance.py`` (or plain ``pytest -v``;
the lines are written past pytest's capture either way).
"""

import time
from collections import Counter

import numpy as np
import pytest

import oracles
from hiercnn import hierarchy, nn, pipeline, synth, textcnn
from hiercnn import textprep as tp
from hiercnn.cli import full_model_gradcheck, main
from hiercnn.config import RunConfig, reduced_model_settings
from hiercnn.corpus import parse_morphology_code
from hiercnn.evaluation import ConfusionMatrix, bootstrap_ci, confusion, f1_scores, kfold_plan

import helpers


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


# 1 -----------------------------------------------------------------------------

def test_criterion_1_gradients(report):
    start = time.time()
    full = full_model_gradcheck(seed=0, num_classes=3, tokens=12, maps=2, dim=4)
    rng = nn.Rng(11)
    worst_linear = 0.0
    for _ in range(10):
        w = nn.Parameter(rng.uniform(-1, 1, (3, 5)), "w")
        b = nn.Parameter(rng.uniform(-1, 1, 3), "b")
        x, r = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 3)

        def dense_loss():
            out, cache = nn.dense_forward(x, w, b)
            nn.dense_backward(r, cache, w, b)
            return float(out @ r)

        table = nn.Parameter(rng.uniform(-1, 1, (6, 3)), "table")
        idx = rng.integers(0, 6, 7)
        g = rng.uniform(-1, 1, (7, 3))

        def embed_loss():
            out = nn.embedding_forward(idx, table)
            nn.embedding_backward(idx, table, g)
            return float((out * g).sum())

        filters = nn.Parameter(rng.uniform(-1, 1, (2, 3, 4)), "f")
        fbias = nn.Parameter(rng.uniform(-1, 1, 2), "fb")
        seq = rng.uniform(-1, 1, (8, 4))
        gc = rng.uniform(-1, 1, (6, 2))

        def conv_loss():
            out, cache = nn.conv1d_forward(seq, filters, fbias)
            nn.conv1d_backward(gc, cache, filters, fbias)
            return float((out * gc).sum())

        worst_linear = max(worst_linear, nn.grad_check(dense_loss, [w, b]),
                           nn.grad_check(embed_loss, [table]), nn.grad_check(conv_loss, [filters, fbias]))
    elapsed = time.time() - start
    ok = full < 1e-4 and worst_linear < 1e-6 and elapsed < 30
    report(1, ok, f"full-model rel err {full:.2e} (<1e-4), linear layers {worst_linear:.2e} (<1e-6), "
                  f"{elapsed:.1f}s (<30s)")


# 2 -----------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(report):
    start = time.time()
    rng = np.random.default_rng(2024)
    letters = list("abcdefghijkl")
    tfidf_ok = 0
    for _ in range(100):
        docs = [list(rng.choice(letters, rng.integers(0, 50))) for _ in range(rng.integers(1, 21))]
        if not any(docs):
            docs[0] = ["a"]
        m = tp.fit_tfidf(docs)
        df, score = oracles.tfidf(docs)
        k = int(rng.integers(1, 13))
        same = (m.doc_freq == df and set(m.corpus_score) == set(score)
                and all(abs(m.corpus_score[t] - score[t]) <= 1e-12 * abs(score[t]) for t in score)
                and list(tp.select_top_features(m, k).terms) == oracles.top_terms(m.corpus_score, k))
        tfidf_ok += same
    f1_ok = 0
    for _ in range(100):
        c = int(rng.integers(1, 8))
        classes = [f"c{i}" for i in range(c)]
        n = int(rng.integers(0, 80))
        golds = [classes[i] for i in rng.integers(0, c, n)]
        preds = [classes[i] for i in rng.integers(0, c, n)]
        cm = confusion(golds, preds, classes)
        table = oracles.tally(golds, preds, classes)
        per_class, micro, macro = oracles.f1_report(golds, preds, classes)
        r = f1_scores(cm)
        same = (cm.counts.tolist() == [[table[g][p] for p in classes] for g in classes]
                and r.f1_micro == float(micro)
                and all(r.per_class[c_] == tuple(float(v) for v in per_class[c_]) for c_ in classes)
                and abs(r.f1_macro - float(macro)) <= 1e-12)
        f1_ok += same
    folds_ok = 0
    for i in range(100):
        counts = {lab: int(rng.integers(1, 40)) for lab in rng.choice(list("ABCDEFG"), rng.integers(1, 6), False)}
        items = [helpers.Item(f"{lab}{j}", lab) for lab, n in counts.items() for j in range(n)]
        k = int(rng.integers(2, 11))
        plan = kfold_plan(items, k, seed=i)
        folds_ok += oracles.check_fold_plan(items, plan, k) == []
    elapsed = time.time() - start
    ok = tfidf_ok == f1_ok == folds_ok == 100 and elapsed < 60
    report(2, ok, f"exact agreement tfidf {tfidf_ok}/100, confusion+F1 {f1_ok}/100, folds {folds_ok}/100, "
                  f"{elapsed:.1f}s (<60s)")


# 3 -----------------------------------------------------------------------------

def test_criterion_3_micro_equals_accuracy(report):
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(500):
        c = int(rng.integers(1, 11))
        counts = rng.integers(0, 50, (c, c))
        cm = ConfusionMatrix([str(i) for i in range(c)], counts)
        bad += f1_scores(cm).f1_micro != cm.accuracy()
    report(3, bad == 0, f"f1_micro == accuracy on {500 - bad}/500 random matrices with 1..10 classes")


# 4 -----------------------------------------------------------------------------

def test_criterion_4_separable_learnability(report):
    start = time.time()
    scores = []
    for seed in range(5):
        data, cfg, _ = helpers.prepared(helpers.separable_spec(seed), seed, epochs=30)
        model, _ = pipeline.train_flat(data, cfg)
        scores.append(pipeline.evaluate_flat(model, data.splits["test"]).metrics().f1_micro)
    elapsed = time.time() - start
    hits = sum(s >= 0.95 for s in scores)
    ok = hits >= 4 and elapsed < 300
    report(4, ok, f"test F1-micro per seed {[round(s, 3) for s in scores]}, {hits}/5 >= 0.95 (need 4), "
                  f"{elapsed:.0f}s (<300s)")


# 5 -----------------------------------------------------------------------------

def run_nine_class(seed):
    corpus, _ = synth.generate(synth.nine_class_spec(seed=seed, overlap_rate=0.35))
    cfg = RunConfig(seed=seed, model=reduced_model_settings(epochs=40, embedding_dim=32))
    data, _ = pipeline.prepare(corpus, cfg)
    flat, _ = pipeline.train_flat(data, cfg)
    ensemble = pipeline.train_hier(data, cfg, flat_model=flat)
    test = data.splits["test"]
    f = pipeline.evaluate_flat(flat, test).metrics()
    h = pipeline.evaluate_hier(ensemble, test)[0].metrics()
    n = pipeline.evaluate_hier(ensemble, test, fallback=False)[0].metrics()
    return f, h, n


@pytest.mark.slow
def test_criterion_5_hierarchy_beats_flat_on_macro(report, capsys):
    start = time.time()
    macro_wins, micro_ok, lines = 0, True, []
    for seed in range(5):
        f, h, n = run_nine_class(seed)
        macro_wins += h.f1_macro > f.f1_macro
        micro_ok &= h.f1_micro >= f.f1_micro - 0.02
        lines.append(f"seed {seed}: flat {f.f1_micro:.3f}/{f.f1_macro:.3f} hier {h.f1_micro:.3f}/{h.f1_macro:.3f} "
                     f"hier-no-fallback {n.f1_micro:.3f}/{n.f1_macro:.3f} (micro/macro)")
        with capsys.disabled():
            print(f"\n  {lines[-1]}", end="")
    elapsed = time.time() - start
    ok = macro_wins >= 4 and micro_ok and elapsed < 45 * 60
    report(5, ok, f"hier macro > flat macro in {macro_wins}/5 seeds (need 4); micro within 0.02 in every seed: "
                  f"{micro_ok}; {elapsed / 60:.1f} min (<45)")


# 6 -----------------------------------------------------------------------------

def test_criterion_6_bootstrap_calibration(report):
    golds = ["A"] * 200
    preds = ["A"] * 100 + ["B"] * 100
    rows, ok = [], True
    for seed in range(10):
        ci = bootstrap_ci(golds, preds, "f1_micro", B=1000, alpha=0.05, seed=seed)
        width = ci.upper - ci.lower
        ok &= ci.lower <= 0.5 <= ci.upper and 0.10 <= width <= 0.18
        rows.append(f"[{ci.lower:.3f},{ci.upper:.3f}]")
    report(6, ok, "micro 95% CIs over 10 seeds " + " ".join(rows) + " (contain 0.5, width in [0.10,0.18])")


# 7 -----------------------------------------------------------------------------

def test_criterion_7_cli_reproducible(report, tmp_path, capsys):
    import pathlib
    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    assert main(["synth", str(root / "small_synth.ini"), "--out", str(tmp_path / "syn")]) == 0
    corpus = str(tmp_path / "syn" / "corpus.xml")
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        args = ["--config", str(root / "tiny.ini"), "--out", str(out), "--jobs", "1"]
        codes = [main(["prep", corpus] + args), main(["train-flat"] + args), main(["evaluate"] + args)]
        assert codes == [0, 0, 0]
        runs.append(out)
    capsys.readouterr()
    names = ["flat.tcnn", "results_flat.tsv", "metrics.tsv", "manifest.txt", "features.txt",
             "train.tsv", "val.tsv", "test.tsv"]
    differing = [n for n in names if (runs[0] / n).read_bytes() != (runs[1] / n).read_bytes()]
    report(7, not differing, f"prep -> train-flat -> evaluate twice: {len(names) - len(differing)}/{len(names)} "
                             f"files byte-identical {differing or ''}")


# 8 -----------------------------------------------------------------------------

class GoldStub:
    """Node model answering with the true (re)label of each known document."""

    def __init__(self, labels, answers):
        self.class_labels = list(labels)
        self.answers = answers

    def probabilities(self, x, batch_size=None):
        x = np.atleast_2d(x)
        out = np.zeros((len(x), len(self.class_labels)))
        for i, row in enumerate(x):
            out[i, self.class_labels.index(self.answers[row.tobytes()])] = 1.0
        return out


@pytest.mark.slow
def test_criterion_8_routing_totality(report):
    labels = ["8500/3", "8520/3", "8522/3", "8480/3"]
    spec = synth.SynthSpec([(parse_morphology_code(c), n) for c, n in zip(labels, (1200, 400, 250, 150))],
                           overlap_rate=0.5, seed=8)
    corpus, _ = synth.generate(spec)
    cfg = RunConfig(seed=8, model={"epochs": "20", "embedding_dim": "16", "maps_per_window": "16",
                                   "hidden_size": "32"})
    cfg.prep.min_count, cfg.prep.max_count, cfg.prep.split = 1, 10**6, (0.4, 0.1, 0.5)
    data, _ = pipeline.prepare(corpus, cfg)
    test = data.splits["test"]
    ensemble = pipeline.train_hier(data, cfg)
    _, routes = pipeline.evaluate_hier(ensemble, test)
    total = len(routes) == len(test) and all(r.final_label in data.classes for r in routes)
    paths = Counter(" > ".join(name for name, _, _ in r.path) for r in routes)
    kinds = {"a>binary": paths["parent > child_binary"],
             "a>binary>multi": paths["parent > child_binary > child_multi"],
             "b>multi": paths["parent > child_multi"]}
    # gold stubs in every node
    keys = [row.tobytes() for row in test.x]
    part, maj = ensemble.partition, ensemble.majority_label
    gold = dict(zip(keys, test.labels))
    if len(gold) != len(keys):
        pytest.fail("duplicate encoded documents with different labels in the test set")
    stubbed = hierarchy.HierarchicalEnsemble(
        GoldStub(["a", "b"], {k: part.group_of(g) for k, g in gold.items()}),
        GoldStub([maj, hierarchy.OTHER], {k: maj if g == maj else hierarchy.OTHER for k, g in gold.items()}),
        GoldStub(ensemble.child_multi.class_labels, {k: g if g != maj else ensemble.child_multi.class_labels[0]
                                                     for k, g in gold.items()}),
        part, maj)
    rs, _ = pipeline.evaluate_hier(stubbed, test)
    stub_acc = rs.metrics().f1_micro
    ok = len(test) == 1000 and total and all(kinds.values()) and stub_acc == 1.0
    report(8, ok, f"{len(test)} test docs all labelled: {total}; route counts {kinds}; "
                  f"gold-stub accuracy {stub_acc:.3f}")
