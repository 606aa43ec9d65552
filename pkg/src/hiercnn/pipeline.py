"""End-to-end orchestration shared by the CLI and the acceptance tests:
preparation, flat and hierarchical training, evaluation and cross-validation."""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hierarchy, textcnn
from . import textprep as tp
from .config import RunConfig
from .corpus import AnonymizationFinding, LabelledCorpus, parse_morphology_code, select_classes, verify_anonymized
from .errors import CheckpointError, InputError, MismatchedPreprocessing
from .evaluation import ConfusionMatrix, ResultSet, confusion, kfold_plan, split_train_val_test
from .hierarchy import EncodedSplit, HierarchicalEnsemble

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class CleanedCorpus:
    """Tokenized in-scope reports plus what preparation removed or flagged."""

    reports: list[tp.TokenizedReport]
    afrikaans_removed: list[str]
    findings: list[AnonymizationFinding]
    class_counts: dict[str, int]


@dataclass
class PreparedData:
    features: tp.FeatureSet
    vocab: tp.Vocabulary
    max_len: int
    classes: list[str]
    splits: dict[str, EncodedSplit]
    preprocessing_hash: str
    info: dict[str, str] = field(default_factory=dict)

    def labels_index(self, split: str) -> np.ndarray:
        pos = {c: i for i, c in enumerate(self.classes)}
        return np.array([pos[lab] for lab in self.splits[split].labels], dtype=np.int64)


def clean_corpus(corpus: LabelledCorpus, cfg: RunConfig) -> CleanedCorpus:
    """Anonymization scan, Afrikaans filter, tokenization and class selection."""
    p = cfg.prep
    en = tp.load_stopwords(p.en_stopwords or None, language="en")
    af = tp.load_stopwords(p.af_stopwords or None, language="af")
    findings = [f for r in corpus for f in verify_anonymized(r)]
    kept, removed = [], []
    for r in corpus:
        if tp.is_afrikaans_only(tp.split_words(r.text), af, en, p.afrikaans_threshold):
            removed.append(r.id)
        else:
            kept.append(r)
    always = [parse_morphology_code(c) for c in p.always_include]
    selected = select_classes(LabelledCorpus(kept), p.min_count, p.max_count, always)
    reports = [tp.TokenizedReport(r.id, tuple(tp.tokenize(r.text, en)), str(r.label)) for r in selected]
    counts = {str(c): n for c, n in sorted(selected.class_counts.items())}
    return CleanedCorpus(reports, removed, findings, counts)


def preprocessing_hash(features: tp.FeatureSet, max_len: int, classes) -> str:
    h = hashlib.sha256()
    h.update(features.dumps().encode("utf-8"))
    h.update(f"max_len={max_len}\nclasses={','.join(classes)}\n".encode("utf-8"))
    return h.hexdigest()[:16]


def build_features(reports: list[tp.TokenizedReport], split_ids: dict[str, list[str]],
                   cfg: RunConfig, window: int = 5) -> PreparedData:
    """Fit TF-IDF on the training split, filter and encode every split."""
    by_id = {r.id: r for r in reports}
    train_docs = [by_id[i] for i in split_ids["train"]]
    features = tp.select_top_features(tp.fit_tfidf(train_docs), cfg.prep.k_features)
    vocab = tp.build_vocabulary(features)
    filtered = {r.id: tp.filter_document(r.tokens, features) for r in reports}
    max_len = cfg.prep.max_len or tp.length_percentile(
        [len(filtered[i]) for i in split_ids["train"]], cfg.prep.max_len_percentile)
    max_len = max(max_len, window)
    classes = sorted({r.label for r in reports})
    splits = {}
    for name in SPLITS:
        ids = list(split_ids[name])
        x = np.zeros((len(ids), max_len), dtype=np.int64)
        for row, rid in enumerate(ids):
            x[row] = tp.encode(filtered[rid], vocab, max_len).indices
        splits[name] = EncodedSplit(ids, x, [by_id[i].label for i in ids])
    return PreparedData(features, vocab, max_len, classes, splits,
                        preprocessing_hash(features, max_len, classes))


def prepare(corpus: LabelledCorpus, cfg: RunConfig) -> tuple[PreparedData, CleanedCorpus]:
    cleaned = clean_corpus(corpus, cfg)
    train, val, test = split_train_val_test(cleaned.reports, cfg.prep.split, cfg.seed)
    windows = cfg.node_config("flat", 2, 10**6).window_sizes
    data = build_features(cleaned.reports, {"train": train, "val": val, "test": test}, cfg, max(windows))
    data.info.update({
        "reports_in": str(len(corpus)),
        "reports_selected": str(len(cleaned.reports)),
        "afrikaans_removed": ",".join(cleaned.afrikaans_removed),
        "anonymization_findings": str(len(cleaned.findings)),
        "class_counts": ",".join(f"{c}:{n}" for c, n in cleaned.class_counts.items()),
    })
    return data, cleaned


# --- persistence of prepared data ---------------------------------------------

def write_prepared(data: PreparedData, cfg: RunConfig, out_dir, extra: dict[str, str] | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "features.txt"), "w", encoding="utf-8") as fh:
        fh.write(data.features.dumps())
    for name, split in data.splits.items():
        with open(os.path.join(out_dir, f"{name}.tsv"), "w", encoding="utf-8") as fh:
            for rid, label, row in zip(split.ids, split.labels, split.x):
                fh.write(f"{rid}\t{label}\t{' '.join(str(int(v)) for v in row)}\n")
    info = {"preprocessing_hash": data.preprocessing_hash, "max_len": str(data.max_len),
            "classes": ",".join(data.classes), "vocab_size": str(len(data.vocab)),
            **{f"n_{k}": str(len(v)) for k, v in data.splits.items()}, **data.info, **(extra or {})}
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
        fh.write("\n[artifacts]\n")
        fh.write("".join(f"{k} = {v}\n" for k, v in info.items()))


def read_manifest_info(out_dir) -> dict[str, str]:
    path = os.path.join(out_dir, "manifest.txt")
    if not os.path.exists(path):
        raise InputError(f"no prepared data in {out_dir} (run 'prep' first)")
    info, inside = {}, False
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("["):
                inside = line == "[artifacts]"
            elif inside and " = " in line:
                k, _, v = line.partition(" = ")
                info[k] = v
    return info


def load_prepared(out_dir) -> PreparedData:
    info = read_manifest_info(out_dir)
    with open(os.path.join(out_dir, "features.txt"), encoding="utf-8") as fh:
        features = tp.FeatureSet.loads(fh.read())
    max_len = int(info["max_len"])
    classes = info["classes"].split(",")
    splits = {}
    for name in SPLITS:
        ids, labels, rows = [], [], []
        with open(os.path.join(out_dir, f"{name}.tsv"), encoding="utf-8") as fh:
            for line in fh:
                rid, label, idx = line.rstrip("\n").split("\t")
                ids.append(rid)
                labels.append(label)
                rows.append([int(v) for v in idx.split()])
        x = np.array(rows, dtype=np.int64).reshape(len(rows), max_len)
        splits[name] = EncodedSplit(ids, x, labels)
    phash = preprocessing_hash(features, max_len, classes)
    if phash != info["preprocessing_hash"]:
        raise MismatchedPreprocessing("prepared files do not match their manifest hash")
    return PreparedData(features, tp.build_vocabulary(features), max_len, classes, splits, phash, info)


# --- training -----------------------------------------------------------------

def train_flat(data: PreparedData, cfg: RunConfig):
    node = cfg.node_config("flat", len(data.classes), data.max_len)
    train = (data.splits["train"].x, data.labels_index("train"))
    val = (data.splits["val"].x, data.labels_index("val"))
    return textcnn.fit(node, len(data.vocab), data.classes, train, val, data.preprocessing_hash)


def flat_confusion(model: textcnn.TextCnnModel, split: EncodedSplit) -> ConfusionMatrix:
    preds = [model.class_labels[i] for i in model.probabilities(split.x).argmax(axis=1)]
    return confusion(split.labels, preds, model.class_labels)


def class_counts(data: PreparedData) -> dict[str, int]:
    counts = dict.fromkeys(data.classes, 0)
    for split in data.splits.values():
        for lab in split.labels:
            counts[lab] += 1
    return counts


def train_hier(data: PreparedData, cfg: RunConfig, partition: hierarchy.ClassPartition | None = None,
               flat_model: textcnn.TextCnnModel | None = None, jobs: int = 1) -> HierarchicalEnsemble:
    """Propose a partition from class counts and the flat model's validation
    confusion matrix (unless one is given), then train the three nodes."""
    if partition is None:
        if flat_model is None:
            flat_model, _ = train_flat(data, cfg)
        cm = flat_confusion(flat_model, data.splits["val"])
        partition = hierarchy.propose_partition(class_counts(data), cm)
    partition.validate(data.classes)
    n_multi = len(partition.classes) - 1
    return hierarchy.train_hierarchy(
        data.splits["train"], data.splits["val"], partition,
        cfg.node_config("parent", 2, data.max_len), cfg.node_config("binary", 2, data.max_len),
        cfg.node_config("multi", max(n_multi, 2), data.max_len), len(data.vocab),
        data.preprocessing_hash, jobs=jobs, fallback=cfg.eval.fallback)


# --- evaluation ---------------------------------------------------------------

def check_hash(expected: str, actual: str, what: str) -> None:
    if expected != actual:
        raise MismatchedPreprocessing(f"{what} was built for preprocessing {actual}, data is {expected}")


def evaluate_flat(model: textcnn.TextCnnModel, split: EncodedSplit, name: str = "Multiclass CNN") -> ResultSet:
    probs = model.probabilities(split.x)
    preds = [model.class_labels[i] for i in probs.argmax(axis=1)]
    return ResultSet(name, list(split.ids), list(split.labels), preds, probs.max(axis=1).tolist(),
                     list(model.class_labels))


def evaluate_hier(ensemble: HierarchicalEnsemble, split: EncodedSplit, fallback: bool | None = None,
                  name: str = "Hierarchical CNN"):
    routes = hierarchy.predict_batch(ensemble, split.x, fallback)
    rs = ResultSet(name, list(split.ids), list(split.labels), [r.final_label for r in routes],
                   [r.path[-1][2] for r in routes], ensemble.classes)
    return rs, routes


def routes_tsv(ids, routes) -> str:
    lines = []
    for rid, r in zip(ids, routes):
        path = " > ".join(f"{name}:{label}:{p:.4f}" for name, label, p in r.path)
        lines.append(f"{rid}\t{r.parent_group}\t{r.final_label}\t{path}")
    return "\n".join(lines) + "\n"


def load_flat_checkpoint(out_dir, data: PreparedData) -> textcnn.TextCnnModel:
    path = os.path.join(out_dir, "flat.tcnn")
    if not os.path.exists(path):
        raise CheckpointError(f"no flat checkpoint at {path} (run 'train-flat' first)")
    model = textcnn.load_checkpoint(path)
    check_hash(data.preprocessing_hash, model.vocab_hash, "flat checkpoint")
    return model


# --- cross-validation ---------------------------------------------------------

@dataclass
class FoldOutcome:
    fold: int
    flat: ResultSet
    hier: ResultSet


def _run_fold(args) -> FoldOutcome:
    fold, reports, ids, cfg, partition = args
    data = build_features(reports, ids, cfg, max(cfg.node_config("flat", 2, 10**6).window_sizes))
    flat_model, _ = train_flat(data, cfg)
    ensemble = train_hier(data, cfg, partition, flat_model)
    flat = evaluate_flat(flat_model, data.splits["test"])
    hier, _ = evaluate_hier(ensemble, data.splits["test"])
    log.info("fold %d done", fold)
    return FoldOutcome(fold, flat, hier)


def run_cv(corpus: LabelledCorpus, cfg: RunConfig, partition=None, jobs: int = 1,
           folds: list[int] | None = None) -> list[FoldOutcome]:
    """Stratified k-fold protocol: fold i tests, fold i+1 validates, the rest
    train; features are refitted on each fold's training part."""
    cleaned = clean_corpus(corpus, cfg)
    plan = kfold_plan(cleaned.reports, cfg.eval.folds, cfg.seed)
    for w in plan.warnings:
        log.warning(w)
    todo = range(plan.k) if folds is None else folds
    work = []
    for i in todo:
        train, val, test = plan.train_val_test(i)
        work.append((i, cleaned.reports, {"train": train, "val": val, "test": test}, cfg, partition))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_fold, work))
    return [_run_fold(w) for w in work]


def merge_results(results: list[ResultSet], name: str) -> ResultSet:
    merged = ResultSet(name, [], [], [], [], results[0].classes if results else None)
    for rs in results:
        merged.ids += rs.ids
        merged.golds += rs.golds
        merged.preds += rs.preds
        merged.max_probs += rs.max_probs
    return merged
