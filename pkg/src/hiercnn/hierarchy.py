"""Two-level CNN ensemble: a parent router choosing between the majority
group and the minority group, a one-vs-all child for the majority label and
a multiclass child for the remaining labels."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import textcnn
from .errors import CheckpointError, DegenerateDistribution, EmptyGroupSplit, InvalidPartition
from .evaluation import ConfusionMatrix
from .textcnn import TextCnnConfig, TextCnnModel

OTHER = "other"
GROUP_LABELS = ("a", "b")


@dataclass(frozen=True)
class ClassPartition:
    group_a: frozenset
    group_b: frozenset
    rationale: str = ""

    def __post_init__(self):
        object.__setattr__(self, "group_a", frozenset(str(c) for c in self.group_a))
        object.__setattr__(self, "group_b", frozenset(str(c) for c in self.group_b))

    @property
    def classes(self) -> frozenset:
        return self.group_a | self.group_b

    def validate(self, classes=None) -> "ClassPartition":
        if self.group_a & self.group_b:
            raise InvalidPartition(f"groups overlap on {sorted(self.group_a & self.group_b)}")
        if not self.group_a or not self.group_b:
            raise InvalidPartition("both groups must be non-empty")
        if classes is not None and set(map(str, classes)) != set(self.classes):
            raise InvalidPartition("partition does not cover exactly the in-scope classes")
        return self

    def group_of(self, label: str) -> str:
        return "a" if str(label) in self.group_a else "b"

    def dumps(self) -> str:
        lines = [f"# {line}" for line in self.rationale.splitlines()]
        lines += [f"a {c}" for c in sorted(self.group_a)] + [f"b {c}" for c in sorted(self.group_b)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, classes=None) -> "ClassPartition":
        a, b, notes = [], [], []
        for n, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                notes.append(stripped[1:].strip())
                continue
            group, _, label = stripped.partition(" ")
            if group not in GROUP_LABELS or not label.strip():
                raise InvalidPartition(f"line {n}: expected 'a <label>' or 'b <label>'")
            (a if group == "a" else b).append(label.strip())
        if len(set(a)) != len(a) or len(set(b)) != len(b):
            raise InvalidPartition("a label is listed twice")
        return cls(frozenset(a), frozenset(b), "\n".join(notes)).validate(classes)


def _ranked(class_counts: Mapping) -> list[tuple[str, int]]:
    return sorted(((str(c), int(n)) for c, n in class_counts.items()), key=lambda kv: (-kv[1], kv[0]))


def propose_partition(class_counts: Mapping, confusion: ConfusionMatrix | None = None) -> ClassPartition:
    """Put the dominant class (or the smallest count-ordered prefix of classes
    holding more than half the reports) into group a, the rest into group b."""
    ranked = _ranked(class_counts)
    if len(ranked) < 2:
        raise DegenerateDistribution("need at least two classes to partition")
    if confusion is not None and set(confusion.classes) != {c for c, _ in ranked}:
        raise InvalidPartition("confusion matrix classes differ from the class counts")
    total = sum(n for _, n in ranked)
    cumulative, size = 0, len(ranked) - 1
    for i, (_, n) in enumerate(ranked):
        cumulative += n
        if cumulative * 2 > total:
            size = min(i + 1, len(ranked) - 1)
            break
    recall = confusion.recall() if confusion is not None else {}
    notes = [f"{c}\tcount={n}\tshare={n / total:.3f}"
             + (f"\tflat_recall={recall[c]:.3f}" if c in recall else "") for c, n in ranked]
    notes.append(f"group a = top {size} class(es) by count; cumulative share "
                 f"{sum(n for _, n in ranked[:size]) / total:.3f}")
    return ClassPartition(frozenset(c for c, _ in ranked[:size]),
                          frozenset(c for c, _ in ranked[size:]), "\n".join(notes))


@dataclass
class EncodedSplit:
    """Encoded documents with their string labels."""

    ids: list[str]
    x: np.ndarray
    labels: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask: np.ndarray) -> "EncodedSplit":
        keep = np.flatnonzero(mask)
        return EncodedSplit([self.ids[i] for i in keep], self.x[keep], [self.labels[i] for i in keep])


@dataclass
class RoutedPrediction:
    final_label: str
    parent_group: str
    path: list[tuple[str, str, float]]


@dataclass
class HierarchicalEnsemble:
    parent: TextCnnModel
    child_binary: TextCnnModel
    child_multi: TextCnnModel
    partition: ClassPartition
    majority_label: str
    preprocessing_hash: str = ""
    fallback: bool = True
    histories: dict = field(default_factory=dict, repr=False)

    @property
    def classes(self) -> list[str]:
        return sorted(self.partition.classes)


def majority_of(partition: ClassPartition, labels: Sequence[str]) -> str:
    """Most frequent group-a label in ``labels`` (lexicographic tie-break)."""
    counts = {c: 0 for c in partition.group_a}
    for lab in labels:
        if lab in counts:
            counts[lab] += 1
    return min(counts, key=lambda c: (-counts[c], c))


def node_tasks(train: EncodedSplit, val: EncodedSplit, partition: ClassPartition, majority: str):
    """Relabelled (class_labels, train, val) data for the three node models.

    The multiclass child covers every label except the majority one; with the
    usual single-class group a this is exactly group b.
    """
    multi_labels = sorted(partition.classes - {majority})
    tasks = {}

    def relabel(split, mapping, labels):
        y = np.array([labels.index(mapping(lab)) for lab in split.labels], dtype=np.int64)
        return split.x, y

    tasks["parent"] = (list(GROUP_LABELS),
                       relabel(train, partition.group_of, list(GROUP_LABELS)),
                       relabel(val, partition.group_of, list(GROUP_LABELS)))
    ova = [majority, OTHER]
    to_ova = lambda lab: majority if lab == majority else OTHER  # noqa: E731
    tasks["child_binary"] = (ova, relabel(train, to_ova, ova), relabel(val, to_ova, ova))
    keep_tr = np.array([lab != majority for lab in train.labels], dtype=bool)
    keep_va = np.array([lab != majority for lab in val.labels], dtype=bool)
    tr_multi, va_multi = train.subset(keep_tr), val.subset(keep_va)
    ident = lambda lab: lab  # noqa: E731
    tasks["child_multi"] = (multi_labels, relabel(tr_multi, ident, multi_labels),
                            relabel(va_multi, ident, multi_labels))
    return tasks


def _fit_node(args):
    config, vocab_size, labels, train_data, val_data, vocab_hash = args
    return textcnn.fit(config, vocab_size, labels, train_data, val_data, vocab_hash)


def train_hierarchy(train: EncodedSplit, val: EncodedSplit, partition: ClassPartition,
                    parent_cfg: TextCnnConfig, binary_cfg: TextCnnConfig, multi_cfg: TextCnnConfig,
                    vocab_size: int, preprocessing_hash: str = "", jobs: int = 1,
                    fallback: bool = True) -> HierarchicalEnsemble:
    """Train parent (group a vs b, all reports), binary child (majority vs
    other, all reports) and multiclass child (non-majority reports only)."""
    present = set(train.labels) | set(val.labels)
    if not present <= partition.classes:
        raise InvalidPartition(f"labels {sorted(present - partition.classes)} missing from partition")
    if not any(lab in partition.group_b for lab in train.labels):
        raise EmptyGroupSplit("group b has no training reports")
    if not any(lab in partition.group_a for lab in train.labels):
        raise EmptyGroupSplit("group a has no training reports")
    majority = majority_of(partition, train.labels)
    tasks = node_tasks(train, val, partition, majority)
    configs = {"parent": parent_cfg, "child_binary": binary_cfg, "child_multi": multi_cfg}
    work = []
    for name in ("parent", "child_binary", "child_multi"):
        labels, tr, va = tasks[name]
        if len(tr[0]) == 0 or len(va[0]) == 0:
            raise EmptyGroupSplit(f"{name} has an empty training or validation split")
        if len(labels) < 2:
            raise EmptyGroupSplit(f"{name} needs at least two classes")
        cfg = replace(configs[name], num_classes=len(labels))
        work.append((cfg, vocab_size, labels, tr, va, preprocessing_hash))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, 3)) as pool:
            results = list(pool.map(_fit_node, work))
    else:
        results = [_fit_node(w) for w in work]
    (parent, hp), (binary, hb), (multi, hm) = results
    return HierarchicalEnsemble(parent, binary, multi, partition, majority, preprocessing_hash, fallback,
                                {"parent": hp, "child_binary": hb, "child_multi": hm})


def _top(model, doc):
    label, probs = model.predict(doc)
    return label, float(np.max(probs))


def predict_hierarchical(ensemble: HierarchicalEnsemble, doc, fallback: bool | None = None) -> RoutedPrediction:
    """Route one document: parent group, then the binary child for group a
    (deferring to the multiclass child when it says "other" and fallback is
    on), or the multiclass child for group b."""
    if fallback is None:
        fallback = ensemble.fallback
    group, p = _top(ensemble.parent, doc)
    path = [("parent", group, p)]
    if group == "a":
        label, p = _top(ensemble.child_binary, doc)
        path.append(("child_binary", label, p))
        if label != OTHER:
            return RoutedPrediction(label, group, path)
        if not fallback:
            return RoutedPrediction(ensemble.majority_label, group, path)
    label, p = _top(ensemble.child_multi, doc)
    path.append(("child_multi", label, p))
    return RoutedPrediction(label, group, path)


def predict_batch(ensemble: HierarchicalEnsemble, x: np.ndarray, fallback: bool | None = None) -> list[RoutedPrediction]:
    """Vectorised routing over ``[N, L]`` documents; same rule as
    :func:`predict_hierarchical`."""
    if fallback is None:
        fallback = ensemble.fallback
    pp = ensemble.parent.probabilities(x)
    pb = ensemble.child_binary.probabilities(x)
    pm = ensemble.child_multi.probabilities(x)
    out = []
    for i in range(len(x)):
        g = ensemble.parent.class_labels[int(pp[i].argmax())]
        path = [("parent", g, float(pp[i].max()))]
        if g == "a":
            b = ensemble.child_binary.class_labels[int(pb[i].argmax())]
            path.append(("child_binary", b, float(pb[i].max())))
            if b != OTHER:
                out.append(RoutedPrediction(b, g, path))
                continue
            if not fallback:
                out.append(RoutedPrediction(ensemble.majority_label, g, path))
                continue
        m = ensemble.child_multi.class_labels[int(pm[i].argmax())]
        path.append(("child_multi", m, float(pm[i].max())))
        out.append(RoutedPrediction(m, g, path))
    return out


# --- persistence --------------------------------------------------------------

_NODE_FILES = {"parent": "parent.tcnn", "child_binary": "binary.tcnn", "child_multi": "multi.tcnn"}


def save_ensemble(ensemble: HierarchicalEnsemble, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, fname in _NODE_FILES.items():
        textcnn.save_checkpoint(getattr(ensemble, name), os.path.join(directory, fname))
    with open(os.path.join(directory, "partition.txt"), "w", encoding="utf-8") as fh:
        fh.write(ensemble.partition.dumps())
    lines = ["hier-ensemble v1"] + [f"{k}={v}" for k, v in _NODE_FILES.items()]
    lines += ["partition=partition.txt", f"majority={ensemble.majority_label}",
              f"preprocessing_hash={ensemble.preprocessing_hash}"]
    with open(os.path.join(directory, "ensemble.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ensemble(directory, fallback: bool = True) -> HierarchicalEnsemble:
    path = os.path.join(directory, "ensemble.txt")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError as exc:
        raise CheckpointError(f"no ensemble manifest at {path}") from exc
    if not lines or lines[0] != "hier-ensemble v1":
        raise CheckpointError("not a hier-ensemble v1 manifest")
    meta = dict(line.partition("=")[::2] for line in lines[1:] if line)
    models = {name: textcnn.load_checkpoint(os.path.join(directory, meta[name])) for name in _NODE_FILES}
    with open(os.path.join(directory, meta["partition"]), encoding="utf-8") as fh:
        partition = ClassPartition.loads(fh.read())
    phash = meta.get("preprocessing_hash", "")
    if any(m.vocab_hash != phash for m in models.values()):
        raise CheckpointError("node checkpoints disagree on preprocessing hash")
    return HierarchicalEnsemble(models["parent"], models["child_binary"], models["child_multi"], partition,
                                meta["majority"], phash, fallback)
