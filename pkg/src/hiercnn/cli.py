"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 bad input or configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys

import numpy as np

from . import hierarchy, nn, pipeline, plotting, synth, textcnn
from .config import RunConfig, load_config
from .corpus import format_findings, read_corpus, verify_anonymized, write_corpus
from .errors import HierCnnError, InputError
from .evaluation import COMPARISON_HEADER, ResultSet, compare_report, confusion, score_row

log = logging.getLogger("hiercnn")


def _write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _read(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _run_config(args, fallback_to_manifest: bool = True) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif fallback_to_manifest and os.path.exists(os.path.join(args.out, "manifest.txt")):
        cfg = load_config(os.path.join(args.out, "manifest.txt"))
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.no_fallback:
        cfg.eval.fallback = False
    return cfg


def _jobs(args) -> int:
    return args.jobs if args.jobs else (os.cpu_count() or 1)


# --- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.nine_class:
        spec = synth.nine_class_spec(seed=0, overlap_rate=args.overlap if args.overlap is not None else 0.35)
    elif args.spec:
        if not os.path.exists(args.spec):
            raise InputError(f"spec file not found: {args.spec}")
        spec = synth.read_spec_file(args.spec)
        if args.overlap is not None:
            spec.overlap_rate = args.overlap
    else:
        raise InputError("give a spec file or --nine-class")
    if args.seed is not None:
        spec.seed = args.seed
    corpus, manifest = synth.generate(spec)
    os.makedirs(args.out, exist_ok=True)
    write_corpus(corpus, os.path.join(args.out, "corpus.xml"))
    _write(os.path.join(args.out, "synth_manifest.txt"), manifest.dumps())
    print(f"wrote {len(corpus)} reports to {os.path.join(args.out, 'corpus.xml')}")
    for label, n in sorted(corpus.class_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        print(f"{label}\t{n}")
    return 0


def cmd_verify(args) -> int:
    corpus = read_corpus(args.corpus)
    findings = [f for r in corpus for f in verify_anonymized(r)]
    sys.stdout.write(format_findings(findings))
    return 0 if not findings else 3


def cmd_prep(args) -> int:
    cfg = _run_config(args, fallback_to_manifest=False)
    corpus = read_corpus(args.corpus)
    data, cleaned = pipeline.prepare(corpus, cfg)
    with open(args.corpus, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    pipeline.write_prepared(data, cfg, args.out, {"corpus": args.corpus, "corpus_sha256": digest})
    _write(os.path.join(args.out, "findings.tsv"), format_findings(cleaned.findings))
    print(f"prepared {len(cleaned.reports)} reports, {len(data.classes)} classes, "
          f"{len(data.features)} features, max_len={data.max_len}")
    print("split sizes: " + " ".join(f"{k}={len(v)}" for k, v in data.splits.items()))
    if cleaned.afrikaans_removed:
        print(f"removed {len(cleaned.afrikaans_removed)} Afrikaans-only reports")
    if cleaned.findings:
        print(f"warning: {len(cleaned.findings)} anonymization findings, see findings.tsv", file=sys.stderr)
    print(f"preprocessing hash {data.preprocessing_hash}")
    return 0


def _save_history(history, out, name):
    _write(os.path.join(out, f"{name}.history.tsv"), history.to_tsv())
    plotting.plot_history(history, os.path.join(out, f"{name}_history.png"), name)


def cmd_train_flat(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_prepared(args.out)
    model, history = pipeline.train_flat(data, cfg)
    textcnn.save_checkpoint(model, os.path.join(args.out, "flat.tcnn"))
    _save_history(history, args.out, "flat")
    cm = pipeline.flat_confusion(model, data.splits["val"])
    _write(os.path.join(args.out, "flat_val_confusion.tsv"), cm.to_tsv())
    plotting.plot_confusion(cm, os.path.join(args.out, "flat_val_confusion.png"), "flat, validation")
    print(f"flat model: {len(history)} epochs, best epoch {history.best_epoch + 1}, "
          f"val F1 micro {history.val_f1_micro[history.best_epoch]:.3f}" if len(history) else "flat model: 0 epochs")
    return 0


def cmd_train_hier(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_prepared(args.out)
    partition = None
    if args.partition:
        partition = hierarchy.ClassPartition.loads(_read(args.partition), data.classes)
    flat = None
    if partition is None:
        flat_path = os.path.join(args.out, "flat.tcnn")
        if os.path.exists(flat_path):
            flat = pipeline.load_flat_checkpoint(args.out, data)
        else:
            log.info("no flat checkpoint; training one for the partition proposal")
            flat, history = pipeline.train_flat(data, cfg)
            textcnn.save_checkpoint(flat, flat_path)
            _save_history(history, args.out, "flat")
    ensemble = pipeline.train_hier(data, cfg, partition, flat, jobs=_jobs(args))
    hier_dir = os.path.join(args.out, "hier")
    hierarchy.save_ensemble(ensemble, hier_dir)
    for name, history in ensemble.histories.items():
        _save_history(history, hier_dir, name)
    print("partition: a = " + " ".join(sorted(ensemble.partition.group_a))
          + " | b = " + " ".join(sorted(ensemble.partition.group_b)))
    for name, history in ensemble.histories.items():
        print(f"{name}: {len(history)} epochs, best epoch {history.best_epoch + 1}")
    return 0


def _metrics_table(rows) -> str:
    lines = ["\t".join(COMPARISON_HEADER)] + ["\t".join(r.cells()) for r in rows]
    return "\n".join(lines) + "\n"


def _child_results(ensemble, split) -> list[ResultSet]:
    """Child models scored on their own relabelled test documents."""
    majority = ensemble.majority_label
    out = []
    binary = ensemble.child_binary
    probs = binary.probabilities(split.x)
    golds = [lab if lab == majority else hierarchy.OTHER for lab in split.labels]
    out.append(ResultSet("Binary OVA CNN Child Classifier", list(split.ids), golds,
                         [binary.class_labels[i] for i in probs.argmax(axis=1)],
                         probs.max(axis=1).tolist(), list(binary.class_labels)))
    sub = split.subset(np.array([lab != majority for lab in split.labels], dtype=bool))
    if len(sub):
        multi = ensemble.child_multi
        probs = multi.probabilities(sub.x)
        out.insert(0, ResultSet("Multiclass CNN Child Classifier", list(sub.ids), list(sub.labels),
                                [multi.class_labels[i] for i in probs.argmax(axis=1)],
                                probs.max(axis=1).tolist(), list(multi.class_labels)))
    return out


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    if args.cv:
        return _evaluate_cv(args, cfg)
    data = pipeline.load_prepared(args.out)
    test = data.splits["test"]
    rows = []
    flat_path = os.path.join(args.out, "flat.tcnn")
    hier_dir = os.path.join(args.out, "hier")
    if not os.path.exists(flat_path) and not os.path.isdir(hier_dir):
        raise InputError(f"no checkpoints in {args.out} (run 'train-flat' or 'train-hier')")
    ev = cfg.eval
    if os.path.exists(flat_path):
        model = pipeline.load_flat_checkpoint(args.out, data)
        rs = pipeline.evaluate_flat(model, test)
        _write(os.path.join(args.out, "results_flat.tsv"), rs.to_tsv())
        rows.append(score_row(rs, ev.bootstrap, ev.alpha, cfg.seed, ev.macro_over))
        cm = confusion(rs.golds, rs.preds, rs.class_list())
        plotting.plot_confusion(cm, os.path.join(args.out, "flat_test_confusion.png"), "flat, test")
    if os.path.isdir(hier_dir):
        ensemble = hierarchy.load_ensemble(hier_dir, ev.fallback)
        pipeline.check_hash(data.preprocessing_hash, ensemble.preprocessing_hash, "hierarchical ensemble")
        rs, routes = pipeline.evaluate_hier(ensemble, test)
        _write(os.path.join(args.out, "results_hier.tsv"), rs.to_tsv())
        _write(os.path.join(args.out, "routes_hier.tsv"), pipeline.routes_tsv(rs.ids, routes))
        rows.append(score_row(rs, ev.bootstrap, ev.alpha, cfg.seed, ev.macro_over))
        for child in _child_results(ensemble, test):
            fname = "results_child_multi.tsv" if "Multiclass" in child.classifier else "results_child_binary.tsv"
            _write(os.path.join(args.out, fname), child.to_tsv())
            rows.append(score_row(child, ev.bootstrap, ev.alpha, cfg.seed, ev.macro_over))
        cm = confusion(rs.golds, rs.preds, rs.class_list())
        plotting.plot_confusion(cm, os.path.join(args.out, "hier_test_confusion.png"), "hierarchical, test")
    table = _metrics_table(rows)
    _write(os.path.join(args.out, "metrics.tsv"), table)
    sys.stdout.write(table)
    return 0


def _evaluate_cv(args, cfg: RunConfig) -> int:
    corpus_path = args.corpus or pipeline.read_manifest_info(args.out).get("corpus")
    if not corpus_path:
        raise InputError("--cv needs --corpus or a prepared run directory")
    corpus = read_corpus(corpus_path)
    partition = hierarchy.ClassPartition.loads(_read(args.partition)) if args.partition else None
    folds = [int(f) for f in args.folds.split(",")] if args.folds else None
    outcomes = pipeline.run_cv(corpus, cfg, partition, jobs=_jobs(args), folds=folds)
    cv_dir = os.path.join(args.out, "cv")
    os.makedirs(cv_dir, exist_ok=True)
    ev = cfg.eval
    lines = ["fold\t" + "\t".join(COMPARISON_HEADER)]
    for o in outcomes:
        for kind, rs in (("flat", o.flat), ("hier", o.hier)):
            _write(os.path.join(cv_dir, f"fold{o.fold}_{kind}.tsv"), rs.to_tsv())
            row = score_row(rs, ev.bootstrap, ev.alpha, cfg.seed, ev.macro_over)
            lines.append(f"{o.fold}\t" + "\t".join(row.cells()))
    merged = [pipeline.merge_results([o.flat for o in outcomes], "Multiclass CNN (cv merged)"),
              pipeline.merge_results([o.hier for o in outcomes], "Hierarchical CNN (cv merged)")]
    for kind, rs in zip(("flat", "hier"), merged):
        _write(os.path.join(cv_dir, f"results_{kind}_merged.tsv"), rs.to_tsv())
        row = score_row(rs, ev.bootstrap, ev.alpha, cfg.seed, ev.macro_over)
        lines.append("merged\t" + "\t".join(row.cells()))
    text = "\n".join(lines) + "\n"
    _write(os.path.join(cv_dir, "metrics.tsv"), text)
    sys.stdout.write(text)
    return 0


def _load_results(path, name) -> ResultSet:
    if not os.path.exists(path):
        raise InputError(f"missing results file {path} (run 'evaluate' first)")
    return ResultSet.from_tsv(_read(path), name)


def cmd_compare(args) -> int:
    cfg = _run_config(args)
    out = args.out
    flat_path = args.flat or os.path.join(out, "results_flat.tsv")
    hier_path = args.hier or os.path.join(out, "results_hier.tsv")
    classes = None
    try:
        classes = pipeline.read_manifest_info(out)["classes"].split(",")
    except (InputError, KeyError):
        pass
    flat = _load_results(flat_path, "Multiclass CNN")
    hier = _load_results(hier_path, "Hierarchical CNN")
    flat.classes = hier.classes = classes
    extra = []
    if not (args.flat or args.hier):
        for fname, title in (("results_child_multi.tsv", "Multiclass CNN Child Classifier"),
                             ("results_child_binary.tsv", "Binary OVA CNN Child Classifier")):
            if os.path.exists(os.path.join(out, fname)):
                extra.append(_load_results(os.path.join(out, fname), title))
        for kind, title in (("flat", "Multiclass CNN (cv merged)"), ("hier", "Hierarchical CNN (cv merged)")):
            path = os.path.join(out, "cv", f"results_{kind}_merged.tsv")
            if os.path.exists(path):
                rs = _load_results(path, title)
                rs.classes = classes
                extra.append(rs)
    ev = cfg.eval
    table = compare_report(flat, hier, extra, ev.bootstrap, ev.alpha, cfg.seed, ev.macro_over, split="test")
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "comparison.tsv"), table.to_tsv())
    _write(os.path.join(out, "comparison.txt"), table.to_text())
    _write(os.path.join(out, "comparison_per_class.tsv"), table.per_class_tsv())
    plotting.plot_comparison(table, os.path.join(out, "comparison.png"))
    sys.stdout.write(table.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    err = full_model_gradcheck(seed)
    print(f"full architecture max relative error {err:.3e}")
    return 0 if err < 1e-4 else 1


def full_model_gradcheck(seed: int = 0, num_classes: int = 3, tokens: int = 12, maps: int = 2,
                         dim: int = 4, vocab_size: int = 10) -> float:
    """Finite-difference check of every parameter of a small text CNN."""
    cfg = textcnn.TextCnnConfig(maps_per_window=maps, embedding_dim=dim, hidden_size=5,
                                num_classes=num_classes, max_len=tokens, seed=seed)
    rng = nn.Rng(seed)
    model = textcnn.build_model(cfg, vocab_size, rng)
    # non-zero biases keep relu units away from their kink
    for p in model.parameters():
        if p.name.endswith("bias"):
            p.value[...] = rng.uniform(0.05, 0.2, p.shape)
    doc = rng.integers(0, vocab_size + 2, (2, tokens))
    gold = np.arange(2) % num_classes
    drop_rng_seed = seed + 1

    def loss():
        return model.loss(doc, gold, training=True, rng=nn.Rng(drop_rng_seed))

    return nn.grad_check(loss, model.parameters(), 1e-6)


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (INI key = value sections)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", default="run", help="run directory (default: run)")
    common.add_argument("--jobs", type=int, default=0, help="parallel workers (default: CPU count)")
    common.add_argument("--no-fallback", action="store_true",
                        help="route group-a documents rejected by the binary child to the majority label")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hiercnn", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labelled corpus")
    p.add_argument("spec", nargs="?", help="synth spec file ([synth] and [classes] sections)")
    p.add_argument("--nine-class", action="store_true", help="use the built-in nine-class spec")
    p.add_argument("--overlap", type=float, help="override overlap_rate")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", parents=[common], help="anonymization scan of a corpus file")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("prep", parents=[common], help="filter, select features, split and encode")
    p.add_argument("corpus", help="corpus XML file")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train-flat", parents=[common], help="train the flat multiclass CNN")
    p.set_defaults(func=cmd_train_flat)

    p = sub.add_parser("train-hier", parents=[common], help="train the hierarchical ensemble")
    p.add_argument("--partition", help="partition file overriding the proposal")
    p.set_defaults(func=cmd_train_hier)

    p = sub.add_parser("evaluate", parents=[common], help="score checkpoints on the test split")
    p.add_argument("--cv", action="store_true", help="run the k-fold protocol and merge fold results")
    p.add_argument("--corpus", help="corpus XML for --cv (default: the prepared corpus)")
    p.add_argument("--partition", help="fixed partition for --cv")
    p.add_argument("--folds", help="comma-separated subset of folds to run with --cv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="flat vs hierarchical comparison table")
    p.add_argument("--flat", help="flat results file (default: <out>/results_flat.tsv)")
    p.add_argument("--hier", help="hierarchical results file (default: <out>/results_hier.tsv)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full model")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HierCnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
