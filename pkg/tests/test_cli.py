import pathlib
import shutil

import pytest

from hiercnn import synth
from hiercnn.cli import main
from hiercnn.corpus import LabelledCorpus, PathologyReport, parse_morphology_code, read_corpus, write_corpus

ROOT = pathlib.Path(__file__).resolve().parent.parent
SMALL = str(ROOT / "configs" / "small_synth.ini")
TINY = str(ROOT / "configs" / "tiny.ini")

AFRIKAANS = "Die pasiënt het 'n karsinoom van die bors en dit is nie goed nie."


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One tiny end-to-end run shared by the tests below."""
    base = tmp_path_factory.mktemp("cli")
    out = base / "run"
    assert main(["synth", SMALL, "--out", str(base / "syn")]) == 0
    corpus = base / "corpus.xml"
    reports = list(read_corpus(base / "syn" / "corpus.xml"))
    reports.append(PathologyReport("afr1", AFRIKAANS, parse_morphology_code("8520/3")))
    write_corpus(LabelledCorpus(reports), corpus)
    args = ["--config", TINY, "--out", str(out), "--jobs", "1"]
    assert main(["prep", str(corpus)] + args) == 0
    assert main(["train-flat"] + args) == 0
    assert main(["train-hier"] + args) == 0
    assert main(["evaluate"] + args) == 0
    assert main(["compare"] + args) == 0
    return base, out


def test_outputs_exist(run):
    _, out = run
    names = {p.name for p in out.iterdir()}
    for expected in ("manifest.txt", "features.txt", "train.tsv", "val.tsv", "test.tsv", "flat.tcnn",
                     "results_flat.tsv", "results_hier.tsv", "routes_hier.tsv", "metrics.tsv",
                     "comparison.tsv", "comparison.txt", "comparison.png", "flat_history.png"):
        assert expected in names
    assert {"binary.tcnn", "ensemble.txt", "multi.tcnn", "parent.tcnn", "partition.txt"} <= {
        p.name for p in (out / "hier").iterdir()}


def test_prep_removes_afrikaans_report(run):
    _, out = run
    manifest = (out / "manifest.txt").read_text()
    assert "afrikaans_removed = afr1" in manifest
    ids = {line.split("\t")[0] for name in ("train", "val", "test") for line in (out / f"{name}.tsv").open()}
    assert "afr1" not in ids and len(ids) == 290


def test_features_file_size(run):
    _, out = run
    lines = (out / "features.txt").read_text().splitlines()
    assert lines[0] == "tfidf-features v1 K=1400"
    assert 1 < len(lines) <= 1401


def test_results_format(run):
    _, out = run
    rows = [line.split("\t") for line in (out / "results_flat.tsv").read_text().splitlines()]
    assert len(rows) == 29 and all(len(r) == 4 for r in rows)
    assert all(len(r[3].split(".")[1]) == 6 for r in rows)
    table = (out / "comparison.tsv").read_text().splitlines()
    assert table[0].split("\t") == ["classes", "classifier", "f1_micro", "ci_low", "ci_high",
                                    "f1_macro", "ci_low", "ci_high"]
    assert any("Hierarchical CNN" in line for line in table)


def test_compare_model_with_itself(run, capsys):
    base, out = run
    flat = str(out / "results_flat.tsv")
    assert main(["compare", "--config", TINY, "--out", str(base / "self"), "--flat", flat, "--hier", flat]) == 0
    rows = [line.split("\t") for line in (base / "self" / "comparison.tsv").read_text().splitlines()[1:]]
    assert len(rows) == 2 and rows[0][2:] == rows[1][2:]


def test_rerun_is_byte_identical(run, tmp_path):
    base, out = run
    again = tmp_path / "again"
    args = ["--config", TINY, "--out", str(again), "--jobs", "1"]
    assert main(["prep", str(base / "corpus.xml")] + args) == 0
    assert main(["train-flat"] + args) == 0
    assert main(["evaluate"] + args) == 0
    for name in ("manifest.txt", "features.txt", "flat.tcnn", "results_flat.tsv"):
        assert (again / name).read_bytes() == (out / name).read_bytes(), name


def test_no_fallback_flag(run, tmp_path):
    _, out = run
    copy = tmp_path / "nofb"
    shutil.copytree(out, copy)
    assert main(["evaluate", "--config", TINY, "--out", str(copy), "--no-fallback"]) == 0
    routes = (copy / "routes_hier.tsv").read_text().splitlines()
    for line in routes:
        assert "child_binary:other" not in line or "child_multi" not in line


def test_seed_changes_split(run, tmp_path):
    base, out = run
    other = tmp_path / "seeded"
    assert main(["prep", str(base / "corpus.xml"), "--config", TINY, "--out", str(other), "--seed", "9"]) == 0
    assert (other / "test.tsv").read_bytes() != (out / "test.tsv").read_bytes()


def test_partition_override(run, tmp_path):
    _, out = run
    copy = tmp_path / "part"
    shutil.copytree(out, copy)
    part = tmp_path / "partition.txt"
    part.write_text("a 8500/3\na 8520/3\nb 8522/3\nb 8480/3\n")
    assert main(["train-hier", "--config", TINY, "--out", str(copy), "--partition", str(part), "--jobs", "1"]) == 0
    saved = (copy / "hier" / "partition.txt").read_text().splitlines()
    assert saved == ["a 8500/3", "a 8520/3", "b 8480/3", "b 8522/3"]
    bad = tmp_path / "bad.txt"
    bad.write_text("a 8500/3\nb 9999/3\n")
    assert main(["train-hier", "--config", TINY, "--out", str(copy), "--partition", str(bad)]) == 2


def test_tampered_features_rejected(run, tmp_path):
    _, out = run
    copy = tmp_path / "tamper"
    shutil.copytree(out, copy)
    path = copy / "features.txt"
    path.write_text(path.read_text() + "zzzextra\n")
    assert main(["evaluate", "--config", TINY, "--out", str(copy)]) == 2


@pytest.mark.parametrize("argv", [["synth", "/nonexistent/spec.ini"], ["synth"], ["prep", "/nonexistent.xml"],
                                  ["train-flat"], ["evaluate"], ["compare"]])
def test_missing_inputs_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path / "empty")]) == 2


def test_synth_nine_class_and_seed(tmp_path, capsys):
    assert main(["synth", "--nine-class", "--out", str(tmp_path / "a")]) == 0
    assert "8500/3\t1417" in capsys.readouterr().out
    assert main(["synth", SMALL, "--seed", "1", "--out", str(tmp_path / "b")]) == 0
    assert main(["synth", SMALL, "--seed", "2", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "b" / "corpus.xml").read_bytes() != (tmp_path / "c" / "corpus.xml").read_bytes()


def test_verify(tmp_path, capsys):
    clean, _ = synth.generate(synth.SynthSpec([(parse_morphology_code("8500/3"), 5)]))
    write_corpus(clean, tmp_path / "clean.xml")
    assert main(["verify", str(tmp_path / "clean.xml")]) == 0
    dirty = LabelledCorpus([PathologyReport("x1", "Seen by Dr Smith on 12/03/2018.", parse_morphology_code("8500/3"))])
    write_corpus(dirty, tmp_path / "dirty.xml")
    assert main(["verify", str(tmp_path / "dirty.xml")]) == 3
    assert capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    assert "max relative error" in capsys.readouterr().out
