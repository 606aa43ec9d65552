from collections import Counter

import pytest

from hiercnn import synth
from hiercnn.corpus import parse_morphology_code, serialize_xml_reports, verify_anonymized
from hiercnn.errors import InvalidSpec
from hiercnn.textprep import load_stopwords, tokenize

STOP = load_stopwords(language="en")


def small_spec(**kw):
    classes = [(parse_morphology_code(c), n) for c, n in [("8500/3", 60), ("8520/3", 25), ("8522/3", 15)]]
    return synth.SynthSpec(classes, **kw)


def oracle_accuracy(corpus, manifest):
    hits = sum(synth.keyword_oracle(manifest, tokenize(r.text, STOP)) == str(r.label) for r in corpus)
    return hits / len(corpus)


def test_nine_class_histogram():
    corpus, manifest = synth.generate(synth.nine_class_spec(seed=3))
    assert len(corpus) == 1790
    counts = Counter(str(r.label) for r in corpus)
    assert [counts[c] for c in synth.NINE_CLASS_LABELS] == list(synth.NINE_CLASS_COUNTS)
    assert manifest.spec.total == 1790


def test_same_seed_same_bytes():
    a, ma = synth.generate(small_spec(seed=5, overlap_rate=0.3))
    b, mb = synth.generate(small_spec(seed=5, overlap_rate=0.3))
    assert serialize_xml_reports(a) == serialize_xml_reports(b)
    assert ma.dumps() == mb.dumps()
    c, _ = synth.generate(small_spec(seed=6, overlap_rate=0.3))
    assert serialize_xml_reports(a) != serialize_xml_reports(c)


def test_keyword_lists_are_disjoint_from_background():
    _, m = synth.generate(small_spec())
    words = [w for ws in m.keywords.values() for w in ws]
    assert len(set(words)) == len(words) == 3 * m.spec.per_class_keyword_count
    assert not set(words) & set(m.background)
    assert not set(words) & STOP


def test_no_overlap_full_injection_uses_own_keywords():
    corpus, m = synth.generate(small_spec(overlap_rate=0.0, keyword_injection_rate=1.0))
    for r in corpus:
        assert set(tokenize(r.text, set())) <= set(m.keywords[str(r.label)])


def test_every_document_has_an_own_keyword():
    corpus, m = synth.generate(small_spec(overlap_rate=1.0, keyword_injection_rate=0.05))
    for r in corpus:
        assert set(tokenize(r.text, set())) & set(m.keywords[str(r.label)])
        assert m.provenance[r.id]


def test_oracle_perfect_without_overlap():
    for seed in range(3):
        corpus, m = synth.generate(small_spec(seed=seed))
        assert oracle_accuracy(corpus, m) == 1.0


def test_oracle_accuracy_falls_with_overlap():
    means = []
    for overlap in (0.0, 0.25, 0.5):
        accs = [oracle_accuracy(*synth.generate(small_spec(seed=s, overlap_rate=overlap))) for s in range(5)]
        means.append(sum(accs) / len(accs))
    assert means[0] == 1.0
    assert means[0] > means[1] > means[2]


def test_generated_reports_pass_anonymization_scan():
    corpus, _ = synth.generate(synth.nine_class_spec(seed=1))
    assert all(verify_anonymized(r) == [] for r in corpus)


def test_manifest_round_trip():
    _, m = synth.generate(small_spec(seed=2, overlap_rate=0.35))
    back = synth.SynthManifest.loads(m.dumps())
    assert back.dumps() == m.dumps()
    assert back.spec == m.spec


def test_spec_file(tmp_path):
    p = tmp_path / "spec.ini"
    p.write_text("[synth]\nseed = 4\noverlap_rate = 0.2\n\n[classes]\n8500/3 = 20\n8520/3 = 5\n")
    spec = synth.read_spec_file(p)
    assert spec.seed == 4 and spec.overlap_rate == 0.2
    assert [(str(c), n) for c, n in spec.classes] == [("8500/3", 20), ("8520/3", 5)]


@pytest.mark.parametrize("body", ["[synth]\nseed = 1\n", "[classes]\n8500/3 = 0\n", "[classes]\nnope = 3\n",
                                  "[synth]\noverlap_rate = 2\n[classes]\n8500/3 = 3\n", "not ini"])
def test_spec_file_errors(tmp_path, body):
    p = tmp_path / "spec.ini"
    p.write_text(body)
    with pytest.raises(InvalidSpec):
        synth.read_spec_file(p)


@pytest.mark.parametrize("kw", [dict(doc_length_range=(3, 10)), dict(keyword_injection_rate=0.0),
                                dict(overlap_rate=-0.1), dict(per_class_keyword_count=0)])
def test_spec_validation(kw):
    with pytest.raises(InvalidSpec):
        synth.generate(small_spec(**kw))
