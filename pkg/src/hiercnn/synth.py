"""Deterministic synthetic pathology-like corpora with controllable class
imbalance and keyword overlap between classes."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .corpus import LabelledCorpus, MorphologyCode, PathologyReport, parse_morphology_code
from .errors import InputError, InvalidSpec
from .nn import Rng
from .textprep import load_stopwords

NINE_CLASS_COUNTS = (1417, 111, 80, 60, 45, 30, 20, 15, 12)
NINE_CLASS_LABELS = ("8500/3", "8520/3", "8522/3", "8480/3", "8211/3", "8507/3", "8503/2", "8500/2", "8530/3")

_ONSETS = ("b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "cl", "dr", "gr", "pl", "st", "tr", "sk")
_VOWELS = ("a", "e", "i", "o", "u", "ae", "io", "ou")
_CODAS = ("", "", "", "n", "r", "s", "l", "x")


@dataclass
class SynthSpec:
    classes: list[tuple[MorphologyCode, int]]
    shared_vocab_size: int = 300
    per_class_keyword_count: int = 4
    keyword_injection_rate: float = 0.25
    doc_length_range: tuple[int, int] = (30, 60)
    overlap_rate: float = 0.0
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if len(self.classes) < 1:
            raise InvalidSpec("at least one class is required")
        labels = [c for c, _ in self.classes]
        if len(set(labels)) != len(labels):
            raise InvalidSpec("class labels must be distinct")
        if any(n < 1 for _, n in self.classes):
            raise InvalidSpec("class counts must be positive")
        lo, hi = self.doc_length_range
        if lo < 5 or hi < lo:
            raise InvalidSpec("doc_length_range needs 5 <= min <= max")
        if not 0.0 < self.keyword_injection_rate <= 1.0:
            raise InvalidSpec("keyword_injection_rate must be in (0, 1]")
        if not 0.0 <= self.overlap_rate <= 1.0:
            raise InvalidSpec("overlap_rate must be in [0, 1]")
        if self.shared_vocab_size < 1 or self.per_class_keyword_count < 1:
            raise InvalidSpec("vocabulary sizes must be positive")
        return self

    @property
    def total(self) -> int:
        return sum(n for _, n in self.classes)


@dataclass
class SynthManifest:
    spec: SynthSpec
    keywords: dict[str, list[str]]
    background: list[str]
    provenance: dict[str, list[str]] = field(default_factory=dict)

    def dumps(self) -> str:
        s = self.spec
        lines = ["synth-manifest v1", "[spec]", f"seed={s.seed}",
                 "classes=" + ",".join(f"{c}:{n}" for c, n in s.classes),
                 f"shared_vocab_size={s.shared_vocab_size}",
                 f"per_class_keyword_count={s.per_class_keyword_count}",
                 f"keyword_injection_rate={s.keyword_injection_rate!r}",
                 f"doc_length_range={s.doc_length_range[0]},{s.doc_length_range[1]}",
                 f"overlap_rate={s.overlap_rate!r}", "[keywords]"]
        lines += [f"{label}={' '.join(words)}" for label, words in self.keywords.items()]
        lines += ["[background]", "words=" + " ".join(self.background), "[provenance]"]
        lines += [f"{rid}={' '.join(words)}" for rid, words in self.provenance.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SynthManifest":
        lines = text.splitlines()
        if not lines or lines[0] != "synth-manifest v1":
            raise InputError("not a synth-manifest v1 file")
        sections: dict[str, dict[str, str]] = {}
        current = None
        for line in lines[1:]:
            if line.startswith("[") and line.endswith("]"):
                current = sections.setdefault(line[1:-1], {})
            elif line:
                key, _, value = line.partition("=")
                current[key] = value
        sp = sections["spec"]
        classes = []
        for item in sp["classes"].split(","):
            label, _, n = item.rpartition(":")
            classes.append((parse_morphology_code(label), int(n)))
        lo, hi = (int(x) for x in sp["doc_length_range"].split(","))
        spec = SynthSpec(classes, int(sp["shared_vocab_size"]), int(sp["per_class_keyword_count"]),
                         float(sp["keyword_injection_rate"]), (lo, hi), float(sp["overlap_rate"]),
                         int(sp["seed"]))
        keywords = {k: v.split() for k, v in sections["keywords"].items()}
        background = sections["background"]["words"].split()
        provenance = {k: v.split() for k, v in sections.get("provenance", {}).items()}
        return cls(spec, keywords, background, provenance)


def nine_class_spec(seed: int = 0, overlap_rate: float = 0.35, **kwargs) -> SynthSpec:
    """Nine classes with the 1417-report majority and 12..111 minority counts."""
    classes = [(parse_morphology_code(lab), n) for lab, n in zip(NINE_CLASS_LABELS, NINE_CLASS_COUNTS)]
    return SynthSpec(classes, overlap_rate=overlap_rate, seed=seed, **kwargs)


def _word_pool(rng: Rng, n: int, exclude: set[str]) -> list[str]:
    words: list[str] = []
    seen = set(exclude)
    while len(words) < n:
        syllables = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syllables)) + _CODAS[rng.integers(len(_CODAS))]
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _render(tokens: list[str]) -> str:
    text = " ".join(tokens)
    return text[0].upper() + text[1:] + "."


def generate(spec: SynthSpec) -> tuple[LabelledCorpus, SynthManifest]:
    """Build a corpus whose class histogram equals ``spec.classes`` exactly.

    Each token slot is a class keyword with probability
    ``keyword_injection_rate``; a keyword slot draws from a random other
    class with probability ``overlap_rate``. Every document carries at least
    one keyword of its own class. Reports are shuffled; each report uses its
    own derived random stream.
    """
    spec.validate()
    root = Rng(spec.seed)
    vocab_rng = root.derive(0)
    exclude = set(load_stopwords(language="en")) | set(load_stopwords(language="af"))
    exclude |= {"dr", "mr", "mrs", "ms"}
    n_classes = len(spec.classes)
    pool = _word_pool(vocab_rng, spec.shared_vocab_size + n_classes * spec.per_class_keyword_count, exclude)
    background = pool[:spec.shared_vocab_size]
    k = spec.per_class_keyword_count
    labels = [str(c) for c, _ in spec.classes]
    keywords = {lab: pool[spec.shared_vocab_size + i * k: spec.shared_vocab_size + (i + 1) * k]
                for i, lab in enumerate(labels)}

    slots = np.repeat(np.arange(n_classes), [n for _, n in spec.classes])
    order = root.derive(1).permutation(len(slots))
    lo, hi = spec.doc_length_range
    reports, provenance = [], {}
    width = len(str(len(slots)))
    for i, ci in enumerate(slots[order]):
        r = root.derive(2, i)
        own = keywords[labels[ci]]
        length = int(r.integers(lo, hi + 1))
        tokens, injected = [], []
        for _ in range(length):
            if r.random() < spec.keyword_injection_rate:
                src = ci
                if n_classes > 1 and r.random() < spec.overlap_rate:
                    src = int(r.integers(n_classes - 1))
                    src += src >= ci
                word = keywords[labels[src]][int(r.integers(k))]
                injected.append(word)
            else:
                word = background[int(r.integers(len(background)))]
            tokens.append(word)
        if not any(t in own for t in tokens):
            pos = int(r.integers(length))
            word = own[int(r.integers(k))]
            if tokens[pos] in injected:
                injected.remove(tokens[pos])
            tokens[pos] = word
            injected.append(word)
        rid = f"syn{i + 1:0{width}d}"
        reports.append(PathologyReport(rid, _render(tokens), spec.classes[ci][0]))
        provenance[rid] = injected
    corpus = LabelledCorpus(reports)
    return corpus, SynthManifest(spec, keywords, background, provenance)


def keyword_oracle(manifest: SynthManifest, tokens) -> str:
    """Rule classifier: the class whose keywords occur most often (first on ties)."""
    best, best_hits = None, -1
    for label, words in manifest.keywords.items():
        kw = set(words)
        hits = sum(t in kw for t in tokens)
        if hits > best_hits:
            best, best_hits = label, hits
    return best


def read_spec_file(path) -> SynthSpec:
    """Parse an INI synth spec: ``[synth]`` settings and ``[classes]`` label = count."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InvalidSpec(str(exc)) from exc
    if not parser.has_section("classes"):
        raise InvalidSpec("spec file needs a [classes] section")
    try:
        classes = [(parse_morphology_code(label), int(n)) for label, n in parser.items("classes")]
        s = parser["synth"] if parser.has_section("synth") else {}
        defaults = SynthSpec([])
        lo, hi = (int(x) for x in str(s.get("doc_length_range",
                                            f"{defaults.doc_length_range[0]},{defaults.doc_length_range[1]}")).split(","))
        spec = SynthSpec(
            classes,
            shared_vocab_size=int(s.get("shared_vocab_size", defaults.shared_vocab_size)),
            per_class_keyword_count=int(s.get("per_class_keyword_count", defaults.per_class_keyword_count)),
            keyword_injection_rate=float(s.get("keyword_injection_rate", defaults.keyword_injection_rate)),
            doc_length_range=(lo, hi),
            overlap_rate=float(s.get("overlap_rate", defaults.overlap_rate)),
            seed=int(s.get("seed", defaults.seed)),
        )
    except (ValueError, InputError) as exc:
        raise InvalidSpec(str(exc)) from exc
    return spec.validate()
