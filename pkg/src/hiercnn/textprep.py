"""Tokenization, language filtering, TF-IDF feature selection and encoding."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, InputError

PAD = 0
UNKNOWN = 1

_SPLIT_RE = re.compile(r"[^\W_]+")


def load_stopwords(path=None, *, language: str = "en") -> frozenset[str]:
    """Read a stopword list (one term per line, ``#`` comments).

    With no path, the bundled list for ``language`` ("en" or "af") is used.
    """
    if path is None:
        text = resources.files("hiercnn.data").joinpath(f"stopwords_{language}.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


def split_words(text: str) -> list[str]:
    """Lowercased alphanumeric runs with digit-bearing tokens removed."""
    return [t for t in (m.group().lower() for m in _SPLIT_RE.finditer(text))
            if not any(c.isdigit() for c in t)]


def tokenize(text: str, stopwords: Iterable[str] = frozenset()) -> list[str]:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return [t for t in split_words(text) if t not in stop]


def is_afrikaans_only(tokens: Sequence[str], af_stopwords, en_stopwords,
                      threshold: float = 0.05) -> bool:
    """Stopword hit-ratio language test; ``tokens`` must still contain stopwords."""
    if not tokens:
        return False
    n = len(tokens)
    af = sum(t in af_stopwords for t in tokens) / n
    en = sum(t in en_stopwords for t in tokens) / n
    return af > en and af >= threshold


@dataclass(frozen=True)
class TokenizedReport:
    id: str
    tokens: tuple[str, ...]
    label: str


@dataclass
class TfIdfModel:
    doc_count: int
    doc_freq: dict[str, int]
    corpus_score: dict[str, float]

    def idf(self, term: str) -> float:
        return math.log((1 + self.doc_count) / (1 + self.doc_freq[term])) + 1.0


def fit_tfidf(docs: Sequence[TokenizedReport | Sequence[str]]) -> TfIdfModel:
    """Fit smoothed TF-IDF and rank terms by corpus-summed tf*idf.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, tf = raw count.
    """
    token_lists = [d.tokens if isinstance(d, TokenizedReport) else d for d in docs]
    if not token_lists or not any(token_lists):
        raise EmptyCorpus("TF-IDF needs at least one non-empty document")
    n = len(token_lists)
    df: Counter = Counter()
    tf_total: Counter = Counter()
    for tokens in token_lists:
        df.update(set(tokens))
        tf_total.update(tokens)
    scores = {t: tf_total[t] * (math.log((1 + n) / (1 + df[t])) + 1.0) for t in df}
    return TfIdfModel(n, dict(df), scores)


@dataclass(frozen=True)
class FeatureSet:
    terms: tuple[str, ...]
    k: int = 1400
    _set: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "_set", frozenset(self.terms))

    def __contains__(self, term) -> bool:
        return term in self._set

    def __len__(self) -> int:
        return len(self.terms)

    def dumps(self) -> str:
        return f"tfidf-features v1 K={self.k}\n" + "".join(t + "\n" for t in self.terms)

    @classmethod
    def loads(cls, text: str) -> "FeatureSet":
        lines = text.splitlines()
        m = re.fullmatch(r"tfidf-features v1 K=(\d+)", lines[0].strip()) if lines else None
        if m is None:
            raise InputError("not a tfidf-features v1 file")
        terms = tuple(line for line in lines[1:] if line)
        return cls(terms, int(m.group(1)))


def select_top_features(model: TfIdfModel, k: int = 1400) -> FeatureSet:
    if k < 1:
        raise ValueError("K must be at least 1")
    ranked = sorted(model.corpus_score.items(), key=lambda kv: (-kv[1], kv[0]))
    return FeatureSet(tuple(t for t, _ in ranked[:k]), k)


def filter_document(tokens: Sequence[str], fs: FeatureSet) -> list[str]:
    return [t for t in tokens if t in fs]


class Vocabulary:
    """Term to index map; 0 is padding and 1 the unknown token."""

    def __init__(self, terms: Sequence[str]):
        self.terms = tuple(terms)
        self.index = {t: i + 2 for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ValueError("vocabulary terms must be distinct")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def size(self) -> int:
        """Number of embedding rows, reserved indices included."""
        return len(self.terms) + 2

    def __getitem__(self, term: str) -> int:
        return self.index.get(term, UNKNOWN)


def build_vocabulary(fs: FeatureSet) -> Vocabulary:
    return Vocabulary(fs.terms)


@dataclass(frozen=True)
class EncodedDocument:
    indices: np.ndarray
    label: int
    id: str = ""


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int, label: int = 0,
           doc_id: str = "") -> EncodedDocument:
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    out = np.zeros(max_len, dtype=np.int64)
    ids = [vocab[t] for t in tokens[:max_len]]
    out[:len(ids)] = ids
    return EncodedDocument(out, label, doc_id)


def length_percentile(lengths: Sequence[int], pct: float = 95.0) -> int:
    """Nearest-rank percentile of document lengths."""
    if not lengths:
        return 0
    ordered = sorted(lengths)
    rank = max(1, math.ceil(pct * len(ordered) / 100.0 - 1e-9))
    return ordered[rank - 1]
