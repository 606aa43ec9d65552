"""Pathology report ingestion: XML corpus files, ICD-O morphology codes,
the anonymization verification scan and in-scope class selection."""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

from .errors import (
    DuplicateReportId,
    EmptySelection,
    MalformedCode,
    MalformedXml,
    MissingField,
)

_CODE_RE = re.compile(r"(\d{4})/(\d)")


@dataclass(frozen=True, order=True)
class MorphologyCode:
    """ICD-O morphology code: four digit cell type, one digit behaviour."""

    cell_type: int
    behaviour: int

    def __post_init__(self):
        if not 1000 <= self.cell_type <= 9999 or not 0 <= self.behaviour <= 9:
            raise MalformedCode(f"out of range: {self.cell_type}/{self.behaviour}")

    def __str__(self) -> str:
        return f"{self.cell_type:04d}/{self.behaviour}"


def parse_morphology_code(s: str) -> MorphologyCode:
    m = _CODE_RE.fullmatch(s.strip()) if isinstance(s, str) else None
    if m is None:
        raise MalformedCode(f"not a DDDD/D morphology code: {s!r}")
    return MorphologyCode(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class PathologyReport:
    id: str
    text: str
    label: MorphologyCode
    type: str | None = None


@dataclass
class LabelledCorpus:
    reports: list[PathologyReport] = field(default_factory=list)
    class_counts: Counter = field(init=False)

    def __post_init__(self):
        seen = set()
        for r in self.reports:
            if r.id in seen:
                raise DuplicateReportId(f"duplicate report id {r.id!r}")
            seen.add(r.id)
        self.class_counts = Counter(r.label for r in self.reports)

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)


def parse_xml_reports(source: BinaryIO | bytes) -> LabelledCorpus:
    """Read a ``<reports>`` XML document into a corpus, preserving order."""
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "reports":
        raise MalformedXml(f"root element must be <reports>, got <{root.tag}>")

    reports = []
    for i, el in enumerate(root):
        if el.tag != "report":
            raise MalformedXml(f"unexpected element <{el.tag}> at position {i}")
        rid = el.get("id")
        if not rid:
            raise MissingField(f"report at position {i} has no id attribute")
        text_el = el.findall("text")
        label_el = el.findall("label")
        if len(text_el) != 1 or len(label_el) != 1:
            raise MissingField(f"report {rid!r} needs exactly one <text> and one <label>")
        text = (text_el[0].text or "").strip()
        if not text:
            raise MissingField(f"report {rid!r} has empty text")
        label = parse_morphology_code(label_el[0].text or "")
        type_el = el.find("type")
        rtype = type_el.text if type_el is not None else None
        reports.append(PathologyReport(rid, text, label, rtype))
    return LabelledCorpus(reports)


def read_corpus(path) -> LabelledCorpus:
    with open(path, "rb") as fh:
        return parse_xml_reports(fh)


def serialize_xml_reports(corpus: LabelledCorpus | Iterable[PathologyReport]) -> bytes:
    root = ET.Element("reports")
    for r in corpus:
        el = ET.SubElement(root, "report", id=r.id)
        if r.type is not None:
            ET.SubElement(el, "type").text = r.type
        ET.SubElement(el, "text").text = r.text
        ET.SubElement(el, "label").text = str(r.label)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def write_corpus(corpus, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_xml_reports(corpus))


# --- anonymization verification -------------------------------------------

CATEGORIES = ("long-digit-run", "date-like", "id-like-token", "title-plus-capitalized-word")


@dataclass(frozen=True)
class AnonymizationFinding:
    report_id: str
    start: int
    end: int
    category: str

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


def _id_like_tokens(text):
    for m in re.finditer(r"[A-Za-z0-9]+", text):
        tok = m.group()
        if sum(c.isalpha() for c in tok) >= 2 and sum(c.isdigit() for c in tok) >= 4:
            yield m.span()


# Earlier entries win when matches overlap.
_PATTERNS = (
    ("date-like", re.compile(r"(?<!\d)(?:\d{2}/\d{2}/\d{4}|\d{4}-\d{2}-\d{2})(?!\d)")),
    ("id-like-token", _id_like_tokens),
    ("long-digit-run", re.compile(r"(?<!\d)\d{6,}(?!\d)")),
    ("title-plus-capitalized-word", re.compile(r"\b(?i:dr|mr|mrs|ms)\b\.?\s+[A-Z][a-z]+")),
)


def verify_anonymized(report: PathologyReport) -> list[AnonymizationFinding]:
    """Scan for identifier-shaped spans. An empty list means the report passes."""
    text = report.text
    taken: list[tuple[int, int]] = []
    findings = []
    for category, pattern in _PATTERNS:
        if callable(pattern):
            spans = pattern(text)
        else:
            spans = (m.span() for m in pattern.finditer(text))
        for start, end in spans:
            if any(start < e and s < end for s, e in taken):
                continue
            taken.append((start, end))
            findings.append(AnonymizationFinding(report.id, start, end, category))
    findings.sort(key=lambda f: (f.start, f.end))
    return findings


def format_findings(findings: Iterable[AnonymizationFinding]) -> str:
    return "".join(f"{f.report_id}\t{f.category}\t{f.start}\t{f.end}\n" for f in findings)


# --- class selection ----------------------------------------------------------

def select_classes(corpus: LabelledCorpus, min_count: int = 12, max_count: float = 111,
                   always_include: Iterable[MorphologyCode] = ()) -> LabelledCorpus:
    """Keep reports whose class count lies in ``[min_count, max_count]`` or whose
    label is in ``always_include``."""
    if max_count is None:
        max_count = math.inf
    if min_count > max_count:
        raise ValueError("min_count must not exceed max_count")
    always = set(always_include)
    keep = {c for c, n in corpus.class_counts.items()
            if min_count <= n <= max_count or c in always}
    if not keep:
        raise EmptySelection(f"no class has between {min_count} and {max_count} reports")
    return LabelledCorpus([r for r in corpus.reports if r.label in keep])
