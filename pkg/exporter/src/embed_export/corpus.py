"""Corpus and manifest readers.

A corpus is line-delimited JSON, one record per line: {"text": ..., "labels":
[...]}; extra keys are tolerated.  The manifest assigns every label name to
exactly one split: {"train": [names], "validation": [names], "test": [names]}.
"""

import json
from dataclasses import dataclass

SPLITS = ("train", "validation", "test")


class CorpusError(Exception):
    """Malformed corpus or manifest input."""


@dataclass(frozen=True)
class CorpusRecord:
    text: str
    labels: tuple[str, ...]


def read_corpus(path) -> list[CorpusRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise CorpusError(f"line {lineno}: record must be a JSON object")
            text = raw.get("text")
            labels = raw.get("labels")
            if not isinstance(text, str) or not text.strip():
                raise CorpusError(f"line {lineno}: 'text' must be a non-empty string")
            if (not isinstance(labels, list) or not labels
                    or not all(isinstance(x, str) and x for x in labels)):
                raise CorpusError(f"line {lineno}: 'labels' must be a non-empty "
                                  f"list of label names")
            if len(set(labels)) != len(labels):
                raise CorpusError(f"line {lineno}: duplicate label in record")
            records.append(CorpusRecord(text, tuple(labels)))
    if not records:
        raise CorpusError("corpus has no records")
    return records


def read_manifest(path) -> dict[str, str]:
    """Label name -> split tag, with disjointness enforced."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CorpusError("manifest must be a JSON object keyed by split")
    unknown = sorted(set(raw) - set(SPLITS))
    if unknown:
        raise CorpusError(f"manifest has unknown split {unknown[0]!r} "
                          f"(expected {', '.join(SPLITS)})")
    assignment: dict[str, str] = {}
    overlap = []
    for split in SPLITS:
        names = raw.get(split, [])
        if not isinstance(names, list) or not all(isinstance(n, str) and n for n in names):
            raise CorpusError(f"manifest split {split!r} must be a list of label names")
        for name in names:
            if name in assignment:
                overlap.append(name)
            assignment[name] = split
    if overlap:
        raise CorpusError("manifest splits overlap on: " + ", ".join(sorted(set(overlap))))
    if not assignment:
        raise CorpusError("manifest assigns no labels")
    return assignment
