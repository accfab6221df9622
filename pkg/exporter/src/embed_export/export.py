"""Corpus -> LPND conversion."""

from dataclasses import dataclass

from embed_export.corpus import CorpusError, read_corpus, read_manifest
from embed_export.encoding import get_encoder, tokenize
from embed_export.lpnd import LabelBlock, SentenceBlock, write_lpnd


@dataclass(frozen=True)
class ExportReport:
    sentences: int
    skipped: int  # records whose text tokenized to nothing
    labels: int
    d: int
    encoder: str


def export(corpus_path, manifest_path, encoder_name: str,
           max_tokens: int, out_path) -> ExportReport:
    if max_tokens < 1:
        raise CorpusError("max_tokens must be >= 1")
    encoder = get_encoder(encoder_name)
    assignment = read_manifest(manifest_path)
    records = read_corpus(corpus_path)

    unknown = sorted({name for r in records for name in r.labels
                      if name not in assignment})
    if unknown:
        raise CorpusError("corpus uses labels missing from the manifest: "
                          + ", ".join(unknown))

    label_id = {name: i for i, name in enumerate(sorted(assignment))}
    labels = []
    for name, lid in label_id.items():
        desc_tokens = tokenize(name)
        if not desc_tokens:
            raise CorpusError(f"label name {name!r} tokenizes to nothing")
        labels.append(LabelBlock(lid, name, assignment[name],
                                 encoder.encode(desc_tokens[:max_tokens])))

    sentences = []
    skipped = 0
    for r in records:
        tokens = tokenize(r.text)[:max_tokens]
        if not tokens:
            skipped += 1
            continue
        sentences.append(SentenceBlock(len(sentences), encoder.encode(tokens),
                                       tuple(label_id[n] for n in r.labels)))
    if not sentences:
        raise CorpusError("every corpus record tokenized to nothing")

    write_lpnd(out_path, encoder.d, labels, sentences)
    return ExportReport(sentences=len(sentences), skipped=skipped,
                        labels=len(labels), d=encoder.d, encoder=encoder.name)
