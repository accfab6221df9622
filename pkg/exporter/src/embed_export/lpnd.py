"""LPND container writer.

Little-endian layout, version 1:
  magic "LPND", version u32, d u32, label count u32, sentence count u32
  per label:    id u32, split u32 (0 train / 1 validation / 2 test),
                name length u32 + UTF-8 bytes, T_e u32, T_e*d float32 row-major
  per sentence: id u32, T u32, T*d float32 row-major,
                label count u32, sorted label ids u32[]

The file is written to a temporary sibling and renamed into place, so a
crashed export never leaves a partial file under the target name.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from embed_export.corpus import SPLITS

MAGIC = b"LPND"
VERSION = 1


@dataclass(frozen=True)
class LabelBlock:
    id: int
    name: str
    split: str
    tokens: np.ndarray  # (T_e, d)


@dataclass(frozen=True)
class SentenceBlock:
    id: int
    tokens: np.ndarray  # (T, d)
    label_ids: tuple[int, ...]


def _u32(v: int) -> bytes:
    return struct.pack("<I", v)


def write_lpnd(path, d: int, labels: list[LabelBlock],
               sentences: list[SentenceBlock]) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".lpnd-", dir=parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(_u32(VERSION))
            f.write(_u32(d))
            f.write(_u32(len(labels)))
            f.write(_u32(len(sentences)))
            for lab in labels:
                f.write(_u32(lab.id))
                f.write(_u32(SPLITS.index(lab.split)))
                name = lab.name.encode("utf-8")
                f.write(_u32(len(name)))
                f.write(name)
                f.write(_u32(lab.tokens.shape[0]))
                f.write(lab.tokens.astype("<f4").tobytes())
            for s in sentences:
                f.write(_u32(s.id))
                f.write(_u32(s.tokens.shape[0]))
                f.write(s.tokens.astype("<f4").tobytes())
                f.write(_u32(len(s.label_ids)))
                for lid in sorted(s.label_ids):
                    f.write(_u32(lid))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
