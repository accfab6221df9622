"""Dataset types, the LPND binary container, and synthetic corpus generators."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

MAGIC = b"LPND"
VERSION = 1
SPLITS = ("train", "validation", "test")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    """One sentence: precomputed token embeddings plus its label-id set."""

    id: int
    token_matrix: np.ndarray  # (T, d), token-major
    label_ids: frozenset[int]

    def __post_init__(self):
        tm = self.token_matrix
        if tm.ndim != 2 or tm.shape[0] < 1 or tm.shape[1] < 1:
            raise FormatError(f"sentence {self.id}: degenerate token matrix {tm.shape}")
        if not np.isfinite(tm).all():
            raise FormatError(f"sentence {self.id}: non-finite token values")
        if not self.label_ids:
            raise FormatError(f"sentence {self.id}: no labels")


@dataclass(frozen=True)
class LabelDescription:
    id: int
    name: str
    token_matrix: np.ndarray  # (T_e, d)

    def __post_init__(self):
        tm = self.token_matrix
        if tm.ndim != 2 or tm.shape[0] < 1 or tm.shape[1] < 1:
            raise FormatError(f"label {self.id}: degenerate token matrix {tm.shape}")
        if not np.isfinite(tm).all():
            raise FormatError(f"label {self.id}: non-finite token values")


@dataclass
class Dataset:
    """Immutable after construction; validate() checks every invariant eagerly."""

    d: int
    sentences: list[Sentence]
    labels: list[LabelDescription]
    split: dict[int, str]  # label id -> train | validation | test
    _pools: dict[int, list[Sentence]] | None = field(default=None, repr=False)

    def validate(self) -> "Dataset":
        if self.d < 1:
            raise FormatError("inconsistent d: width must be >= 1")
        ids = [lab.id for lab in self.labels]
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate label id")
        known = set(ids)
        for lab in self.labels:
            if lab.token_matrix.shape[1] != self.d:
                raise FormatError(f"inconsistent d: label {lab.id} has width "
                                  f"{lab.token_matrix.shape[1]}, dataset d={self.d}")
        for s in self.sentences:
            if s.token_matrix.shape[1] != self.d:
                raise FormatError(f"inconsistent d: sentence {s.id} has width "
                                  f"{s.token_matrix.shape[1]}, dataset d={self.d}")
            missing = s.label_ids - known
            if missing:
                raise FormatError(f"unknown label {sorted(missing)[0]} in sentence {s.id}")
        if set(self.split) != known:
            odd = set(self.split) ^ known
            raise FormatError(f"split map does not cover labels exactly (label {sorted(odd)[0]})")
        for lid, tag in self.split.items():
            if tag not in SPLITS:
                raise FormatError(f"unknown split {tag!r} for label {lid}")
        return self

    def labels_for(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return sorted(lid for lid, tag in self.split.items() if tag == split)

    def label_by_id(self, lid: int) -> LabelDescription:
        for lab in self.labels:
            if lab.id == lid:
                return lab
        raise KeyError(lid)

    def pool(self, label_id: int) -> list[Sentence]:
        """All sentences carrying the label, sorted by sentence id."""
        if self._pools is None:
            pools: dict[int, list[Sentence]] = {lab.id: [] for lab in self.labels}
            for s in sorted(self.sentences, key=lambda x: x.id):
                for lid in s.label_ids:
                    pools[lid].append(s)
            self._pools = pools
        return self._pools[label_id]

    def shared_pool(self, a: int, b: int) -> list[Sentence]:
        """Sentences labeled with both a and b, sorted by sentence id."""
        return [s for s in self.pool(a) if b in s.label_ids]


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if a.d != b.d or a.split != b.split:
        return False
    if len(a.sentences) != len(b.sentences) or len(a.labels) != len(b.labels):
        return False
    for x, y in zip(a.labels, b.labels):
        if (x.id, x.name) != (y.id, y.name) or not np.array_equal(x.token_matrix, y.token_matrix):
            return False
    for x, y in zip(a.sentences, b.sentences):
        if x.id != y.id or x.label_ids != y.label_ids:
            return False
        if not np.array_equal(x.token_matrix, y.token_matrix):
            return False
    return True


# -- binary container ---------------------------------------------------------
#
# Little-endian layout, version 1:
#   magic "LPND", version u32, d u32, label count u32, sentence count u32
#   per label:    id u32, split u32 (0 train / 1 validation / 2 test),
#                 name length u32 + UTF-8 bytes, T_e u32, T_e*d float32 row-major
#   per sentence: id u32, T u32, T*d float32 row-major,
#                 label count u32, label ids u32[]
# Payload floats are 32-bit; in-memory tensors are float64, so save->load->save
# is byte-identical.


def _need(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("unexpected end of file")
    return buf


def _read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", _need(f, 4))[0]


def _write_u32(f: BinaryIO, v: int):
    f.write(struct.pack("<I", v))


def _read_block(f: BinaryIO, rows: int, cols: int) -> np.ndarray:
    raw = _need(f, 4 * rows * cols)
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)


def save_dataset(ds: Dataset, path) -> None:
    ds.validate()
    with open(path, "wb") as f:
        f.write(MAGIC)
        _write_u32(f, VERSION)
        _write_u32(f, ds.d)
        _write_u32(f, len(ds.labels))
        _write_u32(f, len(ds.sentences))
        for lab in ds.labels:
            _write_u32(f, lab.id)
            _write_u32(f, SPLITS.index(ds.split[lab.id]))
            name = lab.name.encode("utf-8")
            _write_u32(f, len(name))
            f.write(name)
            _write_u32(f, lab.token_matrix.shape[0])
            f.write(lab.token_matrix.astype("<f4").tobytes())
        for s in ds.sentences:
            _write_u32(f, s.id)
            _write_u32(f, s.token_matrix.shape[0])
            f.write(s.token_matrix.astype("<f4").tobytes())
            lids = sorted(s.label_ids)
            _write_u32(f, len(lids))
            for lid in lids:
                _write_u32(f, lid)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        if _need(f, 4) != MAGIC:
            raise FormatError("unsupported format: bad magic")
        version = _read_u32(f)
        if version != VERSION:
            raise FormatError(f"unsupported format: version {version}")
        d = _read_u32(f)
        n_labels = _read_u32(f)
        n_sentences = _read_u32(f)
        labels, split = [], {}
        for _ in range(n_labels):
            lid = _read_u32(f)
            code = _read_u32(f)
            if code >= len(SPLITS):
                raise FormatError(f"unsupported format: split code {code}")
            name = _need(f, _read_u32(f)).decode("utf-8")
            t_e = _read_u32(f)
            labels.append(LabelDescription(lid, name, _read_block(f, t_e, d)))
            split[lid] = SPLITS[code]
        sentences = []
        for _ in range(n_sentences):
            sid = _read_u32(f)
            t = _read_u32(f)
            tokens = _read_block(f, t, d)
            lids = frozenset(_read_u32(f) for _ in range(_read_u32(f)))
            sentences.append(Sentence(sid, tokens, lids))
        if f.read(1):
            raise FormatError("unexpected trailing bytes")
    return Dataset(d, sentences, labels, split).validate()


# -- synthetic corpora --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated corpus.

    Class means sit at scale sigma_between, token noise at sigma_within.
    A sentence with m aspects mixes tokens from each labeled class, with
    per-sentence mixing proportions drawn from Dirichlet(mixture_alpha) and
    at least one token per aspect. When count_marker_scale > 0, two extra
    tokens drawn around a per-count landmark are appended, so the aspect
    count is recoverable from the sentence content alone (function-word
    analog; a linear readout cannot recover it from class mixtures).
    paired_classes organizes each split into twin pairs whose multi-aspect
    sentences prefer the twin as co-label (probability twin_bias), giving
    the sampler pairs with large shared multi-label pools.
    """

    d: int
    train_classes: int
    val_classes: int
    test_classes: int
    sentences_per_class: int = 40
    tokens_per_sentence: int = 8
    desc_tokens: int = 2
    sigma_between: float = 4.0
    sigma_within: float = 1.0
    max_aspects: int = 1
    aspect_count_probs: tuple[float, ...] = (1.0,)
    mixture_alpha: float = 4.0
    count_marker_scale: float = 0.0
    paired_classes: bool = False
    twin_bias: float = 0.9


def _check_spec(spec: SyntheticSpec):
    if spec.d < 1 or spec.train_classes < 1 or spec.sentences_per_class < 1:
        raise ValueError("synthetic spec needs d >= 1, >= 1 train class, >= 1 sentence per class")
    if spec.val_classes < 0 or spec.test_classes < 0:
        raise ValueError("negative class count")
    if spec.sigma_between < 0 or spec.sigma_within < 0:
        raise ValueError("negative sigma")
    sizes = [n for n in (spec.train_classes, spec.val_classes, spec.test_classes) if n > 0]
    if spec.max_aspects > min(sizes):
        raise ValueError(f"max_aspects {spec.max_aspects} exceeds smallest split ({min(sizes)} classes)")
    if len(spec.aspect_count_probs) != spec.max_aspects:
        raise ValueError("aspect_count_probs length must equal max_aspects")
    if any(p < 0 for p in spec.aspect_count_probs) or sum(spec.aspect_count_probs) <= 0:
        raise ValueError("aspect_count_probs must be nonnegative with positive mass")
    if spec.tokens_per_sentence < spec.max_aspects:
        raise ValueError("tokens_per_sentence must be >= max_aspects")
    if spec.mixture_alpha <= 0:
        raise ValueError("mixture_alpha must be > 0")


def _orthogonal_rows(vectors: np.ndarray, against: np.ndarray) -> np.ndarray:
    """Project each row of `vectors` off `against` rows and off earlier rows.

    Norms are preserved; a row whose residual is degenerate (the span already
    covers the full width) is kept as drawn.
    """
    basis = against
    out = vectors.copy()
    for i, v in enumerate(vectors):
        q, _ = np.linalg.qr(basis.T, mode="reduced")
        residual = v - q @ (q.T @ v)
        norm = float(np.linalg.norm(residual))
        if norm > 1e-9 * float(np.linalg.norm(v)):
            out[i] = residual * (float(np.linalg.norm(v)) / norm)
        basis = np.vstack([basis, out[i][None, :]])
    return out


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Gaussian-cluster corpus with multi-aspect mixing; bit-stable per seed.

    Count markers are the only consistent evidence of a sentence's aspect
    count, and they are orthogonalized against every class mean (when the
    width allows) so that evidence stays linearly separable from content
    for held-out classes too.
    """
    _check_spec(spec)
    rng = np.random.default_rng(seed)
    probs = np.asarray(spec.aspect_count_probs, dtype=np.float64)
    probs = probs / probs.sum()
    markers = spec.count_marker_scale * spec.sigma_between \
        * rng.standard_normal((spec.max_aspects, spec.d))

    per_split = (("train", spec.train_classes), ("validation", spec.val_classes),
                 ("test", spec.test_classes))
    split_ids: list[tuple[str, list[int]]] = []
    means: dict[int, np.ndarray] = {}
    next_label = 0
    for tag, n_classes in per_split:
        if n_classes == 0:
            continue
        class_ids = list(range(next_label, next_label + n_classes))
        next_label += n_classes
        split_ids.append((tag, class_ids))
        for c in class_ids:
            means[c] = spec.sigma_between * rng.standard_normal(spec.d)
    if spec.count_marker_scale > 0:
        markers = _orthogonal_rows(markers, np.stack(list(means.values())))

    labels: list[LabelDescription] = []
    sentences: list[Sentence] = []
    split: dict[int, str] = {}
    next_sentence = 0

    for tag, class_ids in split_ids:
        n_classes = len(class_ids)
        twin: dict[int, int] = {}
        if spec.paired_classes:
            for i in range(0, n_classes - 1, 2):
                a, b = class_ids[i], class_ids[i + 1]
                twin[a], twin[b] = b, a
        for c in class_ids:
            desc = means[c] + spec.sigma_within * rng.standard_normal((spec.desc_tokens, spec.d))
            labels.append(LabelDescription(c, f"aspect-{c}", desc))
            split[c] = tag
        for c in class_ids:
            others = [x for x in class_ids if x != c]
            for _ in range(spec.sentences_per_class):
                m_raw = 1 + int(rng.choice(spec.max_aspects, p=probs))
                m = min(m_raw, n_classes)
                group = [c]
                if m > 1:
                    if c in twin and rng.random() < spec.twin_bias:
                        group.append(twin[c])
                    rest = [x for x in others if x not in group]
                    extra = m - len(group)
                    if extra > 0:
                        group += [int(x) for x in rng.choice(rest, size=extra, replace=False)]
                w = rng.dirichlet(spec.mixture_alpha * np.ones(len(group)))
                slots = list(range(len(group)))
                if spec.tokens_per_sentence > len(group):
                    slots += list(rng.choice(len(group),
                                             size=spec.tokens_per_sentence - len(group), p=w))
                rows = [means[group[a]] + spec.sigma_within * rng.standard_normal(spec.d)
                        for a in slots]
                if spec.count_marker_scale > 0:
                    rows += [markers[len(group) - 1]
                             + spec.sigma_within * rng.standard_normal(spec.d)
                             for _ in range(2)]
                sentences.append(Sentence(next_sentence, np.array(rows), frozenset(group)))
                next_sentence += 1
    return Dataset(spec.d, sentences, labels, split).validate()


def generate_shared_support_episode(d: int, k_shot: int, seed: int):
    """A 3-way episode where classes 0 and 1 have identical support lists.

    Every shared support sentence carries both labels and mixes tokens from
    both class means with a per-shot random proportion; class 2 is ordinary.
    Mean pooling cannot tell classes 0 and 1 apart on this episode.
    """
    from lpn.episodes import Episode

    if d < 2 or k_shot < 1:
        raise ValueError("need d >= 2 and K >= 1")
    rng = np.random.default_rng(seed)
    t = 6
    means = 4.0 * rng.standard_normal((3, d))
    descs = [LabelDescription(i, f"class-{i}", means[i] + rng.standard_normal((2, d)))
             for i in range(3)]

    sid = 0

    def make(group: list[int]) -> Sentence:
        nonlocal sid
        w = rng.dirichlet(np.ones(len(group)))
        slots = list(range(len(group)))
        slots += list(rng.choice(len(group), size=t - len(group), p=w))
        rows = [means[a] + rng.standard_normal(d) for a in slots]
        s = Sentence(sid, np.array(rows), frozenset(group))
        sid += 1
        return s

    shared = [make([0, 1]) for _ in range(k_shot)]
    support = [list(shared), list(shared), [make([2]) for _ in range(k_shot)]]
    query = [make([i]) for i in range(3) for _ in range(2)]
    return Episode(class_ids=[0, 1, 2], descriptions=descs, support=support, query=query)
