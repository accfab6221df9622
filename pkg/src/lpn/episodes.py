"""N-way K-shot multi-label episode construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpn.dataio import Dataset, LabelDescription, Sentence


class SamplingError(ValueError):
    pass


def episode_seed(*parts: int) -> int:
    """Derive a stable per-episode seed from (base seed, stream, index) parts."""
    entropy = [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class Episode:
    """One few-shot task: N classes, K supports each, and a query set.

    Query labels are implicit: a query is positive for class i iff its
    label set contains class_ids[i] (labels outside the episode are masked).
    """

    class_ids: list[int]
    descriptions: list[LabelDescription]
    support: list[list[Sentence]]  # N lists of K sentences
    query: list[Sentence]

    @property
    def n_way(self) -> int:
        return len(self.class_ids)

    @property
    def k_shot(self) -> int:
        return len(self.support[0])

    def validate(self) -> "Episode":
        n = len(self.class_ids)
        if len(set(self.class_ids)) != n:
            raise SamplingError("duplicate class in episode")
        if len(self.descriptions) != n or len(self.support) != n:
            raise SamplingError("episode fields disagree on N")
        for cid, desc in zip(self.class_ids, self.descriptions):
            if desc.id != cid:
                raise SamplingError(f"description id {desc.id} misaligned with class {cid}")
        k = len(self.support[0])
        support_ids = set()
        for cid, shots in zip(self.class_ids, self.support):
            if len(shots) != k:
                raise SamplingError("ragged support lists")
            for s in shots:
                if cid not in s.label_ids:
                    raise SamplingError(f"support sentence {s.id} lacks label {cid}")
                support_ids.add(s.id)
        in_episode = set(self.class_ids)
        for q in self.query:
            if q.id in support_ids:
                raise SamplingError(f"sentence {q.id} appears in both support and query")
            if not (q.label_ids & in_episode):
                raise SamplingError(f"query sentence {q.id} has no in-episode label")
        if len({q.id for q in self.query}) != len(self.query):
            raise SamplingError("duplicate query sentence")
        return self


def episode_label_matrix(ep: Episode) -> np.ndarray:
    """|Q| x N multi-hot matrix of in-episode query labels."""
    out = np.zeros((len(ep.query), ep.n_way))
    for r, q in enumerate(ep.query):
        for c, cid in enumerate(ep.class_ids):
            if cid in q.label_ids:
                out[r, c] = 1.0
    return out


def query_counts(ep: Episode) -> np.ndarray:
    """Per-query count of in-episode labels (>= 1 by sampler invariant)."""
    return episode_label_matrix(ep).sum(axis=1).astype(int)


def support_counts(ep: Episode) -> list[list[int]]:
    """In-episode label count for every support sentence, per class."""
    in_episode = set(ep.class_ids)
    return [[len(s.label_ids & in_episode) for s in shots] for shots in ep.support]


def _pick(rng: np.random.Generator, items: list, size: int) -> list:
    idx = rng.choice(len(items), size=size, replace=False)
    return [items[int(i)] for i in idx]


def sample_episode(ds: Dataset, split: str, n_way: int, k_shot: int,
                   q_per_class: int, seed: int,
                   shared_pair_prob: float = 0.0) -> Episode:
    """Sample one episode from a dataset split; pure function of its arguments.

    Per class, K supports are drawn without replacement from that class's
    pool; draws are independent across classes, so one sentence may serve
    several classes' support lists. Queries come from the sampled classes'
    remaining sentences, deduplicated across classes.

    With probability shared_pair_prob the episode is built around a pair of
    classes given element-wise identical support lists, drawn from their
    shared multi-label pool (the degenerate case mean pooling cannot
    separate). Falls back to an ordinary episode when no pair in the split
    has K co-labeled sentences.
    """
    if n_way < 1 or k_shot < 1 or q_per_class < 0:
        raise SamplingError("need n_way >= 1, k_shot >= 1, q_per_class >= 0")
    rng = np.random.default_rng(seed)
    classes_all = ds.labels_for(split)
    if len(classes_all) < n_way:
        raise SamplingError(f"split {split!r} has {len(classes_all)} classes; need >= {n_way}")

    shared_pair: tuple[int, int] | None = None
    if shared_pair_prob > 0 and rng.random() < shared_pair_prob and n_way >= 2:
        pairs = [(a, b) for i, a in enumerate(classes_all) for b in classes_all[i + 1:]
                 if len(ds.shared_pool(a, b)) >= k_shot]
        if pairs:
            shared_pair = pairs[int(rng.integers(len(pairs)))]

    if shared_pair is None:
        class_ids = [int(c) for c in rng.choice(classes_all, size=n_way, replace=False)]
    else:
        rest = [c for c in classes_all if c not in shared_pair]
        class_ids = list(shared_pair) + [int(c) for c in
                                         rng.choice(rest, size=n_way - 2, replace=False)]

    for cid in class_ids:
        have = len(ds.pool(cid))
        if have < k_shot + q_per_class:
            raise SamplingError(f"class {cid} has {have} sentences; "
                                f"need >= {k_shot + q_per_class}")

    support: list[list[Sentence]] = []
    if shared_pair is not None:
        shots = _pick(rng, ds.shared_pool(*shared_pair), k_shot)
        support.append(list(shots))
        support.append(list(shots))
        remaining_classes = class_ids[2:]
    else:
        remaining_classes = class_ids
    for cid in remaining_classes:
        support.append(_pick(rng, ds.pool(cid), k_shot))

    taken = {s.id for shots in support for s in shots}
    query: list[Sentence] = []
    for cid in class_ids:
        remaining = [s for s in ds.pool(cid) if s.id not in taken]
        for s in _pick(rng, remaining, min(q_per_class, len(remaining))):
            query.append(s)
            taken.add(s.id)
    if q_per_class > 0 and not query:
        raise SamplingError("no queries available after support sampling")

    descs = [ds.label_by_id(cid) for cid in class_ids]
    return Episode(class_ids, descs, support, query).validate()
