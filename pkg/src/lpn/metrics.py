"""Episodic evaluation: ranking AUC, macro F1, count accuracy, report merging.

All reductions run in a fixed order (episode index, then class index) so a
report is reproducible bit for bit regardless of worker count.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lpn import tensorcore as tc
from lpn.config import RunConfig, config_to_dict
from lpn.dataio import Dataset
from lpn.episodes import Episode, episode_label_matrix, episode_seed, sample_episode
from lpn.inference import predict_labels
from lpn.model import bind_params, forward_episode

# Seed-stream tags keep training, validation, and evaluation episode draws
# disjoint even when they share a base seed.
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_VAL = 3


def auc_binary(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Probability that a positive outranks a negative; ties count half.

    Computed from average ranks, which equals pairwise enumeration exactly
    (tied ranks are dyadic, and every intermediate sum is an exact integer
    or half-integer well below 2**53). Returns None when the labels are all
    one class, so callers can skip the column rather than divide by zero.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise tc.ShapeError(f"scores {s.shape} and labels {y.shape} must be aligned vectors")
    if not np.isfinite(s).all():
        raise ValueError("scores contain non-finite values")
    n_pos = int(np.count_nonzero(y))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="stable")
    ranks = np.empty(y.size, dtype=np.float64)
    i = 0
    while i < y.size:
        j = i
        while j < y.size and s[order[j]] == s[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + 1 + j) / 2.0
        i = j
    u = float(ranks[np.asarray(y, dtype=bool)].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def macro_f1(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Mean over classes of 2TP / (2TP + FP + FN); empty denominators score 0."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape or pred.ndim != 2:
        raise tc.ShapeError(f"prediction {pred.shape} and truth {true.shape} must match as (queries, classes)")
    scores = []
    for c in range(true.shape[1]):
        p = pred[:, c] != 0
        t = true[:, c] != 0
        tp = int(np.count_nonzero(p & t))
        fp = int(np.count_nonzero(p & ~t))
        fn = int(np.count_nonzero(~p & t))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def count_accuracy(predicted_counts: Sequence[int], true_counts: Sequence[int]) -> float:
    p = np.asarray(predicted_counts)
    t = np.asarray(true_counts)
    if p.shape != t.shape:
        raise tc.ShapeError("count vectors must be aligned")
    return float(np.mean(p == t))


@dataclass(frozen=True)
class EpisodeScore:
    auc: float | None
    macro_f1: float
    count_acc: float


@dataclass
class EvalReport:
    """Per-episode scores plus aggregates; merging reports stacks runs."""

    per_episode: list[EpisodeScore] = field(default_factory=list)
    runs: int = 1

    @property
    def episodes(self) -> int:
        return len(self.per_episode)

    def _auc_values(self) -> list[float]:
        return [e.auc for e in self.per_episode if e.auc is not None]

    @property
    def mean_auc(self) -> float:
        vals = self._auc_values()
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def std_auc(self) -> float:
        vals = self._auc_values()
        return float(np.std(vals)) if vals else float("nan")

    @property
    def mean_f1(self) -> float:
        return float(np.mean([e.macro_f1 for e in self.per_episode]))

    @property
    def mean_count_acc(self) -> float:
        return float(np.mean([e.count_acc for e in self.per_episode]))

    @classmethod
    def merge(cls, reports: Sequence["EvalReport"]) -> "EvalReport":
        merged: list[EpisodeScore] = []
        for r in reports:
            merged.extend(r.per_episode)
        return cls(per_episode=merged, runs=sum(r.runs for r in reports))

    def to_records(self, cfg: RunConfig | None = None) -> list[dict]:
        """Flatten into JSONL-ready dicts: config line, episode lines, aggregate."""
        records: list[dict] = []
        if cfg is not None:
            records.append({"kind": "config", **config_to_dict(cfg)})
        for idx, e in enumerate(self.per_episode):
            records.append({"kind": "episode", "index": idx, "auc": e.auc,
                            "macro_f1": e.macro_f1, "count_acc": e.count_acc})
        records.append({"kind": "aggregate", "episodes": self.episodes, "runs": self.runs,
                        "mean_auc": self.mean_auc, "std_auc": self.std_auc,
                        "mean_f1": self.mean_f1, "mean_count_acc": self.mean_count_acc})
        return records

    def save_jsonl(self, path: str, cfg: RunConfig | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records(cfg):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


Scorer = Callable[[dict, Episode, RunConfig], tuple[np.ndarray, np.ndarray]]


def model_scorer(values: dict, ep: Episode, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Run the model on one episode, returning query label and count probabilities."""
    graph = tc.Graph()
    params = bind_params(graph, values, cfg.variant)
    out = forward_episode(graph, params, ep, cfg, with_loss=False)
    return out.probs, out.query_count_probs


def score_episode(probs: np.ndarray, count_probs: np.ndarray, ep: Episode) -> EpisodeScore:
    """Score one episode: macro AUC over usable classes, macro F1, count accuracy."""
    truth = episode_label_matrix(ep)
    n_way = truth.shape[1]
    aucs = []
    for c in range(n_way):
        val = auc_binary(probs[:, c], truth[:, c])
        if val is not None:
            aucs.append(val)
    predicted = np.zeros_like(truth)
    pred_counts = []
    for q in range(truth.shape[0]):
        chosen = predict_labels(probs[q], count_probs[q])
        for c in chosen:
            predicted[q, c] = 1
        pred_counts.append(len(chosen))
    true_counts = truth.sum(axis=1).astype(int)
    return EpisodeScore(
        auc=float(np.mean(aucs)) if aucs else None,
        macro_f1=macro_f1(predicted, truth),
        count_acc=count_accuracy(pred_counts, true_counts),
    )


def _eval_one(args: tuple) -> EpisodeScore:
    values, ds, split, cfg, seed = args
    ep = sample_episode(ds, split, cfg.n_way, cfg.k_shot, cfg.q_per_class,
                        seed=seed, shared_pair_prob=cfg.shared_pair_prob)
    probs, counts = model_scorer(values, ep, cfg)
    return score_episode(probs, counts, ep)


def evaluate(values: dict, ds: Dataset, split: str, cfg: RunConfig,
             episodes: int | None = None, base_seed: int | None = None,
             workers: int | None = None, scorer: Scorer | None = None,
             stream: int = STREAM_EVAL) -> EvalReport:
    """Score freshly sampled episodes from one split.

    Episode seeds are derived from (base_seed, stream, index), so the same
    arguments always draw the same episodes. Results are reduced in index
    order; worker count only affects wall time.
    """
    n_episodes = cfg.episodes_eval if episodes is None else episodes
    base = cfg.seed if base_seed is None else base_seed
    n_workers = cfg.workers if workers is None else workers
    seeds = [episode_seed(base, stream, i) for i in range(n_episodes)]
    if scorer is not None or n_workers <= 1:
        active = scorer if scorer is not None else model_scorer
        scores = []
        for seed in seeds:
            ep = sample_episode(ds, split, cfg.n_way, cfg.k_shot, cfg.q_per_class,
                                seed=seed, shared_pair_prob=cfg.shared_pair_prob)
            probs, counts = active(values, ep, cfg)
            scores.append(score_episode(probs, counts, ep))
        return EvalReport(per_episode=scores)
    jobs = [(values, ds, split, cfg, seed) for seed in seeds]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        scores = list(pool.map(_eval_one, jobs, chunksize=max(1, n_episodes // (4 * n_workers))))
    return EvalReport(per_episode=scores)
