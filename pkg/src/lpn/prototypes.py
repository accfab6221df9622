"""Label-informed prototypes and distance-softmax classification.

Support embeddings get per-shot weights from a low-rank bilinear affinity
against the class's label embedding; prototypes are the weighted mixtures.
The mean-pooled baseline is the same computation with uniform weights, so
the two paths agree bit for bit when the weights are uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpn import tensorcore as tc

PROB_FLOOR = 1e-12


@dataclass
class BilinearParams:
    u: tc.Tensor  # (d, k), k < d
    v: tc.Tensor  # (d, k)


def bilinear_shapes(d: int, k_rank: int) -> dict[str, tuple[int, int]]:
    if k_rank >= d:
        raise ValueError(f"low-rank width k={k_rank} must be < d={d}")
    if k_rank < 1:
        raise ValueError("k must be >= 1")
    return {"bil.u": (d, k_rank), "bil.v": (d, k_rank)}


def attention_logits(support_emb: list[list[tc.Tensor]], label_emb: list[tc.Tensor],
                     bp: BilinearParams) -> tc.Tensor:
    """Per-shot affinity 1'(U'o ∘ V'e), assembled as an (N, K) tensor.

    Equals the full bilinear form o'(UV')e; the factored evaluation never
    materializes the d x d matrix.
    """
    rows = []
    for shots, e in zip(support_emb, label_emb):
        e_proj = tc.matmul(tc.transpose(bp.v), e)  # (k, 1)
        cells = []
        for o in shots:
            o_proj = tc.matmul(tc.transpose(bp.u), o)
            cells.append(tc.reduce_sum(tc.mul(o_proj, e_proj), axis=0, keepdims=True))
        rows.append(tc.concat(cells, axis=1))
    return tc.concat(rows, axis=0)


def shot_weights(alpha: tc.Tensor) -> tc.Tensor:
    """Row-wise softmax over the K shots of each class."""
    return tc.softmax(alpha, axis=1)


def prototypes(support_emb: list[list[tc.Tensor]], beta: tc.Tensor) -> tc.Tensor:
    """Weighted support mixtures, one (1, d) row per class; returns (N, d)."""
    rows = []
    for i, shots in enumerate(support_emb):
        stacked = tc.concat(shots, axis=1)  # (d, K)
        w = tc.slice_axis(beta, 0, i, i + 1)  # (1, K)
        rows.append(tc.transpose(tc.matmul(stacked, tc.transpose(w))))
    return tc.concat(rows, axis=0)


def mean_prototypes(support_emb: list[list[tc.Tensor]], graph: tc.Graph) -> tc.Tensor:
    """Uniform-weight special case, routed through the same mixing code."""
    n = len(support_emb)
    k = len(support_emb[0])
    beta = graph.constant(np.full((n, k), 1.0 / k))
    return prototypes(support_emb, beta)


def classify(query_emb: tc.Tensor, protos: tc.Tensor) -> tc.Tensor:
    """Softmax over negative squared distances to each prototype; (N, 1)."""
    return tc.softmax(tc.scale(tc.sqdist(query_emb, protos), -1.0), axis=0)


def loss_lepn(probs: tc.Tensor, labels: tc.Tensor) -> tc.Tensor:
    """Multi-hot cross-entropy against one softmax distribution, (1, 1).

    Each positive label contributes its own -log p term (a two-label row
    against [0.5, 0.5] costs 2 log 2), then the per-query sums are averaged.
    """
    if probs.value.shape != labels.value.shape:
        raise tc.ShapeError(f"probs {probs.value.shape} vs labels {labels.value.shape}")
    picked = tc.mul(labels, tc.log(tc.clamp_min(probs, PROB_FLOOR)))
    per_query = tc.reduce_sum(picked, axis=1, keepdims=True)  # (|Q|, 1)
    return tc.scale(tc.reduce_mean(per_query, axis=0, keepdims=True), -1.0)
