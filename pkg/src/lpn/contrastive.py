"""Label-specific sentence embeddings and the supervised contrastive loss.

For every (sentence, class) pair with a positive label, the sentence's tokens
are re-pooled under an attention vector derived from that class's prototype
and label embedding. The resulting embeddings are pushed together when they
share the class and apart otherwise, with raw inner products over a
temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpn import tensorcore as tc

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-12


@dataclass
class ContrastiveParams:
    w_a: tc.Tensor  # (d, 2d)
    b_a: tc.Tensor  # (d, 1)


def contrastive_shapes(d: int) -> dict[str, tuple[int, int]]:
    return {"con.w_a": (d, 2 * d), "con.b_a": (d, 1)}


def label_specific_embedding(H: tc.Tensor, proto: tc.Tensor, label_emb: tc.Tensor,
                             cp: ContrastiveParams) -> tc.Tensor:
    """Re-pool token columns (d, T) toward one class; returns (d, 1)."""
    a = tc.concat([proto, label_emb], axis=0)  # (2d, 1)
    probe = tc.add(tc.matmul(cp.w_a, a), cp.b_a)  # (d, 1)
    g = tc.softmax(tc.matmul(tc.transpose(probe), H), axis=1)  # (1, T)
    return tc.matmul(H, tc.transpose(g))


def normalize_embedding(z: tc.Tensor) -> tc.Tensor:
    """Scale z to unit length inside the graph (norm floored for stability)."""
    sq = tc.reduce_sum(tc.mul(z, z))
    inv = tc.exp(tc.scale(tc.log(tc.clamp_min(sq, NORM_FLOOR)), -0.5))
    return tc.scale_by(z, inv)


@dataclass
class AnchorSet:
    """Usable embeddings I plus, per anchor, its positive indices.

    members[a] = (sentence index, class index) of anchor a; positives[a]
    lists the other anchors with the same class index. Candidates are
    implicit: every other member. Anchors with no positive are flagged.
    """

    members: list[tuple[int, int]]
    z: list[tc.Tensor]
    positives: list[list[int]]
    flagged: list[int]


def build_anchor_sets(label_matrix: np.ndarray,
                      z: dict[tuple[int, int], tc.Tensor]) -> AnchorSet:
    """Collect anchors from a (sentences x N) multi-hot matrix.

    z must cover every positive (sentence, class) pair; entries for negative
    pairs are permitted and ignored.
    """
    members = [(j, i) for j in range(label_matrix.shape[0])
               for i in range(label_matrix.shape[1]) if label_matrix[j, i] == 1]
    missing = [m for m in members if m not in z]
    if missing:
        raise KeyError(f"no label-specific embedding for (sentence, class) {missing[0]}")
    positives = []
    for a, (_, ci) in enumerate(members):
        positives.append([b for b, (_, cb) in enumerate(members) if b != a and cb == ci])
    flagged = [a for a, pos in enumerate(positives) if not pos]
    return AnchorSet(members, [z[m] for m in members], positives, flagged)


def loss_scl(anchors: AnchorSet, tau: float,
             graph: tc.Graph) -> tuple[tc.Tensor, list[tc.Tensor], bool]:
    """Supervised contrastive loss averaged over anchors that have positives.

    Returns (loss (1,1), per-anchor terms (1,1) aligned with contributing
    anchors, no_signal). Each per-anchor term is a mean of -log softmax
    ratios over that anchor's positives, hence nonnegative. When every
    anchor is degenerate the loss is a constant 0 and no_signal is True.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    contributing = [a for a in range(len(anchors.members)) if anchors.positives[a]]
    if not contributing:
        return graph.constant(np.zeros((1, 1))), [], True

    z_rows = tc.concat([tc.transpose(z) for z in anchors.z], axis=0)  # (n, d)
    sims = tc.scale(tc.matmul(z_rows, tc.transpose(z_rows)), 1.0 / tau)  # (n, n)
    n = len(anchors.members)
    per_anchor = []
    for a in contributing:
        row = tc.slice_axis(sims, 0, a, a + 1)  # (1, n)
        parts = []
        if a > 0:
            parts.append(tc.slice_axis(row, 1, 0, a))
        if a + 1 < n:
            parts.append(tc.slice_axis(row, 1, a + 1, n))
        candidates = parts[0] if len(parts) == 1 else tc.concat(parts, axis=1)
        ratios = tc.softmax(candidates, axis=1)  # (1, n-1), softmax over Γ
        cols = [b if b < a else b - 1 for b in anchors.positives[a]]
        picked = tc.concat([tc.slice_axis(ratios, 1, c, c + 1) for c in cols], axis=1)
        logs = tc.log(tc.clamp_min(picked, PROB_FLOOR))
        per_anchor.append(tc.scale(tc.reduce_mean(logs, axis=1, keepdims=True), -1.0))
    loss = tc.reduce_mean(tc.concat(per_anchor, axis=0), axis=0, keepdims=True)
    return loss, per_anchor, False
