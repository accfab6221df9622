"""Aspect-count head, the joint objective, and multi-label decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpn import tensorcore as tc

PROB_FLOOR = 1e-12


@dataclass
class CountParams:
    w_l: tc.Tensor  # (N, d)
    b_l: tc.Tensor  # (N, 1)


def count_shapes(n_way: int, d: int) -> dict[str, tuple[int, int]]:
    return {"cnt.w_l": (n_way, d), "cnt.b_l": (n_way, 1)}


def count_distribution(o: tc.Tensor, cp: CountParams) -> tc.Tensor:
    """Softmax over count classes; index c-1 encodes 'c aspects'. (N, 1)."""
    return tc.softmax(tc.add(tc.matmul(cp.w_l, o), cp.b_l), axis=0)


def one_hot_count(count: int, n_way: int) -> np.ndarray:
    """Target vector for a true in-episode count, clamped into [1, N]."""
    idx = min(max(count, 1), n_way) - 1
    t = np.zeros((n_way, 1))
    t[idx, 0] = 1.0
    return t


def loss_count(n_l: tc.Tensor, t_l: np.ndarray) -> tc.Tensor:
    """Cross-entropy of one count distribution vs a one-hot target; (1, 1)."""
    g = n_l.graph
    picked = tc.mul(g.constant(t_l), tc.log(tc.clamp_min(n_l, PROB_FLOOR)))
    return tc.scale(tc.reduce_sum(picked, axis=0, keepdims=True), -1.0)


@dataclass
class LossBreakdown:
    lepn: float
    scl: float
    count: float
    total: float
    gamma: float
    lambda_: float


def total_loss(lepn: tc.Tensor, scl: tc.Tensor, count: tc.Tensor,
               gamma: float, lambda_: float) -> tuple[tc.Tensor, LossBreakdown]:
    """total = lepn + gamma*scl + lambda*count, plus a float breakdown.

    The breakdown's total is computed with the same association as the graph
    ops, so the identity holds at float64 resolution, not just within
    tolerance.
    """
    if gamma < 0 or lambda_ < 0:
        raise ValueError("loss weights must be >= 0")
    weighted = tc.add(tc.scale(scl, gamma), tc.scale(count, lambda_))
    total = tc.add(lepn, weighted)
    lv = float(lepn.value.reshape(()))
    sv = float(scl.value.reshape(()))
    cv = float(count.value.reshape(()))
    bd = LossBreakdown(lepn=lv, scl=sv, count=cv,
                       total=lv + (gamma * sv + lambda_ * cv),
                       gamma=gamma, lambda_=lambda_)
    return total, bd


def predict_labels(probs: np.ndarray, n_l: np.ndarray) -> set[int]:
    """Top-c classes by probability, c = argmax count; ties to lower index."""
    probs = np.asarray(probs).reshape(-1)
    n_l = np.asarray(n_l).reshape(-1)
    c = int(np.argmax(n_l)) + 1  # argmax takes the first max: lower count wins ties
    order = np.lexsort((np.arange(len(probs)), -probs))
    return {int(i) for i in order[:c]}
