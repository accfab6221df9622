"""Multi-head self-attentive sentence and label-description encoding.

A sentence arrives as token columns H (d x T). R attention heads each form a
convex mixture of tokens; the mixtures are concatenated and linearly mapped
back to width d. Label descriptions go through the same parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpn import tensorcore as tc


@dataclass
class EncoderParams:
    f1: tc.Tensor  # (d_hidden, d)
    f2: tc.Tensor  # (r_heads, d_hidden)
    f3: tc.Tensor  # (d, d * r_heads)

    @property
    def r_heads(self) -> int:
        return self.f2.value.shape[0]


def encoder_shapes(d: int, d_hidden: int, r_heads: int) -> dict[str, tuple[int, int]]:
    return {"enc.f1": (d_hidden, d), "enc.f2": (r_heads, d_hidden),
            "enc.f3": (d, d * r_heads)}


def encode(H: tc.Tensor, p: EncoderParams) -> tuple[tc.Tensor, tc.Tensor]:
    """Token columns (d, T) -> (sentence embedding (d, 1), head weights (R, T))."""
    d, _ = H.value.shape
    if p.f1.value.shape[1] != d or p.f3.value.shape[0] != d:
        raise tc.ShapeError(f"encoder params built for d={p.f1.value.shape[1]}, "
                            f"got sentence width {d}")
    att = tc.softmax(tc.matmul(p.f2, tc.tanh(tc.matmul(p.f1, H))), axis=1)  # (R, T)
    mixed = tc.matmul(H, tc.transpose(att))  # (d, R), column r is head r's mixture
    r = p.r_heads
    stacked = tc.concat([tc.slice_axis(mixed, 1, i, i + 1) for i in range(r)], axis=0)
    return tc.matmul(p.f3, stacked), att


def encode_label(token_matrix: np.ndarray, p: EncoderParams, graph: tc.Graph) -> tc.Tensor:
    """Embed a label description's (T_e, d) token matrix; returns (d, 1)."""
    return encode(graph.constant(token_matrix.T), p)[0]
