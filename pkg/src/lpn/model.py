"""Parameter store and the per-episode forward pass.

Parameter values live as plain float64 arrays keyed by dotted group names
(enc.*, bil.*, con.*, cnt.*); each episode binds them into a fresh graph,
builds the full objective, and the trainer backpropagates through it.
Every unique sentence of the episode is encoded exactly once, so two support
lists holding the same sentences reuse identical embedding nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpn import contrastive as ctr
from lpn import encoder as enc
from lpn import inference as inf
from lpn import prototypes as proto
from lpn import tensorcore as tc
from lpn.config import RunConfig
from lpn.episodes import Episode, episode_label_matrix


@dataclass
class ModelParams:
    encoder: enc.EncoderParams
    bilinear: proto.BilinearParams
    contrastive: ctr.ContrastiveParams
    count: inf.CountParams
    variant: str


def param_shapes(cfg: RunConfig) -> dict[str, tuple[int, int]]:
    shapes = {}
    shapes.update(enc.encoder_shapes(cfg.d, cfg.d_hidden, cfg.r_heads))
    shapes.update(proto.bilinear_shapes(cfg.d, cfg.k_rank))
    shapes.update(ctr.contrastive_shapes(cfg.d))
    shapes.update(inf.count_shapes(cfg.n_way, cfg.d))
    return shapes


def init_param_values(cfg: RunConfig, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); biases zero.

    The low-rank factors get an extra 1/d damping: their product feeds a
    softmax over shots, and glorot-scale factors push those logits far into
    the saturated plateau, freezing the shot weights at a one-hot draw.
    """
    rng = np.random.default_rng(seed)
    values = {}
    for name, (rows, cols) in param_shapes(cfg).items():
        if name in ("con.b_a", "cnt.b_l"):
            values[name] = np.zeros((rows, cols))
        else:
            s = np.sqrt(6.0 / (rows + cols))
            if name in ("bil.u", "bil.v"):
                s /= cfg.d
            values[name] = rng.uniform(-s, s, size=(rows, cols))
    return values


def bind_params(graph: tc.Graph, values: dict[str, np.ndarray], variant: str) -> ModelParams:
    p = {name: graph.param(v, name) for name, v in values.items()}
    return ModelParams(
        encoder=enc.EncoderParams(p["enc.f1"], p["enc.f2"], p["enc.f3"]),
        bilinear=proto.BilinearParams(p["bil.u"], p["bil.v"]),
        contrastive=ctr.ContrastiveParams(p["con.w_a"], p["con.b_a"]),
        count=inf.CountParams(p["cnt.w_l"], p["cnt.b_l"]),
        variant=variant,
    )


@dataclass
class EpisodeOutputs:
    probs: np.ndarray              # (|Q|, N) classification probabilities
    labels: np.ndarray             # (|Q|, N) in-episode truth
    query_count_probs: np.ndarray  # (|Q|, N) count distributions
    protos: np.ndarray             # (N, d)
    total: tc.Tensor | None
    breakdown: inf.LossBreakdown | None
    per_anchor: list[tc.Tensor]
    scl_no_signal: bool


def forward_episode(graph: tc.Graph, params: ModelParams, ep: Episode,
                    cfg: RunConfig, with_loss: bool = True) -> EpisodeOutputs:
    n = ep.n_way

    # unique sentences, supports first, in deterministic episode order
    sents = []
    index: dict[int, int] = {}
    for shots in ep.support:
        for s in shots:
            if s.id not in index:
                index[s.id] = len(sents)
                sents.append(s)
    for q in ep.query:
        if q.id not in index:
            index[q.id] = len(sents)
            sents.append(q)

    tokens = {}
    o = {}
    for s in sents:
        h = graph.constant(s.token_matrix.T)
        tokens[s.id] = h
        o[s.id], _ = enc.encode(h, params.encoder)
    e = [enc.encode_label(desc.token_matrix, params.encoder, graph)
         for desc in ep.descriptions]

    support_emb = [[o[s.id] for s in shots] for shots in ep.support]
    if params.variant == "oo":
        protos = proto.mean_prototypes(support_emb, graph)
    else:
        alpha = proto.attention_logits(support_emb, e, params.bilinear)
        protos = proto.prototypes(support_emb, proto.shot_weights(alpha))

    prob_rows = [tc.transpose(proto.classify(o[q.id], protos)) for q in ep.query]
    probs = tc.concat(prob_rows, axis=0) if prob_rows else None
    labels = episode_label_matrix(ep)

    count_dists = {s.id: inf.count_distribution(o[s.id], params.count) for s in sents}
    query_count_probs = np.concatenate(
        [count_dists[q.id].value.T for q in ep.query], axis=0) \
        if ep.query else np.zeros((0, n))

    total = None
    breakdown = None
    per_anchor: list[tc.Tensor] = []
    no_signal = True
    if with_loss:
        if probs is None:
            raise ValueError("cannot build the objective without queries")
        lepn = proto.loss_lepn(probs, graph.constant(labels))

        in_ep = set(ep.class_ids)
        count_terms = [inf.loss_count(count_dists[s.id],
                                      inf.one_hot_count(len(s.label_ids & in_ep), n))
                       for s in sents]
        count_loss = tc.reduce_mean(tc.concat(count_terms, axis=0), axis=0, keepdims=True)

        if params.variant == "ww":
            mat = np.zeros((len(sents), n))
            for j, s in enumerate(sents):
                for i, cid in enumerate(ep.class_ids):
                    if cid in s.label_ids:
                        mat[j, i] = 1.0
            z = {}
            for j, s in enumerate(sents):
                for i in range(n):
                    if mat[j, i] == 1.0:
                        p_i = tc.transpose(tc.slice_axis(protos, 0, i, i + 1))
                        zt = ctr.label_specific_embedding(tokens[s.id], p_i, e[i],
                                                          params.contrastive)
                        if cfg.normalize_contrastive:
                            zt = ctr.normalize_embedding(zt)
                        z[(j, i)] = zt
            anchors = ctr.build_anchor_sets(mat, z)
            scl, per_anchor, no_signal = ctr.loss_scl(anchors, cfg.tau, graph)
        else:
            scl = graph.constant(np.zeros((1, 1)))
        total, breakdown = inf.total_loss(lepn, scl, count_loss, cfg.gamma, cfg.lambda_)

    return EpisodeOutputs(
        probs=probs.value.copy() if probs is not None else np.zeros((0, n)),
        labels=labels,
        query_count_probs=query_count_probs,
        protos=protos.value.copy(),
        total=total,
        breakdown=breakdown,
        per_anchor=per_anchor,
        scl_no_signal=no_signal,
    )
