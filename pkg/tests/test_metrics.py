import json

import numpy as np
import pytest

from lpn.config import RunConfig
from lpn.dataio import SyntheticSpec, generate_synthetic
from lpn.episodes import episode_label_matrix, sample_episode
from lpn.metrics import (EpisodeScore, EvalReport, auc_binary, count_accuracy,
                         evaluate, macro_f1, model_scorer, score_episode)
from lpn.model import init_param_values


def pairwise_auc(scores, labels):
    """Direct enumeration: mean over (positive, negative) pairs of
    1 if the positive scores higher, 0.5 on a tie, 0 otherwise."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_frozen_cases():
    assert auc_binary([0.9, 0.1], [1, 0]) == 1.0
    assert auc_binary([0.1, 0.9], [1, 0]) == 0.0
    assert auc_binary([0.9, 0.8, 0.1], [1, 0, 1]) == 0.5
    assert auc_binary([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_auc_single_class_returns_skip():
    assert auc_binary([0.3, 0.7], [1, 1]) is None
    assert auc_binary([0.3, 0.7], [0, 0]) is None


def test_auc_matches_pairwise_enumeration_exactly():
    rng = np.random.default_rng(0)
    for case in range(1000):
        n = int(rng.integers(2, 12))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # halved integers force plenty of exact ties
        scores = rng.integers(0, 6, size=n) / 2.0 if case % 2 else rng.normal(size=n)
        assert auc_binary(scores, labels) == pairwise_auc(scores, labels), f"case {case}"


def test_auc_invariant_under_monotone_transforms():
    rng = np.random.default_rng(1)
    for _ in range(50):
        scores = rng.normal(size=20)
        labels = rng.integers(0, 2, size=20)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = auc_binary(scores, labels)
        assert abs(auc_binary(np.exp(scores), labels) - base) <= 1e-12
        assert abs(auc_binary(3.0 * scores + 7.0, labels) - base) <= 1e-12


def test_auc_input_validation():
    with pytest.raises(ValueError):
        auc_binary([0.1, np.nan], [0, 1])
    with pytest.raises(ValueError):
        auc_binary([[0.1, 0.2]], [0, 1])


def test_macro_f1_hand_case():
    # class 0: TP=1 FP=1 FN=0, class 1: TP=1 FP=0 FN=1, both F1 = 2/3
    pred = np.array([[1, 0], [1, 1], [0, 0]])
    true = np.array([[1, 1], [0, 1], [0, 0]])
    assert abs(macro_f1(pred, true) - 2.0 / 3.0) <= 1e-12


def test_macro_f1_extremes():
    y = np.array([[1, 0], [0, 1]])
    assert macro_f1(y, y) == 1.0
    assert macro_f1(np.zeros_like(y), y) == 0.0
    # a class absent from both prediction and truth contributes 0
    pred = np.array([[1, 0], [0, 0]])
    true = np.array([[1, 0], [0, 0]])
    assert macro_f1(pred, true) == 0.5


def test_macro_f1_matches_direct_formula():
    rng = np.random.default_rng(2)
    for _ in range(200):
        q, n = int(rng.integers(1, 8)), int(rng.integers(1, 5))
        pred = rng.integers(0, 2, size=(q, n))
        true = rng.integers(0, 2, size=(q, n))
        expected = []
        for c in range(n):
            tp = int(((pred[:, c] == 1) & (true[:, c] == 1)).sum())
            fp = int(((pred[:, c] == 1) & (true[:, c] == 0)).sum())
            fn = int(((pred[:, c] == 0) & (true[:, c] == 1)).sum())
            expected.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
        assert macro_f1(pred, true) == np.mean(expected)


def test_count_accuracy():
    assert count_accuracy([1, 2, 3], [1, 2, 2]) == pytest.approx(2.0 / 3.0)
    with pytest.raises(ValueError):
        count_accuracy([1], [1, 2])


def small_setup():
    cfg = RunConfig(n_way=3, k_shot=2, q_per_class=2, d=8, d_hidden=4, r_heads=2,
                    k_rank=4, episodes_eval=6, runs=1).validate()
    spec = SyntheticSpec(d=8, train_classes=5, val_classes=2, test_classes=3,
                         sentences_per_class=12, tokens_per_sentence=4, desc_tokens=2)
    return cfg, generate_synthetic(spec, seed=9)


def oracle_scorer(values, ep, cfg):
    """Reads the truth straight off the episode: a perfect scorer."""
    truth = episode_label_matrix(ep).astype(float)
    probs = truth / truth.sum(axis=1, keepdims=True)
    counts = np.zeros_like(truth)
    for q in range(truth.shape[0]):
        counts[q, int(truth[q].sum()) - 1] = 1.0
    return probs, counts


def test_oracle_scorer_scores_perfectly():
    cfg, ds = small_setup()
    report = evaluate({}, ds, "test", cfg, episodes=10, base_seed=5, scorer=oracle_scorer)
    assert report.episodes == 10
    assert report.mean_auc == 1.0
    assert report.mean_f1 == 1.0
    assert report.mean_count_acc == 1.0


def test_untrained_model_sits_near_chance_on_unstructured_data():
    cfg, _ = small_setup()
    # zero separation between classes: no score can beat chance
    spec = SyntheticSpec(d=8, train_classes=3, val_classes=2, test_classes=4,
                         sentences_per_class=16, tokens_per_sentence=4, desc_tokens=2,
                         sigma_between=0.0)
    ds = generate_synthetic(spec, seed=3)
    values = init_param_values(cfg, seed=0)
    report = evaluate(values, ds, "test", cfg, episodes=150, base_seed=1)
    assert abs(report.mean_auc - 0.5) < 0.05


def test_evaluate_is_deterministic():
    cfg, ds = small_setup()
    values = init_param_values(cfg, seed=0)
    a = evaluate(values, ds, "test", cfg, episodes=5, base_seed=2)
    b = evaluate(values, ds, "test", cfg, episodes=5, base_seed=2)
    assert a.per_episode == b.per_episode
    c = evaluate(values, ds, "test", cfg, episodes=5, base_seed=3)
    assert a.per_episode != c.per_episode


def test_worker_count_does_not_change_results():
    cfg, ds = small_setup()
    values = init_param_values(cfg, seed=0)
    seq = evaluate(values, ds, "test", cfg, episodes=4, base_seed=2, workers=1)
    par = evaluate(values, ds, "test", cfg, episodes=4, base_seed=2, workers=2)
    assert seq.per_episode == par.per_episode


def test_single_class_columns_are_skipped_not_zeroed():
    probs = np.array([[0.9, 0.1], [0.8, 0.2]])
    counts = np.array([[1.0, 0.0], [1.0, 0.0]])

    from lpn.dataio import Sentence, LabelDescription
    from lpn.episodes import Episode
    rng = np.random.default_rng(0)
    mk = lambda i, labels: Sentence(id=i, token_matrix=rng.normal(size=(3, 4)),
                                    label_ids=frozenset(labels))
    desc = [LabelDescription(id=c, name=f"c{c}", token_matrix=rng.normal(size=(2, 4)))
            for c in (0, 1)]
    ep = Episode(class_ids=(0, 1), descriptions=tuple(desc),
                 support=((mk(1, [0]),), (mk(2, [1]),)),
                 # both queries carry class 0 only: class 1's column has no negative/positive split
                 query=(mk(3, [0]), mk(4, [0])))
    ep.validate()
    score = score_episode(probs, counts, ep)
    # class 0 has no negatives either, so every column is skipped
    assert score.auc is None
    assert score.macro_f1 == pytest.approx((1.0 + 0.0) / 2.0)


def test_report_merge_and_aggregates():
    r1 = EvalReport(per_episode=[EpisodeScore(1.0, 1.0, 1.0), EpisodeScore(0.5, 0.0, 0.0)])
    r2 = EvalReport(per_episode=[EpisodeScore(None, 0.5, 1.0)])
    merged = EvalReport.merge([r1, r2])
    assert merged.episodes == 3
    assert merged.runs == 2
    assert merged.mean_auc == 0.75      # None rows are excluded
    assert merged.mean_f1 == 0.5
    assert merged.mean_count_acc == pytest.approx(2.0 / 3.0)


def test_report_jsonl_round_trip(tmp_path):
    cfg, ds = small_setup()
    report = EvalReport(per_episode=[EpisodeScore(0.9, 0.8, 0.7), EpisodeScore(None, 0.5, 0.5)])
    path = tmp_path / "report.jsonl"
    report.save_jsonl(str(path), cfg)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert lines[0]["kind"] == "config"
    assert lines[0]["n_way"] == cfg.n_way
    episode_lines = [l for l in lines if l["kind"] == "episode"]
    assert len(episode_lines) == 2
    assert episode_lines[1]["auc"] is None
    agg = lines[-1]
    assert agg["kind"] == "aggregate"
    assert agg["episodes"] == 2
    assert agg["mean_auc"] == 0.9


def test_model_scorer_matches_forward(tmp_path):
    cfg, ds = small_setup()
    values = init_param_values(cfg, seed=1)
    ep = sample_episode(ds, "test", cfg.n_way, cfg.k_shot, cfg.q_per_class, seed=0)
    probs, counts = model_scorer(values, ep, cfg)
    assert probs.shape == (len(ep.query), cfg.n_way)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(counts.sum(axis=1), 1.0, atol=1e-12)
