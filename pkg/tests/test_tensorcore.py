"""Autodiff core: forward oracles, gradient checks, determinism."""

import numpy as np
import pytest

from lpn import tensorcore as tc


def naive_matmul(a, b):
    """Triple-loop reference; the graph op must match it bit for bit."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity():
    g = tc.Graph()
    a = g.constant(np.arange(6.0).reshape(2, 3))
    i3 = g.constant(np.eye(3))
    assert np.array_equal(tc.matmul(a, i3).value, a.value)


def test_matmul_bit_exact_against_triple_loop():
    rng = np.random.default_rng(7)
    for _ in range(200):
        m, k, n = rng.integers(1, 17, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        g = tc.Graph()
        got = tc.matmul(g.constant(a), g.constant(b)).value
        want = naive_matmul(a, b)
        assert np.array_equal(got, want)


def test_matmul_shape_mismatch():
    g = tc.Graph()
    with pytest.raises(tc.ShapeError):
        tc.matmul(g.constant(np.zeros((2, 3))), g.constant(np.zeros((2, 3))))


def test_softmax_frozen_values():
    g = tc.Graph()
    s = tc.softmax(g.constant([[1.0, 2.0, 3.0]]), axis=1).value
    np.testing.assert_allclose(s, [[0.09003057, 0.24472847, 0.66524096]], atol=1e-4)
    assert np.array_equal(tc.softmax(g.constant([[0.0, 0.0]]), axis=1).value,
                          [[0.5, 0.5]])
    # max-subtraction keeps huge logits finite
    big = tc.softmax(g.constant([[1000.0, 1000.0]]), axis=1).value
    assert np.array_equal(big, [[0.5, 0.5]])


def test_softmax_rows_sum_to_one_and_shift_invariance():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = rng.standard_normal((4, 6)) * rng.uniform(0.1, 50)
        g = tc.Graph()
        s = tc.softmax(g.constant(x), axis=1).value
        np.testing.assert_allclose(s.sum(axis=1), np.ones(4), atol=1e-12)
        shifted = tc.softmax(g.constant(x + 123.456), axis=1).value
        np.testing.assert_allclose(s, shifted, atol=1e-12)


def test_sum_and_dot_gradients_are_trivial():
    g = tc.Graph()
    x = g.param(np.array([[1.0, -2.0, 3.0]]), "x")
    y = g.param(np.array([[4.0], [5.0], [6.0]]), "y")
    loss = tc.reduce_sum(tc.matmul(x, y))
    grads = g.backward(loss)
    assert np.array_equal(grads["x"], y.value.T)
    assert np.array_equal(grads["y"], x.value.T)

    g2 = tc.Graph()
    z = g2.param(np.arange(12.0).reshape(3, 4), "z")
    grads2 = g2.backward(tc.reduce_sum(z))
    assert np.array_equal(grads2["z"], np.ones((3, 4)))


def test_quadratic_gradient():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((5, 1))
    g = tc.Graph()
    x = g.param(x0, "x")
    loss = tc.reduce_sum(tc.mul(x, x))
    grads = g.backward(loss)
    rel = np.abs(grads["x"] - 2 * x0) / np.maximum(1e-8, np.abs(grads["x"]) + np.abs(2 * x0))
    assert rel.max() < 1e-9


def test_softmax_cross_entropy_gradcheck():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((1, 7))
    onehot = np.zeros((1, 7))
    onehot[0, 2] = 1.0
    g = tc.Graph()
    x = g.param(logits, "logits")
    p = tc.clamp_min(tc.softmax(x, axis=1), 1e-12)
    loss = tc.scale(tc.reduce_sum(tc.mul(g.constant(onehot), tc.log(p))), -1.0)
    report = tc.grad_check(g, loss, tolerance=1e-6)
    assert report.passed, report.max_rel_err


def test_gradcheck_on_every_op():
    """One composite graph touching each differentiable op."""
    rng = np.random.default_rng(9)
    g = tc.Graph()
    a = g.param(rng.standard_normal((3, 4)), "a")
    b = g.param(rng.standard_normal((4, 2)), "b")
    v = g.param(rng.standard_normal((2, 1)), "v")
    s = g.param(np.array([[0.7]]), "s")

    h = tc.tanh(tc.matmul(a, b))                      # (3,2)
    att = tc.softmax(tc.transpose(h), axis=1)         # (2,3)
    mixed = tc.matmul(att, tc.exp(tc.scale(h, 0.1)))  # (2,2)
    d = tc.sqdist(v, mixed)                           # (2,1)
    parts = tc.concat([d, tc.slice_axis(mixed, 1, 0, 1)], axis=0)
    parts = tc.scale_by(parts, s)
    safe = tc.log(tc.clamp_min(tc.add(parts, tc.mul(parts, parts)), 1e-3))
    loss = tc.reduce_mean(tc.reduce_sum(safe, axis=0, keepdims=True))
    report = tc.grad_check(g, loss, tolerance=1e-5)
    assert report.passed, report.max_rel_err


def test_fanout_accumulates():
    g = tc.Graph()
    x = g.param(np.array([[2.0]]), "x")
    loss = tc.reduce_sum(tc.add(x, x))
    grads = g.backward(loss)
    assert grads["x"][0, 0] == 2.0


def test_unused_parameter_gets_zero_gradient():
    g = tc.Graph()
    x = g.param(np.ones((2, 2)), "x")
    g.param(np.ones((3, 3)), "unused")
    grads = g.backward(tc.reduce_sum(x))
    assert np.array_equal(grads["unused"], np.zeros((3, 3)))
    report = tc.grad_check(g, tc.reduce_sum(tc.mul(x, x)))
    assert "unused" in report.unused


def test_clamp_min_counts_floor_events_and_zeroes_gradient():
    g = tc.Graph()
    x = g.param(np.array([[-1.0, 0.5, 2.0, -3.0]]), "x")
    c = tc.clamp_min(x, 1.0)
    assert np.array_equal(c.value, [[1.0, 1.0, 2.0, 1.0]])
    assert g.floor_events == 3
    grads = g.backward(tc.reduce_sum(c))
    assert np.array_equal(grads["x"], [[0.0, 0.0, 1.0, 0.0]])
    # replay must not double-count
    g.replay()
    assert g.floor_events == 3


def test_nonfinite_forward_raises_with_op_name():
    g = tc.Graph()
    x = g.constant([[1e308]])
    with pytest.raises(tc.NonFiniteError, match="exp"):
        tc.exp(x)
    g2 = tc.Graph(check_finite=False)
    tc.exp(g2.constant([[1e308]]))  # permitted when checks are off


def test_degenerate_and_cross_graph_errors():
    g = tc.Graph()
    with pytest.raises(tc.ShapeError, match="degenerate"):
        g.constant(np.zeros((0, 3)))
    other = tc.Graph()
    with pytest.raises(ValueError, match="different graphs"):
        tc.add(g.constant(np.zeros((1, 1))), other.constant(np.zeros((1, 1))))
    with pytest.raises(ValueError, match="duplicate"):
        g.param(np.zeros((1, 1)), "p")
        g.param(np.zeros((1, 1)), "p")


def test_backward_reruns_are_bit_identical():
    def build(seed):
        rng = np.random.default_rng(seed)
        g = tc.Graph()
        a = g.param(rng.standard_normal((6, 6)), "a")
        b = g.param(rng.standard_normal((6, 6)), "b")
        h = tc.tanh(tc.matmul(a, b))
        loss = tc.reduce_sum(tc.mul(h, h))
        return g.backward(loss)

    g1, g2 = build(42), build(42)
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_gradcheck_detects_broken_backward_rule(monkeypatch):
    """Negative control: a sign flip in one vjp must fail the check."""
    monkeypatch.setattr(tc, "_tanh_grad", lambda t: -(1.0 - t * t))
    rng = np.random.default_rng(1)
    g = tc.Graph()
    x = g.param(rng.standard_normal((2, 3)), "x")
    loss = tc.reduce_sum(tc.tanh(x))
    report = tc.grad_check(g, loss)
    assert not report.passed
