"""Dense float64 tensors with reverse-mode differentiation.

A Graph records every operation at construction time; backward() walks the
tape in reverse creation order, so gradient accumulation order is fixed and
runs are bit-reproducible. The operator set is deliberately small: exactly
what the model's forward pass needs.

Matrix products accumulate in k-order (out += a[:,k] * b[k,:]), which makes
them bit-identical to a naive triple loop and independent of BLAS threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with fixed k-order accumulation (no BLAS)."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def _tanh_grad(t: np.ndarray) -> np.ndarray:
    # t is tanh(x), not x
    return 1.0 - t * t


class Tensor:
    """One node of a computation graph; value is an immutable float64 array."""

    __slots__ = ("graph", "nid", "value", "op", "parents", "trainable", "name",
                 "grad", "_vjp", "_forward")

    def __init__(self, graph, nid, value, op, parents, trainable, name, vjp, forward):
        self.graph = graph
        self.nid = nid
        self.value = value
        self.op = op
        self.parents = parents
        self.trainable = trainable
        self.name = name
        self.grad = None
        self._vjp = vjp
        self._forward = forward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(nid={self.nid}, op={self.op!r}, shape={self.value.shape})"


class Graph:
    """Tape of Tensor nodes in creation order.

    Single-threaded during construction and backward. The floor_events
    counter records how many elements clamp_min had to raise, which the
    trainer reports as numerical-floor events.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}
        self.floor_events = 0
        self.check_finite = check_finite
        self._replaying = False

    # -- node constructors ------------------------------------------------

    def _validate(self, value: np.ndarray, op: str, name):
        if any(s < 1 for s in value.shape):
            raise ShapeError(f"degenerate shape {value.shape} in op {op!r}")
        if self.check_finite and not self._replaying:
            if not math.isfinite(value.sum()):
                label = name if name is not None else f"node {len(self.nodes)}"
                raise NonFiniteError(f"non-finite value produced by op {op!r} ({label})")

    def _node(self, value, op, parents=(), trainable=False, name=None,
              vjp=None, forward=None) -> Tensor:
        value = np.asarray(value, dtype=np.float64)
        self._validate(value, op, name)
        t = Tensor(self, len(self.nodes), value, op, tuple(parents), trainable,
                   name, vjp, forward)
        self.nodes.append(t)
        return t

    def param(self, value, name: str) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = self._node(np.array(value, dtype=np.float64), "param", name=name,
                       trainable=True)
        self.params[name] = t
        return t

    def constant(self, value, name: str | None = None) -> Tensor:
        return self._node(np.array(value, dtype=np.float64), "const", name=name)

    def _own(self, *tensors: Tensor):
        for t in tensors:
            if t.graph is not self:
                raise ValueError("tensors belong to different graphs")

    # -- execution ---------------------------------------------------------

    def replay(self):
        """Recompute every non-leaf value in creation order (for grad_check)."""
        self._replaying = True
        try:
            for node in self.nodes:
                if node._forward is not None:
                    node.value = node._forward()
        finally:
            self._replaying = False

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Reverse-mode sweep from a scalar loss.

        Returns gradients for every trainable leaf (zeros where the loss does
        not depend on it) and stores them on the leaves' .grad as well.
        """
        self._own(loss)
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.nid] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.nid + 1]):
            g = grads[node.nid]
            if g is None or node._vjp is None:
                continue
            for parent, contrib in node._vjp(g):
                pg = grads[parent.nid]
                if pg is None:
                    pg = grads[parent.nid] = np.zeros_like(parent.value)
                pg += contrib
        out = {}
        for name, leaf in self.params.items():
            g = grads[leaf.nid]
            if g is None:
                g = np.zeros_like(leaf.value)
            if self.check_finite and not math.isfinite(g.sum()):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            leaf.grad = g
            out[name] = g
        return out


# -- operators --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a.graph._own(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("matmul expects rank-2 tensors")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.value.shape} x {b.value.shape}")

    def vjp(g):
        return ((a, _mm(g, b.value.T)), (b, _mm(a.value.T, g)))

    return a.graph._node(_mm(a.value, b.value), "matmul", (a, b), vjp=vjp,
                         forward=lambda: _mm(a.value, b.value))


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError("transpose expects a rank-2 tensor")

    def vjp(g):
        return ((a, g.T),)

    return a.graph._node(a.value.T.copy(), "transpose", (a,), vjp=vjp,
                         forward=lambda: a.value.T.copy())


def tanh(a: Tensor) -> Tensor:
    def fwd():
        return np.tanh(a.value)

    node = a.graph._node(fwd(), "tanh", (a,), forward=fwd)
    node._vjp = lambda g: ((a, g * _tanh_grad(node.value)),)
    return node


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along one axis, computed with max-subtraction."""
    if x.value.ndim == 0:
        raise ShapeError("degenerate shape: softmax needs at least rank 1")

    def fwd():
        v = x.value
        shifted = v - v.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)

    node = x.graph._node(fwd(), "softmax", (x,), forward=fwd)

    def vjp(g):
        s = node.value
        return ((x, s * (g - (g * s).sum(axis=axis, keepdims=True))),)

    node._vjp = vjp
    return node


def add(a: Tensor, b: Tensor) -> Tensor:
    a.graph._own(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch {a.value.shape} vs {b.value.shape}")

    def vjp(g):
        return ((a, g), (b, g))

    return a.graph._node(a.value + b.value, "add", (a, b), vjp=vjp,
                         forward=lambda: a.value + b.value)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a.graph._own(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shape mismatch {a.value.shape} vs {b.value.shape}")

    def vjp(g):
        return ((a, g * b.value), (b, g * a.value))

    return a.graph._node(a.value * b.value, "mul", (a, b), vjp=vjp,
                         forward=lambda: a.value * b.value)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return ((a, g * c),)

    return a.graph._node(a.value * c, "scale", (a,), vjp=vjp,
                         forward=lambda: a.value * c)


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a single-element graph tensor (broadcast)."""
    a.graph._own(s)
    if s.value.size != 1:
        raise ShapeError("scale_by expects a single-element scale tensor")

    def fwd():
        return a.value * s.value.reshape(())

    def vjp(g):
        return ((a, g * s.value.reshape(())),
                (s, np.full_like(s.value, (g * a.value).sum())))

    return a.graph._node(fwd(), "scale_by", (a, s), vjp=vjp, forward=fwd)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("degenerate shape: concat of nothing")
    g0 = parts[0].graph
    g0._own(*parts)
    sizes = [p.value.shape[axis] for p in parts]

    def fwd():
        return np.concatenate([p.value for p in parts], axis=axis)

    def vjp(g):
        out, off = [], 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + s)
            out.append((p, g[tuple(sl)]))
            off += s
        return out

    return g0._node(fwd(), "concat", tuple(parts), vjp=vjp, forward=fwd)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def fwd():
        return np.sum(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.value.shape)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((x, np.broadcast_to(gg, x.value.shape)),)

    return x.graph._node(fwd(), "sum", (x,), vjp=vjp, forward=fwd)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.value.size if axis is None else x.value.shape[axis]

    def fwd():
        return np.mean(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return ((x, np.broadcast_to(g / n, x.value.shape)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((x, np.broadcast_to(gg / n, x.value.shape)),)

    return x.graph._node(fwd(), "mean", (x,), vjp=vjp, forward=fwd)


def sqdist(v: Tensor, rows: Tensor) -> Tensor:
    """Squared Euclidean distance from a column vector to each row of a matrix.

    v: (d, 1); rows: (N, d); result: (N, 1).
    """
    v.graph._own(rows)
    if v.value.ndim != 2 or v.value.shape[1] != 1:
        raise ShapeError(f"sqdist expects a column vector, got {v.value.shape}")
    if rows.value.ndim != 2 or rows.value.shape[1] != v.value.shape[0]:
        raise ShapeError(f"sqdist shape mismatch {v.value.shape} vs {rows.value.shape}")

    def fwd():
        diff = rows.value - v.value.T
        return (diff * diff).sum(axis=1, keepdims=True)

    def vjp(g):
        diff = rows.value - v.value.T
        return ((rows, 2.0 * g * diff),
                (v, (-2.0 * (g * diff).sum(axis=0)).reshape(-1, 1)))

    return v.graph._node(fwd(), "sqdist", (v, rows), vjp=vjp, forward=fwd)


def log(x: Tensor) -> Tensor:
    def fwd():
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(x.value)

    def vjp(g):
        return ((x, g / x.value),)

    return x.graph._node(fwd(), "log", (x,), vjp=vjp, forward=fwd)


def exp(x: Tensor) -> Tensor:
    def fwd():
        with np.errstate(over="ignore"):
            return np.exp(x.value)

    node = x.graph._node(fwd(), "exp", (x,), forward=fwd)
    node._vjp = lambda g: ((x, g * node.value),)
    return node


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); clamped elements get zero gradient.

    Each element actually raised to the floor counts as one numerical-floor
    event on the graph.
    """
    floor = float(floor)
    g0 = x.graph

    def fwd():
        clamped = x.value < floor
        if not g0._replaying:
            g0.floor_events += int(clamped.sum())
        return np.where(clamped, floor, x.value)

    def vjp(g):
        return ((x, g * (x.value >= floor)),)

    return g0._node(fwd(), "clamp_min", (x,), vjp=vjp, forward=fwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.value.shape[axis]):
        raise ShapeError(f"bad slice [{start}:{stop}] on axis {axis} of {x.value.shape}")
    sl = [slice(None)] * x.value.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def vjp(g):
        buf = np.zeros_like(x.value)
        buf[sl] = g
        return ((x, buf),)

    return x.graph._node(x.value[sl].copy(), "slice", (x,), vjp=vjp,
                         forward=lambda: x.value[sl].copy())


# -- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_err: dict[str, float] = field(default_factory=dict)
    unused: list[str] = field(default_factory=list)

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_err.values())


def grad_check(graph: Graph, loss: Tensor, tolerance: float = 1e-4,
               step: float = 1e-5) -> GradCheckReport:
    """Compare backward() against central finite differences.

    Per scalar entry the relative error is
    |g_analytic - g_fd| / max(1e-8, |g_analytic| + |g_fd|); a parameter whose
    analytic and numeric gradients are both exactly zero everywhere is
    reported as unused with error 0.
    """
    analytic = graph.backward(loss)
    report = GradCheckReport(tolerance=tolerance)
    loss_idx = loss.nid
    for name, leaf in graph.params.items():
        ga = analytic[name]
        flat = leaf.value.reshape(-1)
        worst = 0.0
        any_signal = False
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            graph.replay()
            f_plus = float(graph.nodes[loss_idx].value.reshape(()))
            flat[i] = orig - step
            graph.replay()
            f_minus = float(graph.nodes[loss_idx].value.reshape(()))
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            gai = float(ga.reshape(-1)[i])
            if gai != 0.0 or fd != 0.0:
                any_signal = True
            rel = abs(gai - fd) / max(1e-8, abs(gai) + abs(fd))
            worst = max(worst, rel)
        report.max_rel_err[name] = worst
        if not any_signal:
            report.unused.append(name)
    graph.replay()
    return report
