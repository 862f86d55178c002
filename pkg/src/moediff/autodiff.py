"""Define-by-run reverse-mode automatic differentiation.

A :class:`Graph` is an append-only tape. Every operation here executes
eagerly on float64 numpy arrays; when any argument is attached to a graph
(a :class:`Var`), the operation also records a node so :func:`backward`
can replay the tape in reverse. Called with plain arrays only, the same
functions are pure numpy evaluation and record nothing, which is how
inference runs.

Node ids are topologically ordered by construction: a node's inputs always
have smaller ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import as_tensor

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    ctx: dict = field(default_factory=dict)


class Graph:
    """Append-only operation tape. Single-writer: one forward pass at a time."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, name: str | None = None) -> "Var":
        """Add an input node (parameter or constant) and return its handle."""
        return self._record("leaf", (), as_tensor(value), {"name": name})

    def _record(self, op: str, inputs: tuple[int, ...], value, ctx: dict) -> "Var":
        nid = len(self.nodes)
        if any(i >= nid for i in inputs):
            raise ValueError(f"{op}: input ids {inputs} not topologically ordered")
        self.nodes.append(Node(op, inputs, np.asarray(value, dtype=np.float64), ctx))
        return Var(self, nid)

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value


class Var:
    """Handle to one graph node; supports the usual arithmetic sugar."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, nid: int):
        self.graph = graph
        self.id = nid

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else as_tensor(x)


def value_of(x) -> np.ndarray:
    """Underlying array of a Var or plain array-like."""
    return _value(x)


def _graph_of(*args) -> Graph | None:
    graph = None
    for a in args:
        if isinstance(a, Var):
            if graph is None:
                graph = a.graph
            elif graph is not a.graph:
                raise ValueError("operands belong to different graphs")
    return graph


def _ids(g: Graph, *args) -> tuple[int, ...]:
    out = []
    for a in args:
        out.append(a.id if isinstance(a, Var) else g.leaf(a).id)
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra
# ---------------------------------------------------------------------------


def add(a, b):
    g = _graph_of(a, b)
    out = _value(a) + _value(b)
    if g is None:
        return out
    return g._record("add", _ids(g, a, b), out, {"shapes": (_value(a).shape, _value(b).shape)})


def sub(a, b):
    g = _graph_of(a, b)
    out = _value(a) - _value(b)
    if g is None:
        return out
    return g._record("sub", _ids(g, a, b), out, {"shapes": (_value(a).shape, _value(b).shape)})


def mul(a, b):
    g = _graph_of(a, b)
    out = _value(a) * _value(b)
    if g is None:
        return out
    return g._record("mul", _ids(g, a, b), out, {"shapes": (_value(a).shape, _value(b).shape)})


def neg(a):
    g = _graph_of(a)
    out = -_value(a)
    if g is None:
        return out
    return g._record("neg", _ids(g, a), out, {})


def scale(a, s: float):
    """Multiply by a python scalar without creating a constant leaf."""
    g = _graph_of(a)
    out = _value(a) * s
    if g is None:
        return out
    return g._record("scale", _ids(g, a), out, {"s": float(s)})


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError(f"matmul: expected 2-d operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: inner axes disagree, {av.shape} @ {bv.shape}")
    g = _graph_of(a, b)
    out = av @ bv
    if g is None:
        return out
    return g._record("matmul", _ids(g, a, b), out, {})


def bmm(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim != 3 or bv.ndim != 3 or av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
        raise ValueError(f"bmm: incompatible batched shapes {av.shape} @ {bv.shape}")
    g = _graph_of(a, b)
    out = np.einsum("nij,njk->nik", av, bv)
    if g is None:
        return out
    return g._record("bmm", _ids(g, a, b), out, {})


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape):
    g = _graph_of(a)
    out = _value(a).reshape(shape)
    if g is None:
        return out
    return g._record("reshape", _ids(g, a), out, {"shape": _value(a).shape})


def transpose(a, axes):
    g = _graph_of(a)
    out = np.transpose(_value(a), axes)
    if g is None:
        return out
    return g._record("transpose", _ids(g, a), out, {"axes": tuple(axes)})


def concat(parts, axis: int = 0):
    vals = [_value(p) for p in parts]
    g = _graph_of(*parts)
    out = np.concatenate(vals, axis=axis)
    if g is None:
        return out
    sizes = [v.shape[axis] for v in vals]
    return g._record("concat", _ids(g, *parts), out, {"axis": axis, "sizes": sizes})


def slice_axis(a, axis: int, start: int, stop: int):
    av = _value(a)
    index = [slice(None)] * av.ndim
    index[axis] = slice(start, stop)
    g = _graph_of(a)
    out = av[tuple(index)]
    if g is None:
        return np.ascontiguousarray(out)
    return g._record(
        "slice", _ids(g, a), out, {"axis": axis, "start": start, "stop": stop, "shape": av.shape}
    )


def take_rows(a, idx):
    idx = np.asarray(idx, dtype=np.intp)
    g = _graph_of(a)
    out = _value(a)[idx]
    if g is None:
        return out
    return g._record("take_rows", _ids(g, a), out, {"idx": idx, "n": _value(a).shape[0]})


def scatter_rows(a, idx, n: int):
    """Rows of ``a`` placed at positions ``idx`` of a zero tensor with ``n`` rows."""
    idx = np.asarray(idx, dtype=np.intp)
    av = _value(a)
    out = np.zeros((n,) + av.shape[1:])
    out[idx] = av
    g = _graph_of(a)
    if g is None:
        return out
    return g._record("scatter_rows", _ids(g, a), out, {"idx": idx})


def gather_cols(a, idx):
    """out[n] = a[n, idx[n]] for a 2-d input."""
    idx = np.asarray(idx, dtype=np.intp)
    av = _value(a)
    if av.ndim != 2:
        raise ValueError(f"gather_cols: expected 2-d input, got shape {av.shape}")
    g = _graph_of(a)
    out = av[np.arange(av.shape[0]), idx]
    if g is None:
        return out
    return g._record("gather_cols", _ids(g, a), out, {"idx": idx, "shape": av.shape})


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(a, axis: int | None = None):
    g = _graph_of(a)
    out = np.sum(_value(a), axis=axis)
    if g is None:
        return np.asarray(out)
    return g._record("sum", _ids(g, a), out, {"axis": axis, "shape": _value(a).shape})


def mean(a, axis: int | None = None):
    g = _graph_of(a)
    out = np.mean(_value(a), axis=axis)
    if g is None:
        return np.asarray(out)
    return g._record("mean", _ids(g, a), out, {"axis": axis, "shape": _value(a).shape})


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------


def _conv1d_check(x, w, b, padding):
    if x.ndim != 3:
        raise ValueError(f"conv1d: input must be rank 3 [N,Cin,T], got shape {x.shape}")
    if w.ndim != 3:
        raise ValueError(f"conv1d: weight must be rank 3 [Cout,Cin,S], got shape {w.shape}")
    if b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ValueError(
            f"conv1d: bias axis has size {b.shape}, weight output axis has size {w.shape[0]}"
        )
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv1d: input channel axis has size {x.shape[1]}, weight expects {w.shape[1]}"
        )
    if w.shape[2] < 1:
        raise ValueError("conv1d: kernel size must be >= 1")
    if padding not in ("same", "valid"):
        raise ValueError(f"conv1d: padding must be 'same' or 'valid', got {padding!r}")
    if padding == "valid" and x.shape[2] < w.shape[2]:
        raise ValueError(
            f"conv1d: time axis ({x.shape[2]}) shorter than kernel ({w.shape[2]}) with valid padding"
        )


def _conv1d_pads(s: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    left = (s - 1) // 2
    return left, s - 1 - left  # even kernels pad one extra on the right


def conv1d(x, w, b, padding: str = "same"):
    """Cross-correlation over the last axis: [N,Cin,T] x [Cout,Cin,S] -> [N,Cout,T']."""
    xv, wv, bv = _value(x), _value(w), _value(b)
    _conv1d_check(xv, wv, bv, padding)
    s = wv.shape[2]
    pl, pr = _conv1d_pads(s, padding)
    xp = np.pad(xv, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else xv
    windows = sliding_window_view(xp, s, axis=2)  # [N, Cin, T', S]
    out = np.einsum("ncts,ocs->not", windows, wv, optimize=True) + bv[None, :, None]
    g = _graph_of(x, w, b)
    if g is None:
        return out
    return g._record("conv1d", _ids(g, x, w, b), out, {"pads": (pl, pr), "xp": xp})


def gelu(x):
    """Exact-CDF GELU: x * Phi(x) with Phi the standard normal CDF (erf form)."""
    xv = _value(x)
    phi = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
    out = xv * phi
    g = _graph_of(x)
    if g is None:
        return out
    return g._record("gelu", _ids(g, x), out, {"phi": phi})


def softmax(x):
    """Numerically stabilized softmax along the last axis."""
    xv = _value(x)
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    g = _graph_of(x)
    if g is None:
        return out
    return g._record("softmax", _ids(g, x), out, {})


def instance_norm(x, gamma, beta, eps: float = 1e-5):
    """Per-(sample, channel) normalization over the time axis of [N,C,T]."""
    xv, gv, bv = _value(x), _value(gamma), _value(beta)
    if xv.ndim != 3:
        raise ValueError(f"instance_norm: input must be rank 3 [N,C,T], got shape {xv.shape}")
    if xv.shape[2] < 2:
        raise ValueError(f"instance_norm: time axis must have length >= 2, got {xv.shape[2]}")
    if gv.shape != (xv.shape[1],) or bv.shape != (xv.shape[1],):
        raise ValueError(
            f"instance_norm: affine parameters must have shape ({xv.shape[1]},), "
            f"got gamma {gv.shape} and beta {bv.shape}"
        )
    if eps <= 0:
        raise ValueError("instance_norm: eps must be > 0")
    mu = xv.mean(axis=2, keepdims=True)
    var = xv.var(axis=2, keepdims=True)  # population variance
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = gv[None, :, None] * xhat + bv[None, :, None]
    g = _graph_of(x, gamma, beta)
    if g is None:
        return out
    return g._record(
        "instance_norm", _ids(g, x, gamma, beta), out, {"xhat": xhat, "inv": inv}
    )


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _bwd_add(node, grad, vals):
    sa, sb = node.ctx["shapes"]
    return [_unbroadcast(grad, sa), _unbroadcast(grad, sb)]


def _bwd_sub(node, grad, vals):
    sa, sb = node.ctx["shapes"]
    return [_unbroadcast(grad, sa), _unbroadcast(-grad, sb)]


def _bwd_mul(node, grad, vals):
    a, b = vals
    sa, sb = node.ctx["shapes"]
    return [_unbroadcast(grad * b, sa), _unbroadcast(grad * a, sb)]


def _bwd_neg(node, grad, vals):
    return [-grad]


def _bwd_scale(node, grad, vals):
    return [grad * node.ctx["s"]]


def _bwd_matmul(node, grad, vals):
    a, b = vals
    return [grad @ b.T, a.T @ grad]


def _bwd_bmm(node, grad, vals):
    a, b = vals
    return [np.einsum("nik,njk->nij", grad, b), np.einsum("nij,nik->njk", a, grad)]


def _bwd_reshape(node, grad, vals):
    return [grad.reshape(node.ctx["shape"])]


def _bwd_transpose(node, grad, vals):
    return [np.transpose(grad, np.argsort(node.ctx["axes"]))]


def _bwd_concat(node, grad, vals):
    axis, sizes = node.ctx["axis"], node.ctx["sizes"]
    splits = np.cumsum(sizes[:-1])
    return list(np.split(grad, splits, axis=axis))


def _bwd_slice(node, grad, vals):
    out = np.zeros(node.ctx["shape"])
    index = [slice(None)] * out.ndim
    index[node.ctx["axis"]] = slice(node.ctx["start"], node.ctx["stop"])
    out[tuple(index)] = grad
    return [out]


def _bwd_take_rows(node, grad, vals):
    out = np.zeros((node.ctx["n"],) + grad.shape[1:])
    np.add.at(out, node.ctx["idx"], grad)
    return [out]


def _bwd_scatter_rows(node, grad, vals):
    return [grad[node.ctx["idx"]]]


def _bwd_gather_cols(node, grad, vals):
    out = np.zeros(node.ctx["shape"])
    out[np.arange(out.shape[0]), node.ctx["idx"]] = grad
    return [out]


def _bwd_sum(node, grad, vals):
    shape, axis = node.ctx["shape"], node.ctx["axis"]
    if axis is None:
        return [np.full(shape, grad)]
    return [np.broadcast_to(np.expand_dims(grad, axis), shape).copy()]


def _bwd_mean(node, grad, vals):
    shape, axis = node.ctx["shape"], node.ctx["axis"]
    if axis is None:
        count = int(np.prod(shape)) if shape else 1
        return [np.full(shape, grad / count)]
    return [np.broadcast_to(np.expand_dims(grad / shape[axis], axis), shape).copy()]


def _bwd_conv1d(node, grad, vals):
    _, w, _ = vals
    xp = node.ctx["xp"]
    pl, pr = node.ctx["pads"]
    s = w.shape[2]
    windows = sliding_window_view(xp, s, axis=2)
    dw = np.einsum("not,ncts->ocs", grad, windows, optimize=True)
    db = grad.sum(axis=(0, 2))
    gp = np.pad(grad, ((0, 0), (0, 0), (s - 1, s - 1)))
    gwin = sliding_window_view(gp, s, axis=2)  # [N, Cout, T+pl+pr, S]
    dxp = np.einsum("nots,ocs->nct", gwin, w[:, :, ::-1], optimize=True)
    t = xp.shape[2] - pl - pr
    dx = dxp[:, :, pl : pl + t]
    return [dx, dw, db]


def _bwd_gelu(node, grad, vals):
    (x,) = vals
    phi = node.ctx["phi"]
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return [grad * (phi + x * pdf)]


def _bwd_softmax(node, grad, vals):
    y = node.value
    return [y * (grad - (grad * y).sum(axis=-1, keepdims=True))]


def _bwd_instance_norm(node, grad, vals):
    _, gamma, _ = vals
    xhat, inv = node.ctx["xhat"], node.ctx["inv"]
    dbeta = grad.sum(axis=(0, 2))
    dgamma = (grad * xhat).sum(axis=(0, 2))
    gh = grad * gamma[None, :, None]
    dx = inv * (
        gh - gh.mean(axis=2, keepdims=True) - xhat * (gh * xhat).mean(axis=2, keepdims=True)
    )
    return [dx, dgamma, dbeta]


_BACKWARD: dict[str, Callable] = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "neg": _bwd_neg,
    "scale": _bwd_scale,
    "matmul": _bwd_matmul,
    "bmm": _bwd_bmm,
    "reshape": _bwd_reshape,
    "transpose": _bwd_transpose,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "take_rows": _bwd_take_rows,
    "scatter_rows": _bwd_scatter_rows,
    "gather_cols": _bwd_gather_cols,
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "conv1d": _bwd_conv1d,
    "gelu": _bwd_gelu,
    "softmax": _bwd_softmax,
    "instance_norm": _bwd_instance_norm,
}


def backward(graph: Graph, loss) -> dict[int, np.ndarray]:
    """Gradients of a scalar loss node with respect to every reached node.

    Gradients accumulate additively across fan-out. The returned map is
    keyed by node id and covers every node on a path from a leaf to the
    loss; use ``.get(id, 0)`` semantics for untouched leaves.
    """
    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    loss_node = graph.nodes[loss_id]
    if loss_node.value.shape != ():
        raise ValueError(
            f"backward: loss must be scalar, got shape {loss_node.value.shape}"
        )
    grads: dict[int, np.ndarray] = {loss_id: np.asarray(1.0)}
    for nid in range(loss_id, -1, -1):
        if nid not in grads:
            continue
        node = graph.nodes[nid]
        if node.op == "leaf":
            continue
        vals = [graph.nodes[i].value for i in node.inputs]
        for input_id, g in zip(node.inputs, _BACKWARD[node.op](node, grads[nid], vals)):
            if input_id in grads:
                grads[input_id] = grads[input_id] + g
            else:
                grads[input_id] = np.asarray(g, dtype=np.float64)
    return grads


def finite_diff_check(f, point, h: float = 1e-4) -> float:
    """Max relative disagreement between tape and central-difference gradients.

    ``f`` maps one tensor to a scalar. It is called once on a graph leaf
    for the analytic gradient and 2 * numel times on plain arrays for the
    finite-difference estimate, so the two routes share no code path.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be > 0")
    point = as_tensor(point)
    graph = Graph()
    x = graph.leaf(point)
    loss = f(x)
    if isinstance(loss, Var):
        grads = backward(graph, loss)
        g_ad = grads.get(x.id, np.zeros_like(point)).ravel()
    else:
        # The output never touched the leaf (e.g. a parameter that only
        # steers a discrete routing decision): analytic gradient is zero.
        if np.asarray(loss).shape != ():
            raise ValueError("finite_diff_check: f must return a scalar")
        g_ad = np.zeros(point.size)

    flat = point.ravel()
    g_fd = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = float(_value(f(bumped.reshape(point.shape))))
        bumped[i] = flat[i] - h
        down = float(_value(f(bumped.reshape(point.shape))))
        g_fd[i] = (up - down) / (2.0 * h)

    denom = np.maximum(1.0, np.maximum(np.abs(g_fd), np.abs(g_ad)))
    return float((np.abs(g_fd - g_ad) / denom).max()) if flat.size else 0.0
