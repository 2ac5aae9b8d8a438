"""Dense float64 tensors with tape-based reverse-mode differentiation.

A Graph is an append-only tape: every differentiable op executed inside a
``with Graph():`` block appends one node, so append order is already a
topological order and backward() is a single reverse sweep. Ops executed
with no active graph (or on tensors that don't require grad) are plain
numpy computations, which is how frozen models run their forward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, ShapeMismatchError

_GRAPH_STACK: list["Graph"] = []


class Tensor:
    """An n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            # note: ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """A tensor that never takes gradients (targets, masks, encodings)."""
    return Tensor(data, requires_grad=False)


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    output: Tensor
    vjp: object  # callable(grad_out) -> tuple of grads aligned with inputs


class Graph:
    """Append-only operation tape; nodes are stored in execution order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def _active_graph():
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def _record(op, inputs, out_data, vjp):
    graph = _active_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        graph.nodes.append(TapeNode(op, tuple(inputs), out, vjp))
    return out


# ---------------------------------------------------------------------------
# elementwise ops


def _check_broadcast(a, b, op):
    """Same-rank broadcasting only: an axis of size 1 may stretch."""
    sa, sb = a.shape, b.shape
    if len(sa) != len(sb):
        raise ShapeMismatchError(f"{op}: rank mismatch {sa} vs {sb}")
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeMismatchError(f"{op}: incompatible shapes {sa} vs {sb}")


def _reduce_to_shape(grad, shape):
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)

    return _record("add", (a, b), a.data + b.data, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return _reduce_to_shape(g, a.shape), -_reduce_to_shape(g, b.shape)

    return _record("sub", (a, b), a.data - b.data, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return (
            _reduce_to_shape(g * b.data, a.shape),
            _reduce_to_shape(g * a.data, b.shape),
        )

    return _record("mul", (a, b), a.data * b.data, vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _record("relu", (a,), np.where(mask, a.data, 0.0), vjp)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        return (g * out_data,)

    return _record("exp", (a,), out_data, vjp)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar; the scalar takes no gradient."""
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _record("scale", (a,), a.data * c, vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), a.data @ b.data, vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected matrix, got {a.shape}")

    def vjp(g):
        return (g.T.copy(),)

    return _record("transpose", (a,), a.data.T.copy(), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _record("reshape", (a,), a.data.reshape(shape), vjp)


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full(a.shape, float(g)),)

    return _record("sum", (a,), np.asarray(a.data.sum()), vjp)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"gather_rows: expected matrix, got {a.shape}")

    def vjp(g):
        out = np.zeros_like(a.data)
        kernels.scatter_add_rows(out, idx, np.ascontiguousarray(g))
        return (out,)

    return _record("gather_rows", (a,), a.data[idx], vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return _record("slice_cols", (a,), a.data[:, start:stop].copy(), vjp)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    widths = [p.shape[1] for p in parts]

    def vjp(g):
        grads, ofs = [], 0
        for w in widths:
            grads.append(g[:, ofs : ofs + w].copy())
            ofs += w
        return tuple(grads)

    return _record(
        "concat_cols", tuple(parts), np.concatenate([p.data for p in parts], axis=1), vjp
    )


# ---------------------------------------------------------------------------
# neural-net ops


def softmax(a: Tensor) -> Tensor:
    """Row-stable softmax over the last axis (max subtraction)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return _record("softmax", (a,), out_data, vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize each row of the last axis to mean 0 / variance 1, then affine.

    Uses epsilon 1e-5 inside the square root, so an all-constant row maps to
    zero rather than dividing by zero.
    """
    eps = 1e-5
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out_data = xhat * gain.data + bias.data

    def vjp(g):
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes)
        dbias = g.sum(axis=axes)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return _record("layer_norm", (x, gain, bias), out_data, vjp)


def conv1d(x: Tensor, kernels_t: Tensor) -> Tensor:
    """Same-padded 1-D convolution: (T, c_in) x (k, c_in, c_out) -> (T, c_out)."""
    if kernels_t.data.ndim != 3:
        raise ShapeMismatchError(f"conv1d: kernels must be rank 3, got {kernels_t.shape}")
    k, c_in, _ = kernels_t.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d: kernel width must be odd, got {k}")
    if x.data.ndim != 2 or x.shape[1] != c_in:
        raise ShapeMismatchError(f"conv1d: input {x.shape} vs kernels {kernels_t.shape}")
    x_data, k_data = x.data, kernels_t.data

    def vjp(g):
        dx, dk = kernels.conv1d_backward(x_data, k_data, np.ascontiguousarray(g))
        return dx, dk

    return _record("conv1d", (x, kernels_t), kernels.conv1d_forward(x_data, k_data), vjp)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def vjp(g):
        scaled = (2.0 / n) * float(g) * diff
        return scaled, -scaled

    return _record("mse", (a, b), np.asarray((diff * diff).mean()), vjp)


def dropout_mask(shape, rate: float, rng) -> Tensor:
    """Inverted-dropout mask, deterministic for a given generator state."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return constant(keep / (1.0 - rate))


# ---------------------------------------------------------------------------
# backward pass


def backward(graph: Graph, loss: Tensor):
    """Populate .grad on every requires_grad tensor reachable from loss.

    Grad buffers touched by this graph are reset first, so calling backward
    twice on the same graph yields bit-identical results.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    for node in graph.nodes:
        node.output.grad = None
        for t in node.inputs:
            t.grad = None
    loss.grad = np.asarray(1.0)
    for node in reversed(graph.nodes):
        gout = node.output.grad
        if gout is None:
            continue
        gins = node.vjp(gout)
        for t, gi in zip(node.inputs, gins):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += gi


# ---------------------------------------------------------------------------
# optimization


def clip_grad_norm(grads, threshold: float) -> float:
    """Scale the whole gradient set so its global L2 norm is <= threshold.

    grads: dict of name -> ndarray, modified in place. Returns the post-clip
    global norm.
    """
    if threshold <= 0:
        raise ConfigurationError(f"clip threshold must be > 0, got {threshold}")
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm <= threshold:
        return norm
    factor = threshold / norm
    total = 0.0
    for g in grads.values():
        g *= factor
        total += float((g * g).sum())
    return math.sqrt(total)


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; shapes mirror the parameter set."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.98, epsilon=1e-9):
        state = cls(learning_rate, beta1, beta2, epsilon)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params, grads, state: AdamState) -> AdamState:
    """Bias-corrected Adam update, in place on params and state."""
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        kernels.adam_update(
            p.data.reshape(-1),
            np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            t,
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon,
        )
    return state


# ---------------------------------------------------------------------------
# verification oracle


def grad_check(f, params, eps=1e-5, max_coords_per_param=None, rng=None):
    """Compare backward() gradients of f against central finite differences.

    f maps the parameter dict to a scalar Tensor; it is re-run (without a
    tape) for every probed coordinate, so max_coords_per_param bounds the
    cost on large parameter sets by probing a random subset per array.
    Returns the max relative error with denominator max(|a|, |b|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError(f"grad_check eps must be in [1e-7, 1e-3], got {eps}")
    graph = Graph()
    with graph:
        loss = f(params)
    backward(graph, loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
        if p.requires_grad
    }

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        if not p.requires_grad:
            continue
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(params).data)
            flat[i] = orig - eps
            lo = float(f(params).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
