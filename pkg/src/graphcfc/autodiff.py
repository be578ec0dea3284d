"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Value` wraps a numpy array together with the primitive that
produced it. Primitives are registered in ``PRIMITIVES``; each returns the
forward result and a closure mapping the output cotangent to one cotangent
per input (``None`` where an input is not differentiable).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Input shapes do not conform to a primitive's signature."""


class NumericError(FloatingPointError):
    """A primitive produced NaN/Inf, or a gradient was non-finite."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class OracleError(RuntimeError):
    """The finite-difference oracle cannot be trusted for this function."""


class Value:
    __slots__ = ("data", "grad", "op", "inputs", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = "leaf"
        self.inputs = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self.op == "leaf"

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value({self.op}{label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_value(other), -1.0))

    def __rsub__(self, other):
        return add(_as_value(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, name=None):
    """Trainable leaf."""
    return Value(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def const(data):
    return Value(data)


def detach(x):
    return Value(_as_value(x).data)


def _as_value(x):
    return x if isinstance(x, Value) else Value(x)


# --------------------------------------------------------------------------
# primitive registry
# --------------------------------------------------------------------------

PRIMITIVES: Dict[str, Callable] = {}


def primitive(tag):
    def register(fn):
        PRIMITIVES[tag] = fn
        return fn

    return register


_isfinite = np.isfinite
_new_value = object.__new__


def apply_primitive(tag, inputs, **attrs):
    """Run primitive ``tag`` on ``inputs`` and record it for backward."""
    try:
        fn = PRIMITIVES[tag]
    except KeyError:
        raise ContractError(f"unknown primitive {tag!r}") from None
    inputs = tuple([v if type(v) is Value else _as_value(v) for v in inputs])
    out, vjp = fn(*[v.data for v in inputs], **attrs)
    if type(out) is not np.ndarray or out.dtype != np.float64:
        out = np.asarray(out, dtype=np.float64)
    if not _isfinite(out).all():
        raise NumericError(f"{tag}: non-finite output")
    result = _new_value(Value)
    result.data = out
    result.grad = None
    result.op = tag
    result.inputs = inputs
    result.backward_fn = vjp
    result.requires_grad = any([v.requires_grad for v in inputs])
    result.name = None
    return result


def _shape_error(tag, *shapes, why=""):
    shown = ", ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{tag}: incompatible shapes {shown}{'; ' + why if why else ''}")


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(tag, a, b):
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(tag, a.shape, b.shape) from None


@primitive("matmul")
def _matmul(a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = a @ b

    def vjp(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 2:
            return np.outer(g, b), a.T @ g
        if b.ndim == 2:
            return b @ g, np.outer(a, g)
        return g * b, g * a

    return out, vjp


@primitive("add")
def _add(a, b):
    _broadcast_shape("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@primitive("mul")
def _mul(a, b):
    _broadcast_shape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@primitive("scale")
def _scale(x, factor):
    return x * factor, lambda g: (g * factor,)


@primitive("concat")
def _concat(*xs, axis=-1):
    ref = xs[0]
    ax = axis % ref.ndim
    for x in xs[1:]:
        if x.ndim != ref.ndim or any(
            x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise _shape_error("concat", *(x.shape for x in xs), why=f"axis={axis}")
    out = np.concatenate(xs, axis=ax)
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=ax))

    return out, vjp


@primitive("slice")
def _slice(x, start, stop, axis=0):
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise _shape_error("slice", x.shape, why=f"range [{start}, {stop}) on axis {axis}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(x)
        full[index] = g
        return (full,)

    return x[index], vjp


@primitive("reshape")
def _reshape(x, shape):
    try:
        out = x.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", x.shape, why=f"cannot reshape to {shape}") from None
    return out, lambda g: (g.reshape(x.shape),)


@primitive("take_rows")
def _take_rows(x, rows):
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 1 or (rows.size and (rows.min() < 0 or rows.max() >= x.shape[0])):
        raise _shape_error("take_rows", x.shape, rows.shape, why="row index out of range")
    return x[rows], lambda g: (kernels.segment_sum(g, rows, x.shape[0]),)


@primitive("relu")
def _relu(x):
    mask = x > 0
    return x * mask, lambda g: (g * mask,)


@primitive("leaky_relu")
def _leaky_relu(x, slope=0.2):
    factor = np.where(x > 0, 1.0, slope)
    return x * factor, lambda g: (g * factor,)


@primitive("sigmoid")
def _sigmoid(x):
    s = 0.5 * (np.tanh(0.5 * x) + 1.0)
    return s, lambda g: (g * s * (1.0 - s),)


@primitive("tanh")
def _tanh(x):
    t = np.tanh(x)
    return t, lambda g: (g * (1.0 - t * t),)


@primitive("exp")
def _exp(x):
    with np.errstate(over="ignore"):
        e = np.exp(x)
    return e, lambda g: (g * e,)


@primitive("log")
def _log(x):
    if np.any(x <= 0):
        raise NumericError("log: non-positive input")
    return np.log(x), lambda g: (g / x,)


@primitive("softmax")
def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return s, vjp


@primitive("log_softmax")
def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    s = np.exp(out)
    return out, lambda g: (g - s * g.sum(axis=-1, keepdims=True),)


@primitive("dropout")
def _dropout(x, rate=0.0, train=False, rng=None):
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate {rate} outside [0, 1)")
    if not train or rate == 0.0:
        return x.copy(), lambda g: (g,)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, lambda g: (g * keep,)


@primitive("layer_norm")
def _layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise _shape_error("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def vjp(g):
        dxhat = g * gamma
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return xhat * gamma + beta, vjp


@primitive("sum")
def _sum(x, axis=None):
    out = x.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return np.asarray(out), vjp


@primitive("mean")
def _mean(x, axis=None):
    count = x.size if axis is None else x.shape[axis]
    out = x.mean(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return np.asarray(out), vjp


@primitive("sq_l2")
def _sq_l2(x):
    return np.asarray((x * x).sum()), lambda g: (2.0 * g * x,)


@primitive("segment_softmax")
def _segment_softmax(scores, segment_ids, num_segments):
    if scores.ndim != 1 or scores.shape != np.shape(segment_ids):
        raise _shape_error("segment_softmax", scores.shape, np.shape(segment_ids))
    alpha = kernels.segment_softmax(scores, segment_ids, num_segments)

    def vjp(g):
        return (kernels.segment_softmax_backward(alpha, g, segment_ids, num_segments),)

    return alpha, vjp


@primitive("segment_sum")
def _segment_sum(values, segment_ids, num_segments):
    if values.shape[0] != np.shape(segment_ids)[0]:
        raise _shape_error("segment_sum", values.shape, np.shape(segment_ids))
    out = kernels.segment_sum(values, segment_ids, num_segments)
    return out, lambda g: (g[segment_ids],)


# --------------------------------------------------------------------------
# functional wrappers
# --------------------------------------------------------------------------

def matmul(a, b):
    return apply_primitive("matmul", (a, b))


def add(a, b):
    return apply_primitive("add", (a, b))


def mul(a, b):
    return apply_primitive("mul", (a, b))


def scale(x, factor):
    return apply_primitive("scale", (x,), factor=float(factor))


def concat(xs, axis=-1):
    return apply_primitive("concat", xs, axis=axis)


def slice_(x, start, stop, axis=0):
    return apply_primitive("slice", (x,), start=start, stop=stop, axis=axis)


def reshape(x, shape):
    return apply_primitive("reshape", (x,), shape=tuple(shape))


def take_rows(x, rows):
    return apply_primitive("take_rows", (x,), rows=rows)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding: id out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}"
        )
    return take_rows(table, ids)


def relu(x):
    return apply_primitive("relu", (x,))


def leaky_relu(x, slope=0.2):
    return apply_primitive("leaky_relu", (x,), slope=slope)


def sigmoid(x):
    return apply_primitive("sigmoid", (x,))


def tanh(x):
    return apply_primitive("tanh", (x,))


def exp(x):
    return apply_primitive("exp", (x,))


def log(x):
    return apply_primitive("log", (x,))


def softmax(x):
    return apply_primitive("softmax", (x,))


def log_softmax(x):
    return apply_primitive("log_softmax", (x,))


def dropout(x, rate, train, rng=None):
    if train and rate > 0 and rng is None:
        raise ContractError("dropout: train mode requires an rng")
    return apply_primitive("dropout", (x,), rate=rate, train=train, rng=rng)


def layer_norm(x, gamma, beta, eps=1e-5):
    return apply_primitive("layer_norm", (x, gamma, beta), eps=eps)


def sum_(x, axis=None):
    return apply_primitive("sum", (x,), axis=axis)


def mean(x, axis=None):
    return apply_primitive("mean", (x,), axis=axis)


def sq_l2(x):
    return apply_primitive("sq_l2", (x,))


def segment_softmax(scores, segment_ids, num_segments):
    return apply_primitive(
        "segment_softmax", (scores,),
        segment_ids=np.asarray(segment_ids, dtype=np.int64), num_segments=int(num_segments),
    )


def segment_sum(values, segment_ids, num_segments):
    return apply_primitive(
        "segment_sum", (values,),
        segment_ids=np.asarray(segment_ids, dtype=np.int64), num_segments=int(num_segments),
    )


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Value, params: Optional[Mapping[str, Value]] = None) -> Dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the gradient map for ``params`` (name -> array); leaves of
    ``params`` that the loss does not reach receive zeros. Grads accumulate
    across calls until :meth:`Value.zero_grad`.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.requires_grad:
        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological_order(loss)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.inputs, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
    if params is None:
        return {}
    out = {}
    for name, p in params.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out[name] = p.grad
    return out


def zero_grads(params: Mapping[str, Value]):
    for p in params.values():
        p.grad = None


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------

def _leaves(arrays):
    return {k: Value(np.array(a, dtype=np.float64), requires_grad=True, name=k) for k, a in arrays.items()}


def relative_error(analytic, numeric):
    """Elementwise |a - c| / max(1e-12, |a| + |c|)."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))


def gradient_pair(scalar_fn, params, eps=1e-5):
    """Analytic gradients and central differences, both as maps name -> array."""
    if eps <= 0:
        raise ContractError("finite_diff_check: eps must be positive")
    arrays = {
        k: np.array(v.data if isinstance(v, Value) else v, dtype=np.float64)
        for k, v in params.items()
    }
    leaves = _leaves(arrays)
    out = scalar_fn(leaves)
    again = float(scalar_fn(_leaves(arrays)).data)
    if float(out.data) != again:
        raise OracleError(
            f"finite_diff_check: scalar_fn is not deterministic ({float(out.data)!r} vs {again!r})"
        )
    analytic = backward(out, leaves)

    def evaluate(name, flat_index, delta):
        perturbed = dict(arrays)
        arr = arrays[name].copy()
        arr.flat[flat_index] += delta
        perturbed[name] = arr
        return float(scalar_fn(_leaves(perturbed)).data)

    numeric = {}
    for name, arr in arrays.items():
        num = np.empty(arr.shape)
        for idx in range(arr.size):
            num.flat[idx] = (evaluate(name, idx, eps) - evaluate(name, idx, -eps)) / (2.0 * eps)
        numeric[name] = num
    return analytic, numeric


def gradient_errors(scalar_fn, params, eps=1e-5):
    """Per-parameter maximum relative error between backward and central differences."""
    analytic, numeric = gradient_pair(scalar_fn, params, eps)
    return {
        name: float(relative_error(analytic[name], numeric[name]).max(initial=0.0))
        for name in numeric
    }


def finite_diff_check(scalar_fn, params, eps=1e-5) -> float:
    """Max relative error of backward against central differences.

    ``scalar_fn`` takes a map name -> Value (fresh leaves built from
    ``params``) and returns a scalar Value. It must be deterministic and
    differentiable at ``params`` (no kinks within ``eps``).
    """
    errors = gradient_errors(scalar_fn, params, eps)
    return max(errors.values(), default=0.0)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, Value], grads: Mapping[str, np.ndarray], state: AdamWState):
    """One AdamW update: decoupled decay first, then bias-corrected Adam."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"adamw: grad {name} shape {g.shape} != param {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adamw: non-finite gradient for {name}; step aborted")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        decayed = p.data - state.lr * state.weight_decay * p.data
        p.data = decayed - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --------------------------------------------------------------------------
# recurrent cells
# --------------------------------------------------------------------------

def gru_cell(x, h, params):
    """Single GRU step; ``params`` holds stacked gate weights W (in, 3h), U (h, 3h), b (3h,).

    Gate order within the stacked axis is update (z), reset (r), candidate (n).
    """
    W, U, b = params["W"], params["U"], params["b"]
    hidden = U.shape[0]
    if W.shape[1] != 3 * hidden or U.shape[1] != 3 * hidden or b.shape != (3 * hidden,):
        raise ShapeError(f"gru_cell: inconsistent gate shapes W{W.shape} U{U.shape} b{b.shape}")
    if x.shape[-1] != W.shape[0] or h.shape[-1] != hidden:
        raise ShapeError(f"gru_cell: x{x.shape} / h{h.shape} do not match W{W.shape} U{U.shape}")
    gx = add(matmul(x, W), b)
    gh = matmul(h, U)
    z = sigmoid(add(slice_(gx, 0, hidden, axis=-1), slice_(gh, 0, hidden, axis=-1)))
    r = sigmoid(add(slice_(gx, hidden, 2 * hidden, axis=-1), slice_(gh, hidden, 2 * hidden, axis=-1)))
    n = tanh(add(slice_(gx, 2 * hidden, 3 * hidden, axis=-1), mul(r, slice_(gh, 2 * hidden, 3 * hidden, axis=-1))))
    # (1 - z) * n + z * h == n + z * (h - n)
    return add(n, mul(z, add(h, scale(n, -1.0))))
