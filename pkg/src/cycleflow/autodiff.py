"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Everything is float64 and CPU-only.  The op set is exactly what the small
policy MLPs need: matmul, a handful of elementwise functions, masked
row-wise log-softmax, reductions and indexing.  Gradients are recorded on
an explicit :class:`Tape`; calling :func:`backward` replays the tape in
reverse and accumulates into per-tensor ``grad`` buffers.

Broadcasting is deliberately restricted to scalar-with-tensor and
equal-shape operands; the one exception is :func:`add_bias`, a dedicated
row-broadcast op for linear-layer biases with its own gradient rule.
"""

from __future__ import annotations

import json
import math

import numpy as np

# Additive surrogate for -inf in masked softmax; keeps arithmetic finite.
MASK_LARGE = 1e9

_TAPE_STACK: list["Tape"] = []

_NODE_COUNTER = 0


def _next_node_id() -> int:
    global _NODE_COUNTER
    _NODE_COUNTER += 1
    return _NODE_COUNTER


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "node_id")

    def __init__(self, data, copy: bool = True):
        if copy:
            arr = np.array(data, dtype=np.float64)
        else:
            arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.node_id = _next_node_id()

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node_id={self.node_id})"


def constant(data) -> Tensor:
    """Tensor that participates in ops but is typically not optimized."""
    return Tensor(data)


def parameter(data) -> Tensor:
    """Trainable tensor; identical to constant, named for intent."""
    return Tensor(data)


class Tape:
    """Ordered record of operations for one forward computation.

    Records are appended in execution order, so parents always precede
    their consumers; the backward pass walks the list once in reverse.
    A tape (and the tensors recorded on it) must stay on one execution
    lane.
    """

    def __init__(self):
        self._records = []  # (out_tensor, [parent tensors], backward_fn)
        self._on_tape = set()

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, parents, backward_fn):
        self._records.append((out, list(parents), backward_fn))
        self._on_tape.add(out.node_id)

    def contains(self, t: Tensor) -> bool:
        return t.node_id in self._on_tape

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class GradientError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """An op produced NaN/Inf; surfaced instead of propagating silently."""


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op}")


def _make(op: str, value: np.ndarray, parents, backward_fn) -> Tensor:
    _check_finite(value, op)
    out = Tensor(value, copy=False)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, parents, backward_fn)
    return out


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    value = a.data @ b.data

    def backward_fn(g):
        return [g @ b.data.T, a.data.T @ g]

    return _make("matmul", value, [a, b], backward_fn)


def _binary_shapes_ok(a: Tensor, b: Tensor) -> bool:
    return a.shape == b.shape or a.size == 1 or b.size == 1


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # collapse a broadcasted gradient back to a scalar operand
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a, b):
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    value = a.data + b.data

    def backward_fn(g):
        return [_reduce_to(g, a.shape), _reduce_to(g, b.shape)]

    return _make("add", value, [a, b], backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a, b):
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    value = a.data - b.data

    def backward_fn(g):
        return [_reduce_to(g, a.shape), _reduce_to(-g, b.shape)]

    return _make("sub", value, [a, b], backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a, b):
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    value = a.data * b.data

    def backward_fn(g):
        return [_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)]

    return _make("mul", value, [a, b], backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    value = a.data * c

    def backward_fn(g):
        return [g * c]

    return _make("scale", value, [a], backward_fn)


def add_scalar(a: Tensor, c: float) -> Tensor:
    value = a.data + c

    def backward_fn(g):
        return [g]

    return _make("add_scalar", value, [a], backward_fn)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    value = np.where(a.data > 0, a.data, slope * a.data)

    def backward_fn(g):
        return [g * np.where(a.data > 0, 1.0, slope)]

    return _make("leaky_relu", value, [a], backward_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable split form
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    value = _sigmoid(a.data)

    def backward_fn(g):
        return [g * value * (1.0 - value)]

    return _make("sigmoid", value, [a], backward_fn)


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed as -log1p(exp(-x)) stably."""
    value = -np.logaddexp(0.0, -a.data)

    def backward_fn(g):
        return [g * _sigmoid(-a.data)]

    return _make("logsigmoid", value, [a], backward_fn)


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)

    def backward_fn(g):
        return [g * value]

    return _make("exp", value, [a], backward_fn)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    value = np.log(a.data)

    def backward_fn(g):
        return [g / a.data]

    return _make("log", value, [a], backward_fn)


def log_softmax(x: Tensor, mask=None) -> Tensor:
    """Row-wise log-softmax over a B x n tensor.

    ``mask`` (same shape, entries in {0,1}) excludes zero entries from the
    normalizer; excluded positions are filled with -MASK_LARGE in the
    output and receive zero gradient.  Max-subtraction keeps the
    exponentials in range.
    """
    if x.data.ndim != 2:
        raise ValueError("log_softmax expects a 2-d tensor")
    if mask is None:
        m = np.ones_like(x.data)
    else:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != x.data.shape:
            raise ValueError("mask shape mismatch")
        if np.any(m.sum(axis=1) < 1):
            raise ValueError("log_softmax: fully-masked row")
    keep = m > 0
    shifted = np.where(keep, x.data, -MASK_LARGE)
    row_max = shifted.max(axis=1, keepdims=True)
    z = shifted - row_max
    ez = np.exp(z) * m
    denom = ez.sum(axis=1, keepdims=True)
    value = np.where(keep, z - np.log(denom), -MASK_LARGE)
    soft = ez / denom

    def backward_fn(g):
        g_live = g * keep
        return [g_live - soft * g_live.sum(axis=1, keepdims=True)]

    return _make("log_softmax", value, [x], backward_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (B x h) + (h,)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    value = x.data + b.data

    def backward_fn(g):
        return [g, g.sum(axis=0)]

    return _make("add_bias", value, [x, b], backward_fn)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError("concat_cols expects 2-d tensors with equal rows")
    value = np.concatenate([a.data, b.data], axis=1)
    na = a.shape[1]

    def backward_fn(g):
        return [g[:, :na], g[:, na:]]

    return _make("concat_cols", value, [a, b], backward_fn)


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError("slice_cols expects a 2-d tensor")
    value = x.data[:, j0:j1].copy()

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[:, j0:j1] = g
        return [full]

    return _make("slice_cols", value, [x], backward_fn)


def take_per_row(x: Tensor, idx) -> Tensor:
    """Gather one column per row: out[b] = x[b, idx[b]]."""
    idx = np.asarray(idx, dtype=np.intp)
    if x.data.ndim != 2 or idx.shape != (x.shape[0],):
        raise ValueError("take_per_row expects (B x n) tensor and (B,) index")
    rows = np.arange(x.shape[0])
    value = x.data[rows, idx].copy()

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return [full]

    return _make("take_per_row", value, [x], backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    value = x.data.reshape(shape).copy()

    def backward_fn(g):
        return [g.reshape(x.shape)]

    return _make("reshape", value, [x], backward_fn)


def tsum(x: Tensor, axis=None) -> Tensor:
    """Sum over all entries (axis=None, scalar result) or over axis 1."""
    if axis is None:
        value = np.array(x.data.sum())

        def backward_fn(g):
            return [np.full_like(x.data, float(g))]

    elif axis == 1:
        if x.data.ndim != 2:
            raise ValueError("axis-1 sum expects a 2-d tensor")
        value = x.data.sum(axis=1)

        def backward_fn(g):
            return [np.repeat(g[:, None], x.shape[1], axis=1)]

    else:
        raise ValueError("only axis=None or axis=1 supported")
    return _make("sum", value, [x], backward_fn)


def square(x: Tensor) -> Tensor:
    value = x.data * x.data

    def backward_fn(g):
        return [2.0 * g * x.data]

    return _make("square", value, [x], backward_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, root: Tensor):
    """Populate grad buffers of everything reachable from ``root``.

    Gradients accumulate; callers reset between steps (adam_step does).
    """
    if root.size != 1:
        raise GradientError("backward root must be a scalar")
    if not tape.contains(root):
        raise GradientError("backward root is detached from this tape")
    # propagate through a per-call map so repeated calls accumulate into
    # the tensors' grad buffers without feeding back into the propagation
    pending = {root.node_id: np.ones_like(root.data)}
    tensors = {root.node_id: root}
    for out, parents, backward_fn in reversed(tape._records):
        g = pending.get(out.node_id)
        if g is None:
            continue
        for p, pg in zip(parents, backward_fn(g)):
            pg = np.asarray(pg, dtype=np.float64)
            tensors[p.node_id] = p
            if p.node_id in pending:
                pending[p.node_id] = pending[p.node_id] + pg
            else:
                pending[p.node_id] = pg
    for node_id, t in tensors.items():
        t.accumulate_grad(pending[node_id])


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Per-parameter Adam moments plus hyperparameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(state: AdamState):
    """One Adam update over all tracked parameters; zeroes grads after."""
    for p in state.params:
        if p.grad is None:
            raise GradientError("adam_step: parameter has no gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(state.params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad.fill(0.0)


# ---------------------------------------------------------------------------
# parameter checkpoints

CHECKPOINT_FORMAT = "cycleflow-params-v1"


def save_params(path, params: dict, meta: dict | None = None):
    """Write a named parameter map as versioned JSON.

    Layout: {"format": ..., "meta": {...}, "tensors": {name: {"shape": [...],
    "values": [row-major floats]}}}.
    """
    blob = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
            for name, p in params.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_params(path):
    """Read a checkpoint; returns (params dict, meta dict)."""
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format: {blob.get('format')!r}")
    params = {}
    for name, spec in blob["tensors"].items():
        arr = np.array(spec["values"], dtype=np.float64).reshape(spec["shape"])
        params[name] = parameter(arr)
    return params, blob.get("meta", {})
