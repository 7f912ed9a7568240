"""Dense tensors with reverse-mode differentiation on an explicit tape.

Storage is row-major numpy. Ops record nodes on the active Tape (a `with`
context); outside a tape they run plain, which is the inference path.
Training arithmetic is float32; gradient checking casts to float64 so the
finite-difference oracle stays sharp.

Every op output passes a finite guard: a NaN/Inf never propagates silently.
"""

from __future__ import annotations

import numpy as np

from .errors import PipelineError

# Flipped off only in tests that need to construct non-finite values on purpose.
finite_checks = True

_tape_stack: list["Tape"] = []


def _active_tape():
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.dtype)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.shape} grad={self.requires_grad}>"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, dtype):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Append-only op record; append order is a topological order by construction."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/dt into t.grad for every requires_grad tensor reached."""
        if loss.data.size != 1:
            raise PipelineError("detached-loss", "loss must be scalar")
        if not any(n.output is loss for n in self.nodes):
            raise PipelineError("detached-loss", "loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            if node.output.requires_grad:
                _accumulate(node.output, g)
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # whatever remains was never an output of a node on this tape: leaves
        for node in self.nodes:
            for t in node.inputs:
                g = grads.pop(id(t), None)
                if g is not None and t.requires_grad:
                    _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True).reshape(t.shape)
    else:
        t.grad = t.grad + g.reshape(t.shape)


def _finite(arr: np.ndarray, op: str):
    if finite_checks and not np.all(np.isfinite(arr)):
        raise PipelineError("non-finite-value", f"{op} produced NaN/Inf")


def _record(op, inputs, out_data, backward) -> Tensor:
    _finite(out_data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    tape = _active_tape()
    if tape is not None and requires:
        tape.nodes.append(Node(op, tuple(inputs), out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce g over the axes numpy broadcast to reach g.shape from shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _record("add", (a, b), out,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _record("sub", (a, b), out,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _record("mul", (a, b), out,
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record("scale", (a,), a.data * s, lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise PipelineError("shape-error", f"matmul {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _record("matmul", (a, b), out,
                   lambda g: (g @ b.data.T, a.data.T @ g))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    y[~pos] = ez / (1.0 + ez)
    return _record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record("exp", (a,), y, lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _record("log", (a,), y, lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; gradient is sigmoid(x)."""
    y = np.logaddexp(0.0, a.data).astype(a.dtype)
    def back(g):
        s = np.empty_like(a.data)
        pos = a.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ez = np.exp(a.data[~pos])
        s[~pos] = ez / (1.0 + ez)
        return (g * s,)
    return _record("softplus", (a,), y, back)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)
    return _record("sum", (a,), np.asarray(out, dtype=a.dtype), back)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record("concat", tuple(tensors), out,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def reshape(a: Tensor, shape) -> Tensor:
    return _record("reshape", (a,), a.data.reshape(shape),
                   lambda g: (g.reshape(a.shape),))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise PipelineError("shape-error", "slice_cols expects a matrix")
    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)
    return _record("slice_cols", (a,), a.data[:, start:stop].copy(), back)


def time_slice(a: Tensor, t: int) -> Tensor:
    """Select step t of a (batch, time, dim) tensor -> (batch, dim)."""
    if a.ndim != 3:
        raise PipelineError("shape-error", "time_slice expects rank 3")
    def back(g):
        full = np.zeros_like(a.data)
        full[:, t, :] = g
        return (full,)
    return _record("time_slice", (a,), a.data[:, t, :].copy(), back)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids]; gradient scatter-adds back into the table."""
    ids = np.asarray(ids)
    out = table.data[ids]
    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (full,)
    return _record("gather_rows", (table,), out, back)


# ---------------------------------------------------------------------------
# model-specific ops

def conv1d_bank(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Narrow temporal convolution of a kernel bank over token windows.

    x: (batch, n, d), kernels: (F, c, d), bias: (F,). Each output feature is
    tanh(<window, kernel> + bias); output is (batch, n-c+1, F).
    """
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[2] != kernels.shape[2]:
        raise PipelineError("shape-error",
                            f"conv1d {x.shape} with kernels {kernels.shape}")
    n, c = x.shape[1], kernels.shape[1]
    if n < c:
        raise PipelineError("kernel-exceeds-length", f"length {n} < width {c}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, c, axis=1)  # (B, J, d, c)
    z = np.einsum("bjdc,fcd->bjf", win, kernels.data) + bias.data
    y = np.tanh(z)

    def back(g):
        dz = (g * (1.0 - y * y)).astype(x.dtype)
        dk = np.einsum("bjdc,bjf->fcd", win, dz)
        db = dz.sum(axis=(0, 1))
        dwin = np.einsum("bjf,fcd->bjcd", dz, kernels.data)
        dx = np.zeros_like(x.data)
        j = n - c + 1
        for off in range(c):
            dx[:, off:off + j, :] += dwin[:, :, off, :]
        return (dx, dk, db)

    return _record("conv1d", (x, kernels, bias), y.astype(x.dtype), back)


def conv1d_narrow(w: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Single-kernel narrow convolution: (n, d) x (c, d) -> feature map (n-c+1,)."""
    if w.ndim != 2 or kernel.ndim != 2:
        raise PipelineError("shape-error", "conv1d_narrow expects matrices")
    k3 = reshape(kernel, (1,) + kernel.shape)
    b1 = reshape(bias, (1,)) if bias.ndim == 0 else bias
    out = conv1d_bank(reshape(w, (1,) + w.shape), k3, b1)
    return reshape(out, (out.shape[1],))


def max_pool_time(x: Tensor, valid=None):
    """Max over the time axis of (batch, time, F), restricted to valid steps.

    valid: optional (batch, time) bool mask; every row needs at least one
    valid step. Returns (values (batch, F), argmax (batch, F) int array).
    Ties resolve to the lowest index, and the gradient routes only there.
    """
    if x.ndim != 3:
        raise PipelineError("shape-error", "max_pool_time expects rank 3")
    if x.shape[1] == 0:
        raise PipelineError("empty-pool", "no time steps to pool over")
    data = x.data
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if not valid.any(axis=1).all():
            raise PipelineError("empty-pool", "a row has no valid steps")
        data = np.where(valid[:, :, None], data, -np.inf)
    idx = data.argmax(axis=1)  # (B, F); first occurrence on ties
    vals = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]

    def back(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
        return (dx,)

    return _record("max_pool_time", (x,), vals.copy(), back), idx


def max_over_time(f: Tensor):
    """Pool a 1-D feature map to (max value, argmax index)."""
    if f.ndim != 1:
        raise PipelineError("shape-error", "max_over_time expects a vector")
    if f.shape[0] == 0:
        raise PipelineError("empty-pool", "empty feature map")
    out, idx = max_pool_time(reshape(f, (1, f.shape[0], 1)))
    return reshape(out, ()), int(idx[0, 0])


def masked_softmax(scores: Tensor, mask=None) -> Tensor:
    """Softmax along the last axis; masked positions get exactly zero.

    Uses max-subtraction over the unmasked support for stability. Raises
    "empty-support" if any row masks everything.
    """
    if mask is None:
        valid = np.ones(scores.shape, dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
        if valid.shape != scores.shape:
            raise PipelineError("shape-error", "mask shape mismatch")
    if not valid.any(axis=-1).all():
        raise PipelineError("empty-support", "softmax over fully masked row")
    neg = np.where(valid, scores.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.exp(np.where(valid, scores.data - m, -np.inf))
    e = np.where(valid, e, 0.0)
    p = (e / e.sum(axis=-1, keepdims=True)).astype(scores.dtype)

    def back(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _record("masked_softmax", (scores,), p, back)


def dropout(x: Tensor, p: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout: zero with probability p and scale survivors by 1/(1-p).

    Eval mode is the identity, so inference never rescales.
    """
    if not 0.0 <= p < 1.0:
        raise PipelineError("invalid-probability", f"drop probability {p}")
    if not train or p == 0.0:
        return x
    keep = (rng.uniform(size=x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, weights: Tensor):
    """One LSTM update. weights maps [h_prev ; x] -> the four stacked gates.

    Gate layout along the output axis is (input, forget, output, candidate);
    weights has shape (hidden + input, 4 * hidden). No gate bias: the
    pre-activation is the pure linear map of the concatenated state.
    """
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
        h_prev = reshape(h_prev, (1, h_prev.shape[0]))
        c_prev = reshape(c_prev, (1, c_prev.shape[0]))
    hidden = h_prev.shape[1]
    if (c_prev.shape != h_prev.shape or weights.ndim != 2
            or weights.shape[0] != hidden + x.shape[1]
            or weights.shape[1] != 4 * hidden):
        raise PipelineError("shape-error",
                            f"lstm_step x{x.shape} h{h_prev.shape} W{weights.shape}")
    z = matmul(concat([h_prev, x], axis=1), weights)
    i = sigmoid(slice_cols(z, 0, hidden))
    f = sigmoid(slice_cols(z, hidden, 2 * hidden))
    o = sigmoid(slice_cols(z, 2 * hidden, 3 * hidden))
    chat = tanh(slice_cols(z, 3 * hidden, 4 * hidden))
    c = add(mul(f, c_prev), mul(i, chat))
    h = mul(o, tanh(c))
    if squeeze:
        h = reshape(h, (hidden,))
        c = reshape(c, (hidden,))
    return h, c


def uniform_tensor(rng, shape, scale: float = 0.05) -> Tensor:
    """Trainable tensor initialized uniform in [-scale, scale]."""
    data = rng.uniform(-scale, scale, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def zero_grad(params: dict):
    for t in params.values():
        t.grad = np.zeros_like(t.data)
