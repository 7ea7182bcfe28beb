"""Dense double-precision tensors with reverse-mode automatic differentiation.

A ``Tape`` records every differentiable operation executed while it is
active; ``backward`` replays the records in reverse to accumulate
gradients into the ``grad`` buffers of parameter (leaf) tensors.  The tape
is rebuilt on every forward pass, so variable-length sequences need no
static graph.  Tapes are kept on a thread-local stack: distinct model
replicas may run in distinct threads without sharing state.

Gradients accumulate additively across fan-out; call ``zero_grads``
between optimization steps.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_ACTIVATIONS = ("sigmoid", "tanh", "softmax_lastdim")
_ELEMENTWISE = ("add", "mul")

_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A shaped buffer of float64 values, optionally carrying a gradient.

    ``data`` is immutable by convention once written; only ``grad`` is
    mutated during training.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @staticmethod
    def _wrap(data, requires_grad):
        # fast construction for op outputs (data is already a float64 array)
        t = object.__new__(Tensor)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data):
    """Leaf tensor that participates in gradient accumulation."""
    return Tensor(data, requires_grad=True)


class TapeRecord:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    __slots__ = ("records", "_output_ids")

    def __init__(self):
        self.records = []
        self._output_ids = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def record(self, inputs, output, backward_fn):
        self.records.append(TapeRecord(inputs, output, backward_fn))
        self._output_ids.add(id(output))


def _as_tensor(x):
    return x if type(x) is Tensor else Tensor(x)


def _emit(inputs, out_data, backward_fn):
    """Wrap an op result, recording it when a tape is active and needed."""
    try:
        stack = _tls.stack
    except AttributeError:
        stack = _tls.stack = []
    if stack and any(t.requires_grad for t in inputs):
        out = Tensor._wrap(out_data, True)
        stack[-1].record(tuple(inputs), out, backward_fn)
        return out
    return Tensor._wrap(out_data, False)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a, b):
    """Matrix product with the numpy contraction rules (1-D operands allowed)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}") from None
    if not isinstance(out, np.ndarray):  # 1-D . 1-D contracts to a numpy scalar
        out = np.asarray(out)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return ((a, g * bd), (b, g * ad))
        if ad.ndim == 1:
            # (k,) @ (..., k, n) -> (..., n)
            ga = _unbroadcast(np.matmul(bd, np.expand_dims(g, -1)).squeeze(-1), ad.shape)
            gb = np.matmul(np.expand_dims(ad, -1), np.expand_dims(g, -2))
            return ((a, ga), (b, _unbroadcast(gb, bd.shape)))
        if bd.ndim == 1:
            # (..., m, k) @ (k,) -> (..., m)
            ga = np.matmul(np.expand_dims(g, -1), np.expand_dims(bd, -2))
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), np.expand_dims(g, -1)).squeeze(-1), bd.shape)
            return ((a, _unbroadcast(ga, ad.shape)), (b, gb))
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ((a, ga), (b, gb))

    return _emit((a, b), out, backward)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}") from None

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _emit((a, b), out, backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}") from None

    def backward(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    return _emit((a, b), out, backward)


def neg(x):
    x = _as_tensor(x)
    return _emit((x,), -x.data, lambda g: ((x, -g),))


def select(mask, a, b):
    """Elementwise ``mask ? a : b`` for a constant boolean mask.

    Unlike the arithmetic blend a*m + b*(1-m), a non-finite value on the
    unselected side cannot leak through.  Gradients flow to each branch
    only where it is selected.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    try:
        out = np.where(m, a.data, b.data)
    except ValueError:
        raise ShapeError(f"select: incompatible shapes {m.shape} ? {a.shape} : {b.shape}") from None

    def backward(g):
        return ((a, _unbroadcast(np.where(m, g, 0.0), a.data.shape)),
                (b, _unbroadcast(np.where(m, 0.0, g), b.data.shape)))

    return _emit((a, b), out, backward)


def sub(a, b):
    return add(a, neg(b))


def elementwise(a, b, kind):
    """Binary elementwise op; ``kind`` is one of {'add', 'mul'}."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}; expected one of {_ELEMENTWISE}")


def concat(parts, axis):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero parts")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    offsets = [0]
    for p in parts:
        offsets.append(offsets[-1] + p.data.shape[axis])

    def backward(g):
        pieces = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((p, g[tuple(idx)]))
        return tuple(pieces)

    return _emit(tuple(parts), out, backward)


def sigmoid(x):
    x = _as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("sigmoid: non-finite input")
    # saturates cleanly for any finite input, unlike 1/(1+exp(-x))
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def backward(g):
        return ((x, g * out * (1.0 - out)),)

    return _emit((x,), out, backward)


def tanh(x):
    x = _as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("tanh: non-finite input")
    out = np.tanh(x.data)

    def backward(g):
        return ((x, g * (1.0 - out * out)),)

    return _emit((x,), out, backward)


def softmax_lastdim(x):
    """Softmax over the last dimension, max-subtracted for overflow safety."""
    x = _as_tensor(x)
    if x.data.ndim < 1 or x.data.shape[-1] < 1:
        raise ContractError(f"softmax_lastdim: last dimension must be >= 1, got shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax_lastdim: non-finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((x, out * (g - inner)),)

    return _emit((x,), out, backward)


def apply_activation(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "softmax_lastdim":
        return softmax_lastdim(x)
    raise ContractError(f"unknown activation {kind!r}; expected one of {_ACTIVATIONS}")


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.data.shape
    out = x.data.reshape(shape)

    def backward(g):
        return ((x, g.reshape(old)),)

    return _emit((x,), out, backward)


def transpose(x):
    """Swap the last two axes."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"transpose needs >= 2 dimensions, got shape {x.shape}")
    out = np.swapaxes(x.data, -1, -2)

    def backward(g):
        return ((x, np.swapaxes(g, -1, -2)),)

    return _emit((x,), out, backward)


def slice_lastdim(x, start, stop):
    """Contiguous slice along the last axis; backward zero-pads the rest."""
    x = _as_tensor(x)
    width = x.data.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice [{start}:{stop}] outside last dimension of width {width}")
    out = x.data[..., start:stop]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return ((x, gx),)

    return _emit((x,), out, backward)


def reduce_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def backward(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.data.shape).copy()),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return ((x, np.broadcast_to(ge, x.data.shape).copy()),)

    return _emit((x,), out, backward)


def take_rows(x, indices):
    """Select rows of a 2-D tensor; gradient scatter-adds into those rows."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D tensor, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return _emit((x,), out, backward)


# ---------------------------------------------------------------------------
# gradient propagation


def backward(tape, loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape.

    ``loss`` must be a scalar produced on ``tape`` (an empty tape with a
    scalar leaf loss is a no-op).
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("backward: loss must be a scalar tensor")
    if tape.records and id(loss) not in tape._output_ids:
        raise ContractError("backward: loss is not an output of this tape")
    adjoint = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = adjoint.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in rec.backward_fn(g):
            if not (inp.requires_grad or id(inp) in tape._output_ids):
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
    # op outputs were popped during the walk; what remains belongs to leaves
    flushed = set()
    for rec in tape.records:
        for inp in rec.inputs:
            key = id(inp)
            if key in adjoint and key not in flushed and inp.requires_grad:
                inp.ensure_grad()
                inp.grad += adjoint[key]
                flushed.add(key)


def zero_grads(tensors):
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def grad_check(f, params, eps=1e-5):
    """Max discrepancy between analytic and central-difference gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor computed
    from ``params``.  Per coordinate the discrepancy is
    ``|analytic - central| / max(1, |central|)``; the max over all
    coordinates of all params is returned.  Parameter data is perturbed in
    place and restored.
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    zero_grads(params)
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [p.grad.copy() for p in params]

    def eval_scalar():
        out = f()
        v = float(out.data.reshape(()))
        if not np.isfinite(v):
            raise NumericError("grad_check: non-finite function value")
        return v

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = eval_scalar()
            flat[i] = orig - eps
            down = eval_scalar()
            flat[i] = orig
            central = (up - down) / (2.0 * eps)
            disc = abs(gflat[i] - central) / max(1.0, abs(central))
            if disc > worst:
                worst = disc
    return worst
