"""Minimal dense numeric core: float64 arrays, tape-based reverse-mode
differentiation, and the Adam optimizer.

Values are numpy float64 arrays wrapped in :class:`Tensor`. Operations
performed while a :class:`Tape` is active record closures that replay the
chain rule in reverse; with no active tape they are plain forward math.
Tensors are treated as immutable once created, so published parameter
dictionaries can be shared freely across threads. The active-tape stack is
thread-local: independent tapes may run in parallel, a single tape must not
be shared.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Recorded operation nodes, replayed in reverse by :func:`backward`.

    Each node is (output tensor, parent tensors, backward closure). A fresh
    tape has zero nodes. Use as a context manager:

        with Tape() as tape:
            loss = ...
        backward(tape, loss)
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    """A float64 array plus a gradient slot filled in by :func:`backward`."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, backward_fn):
    tape = _active_tape()
    if tape is not None:
        tape.nodes.append((out, parents, backward_fn))
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra operations


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), bwd)


def neg(a):
    out = Tensor(-a.data)

    def bwd(g):
        return (-g,)

    return _record(out, (a,), bwd)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul requires 2-d operands with matching inner dimension, "
            f"got {a.data.shape} and {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def relu(x):
    """Elementwise max(0, x). Subgradient at 0 is 0."""
    x = _wrap(x)
    mask = x.data > 0
    out = Tensor(np.maximum(x.data, 0.0))

    def bwd(g):
        return (g * mask,)

    return _record(out, (x,), bwd)


def exp(x):
    x = _wrap(x)
    out = Tensor(np.exp(x.data))

    def bwd(g):
        return (g * out.data,)

    return _record(out, (x,), bwd)


def log(x):
    """Natural log; inputs must be strictly positive."""
    x = _wrap(x)
    out = Tensor(np.log(x.data))

    def bwd(g):
        return (g / x.data,)

    return _record(out, (x,), bwd)


def softmax(x, axis=-1):
    """Probabilities along `axis`, computed with max-subtraction so that any
    finite input is safe from overflow."""
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _record(out, (x,), bwd)


def log_softmax(x, axis=-1):
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)

    def bwd(g):
        return (g - np.exp(out.data) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bwd)


def tsum(x, axis=None, keepdims=False):
    x = _wrap(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape),)

    return _record(out, (x,), bwd)


def tmean(x, axis=None, keepdims=False):
    x = _wrap(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape) / count,)

    return _record(out, (x,), bwd)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        grads = []
        start = 0
        for size in sizes:
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + size)
            grads.append(g[tuple(index)])
            start += size
        return tuple(grads)

    return _record(out, tuple(tensors), bwd)


def rows(x, start, stop):
    """Contiguous row slice x[start:stop] of a 2-d tensor."""
    x = _wrap(x)
    out = Tensor(x.data[start:stop])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _record(out, (x,), bwd)


def cols(x, start, stop):
    """Contiguous column slice x[:, start:stop] of a 2-d tensor."""
    x = _wrap(x)
    out = Tensor(x.data[:, start:stop])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _record(out, (x,), bwd)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    x = _wrap(x)
    out = Tensor(np.clip(x.data, lo, hi))
    mask = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        return (g * mask,)

    return _record(out, (x,), bwd)


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first operand."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def bwd(g):
        return g * take_a, g * ~take_a

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# reverse-mode accumulation


def backward(tape, loss):
    """Accumulate reverse-mode gradients of a scalar `loss` into the `.grad`
    slot of every tensor on the path from the loss back to the leaves.

    Tensors off that path (and leaves that never participated) end with
    `grad = None`; read them through :func:`grad_of`, which reports zeros.
    Gradients are accumulated without in-place mutation, so closures may
    hand the same array to several parents safely.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    recorded = False
    for out, parents, _ in tape.nodes:
        out.grad = None
        for parent in parents:
            parent.grad = None
        if out is loss:
            recorded = True
    if not recorded:
        raise ContractError("loss was not recorded on this tape")

    loss.grad = np.ones_like(loss.data)
    for out, parents, bwd in reversed(tape.nodes):
        g = out.grad
        if g is None:  # this node does not feed the loss
            continue
        for parent, pg in zip(parents, bwd(g)):
            if pg is not None:
                parent.grad = pg if parent.grad is None else parent.grad + pg


def grad_of(tensor):
    """Gradient of a tensor after :func:`backward`, zeros if it never
    participated in the recorded computation."""
    if tensor.grad is None:
        return np.zeros_like(tensor.data)
    return tensor.grad


# ---------------------------------------------------------------------------
# parameters and optimization


def uniform_init(rng, shape, fan_in):
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamLeaves:
    """Wraps a parameter dict into fresh Tensor leaves for one forward pass,
    so gradients can be collected per name after backward()."""

    def __init__(self, arrays):
        self.tensors = {name: Tensor(a) for name, a in arrays.items()}

    def __getitem__(self, name):
        return self.tensors[name]

    def grads(self):
        return {name: grad_of(t) for name, t in self.tensors.items()}


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter for one array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_init(param):
    return AdamState(m=np.zeros_like(param), v=np.zeros_like(param), step=0)


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns (new_param, new_state)."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param, AdamState(m=m, v=v, step=step)


class Adam:
    """Adam over a named parameter dict. update() is functional: it returns a
    new parameter dict and mutates only the optimizer's own state."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = {}

    def update(self, params, grads):
        new_params = {}
        for name, param in params.items():
            state = self.states.get(name)
            if state is None:
                state = adam_init(param)
            new_params[name], self.states[name] = adam_step(
                param, grads[name], state, self.lr, self.beta1, self.beta2, self.eps
            )
        return new_params
