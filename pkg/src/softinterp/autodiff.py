"""Dense float64 tensors with reverse-mode automatic differentiation.

A minimal numpy-backed tape: each op records parents and a backward closure;
``Tensor.backward()`` runs an iterative topological sort and accumulates
gradients into ``.grad``. Broadcasting follows numpy rules; gradients of
broadcast operands are summed back to the operand shape.

Domains are the caller's responsibility (``log`` wants positive input,
``pow_scalar`` with fractional exponents wants positive input); within those
domains no op produces NaN on finite inputs.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Incompatible operand shapes; message carries both shapes."""


class NonFiniteLoss(ValueError):
    """The objective returned NaN or Inf during a gradient check."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _needs_grad(*parents):
        return Tensor(data, parents=parents, backward=backward)
    return Tensor(data)


# --- elementwise arithmetic --------------------------------------------------


def _broadcast_op(a, b, forward, da, db) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        data = forward(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"incompatible shapes {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(da(g, a.data, b.data), a.data.shape))
        _accumulate(b, _unbroadcast(db(g, a.data, b.data), b.data.shape))

    return _make(data, (a, b), backward)


def add(a, b) -> Tensor:
    return _broadcast_op(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _broadcast_op(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _broadcast_op(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _broadcast_op(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def pow_scalar(x, p: float) -> Tensor:
    x = _coerce(x)
    data = x.data**p

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * p * x.data ** (p - 1))

    return _make(data, (x,), backward)


def sqrt(x) -> Tensor:
    return pow_scalar(x, 0.5)


# --- matmul -------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands must be at least 2-D."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul shapes {a.shape} vs {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeMismatch(f"matmul shapes {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


# --- shape plumbing -----------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _coerce(x)
    data = x.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.data.shape))

    return _make(data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _coerce(x)
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.transpose(inverse))

    return _make(data, (x,), backward)


def swapaxes(x, a: int, b: int) -> Tensor:
    x = _coerce(x)
    data = np.swapaxes(x.data, a, b)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.swapaxes(g, a, b))

    return _make(data, (x,), backward)


def expand_dims(x, axis: int) -> Tensor:
    x = _coerce(x)
    data = np.expand_dims(x.data, axis)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.squeeze(g, axis=axis))

    return _make(data, (x,), backward)


def _is_fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(x, idx) -> Tensor:
    x = _coerce(x)
    data = x.data[idx]

    def backward(g: np.ndarray) -> None:
        if not (x.requires_grad or x._parents):
            return
        buf = np.zeros_like(x.data)
        if _is_fancy(idx):
            np.add.at(buf, idx, g)
        else:
            buf[idx] += g
        _accumulate(x, buf)

    return _make(data, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        probe, probe_other = list(base), list(other)
        if len(probe) != len(probe_other):
            raise ShapeMismatch(f"concat shapes {tensors[0].shape} vs {t.shape}")
        probe[axis] = probe_other[axis] = 0
        if probe != probe_other:
            raise ShapeMismatch(f"concat shapes {tensors[0].shape} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        moved = np.moveaxis(g, axis, 0)
        for t, start, end in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, np.moveaxis(moved[start:end], 0, axis))

    return _make(data, tuple(tensors), backward)


# --- nonlinearities and reductions -------------------------------------------


def sigmoid(x) -> Tensor:
    x = _coerce(x)
    data = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * data * (1.0 - data))

    return _make(data, (x,), backward)


def tanh(x) -> Tensor:
    x = _coerce(x)
    data = np.tanh(x.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - data * data))

    return _make(data, (x,), backward)


def log(x) -> Tensor:
    x = _coerce(x)
    data = np.log(x.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g / x.data)

    return _make(data, (x,), backward)


def exp(x) -> Tensor:
    x = _coerce(x)
    data = np.exp(x.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * data)

    return _make(data, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _coerce(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - inner))

    return _make(data, (x,), backward)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    soft = e / s
    data = np.log(s) + m
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def backward(g: np.ndarray) -> None:
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(x, soft * gg)

    return _make(data, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.data.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(gg, x.data.shape).copy())

    return _make(data, (x,), backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    if axis is None:
        count = x.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        count = x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def tmax(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    m = x.data.max(axis=axis, keepdims=True)
    mask = (x.data == m).astype(np.float64)
    counts = mask.sum(axis=axis, keepdims=True)
    data = m if keepdims else np.squeeze(m, axis=axis)

    def backward(g: np.ndarray) -> None:
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(x, mask / counts * gg)

    return _make(data, (x,), backward)


def embedding(table, ids) -> Tensor:
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward(g: np.ndarray) -> None:
        if not (table.requires_grad or table._parents):
            return
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        _accumulate(table, buf)

    return _make(data, (table,), backward)


def masked_fill(x, mask, value: float) -> Tensor:
    """Replace entries where mask == 1 with ``value``; mask is a constant."""
    x = _coerce(x)
    mask_arr = np.asarray(mask, dtype=np.float64)
    try:
        data = x.data * (1.0 - mask_arr) + value * mask_arr
    except ValueError:
        raise ShapeMismatch(f"masked_fill shapes {x.shape} vs {mask_arr.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(x, _unbroadcast(g * (1.0 - mask_arr), x.data.shape))

    return _make(data, (x,), backward)


# --- gradient checking --------------------------------------------------------


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the forward pass from scratch on every call and returns a
    scalar Tensor. Relative error per coordinate is
    ``|analytic - fd| / (|analytic| + |fd| + 1e-8)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(f"objective returned {value}")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = f().item()
            flat[i] = saved - eps
            down = f().item()
            flat[i] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteLoss("objective returned a non-finite value during probing")
            fd = (up - down) / (2.0 * eps)
            rel = abs(gflat[i] - fd) / (abs(gflat[i]) + abs(fd) + 1e-8)
            worst = max(worst, rel)
    return worst


def global_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm; returns it."""
    norm = global_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm
