"""Dense float64 tensors with closure-based reverse-mode automatic differentiation.

Every operation builds a node holding its inputs and a backward closure; calling
:func:`backward` on a scalar result walks the graph once in reverse topological
order and accumulates gradients into every reachable tensor that has
``requires_grad`` set.

Gradient contract (tested in ``tests/test_tensor.py``):

* ``.grad`` accumulates across separate forward graphs until :meth:`Tensor.zero_grad`
  is called (the usual accumulate/reset discipline).
* A given graph root may be backpropagated exactly once; a second call raises
  ``RuntimeError``. Rebuild the forward graph for another pass.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """An operation was called outside its documented precondition."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class Tensor:
    """A dense float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        """Add ``g`` into the gradient buffer; copies because ``g`` may alias."""
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def _accumulate_new(self, g: np.ndarray) -> None:
        """Like :meth:`_accumulate` for arrays the caller freshly allocated."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through every grad-requiring ancestor."""
        if self.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {self.shape}")
        if self._done:
            raise RuntimeError("backward already ran for this graph root; rebuild the forward graph")
        self._done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # Intermediate grads are per-graph scratch; free them eagerly.
                if node is not self:
                    node.grad = None

    # Operator sugar; the named functions below are the actual implementations.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    out._backward = backward
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    out._backward = backward
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward = backward
    return out


def layernorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis of ``x`` to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ContractError("layernorm eps must be positive")
    e = x.shape[-1]
    if gain.shape != (e,) or bias.shape != (e,):
        raise DimensionError("layernorm gain/bias must match the last axis of x")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data, _parents=(x, gain, bias))

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, e).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, e).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    out._backward = backward
    return out


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time so evaluation is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout requires an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * keep, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    out._backward = backward
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    out._backward = backward
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    out._backward = backward
    return out


def flatten(x) -> Tensor:
    """Collapse all axes after the first (batch) axis."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.swapaxes(x.data, a, b), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.swapaxes(g, a, b))

    out._backward = backward
    return out


def slice_(x, index) -> Tensor:
    """Basic (non-advanced) indexing with gradient scatter on the backward pass."""
    x = as_tensor(x)
    out = Tensor(x.data[index], _parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            x._accumulate(full)

    out._backward = backward
    return out


def take_rows(x, idx) -> Tensor:
    """Gather rows of a 2-D tensor by an integer index array of any shape."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("take_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.data[idx], _parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, idx.ravel(), g.reshape(-1, x.shape[1]))
            x._accumulate(full)

    out._backward = backward
    return out


def take_per_row(x, idx) -> Tensor:
    """Gather ``out[b, j] = x[b, idx[b, j]]`` from a 2-D tensor."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if x.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise DimensionError("take_per_row expects x (B,C) and idx (B,k)")
    rows = np.arange(x.shape[0])[:, None]
    out = Tensor(x.data[rows, idx], _parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (np.broadcast_to(rows, idx.shape), idx), g)
            x._accumulate(full)

    out._backward = backward
    return out


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    out._backward = backward
    return out


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def squared_l2(x) -> Tensor:
    """Sum of squared entries, as a scalar."""
    x = as_tensor(x)
    out = Tensor(np.array((x.data * x.data).sum()), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(2.0 * g * x.data)

    out._backward = backward
    return out


def cross_entropy(logits, targets) -> Tensor:
    """Per-row cross-entropy of integer targets against rows of logits.

    Accepts either a single 1-D logit vector with a scalar target (returns a
    scalar) or a 2-D (B, n) batch with a length-B target vector (returns (B,)).
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    data = logits.data[None, :] if single else logits.data
    if data.ndim != 2:
        raise DimensionError("cross_entropy expects 1-D or 2-D logits")
    t = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if t.shape != (data.shape[0],):
        raise DimensionError("cross_entropy targets must have one index per logit row")
    if (t < 0).any() or (t >= data.shape[1]).any():
        raise ContractError("cross_entropy target index out of range")
    shifted = data - data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + data.max(axis=1)
    losses = lse - data[np.arange(data.shape[0]), t]
    out = Tensor(losses[0] if single else losses, _parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(data.shape[0]), t] -= 1.0
            gv = np.atleast_1d(g)
            grad = p * gv[:, None]
            logits._accumulate(grad[0] if single else grad)

    out._backward = backward
    return out


def grad_check(f, x: Tensor, tol: float = 1e-4, h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None):
    """Compare reverse-mode gradients of scalar-valued ``f`` against central differences.

    Returns ``(passed, max_relative_error)``. Relative error uses a denominator
    floored at 1e-3 so float noise on near-zero gradients cannot dominate.
    """
    x.requires_grad = True
    x.zero_grad()
    y = f(x)
    if y.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    if not np.isfinite(y.data).all():
        raise NumericError("grad_check: non-finite function value")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    coords = list(np.ndindex(x.shape))
    if max_coords is not None and len(coords) > max_coords:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = [coords[i] for i in rng.choice(len(coords), size=max_coords, replace=False)]

    max_err = 0.0
    for c in coords:
        orig = x.data[c]
        x.data[c] = orig + h
        fp = float(f(x).data)
        x.data[c] = orig - h
        fm = float(f(x).data)
        x.data[c] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("grad_check: non-finite intermediate value")
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[c]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
        max_err = max(max_err, err)
    return max_err < tol, max_err
