"""Minimal dense-tensor engine with reverse-mode autodiff and Adam.

Everything is float64 and eager: each op computes its result immediately
and records a backward closure on the output node. ``backward()`` walks
the recorded graph once and frees it unless ``retain_graph=True``.

Tensors are immutable after creation except for their ``grad`` buffers.
Stabilized ops (softmax, cross-entropy, layer norm) never produce NaN or
Inf from finite inputs.
"""

import numpy as np


class Tensor:
    """A float64 array plus optional gradient and graph bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the free functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape)

    def swap_last_axes(self):
        return swap_last_axes(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _node(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; batch dimensions follow numpy ``@`` semantics.

    Operands must be at least 2-D (no implicit vector promotion).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(a.data @ b.data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    exponent = float(exponent)
    out_data = a.data**exponent

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _node(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _node(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _node(np.where(keep, a.data, 0.0), (a,), backward)


def reduce_sum(a, axis=None) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _node(a.data.sum(axis=axis), (a,), backward)


def reduce_mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy())

    return _node(a.data.mean(axis=axis), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _node(a.data.reshape(shape), (a,), backward)


def swap_last_axes(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, -1, -2))

    return _node(np.swapaxes(a.data, -1, -2).copy(), (a,), backward)


def transpose(a, axes) -> Tensor:
    """Permute axes; backward applies the inverse permutation."""
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return _node(a.data.transpose(axes).copy(), (a,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (V, d) at integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            table._accumulate(acc)

    return _node(out_data, (table,), backward)


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise stabilized softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``a``; False positions get
    probability exactly 0.0 and receive zero gradient. Rejects NaN input;
    rows with no valid position are an error.
    """
    a = _as_tensor(a)
    x = a.data
    if np.isnan(x).any():
        raise ValueError("softmax input contains NaN")
    if mask is None:
        m = x.max(axis=-1, keepdims=True)
        e = np.exp(x - m)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax row with every position masked")
        m = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(x - m), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            a._accumulate(y * (g - dot))

    return _node(y, (a,), backward)


def layer_norm(a, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data
    n = a.data.shape[-1]

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if a.requires_grad:
            gx = g * gain.data
            a._accumulate(
                inv * (gx - gx.mean(axis=-1, keepdims=True)
                       - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            )

    return _node(out_data, (a, gain, bias), backward)


def _log_softmax_data(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets, row_mask: np.ndarray | None = None) -> Tensor:
    """Mean over rows of -sum(target * log softmax(logits)).

    ``targets`` is either an integer index array with one entry per logit
    row, or a distribution array of the same shape as ``logits`` whose rows
    sum to 1. ``row_mask`` (boolean, one entry per row) drops rows from the
    mean; at least one row must remain.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if x.ndim < 2:
        raise ValueError("cross_entropy expects at least 2-D logits")
    targets = np.asarray(targets)
    index_form = targets.ndim == x.ndim - 1
    if index_form:
        if targets.shape != x.shape[:-1]:
            raise ValueError(
                f"index targets shape {targets.shape} does not match "
                f"logit rows {x.shape[:-1]}"
            )
        if targets.min() < 0 or targets.max() >= x.shape[-1]:
            raise ValueError("target index out of range")
    elif targets.shape == x.shape:
        targets = targets.astype(np.float64)
    else:
        raise ValueError(
            f"targets shape {targets.shape} incompatible with logits {x.shape}"
        )

    if row_mask is None:
        row_mask = np.ones(x.shape[:-1], dtype=bool)
    else:
        row_mask = np.asarray(row_mask, dtype=bool)
        if row_mask.shape != x.shape[:-1]:
            raise ValueError("row_mask shape must match logit rows")
    n_rows = int(row_mask.sum())
    if n_rows == 0:
        raise ValueError("cross_entropy with every row masked")

    logp = _log_softmax_data(x)
    if index_form:
        picked = np.take_along_axis(logp, targets[..., None].astype(np.int64), axis=-1)
        per_row = -picked[..., 0]
    else:
        per_row = -(targets * logp).sum(axis=-1)
    loss = float(per_row[row_mask].sum() / n_rows)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(logp)
            if index_form:
                grad = p.copy()
                flat = grad.reshape(-1, x.shape[-1])
                flat[np.arange(flat.shape[0]), targets.reshape(-1)] -= 1.0
            else:
                grad = p - targets
            grad *= row_mask[..., None] / n_rows
            logits._accumulate(g * grad)

    return _node(np.float64(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    The recorded graph is consumed: a second call on the same ``loss``
    raises unless this call used ``retain_graph=True``.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    if loss._done:
        raise RuntimeError("backward called twice on a consumed graph")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    if not retain_graph:
        loss._done = True
        for node in order:
            if node is not loss:
                node._backward_fn = None
                node._parents = ()


def zero_grads(params) -> None:
    """Clear gradients of a dict or iterable of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """Per-parameter first/second moment buffers plus a shared step count."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update over named parameters, in place."""
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad**2
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------


def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` must map ``x`` to a scalar Tensor using recorded ops only.
    Returns ``max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-12)``.
    """
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ValueError("finite_diff_check requires a scalar-valued function")
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x).item()
        flat[i] = orig - h
        lo = f(x).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)

    err = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)
    return float(err.max())
