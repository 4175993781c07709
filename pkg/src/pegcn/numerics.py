"""Dense tensors with reverse-mode gradients.

A :class:`Tensor` wraps a numpy array and remembers the primitive that
produced it.  Calling :meth:`Tensor.backward` on a scalar walks the recorded
graph in reverse topological order and accumulates ``.grad`` on every tensor
that requires it.

Broadcasting is deliberately narrow: elementwise operands must have equal
shapes, or the smaller operand's shape must equal the trailing dimensions of
the larger one (a leading-batch broadcast).  Python scalars are accepted as
constants.  Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform to a primitive's rule."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""

    def __init__(self, op: str, shape):
        super().__init__(f"{op} produced non-finite values (output shape {tuple(shape)})")
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(op: str, out: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(op, out.shape)
    track = any(_needs_grad(p) for p in parents)
    return Tensor(out, op=op, parents=parents if track else (),
                  backward=backward if track else None)


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform "
                     "(equal shapes or leading-batch broadcast only)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    if g.shape != shape:  # 0-d operand
        g = g.sum().reshape(shape)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,),
                 lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` set, ``log(max(x, floor))`` (zero gradient below)."""
    x = a.data
    if floor is None:
        if np.any(x <= 0):
            raise NonFiniteError("log", x.shape)
        return _make("log", np.log(x), (a,), lambda g: (g / x,))
    keep = x > floor
    safe = np.where(keep, x, floor)
    return _make("log", np.log(safe), (a,), lambda g: (np.where(keep, g / safe, 0.0),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make("softmax", y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make("log_softmax", y, (a,),
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# reductions and shape

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axes {axes} of shape {a.shape}")
    return scale(sum(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype
    out = a.data[index]

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _make("getitem", np.array(out, copy=True), (a,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax),
                 tuple(tensors), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``np.matmul`` with batch dims equal, or one operand 2-D (shared across the batch)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ba, bb = a.shape[:-2], b.shape[:-2]
    if ba and bb and ba != bb:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _reduce_to(g @ np.swapaxes(bd, -1, -2), ad.shape) if _needs_grad(a) else None
        gb = _reduce_to(np.swapaxes(ad, -1, -2) @ g, bd.shape) if _needs_grad(b) else None
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), backward)


def unfold_time(a: Tensor, kernel: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Sliding windows along axis 1 of an ``(N, T, ...rest, C)`` tensor.

    Output is ``(N, T_out, ...rest, kernel * C)`` with window offset major and
    channel minor, so a temporal convolution is ``unfold_time(x) @ W`` with
    ``W`` of shape ``(kernel * C, C_out)``.  Zero padding of ``pad`` frames on
    both ends.
    """
    x = a.data
    n, t = x.shape[:2]
    c = x.shape[-1]
    t_out = (t + 2 * pad - kernel) // stride + 1
    if t_out < 1:
        raise ShapeError(f"unfold_time: kernel {kernel} longer than padded length {t + 2 * pad}")
    width = [(0, 0)] * x.ndim
    width[1] = (pad, pad)
    xp = np.pad(x, width)
    pieces = [xp[:, k: k + stride * (t_out - 1) + 1: stride] for k in range(kernel)]
    out = np.concatenate(pieces, axis=-1)

    def backward(g):
        gp = np.zeros_like(xp)
        for k in range(kernel):
            gp[:, k: k + stride * (t_out - 1) + 1: stride] += g[..., k * c:(k + 1) * c]
        return (gp[:, pad: pad + t],)

    return _make("unfold_time", out, (a,), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, eps: float = 1e-5,
               weights: np.ndarray | None = None):
    """Batch normalization over every axis but the last (channel) axis.

    ``weights`` (one nonnegative value per leading-axis item) excludes padded
    items from the batch statistics.  Returns ``(y, stats)`` where ``stats`` is
    ``(batch_mean, biased_batch_var, item_count)`` in training mode and ``None``
    in inference mode.  Running statistics are never modified here.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} "
                         f"do not match channel count {c}")
    xd = x.data
    flat = xd.reshape(-1, c)
    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean) * inv
        gd, bd = gamma.data, beta.data

        def backward(g):
            return (g * gd * inv, (g * xhat).reshape(-1, c).sum(0), g.reshape(-1, c).sum(0))

        return _make("batch_norm", xhat * gd + bd, (x, gamma, beta), backward), None

    if weights is None:
        w = np.ones(flat.shape[0], dtype=xd.dtype)
    else:
        per_item = flat.shape[0] // xd.shape[0]
        w = np.repeat(np.asarray(weights, dtype=xd.dtype), per_item)
    total = w.sum()
    if total <= 0:
        raise ShapeError("batch_norm: no valid items in batch")
    mu = (w @ flat) / total
    centered = flat - mu
    var = (w @ (centered * centered)) / total
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd, bd = gamma.data, beta.data

    def backward(g):
        g2 = g.reshape(-1, c)
        dxhat = g2 * gd
        # zero-weight rows still see the batch statistics but do not shape them
        m1 = dxhat.sum(0) / total
        m2 = (dxhat * xhat).sum(0) / total
        dx = (dxhat - w[:, None] * (m1 + xhat * m2)) * inv
        return (dx.reshape(xd.shape), (g2 * xhat).sum(0), g2.sum(0))

    y = _make("batch_norm", (xhat * gd + bd).reshape(xd.shape), (x, gamma, beta), backward)
    return y, (mu, var, total)


# ---------------------------------------------------------------------------
# gradient utilities

def value_and_grad(fn: Callable[[dict], Tensor], params: Mapping[str, np.ndarray]):
    """Evaluate ``fn`` on leaf tensors built from ``params`` and differentiate it.

    Returns ``(loss, grads)`` where ``grads`` maps every name in ``params`` to
    an array of the same shape; parameters the loss never touched get zeros.
    """
    leaves = {k: Tensor(np.asarray(v), requires_grad=True) for k, v in params.items()}
    out = fn(leaves)
    if not isinstance(out, Tensor):
        out = as_tensor(out)
    if out.data.size != 1:
        raise ShapeError(f"value_and_grad: loss must be a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError(out.op, out.shape)
    out.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in leaves.items()}
    return float(out.data.reshape(())), grads


def finite_diff_check(loss_fn: Callable[[dict], Tensor], params: Mapping[str, np.ndarray],
                      eps: float = 1e-5, names: Iterable[str] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = value_and_grad(loss_fn, params)

    def scalar(p):
        out = loss_fn({k: Tensor(v) for k, v in p.items()})
        return float(as_tensor(out).data.reshape(()))

    worst = 0.0
    for name in (names if names is not None else params):
        arr = params[name]
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar(params)
            flat[i] = orig - eps
            fm = scalar(params)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(ga[i] - num) / max(1e-8, abs(ga[i]) + abs(num))
            worst = max(worst, err)
    return worst
