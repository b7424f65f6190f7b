"""Dense array substrate with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy float32/float64 arrays. Operations record a
dynamic tape (parents + vector-Jacobian closure) on their outputs whenever
any input requires gradients; ``backward`` walks the tape once in reverse
topological order and frees it. Tensors are never mutated in place while a
tape references them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "set_debug_check_finite",
    "from_op",
    "add", "sub", "mul", "div", "neg",
    "tanh", "sigmoid", "relu", "silu", "exp", "log", "sqrt", "square",
    "softmax", "matmul", "conv1d", "pad1d", "dropout",
    "tsum", "tmean", "reshape", "transpose", "getitem", "concat",
    "layer_norm", "backward", "topo_order",
]

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True
_check_finite = False


def set_debug_check_finite(flag: bool) -> None:
    """Verify every op output is finite (debug aid; off by default)."""
    global _check_finite
    _check_finite = bool(flag)


class no_grad:
    """Context manager disabling tape recording (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional array node of the autodiff graph.

    ``data`` is a row-major float32/float64 numpy array, ``grad`` (same
    shape) is populated by ``backward``. Recorded nodes keep ``_parents``
    and a ``_vjp`` closure mapping the output gradient to parent gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjp = None
        self._op = ""

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar (scalars are folded to the tensor dtype)
    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def from_op(data: np.ndarray, parents, vjp, op: str = "") -> Tensor:
    """Build an op output, recording the tape node when gradients flow.

    ``vjp(grad_out)`` must return one numpy gradient (or None) per parent.
    This is the extension point used by modules that implement custom
    differentiable operations (e.g. the spectral transforms).
    """
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "add")
    return from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "sub")
    return from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "mul")
    return from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "div")
    out = a.data / b.data
    return from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape),
                   _unbroadcast(-g * out / b.data, b.shape)),
        "div")


def neg(a: Tensor) -> Tensor:
    return from_op(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return from_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    y = _stable_sigmoid(a.data)
    return from_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return from_op(y, (a,), lambda g: (g * (a.data > 0),), "relu")


def silu(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    y = a.data * s
    return from_op(y, (a,), lambda g: (g * (s + y * (1.0 - s)),), "silu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return from_op(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    return from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return from_op(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def square(a: Tensor) -> Tensor:
    return from_op(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,), "square")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return from_op(y, (a,), vjp, "softmax")


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: active only in training mode, identity otherwise."""
    if not training or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} outside [0, 1)")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return from_op(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# contractions and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product (...,m,k) @ (...,k,n) with broadcast batch dims."""
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >= 2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return from_op(out, (a, b), vjp, "matmul")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.data.dtype, copy=True),)

    return from_op(out, (a,), vjp, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / n, dtype=a.data.dtype)))


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return from_op(a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(orig),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return from_op(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def vjp(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[idx] += g           # disjoint target region
        else:
            np.add.at(ga, idx, g)  # fancy indices may repeat
        return (ga,)

    return from_op(out, (a,), vjp, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _check_dtypes(tensors[0], t, "concat")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(out, tuple(tensors), vjp, "concat")


def pad1d(a: Tensor, left: int, right: int, mode: str = "zero") -> Tensor:
    """Pad the last axis by (left, right) with zeros or edge replication."""
    if mode not in ("zero", "edge"):
        raise ValueError(f"unknown pad mode {mode!r}")
    width = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    out = np.pad(a.data, width, mode="constant" if mode == "zero" else "edge")
    n = a.shape[-1]

    def vjp(g):
        core = g[..., left:left + n].copy()
        if mode == "edge":
            if left:
                core[..., 0] += g[..., :left].sum(axis=-1)
            if right:
                core[..., -1] += g[..., left + n:].sum(axis=-1)
        return (core,)

    return from_op(out, (a,), vjp, "pad1d")


# ---------------------------------------------------------------------------
# convolution


def conv1d(x: Tensor, w: Tensor, dilation: int = 1, padding: str = "same") -> Tensor:
    """Dilated 1-d convolution: (B,Cin,T) * (Cout,Cin,K) -> (B,Cout,T').

    ``same`` zero-pads so T' == T (K must be odd); ``valid`` gives
    T' = T - dilation*(K-1).
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError("conv1d expects x (B,Cin,T) and w (Cout,Cin,K)")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv1d channel mismatch: x has {x.shape[1]}, w has {w.shape[1]}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    K = w.shape[2]
    span = dilation * (K - 1)
    if padding == "same":
        if K % 2 == 0:
            raise ValueError("same-padding requires odd kernel length")
        pl = pr = span // 2
    elif padding == "valid":
        pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    _check_dtypes(x, w, "conv1d")

    xd = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else x.data
    Tout = xd.shape[2] - span
    if Tout < 1:
        raise ValueError("conv1d: kernel span exceeds padded input length")
    out = np.zeros((x.shape[0], w.shape[0], Tout), dtype=x.data.dtype)
    for k in range(K):
        # (Cout,Cin) @ (B,Cin,Tout) -> (B,Cout,Tout)
        out += np.matmul(w.data[:, :, k], xd[:, :, k * dilation:k * dilation + Tout])

    def vjp(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(w.data)
        for k in range(K):
            sl = slice(k * dilation, k * dilation + Tout)
            gx[:, :, sl] += np.matmul(w.data[:, :, k].T, g)
            gw[:, :, k] = np.tensordot(g, xd[:, :, sl], axes=([0, 2], [0, 2]))
        if pl or pr:
            gx = gx[:, :, pl:pl + x.shape[2]]
        return (gx, gw)

    return from_op(out, (x, w), vjp, "conv1d")


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift by gamma/beta."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def vjp(g):
        gg = g * gamma.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        return (gx.astype(x.data.dtype), ggamma, gbeta)

    return from_op(out, (x, gamma, beta), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# backward pass


def topo_order(root: Tensor) -> list:
    """Reverse-topological list of recorded nodes reachable from ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    ``loss`` must be scalar. The tape is freed afterwards (single use).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad (no tape recorded)")
    order = topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g
        else:
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.dtype != p.data.dtype:
                pg = pg.astype(p.data.dtype)
            if pg.shape != p.data.shape:
                pg = pg.reshape(p.data.shape)
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
        node._parents = ()
        node._vjp = None
