"""Dense tensors with reverse-mode autodiff, plus the Adam optimizer.

Storage is a contiguous row-major numpy array (float32 by default,
float64 under the ``precision`` context used for gradient checking).
Every network layer in the completion pipeline is built from the
operation set in this module; gradients are accumulated into ``.grad``
until the caller clears them.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference-only forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _shape_err(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- convenience ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{rg})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("div: only scalar divisors are supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return sum_reduce(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean_reduce(self, axis)

    def max(self, axis=None) -> "Tensor":
        return max_reduce(self, axis)

    # -- autodiff core ----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse sweep from a scalar loss; grads accumulate until cleared."""
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {tuple(self.shape)}")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return list(reversed(order))


def _node(out_data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise ----------------------------------------------------------


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_err(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    out = a.data + b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    out = a.data - b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    out = a.data * b.data

    def bw(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _node(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return ((a, -g),)

    return _node(-a.data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return ((a, g * mask),)

    return _node(np.where(mask, a.data, 0), (a,), bw)


def sqrt(a) -> Tensor:
    """Elementwise square root; subgradient 0 where the input is exactly 0."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    y = np.sqrt(a.data)

    def bw(g):
        denom = np.where(y > 0, y, 1.0)
        return ((a, np.where(y > 0, 0.5 * g / denom, 0.0)),)

    return _node(y, (a,), bw)


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bw(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _node(out, (a, b), bw)


def linear(x, w, b=None) -> Tensor:
    """Pointwise linear layer: x @ w (+ b broadcast over rows)."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        if a.ndim != 2:
            raise _shape_err("transpose", a.shape)
        axes = (1, 0)
    inv = np.argsort(axes)

    def bw(g):
        return ((a, np.ascontiguousarray(g.transpose(inv))),)

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise _shape_err("reshape", a.shape, shape) from None

    def bw(g):
        return ((a, g.reshape(a.data.shape)),)

    return _node(np.ascontiguousarray(out), (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: empty input list")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(
            i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))
        ):
            raise _shape_err("concat", parts[0].shape, p.shape)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        pieces = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            pieces.append((p, np.ascontiguousarray(g[tuple(sl)])))
        return tuple(pieces)

    return _node(out, parts, bw)


def gather_rows(a, idx) -> Tensor:
    """Select rows along axis 0; gradients scatter-add back to the source."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows: index array must be integer")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _node(out, (a,), bw)


# -- reductions & normalization -------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stochastic softmax, stabilized by max subtraction."""
    a = as_tensor(a)
    if not (-a.ndim <= axis < a.ndim):
        raise _shape_err(f"softmax(axis={axis})", a.shape)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return _node(y, (a,), bw)


def sum_reduce(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is None:
            return ((a, np.full_like(a.data, 1.0) * g),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()),)

    return _node(np.asarray(out), (a,), bw)


def mean_reduce(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]

    def bw(g):
        if axis is None:
            return ((a, np.full_like(a.data, 1.0 / n) * g),)
        return ((a, np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy()),)

    return _node(np.asarray(out), (a,), bw)


def max_reduce(a, axis=None) -> Tensor:
    """Max over one axis (or all); gradient routes to the first maximum."""
    a = as_tensor(a)
    if axis is None:
        out = np.max(a.data)
        flat_idx = int(np.argmax(a.data))

        def bw_all(g):
            ga = np.zeros_like(a.data)
            ga.reshape(-1)[flat_idx] = g
            return ((a, ga),)

        return _node(np.asarray(out), (a,), bw_all)

    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return ((a, ga),)

    return _node(out, (a,), bw)


# -- structured ops -------------------------------------------------------


def conv_transpose_1d(x, w, stride: int = 1) -> Tensor:
    """1-D transposed convolution.

    x: (C_in, L), w: (C_in, C_out, K) -> (C_out, (L-1)*stride + K).
    Each input column scatters a weighted copy of the kernel into the output.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or x.shape[0] != w.shape[0]:
        raise _shape_err("conv_transpose_1d", x.shape, w.shape)
    if stride < 1:
        raise ShapeError(f"conv_transpose_1d: stride must be >= 1, got {stride}")
    c_in, length = x.shape
    _, c_out, k = w.shape
    out_len = (length - 1) * stride + k
    contrib = np.einsum("il,iok->lok", x.data, w.data)
    out = np.zeros((c_out, out_len), dtype=x.data.dtype)
    for l in range(length):
        out[:, l * stride : l * stride + k] += contrib[l]

    def bw(g):
        if length == 1:
            gx = np.einsum("ok,iok->i", g, w.data)[:, None]
            gw = np.einsum("i,ok->iok", x.data[:, 0], g)
            return ((x, gx), (w, gw))
        gx = np.empty_like(x.data)
        gw = np.zeros_like(w.data)
        for l in range(length):
            g_slice = g[:, l * stride : l * stride + k]
            gx[:, l] = np.einsum("ok,iok->i", g_slice, w.data)
            gw += np.einsum("i,ok->iok", x.data[:, l], g_slice)
        return ((x, gx), (w, gw))

    return _node(out, (x, w), bw)


def sinusoidal_encoding(pos, channels: int) -> Tensor:
    """Sinusoidal encoding of scalar positions.

    pos: (N,) -> (N, channels) with channel pair (2k, 2k+1) carrying
    (sin, cos) of pos / 10000^(2k/channels). Position 0 maps to the row
    [0, 1, 0, 1, ...].
    """
    pos = as_tensor(pos)
    if pos.ndim != 1:
        raise _shape_err("sinusoidal_encoding", pos.shape)
    if channels < 2 or channels % 2 != 0:
        raise ShapeError(f"sinusoidal_encoding: channel count must be even >= 2, got {channels}")
    k = np.arange(channels // 2, dtype=pos.data.dtype)
    freq = np.power(pos.data.dtype.type(10000.0), -2.0 * k / channels)
    ang = pos.data[:, None] * freq[None, :]
    out = np.empty((pos.shape[0], channels), dtype=pos.data.dtype)
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)

    def bw(g):
        dpos = np.sum(g[:, 0::2] * np.cos(ang) * freq, axis=1)
        dpos -= np.sum(g[:, 1::2] * np.sin(ang) * freq, axis=1)
        return ((pos, dpos),)

    return _node(out, (pos,), bw)


# -- Adam ------------------------------------------------------------------


class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    def __init__(self, params: Sequence[Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


class Adam:
    """Bias-corrected Adam over a fixed list of parameters."""

    def __init__(self, params: Iterable[Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(self.params, lr, beta1, beta2, eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        adam_step(self.state, self.params, lr=lr)


def adam_step(state: AdamState, params: Sequence[Tensor], lr: Optional[float] = None) -> None:
    """Apply one bias-corrected Adam update; every parameter must carry a grad."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} (shape {tuple(p.shape)}) has no grad")
    state.t += 1
    lr = state.lr if lr is None else float(lr)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = np.sqrt(v / bc2)
        update += state.eps
        np.divide(m, update, out=update)
        update *= lr / bc1
        p.data -= update.astype(p.data.dtype, copy=False)


# -- gradient checking -----------------------------------------------------


def _gc_rng(seed):
    return np.random.default_rng(seed)


def _rand(rng, shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _gc_matmul(rng, shapes):
    a = Tensor(_rand(rng, shapes[0]), requires_grad=True)
    b = Tensor(_rand(rng, shapes[1]), requires_grad=True)
    return [a, b], lambda a, b: matmul(a, b)


def _gc_binary(op):
    def build(rng, shapes):
        a = Tensor(_rand(rng, shapes[0]), requires_grad=True)
        b = Tensor(_rand(rng, shapes[0]), requires_grad=True)
        return [a, b], lambda a, b: op(a, b)

    return build


def _gc_scale(rng, shapes):
    a = Tensor(_rand(rng, shapes[0]), requires_grad=True)
    return [a], lambda a: add(mul(a, 1.7), -0.3)


def _gc_unary(op, positive=False, offset=0.0):
    def build(rng, shapes):
        data = _rand(rng, shapes[0])
        if positive:
            data = np.abs(data) + 0.5
        a = Tensor(data + offset, requires_grad=True)
        return [a], lambda a: op(a)

    return build


def _gc_concat(rng, shapes):
    parts = [Tensor(_rand(rng, s), requires_grad=True) for s in shapes]
    return parts, lambda *ps: concat(ps, axis=1)


def _gc_reshape(rng, shapes):
    a = Tensor(_rand(rng, shapes[0]), requires_grad=True)
    flat = int(np.prod(shapes[0]))
    return [a], lambda a: reshape(a, (flat,))


def _gc_linear(rng, shapes):
    n, d_in = shapes[0]
    d_out = shapes[1][1]
    x = Tensor(_rand(rng, (n, d_in)), requires_grad=True)
    w = Tensor(_rand(rng, (d_in, d_out)), requires_grad=True)
    b = Tensor(_rand(rng, (d_out,)), requires_grad=True)
    return [x, w, b], lambda x, w, b: linear(x, w, b)


def _gc_conv_transpose(rng, shapes):
    x = Tensor(_rand(rng, shapes[0]), requires_grad=True)
    w = Tensor(_rand(rng, shapes[1]), requires_grad=True)
    return [x, w], lambda x, w: conv_transpose_1d(x, w, stride=2)


def _gc_sinusoidal(rng, shapes):
    p = Tensor(rng.uniform(0.25, 2.5, size=shapes[0]), requires_grad=True)
    return [p], lambda p: sinusoidal_encoding(p, 8)


def _gc_gather(rng, shapes):
    a = Tensor(_rand(rng, shapes[0]), requires_grad=True)
    idx = rng.integers(0, shapes[0][0], size=(shapes[0][0] + 2,))
    return [a], lambda a: gather_rows(a, idx)


GRAD_CHECK_OPS: dict[str, tuple[tuple, Callable]] = {
    "add": (((4, 3),), _gc_binary(add)),
    "sub": (((4, 3),), _gc_binary(sub)),
    "mul": (((4, 3),), _gc_binary(mul)),
    "scalar_ops": (((5,),), _gc_scale),
    "matmul": (((3, 4), (4, 2)), _gc_matmul),
    "concat": (((3, 2), (3, 4)), _gc_concat),
    "reshape": (((2, 6),), _gc_reshape),
    "transpose": (((3, 5),), _gc_unary(transpose)),
    "relu": (((4, 4),), _gc_unary(relu, offset=0.05)),
    "softmax": (((5,),), _gc_unary(lambda a: softmax(a, axis=-1))),
    "max_reduce": (((4, 6),), _gc_unary(lambda a: max_reduce(a, axis=1))),
    "mean_reduce": (((4, 6),), _gc_unary(lambda a: mean_reduce(a, axis=0))),
    "sum_reduce": (((4, 6),), _gc_unary(lambda a: sum_reduce(a, axis=1))),
    "sqrt": (((4, 3),), _gc_unary(sqrt, positive=True)),
    "linear": (((5, 3), (3, 4)), _gc_linear),
    "conv_transpose_1d": (((3, 4), (3, 2, 3)), _gc_conv_transpose),
    "sinusoidal": (((6,),), _gc_sinusoidal),
    "gather_rows": (((5, 3),), _gc_gather),
}


def grad_check(op_name: str, input_shapes=None, tolerance: float = 1e-4,
               h: float = 1e-5, seed: int = 0) -> float:
    """Compare analytic gradients against central finite differences.

    Runs the named catalogue op at 64-bit on random inputs and returns
    max over elements of |analytic - numeric| / max(|numeric|, 1e-6).
    """
    if op_name not in GRAD_CHECK_OPS:
        raise ValueError(f"grad_check: unknown op {op_name!r}; known: {sorted(GRAD_CHECK_OPS)}")
    if tolerance <= 0:
        raise ValueError("grad_check: tolerance must be positive")
    default_shapes, builder = GRAD_CHECK_OPS[op_name]
    shapes = tuple(tuple(s) for s in (input_shapes or default_shapes))
    rng = _gc_rng(seed)
    with precision(np.float64):
        inputs, fn = builder(rng, shapes)
        weights = rng.uniform(0.5, 1.5, size=fn(*inputs).shape)

        def loss_value() -> float:
            return float(np.sum(fn(*inputs).data * weights))

        out = fn(*inputs)
        loss = sum_reduce(mul(out, Tensor(weights)))
        loss.backward()
        worst = 0.0
        for t in inputs:
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                down = loss_value()
                flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                rel = abs(gflat[i] - numeric) / max(abs(numeric), 1e-6)
                worst = max(worst, rel)
    return worst
