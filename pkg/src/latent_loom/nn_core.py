"""Minimal numeric substrate: tensors with reverse-mode gradients, the layers
used by the model, and the Adam optimizer.

Everything is plain numpy underneath. Gradients come from a dynamically
recorded tape: each operation attaches a closure that scatters the incoming
gradient to its parents. Accumulation is single-threaded and runs in a fixed
topological order, so repeated runs are bitwise identical.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeMismatch",
    "NonScalarLoss",
    "NonFiniteLoss",
    "Tensor",
    "no_grad",
    "dense_forward",
    "conv2d_forward",
    "transposed_conv2d_forward",
    "relu",
    "sigmoid",
    "softmax",
    "exp",
    "log",
    "clip",
    "backward",
    "ParamStore",
    "AdamState",
    "init_adam",
    "adam_step",
    "glorot_fans",
    "init_params",
    "stream_rng",
]


class ShapeMismatch(ValueError):
    """Operand shapes do not conform."""


class NonScalarLoss(ValueError):
    """backward() was asked to differentiate a non-scalar."""


class NonFiniteLoss(FloatingPointError):
    """Loss value is NaN or infinite."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-d value on the tape. Data is immutable by convention once wrapped;
    only ParamStore entries are updated in place (by the optimizer)."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward_fn) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        return out

    # -- elementwise arithmetic --------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other))

    def __add__(self, other):
        o = Tensor._coerce(other)
        data = self.data + o.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if o.requires_grad:
                o._accumulate(_unbroadcast(g, o.shape))

        return Tensor._result(data, (self, o), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other):
        o = Tensor._coerce(other)
        data = self.data * o.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * o.data, self.shape))
            if o.requires_grad:
                o._accumulate(_unbroadcast(g * self.data, o.shape))

        return Tensor._result(data, (self, o), bwd)

    __rmul__ = __mul__

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        data = self.data**exponent

        def bwd(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._result(data, (self,), bwd)

    def __matmul__(self, other):
        o = Tensor._coerce(other)
        if self.data.ndim != 2 or o.data.ndim != 2 or self.shape[1] != o.shape[0]:
            raise ShapeMismatch(f"matmul of {self.shape} with {o.shape}")
        data = self.data @ o.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ o.data.T)
            if o.requires_grad:
                o._accumulate(self.data.T @ g)

        return Tensor._result(data, (self, o), bwd)

    # -- shape and reductions ----------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)

        def bwd(g):
            self._accumulate(g.reshape(old))

        return Tensor._result(data, (self,), bwd)

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).astype(self.dtype))
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, self.shape).astype(self.dtype))

        return Tensor._result(data, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


# -- nonlinear ops ----------------------------------------------------------


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def bwd(g):
        x._accumulate(g * data)

    return Tensor._result(data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def bwd(g):
        x._accumulate(g / x.data)

    return Tensor._result(data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def bwd(g):
        x._accumulate(g * (x.data > 0))

    return Tensor._result(data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        x._accumulate(g * data * (1.0 - data))

    return Tensor._result(data, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        x._accumulate(data * (g - dot))

    return Tensor._result(data, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through the interior only."""
    data = np.clip(x.data, lo, hi)

    def bwd(g):
        x._accumulate(g * ((x.data >= lo) & (x.data <= hi)))

    return Tensor._result(data, (x,), bwd)


# -- layers -------------------------------------------------------------------


def dense_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with b broadcast over the batch."""
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[-1]:
        raise ShapeMismatch(f"dense of x{x.shape}, w{w.shape}, b{b.shape}")
    return x @ w + b


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} too large for input {h}x{w} (pad {pad})")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * kh * kw, oh * ow), (oh, ow)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols6 = cols.reshape(b, c, kh, kw, oh, ow)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols6[:, :, i, j]
    if pad:
        return xp[:, :, pad : pad + h, pad : pad + w]
    return xp


def conv2d_forward(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [b, c_in, h, w] with k [c_out, c_in, kh, kw]."""
    if x.data.ndim != 4 or k.data.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"conv2d of x{x.shape} with k{k.shape}")
    b = x.shape[0]
    c_out, _, kh, kw = k.shape
    cols, (oh, ow) = _im2col(x.data, kh, kw, stride, padding)
    w2 = k.data.reshape(c_out, -1)
    data = np.matmul(w2, cols).reshape(b, c_out, oh, ow)

    def bwd(g):
        g2 = g.reshape(b, c_out, oh * ow)
        if k.requires_grad:
            dk = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            k._accumulate(dk.reshape(k.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            x._accumulate(_col2im(dcols, x.shape, kh, kw, stride, padding))

    return Tensor._result(data, (x, k), bwd)


def transposed_conv2d_forward(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d: x [b, c_in, h, w], k [c_in, c_out, kh, kw].

    Output spatial size is (h - 1) * stride - 2 * padding + kh.
    """
    if x.data.ndim != 4 or k.data.ndim != 4 or x.shape[1] != k.shape[0]:
        raise ShapeMismatch(f"transposed conv2d of x{x.shape} with k{k.shape}")
    b, c_in, h, w = x.shape
    _, c_out, kh, kw = k.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"transposed conv output collapses: {oh}x{ow}")
    w2 = k.data.reshape(c_in, c_out * kh * kw)
    xf = x.data.reshape(b, c_in, h * w)
    cols = np.matmul(w2.T, xf)
    data = _col2im(cols, (b, c_out, oh, ow), kh, kw, stride, padding)

    def bwd(g):
        dcols, _ = _im2col(g, kh, kw, stride, padding)
        if x.requires_grad:
            dx = np.matmul(w2, dcols)
            x._accumulate(dx.reshape(x.shape))
        if k.requires_grad:
            dk = np.matmul(xf, dcols.transpose(0, 2, 1)).sum(axis=0)
            k._accumulate(dk.reshape(k.shape))

    return Tensor._result(data, (x, k), bwd)


# -- parameters and gradients -------------------------------------------------


class ParamStore:
    """Named parameter tensors with deterministic iteration order.

    Names are unique and shapes are frozen at insertion.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, copy=True), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def set_data(self, name: str, value: np.ndarray) -> None:
        t = self._entries[name]
        if t.data.shape != value.shape:
            raise ShapeMismatch(f"{name}: cannot reshape {t.data.shape} to {value.shape}")
        t.data = value.astype(t.data.dtype, copy=True)

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, t in self._entries.items():
            dup.add(name, t.data)
        return dup

    def astype(self, dtype) -> "ParamStore":
        dup = ParamStore()
        for name, t in self._entries.items():
            dup.add(name, t.data.astype(dtype))
        return dup


def backward(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss with respect to every parameter.

    Parameters the loss does not depend on get exact-zero gradients.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss(f"loss is {float(loss.data.reshape(-1)[0])}")

    for _, t in params.items():
        t.grad = None

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    grads: dict[str, np.ndarray] = {}
    for name, t in params.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        t.grad = None
    return grads


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators, mirrored over the parameter store."""

    lr: float = 5e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: ParamStore, lr: float = 5e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, b1=b1, b2=b2, eps=eps)
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> tuple[ParamStore, AdamState]:
    """One Adam update with bias correction; mutates params and state in place."""
    state.t += 1
    c1 = 1.0 - state.b1**state.t
    c2 = 1.0 - state.b2**state.t
    for name, t in params.items():
        g = grads[name]
        if g.shape != t.data.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {t.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.b1
        m += (1.0 - state.b1) * g
        v *= state.b2
        v += (1.0 - state.b2) * np.square(g)
        t.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- initialization -------------------------------------------------------------


def glorot_fans(shape: tuple[int, ...]) -> tuple[int, int]:
    """(fan_in, fan_out) for dense [in, out] and conv [c0, c1, kh, kw] weights."""
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 4:
        rf = int(np.prod(shape[2:]))
        return shape[1] * rf, shape[0] * rf
    n = int(np.prod(shape))
    return n, n


def init_params(spec: list[tuple[str, tuple[int, ...], str]], seed: int, dtype=np.float32) -> ParamStore:
    """Build a ParamStore from (name, shape, kind) entries.

    kind "weight" draws Glorot-uniform values, "bias" is zeros. Deterministic
    for a fixed seed; draw order follows the spec list.
    """
    rng = stream_rng(seed, 0)
    store = ParamStore()
    for name, shape, kind in spec:
        if kind == "bias":
            store.add(name, np.zeros(shape, dtype=dtype))
        elif kind == "weight":
            fan_in, fan_out = glorot_fans(tuple(shape))
            limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
            store.add(name, rng.uniform(-limit, limit, size=shape).astype(dtype))
        else:
            raise ValueError(f"unknown init kind: {kind}")
    return store


def stream_rng(*key: int) -> np.random.Generator:
    """Counter-based random stream keyed by a tuple of integers.

    The same key always yields the same stream, independent of call order,
    which is what makes interrupted training runs resumable bit-for-bit.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))
