"""Dense real tensors with a reverse-mode differentiation tape.

Every differentiable operation is a :class:`Function` subclass.  Calling
``Fn.apply(*tensors, **kw)`` runs ``forward`` on the raw numpy arrays and, if
any input requires a gradient, links the result to a tape node so that
:func:`backward` can later walk the graph in reverse topological order.

Saved activations are stored by value; tensors are never mutated after
construction.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}

_state = threading.local()


class ShapeError(ValueError):
    """Operand extents are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _faults() -> set:
    if not hasattr(_state, "faults"):
        _state.faults = set()
    return _state.faults


@contextlib.contextmanager
def inject_gradient_fault(op_name: str, factor: float = 1.5):
    """Test hook: scale the backward output of ``op_name`` by ``factor``."""
    _faults().add((op_name, factor))
    try:
        yield
    finally:
        _faults().discard((op_name, factor))


def resolve_dtype(dtype) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float64)
    if isinstance(dtype, str):
        try:
            return np.dtype(DTYPES[dtype])
        except KeyError:
            raise ValueError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}") from None
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; only float32/float64")
    return dt


class Tensor:
    """Immutable dense real array, optionally linked to the tape."""

    __slots__ = ("data", "requires_grad", "_node", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None and arr.dtype in (np.float32, np.float64):
            dt = arr.dtype
        else:
            dt = resolve_dtype(dtype)
        arr = np.array(arr, dtype=dt, copy=True, order="C")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._node: Optional[Node] = None
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, node: Optional["Node"]) -> "Tensor":
        t = cls.__new__(cls)
        if not isinstance(arr, np.ndarray):
            arr = np.asarray(arr)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = node is not None
        t._node = node
        t.grad = None
        t.name = None
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, None)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype, requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


TensorLike = Union[Tensor, float, int, np.ndarray]


def tensor(data, dtype=None, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad, name=name)


def zeros(shape, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


def ones(shape, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


def _as_tensor(x: TensorLike, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=dtype), None)


class Node:
    """One tape record: the function that produced a tensor plus its inputs."""

    __slots__ = ("fn", "inputs")

    def __init__(self, fn: "Function", inputs: Tuple[Tensor, ...]):
        self.fn = fn
        self.inputs = inputs


class Function:
    name = "function"

    def __init__(self):
        self.saved: Dict[str, Any] = {}

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls()
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if out.dtype.kind == "f" and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.name} produced non-finite values")
        track = _grad_enabled() and any(t.requires_grad for t in inputs)
        if track:
            # Saved activations must not alias caller-visible buffers.
            return Tensor._wrap(out, Node(fn, inputs))
        return Tensor._wrap(out, None)


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _check_broadcast(op: str, a_shape, b_shape) -> Tuple[int, ...]:
    if a_shape == b_shape:
        return a_shape
    try:
        out = np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a_shape} and {b_shape}") from None
    if out != tuple(a_shape) and out != tuple(b_shape):
        raise ShapeError(
            f"{op}: two-sided broadcast {a_shape} x {b_shape} -> {out} is not allowed; "
            "only scalar or trailing-dimension broadcast of one operand"
        )
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Binary(Function):
    def forward(self, a, b):
        out_shape = _check_broadcast(self.name, a.shape, b.shape)
        self.saved["shapes"] = (a.shape, b.shape)
        out = self._fwd(a, b)
        return np.broadcast_to(out, out_shape) if out.shape != out_shape else out


class Add(_Binary):
    name = "add"

    def _fwd(self, a, b):
        return a + b

    def backward(self, g):
        sa, sb = self.saved["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(_Binary):
    name = "sub"

    def _fwd(self, a, b):
        return a - b

    def backward(self, g):
        sa, sb = self.saved["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


class Mul(_Binary):
    name = "mul"

    def _fwd(self, a, b):
        self.saved["a"], self.saved["b"] = a, b
        return a * b

    def backward(self, g):
        sa, sb = self.saved["shapes"]
        a, b = self.saved["a"], self.saved["b"]
        return _unbroadcast(g * b, sa), _unbroadcast(g * a, sb)


class Div(_Binary):
    name = "div"

    def _fwd(self, a, b):
        self.saved["a"], self.saved["b"] = a, b
        return a / b

    def backward(self, g):
        sa, sb = self.saved["shapes"]
        a, b = self.saved["a"], self.saved["b"]
        return _unbroadcast(g / b, sa), _unbroadcast(-g * a / (b * b), sb)


def _binary(cls, a: TensorLike, b: TensorLike) -> Tensor:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = Tensor(a)
    dtype = a.dtype if isinstance(a, Tensor) else b.dtype
    return cls.apply(_as_tensor(a, dtype), _as_tensor(b, dtype))


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(Add, a, b)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(Sub, a, b)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(Mul, a, b)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    return _binary(Div, a, b)


class Scale(Function):
    name = "scale"

    def forward(self, a, factor=1.0):
        self.saved["factor"] = factor
        return a * a.dtype.type(factor)

    def backward(self, g):
        return (g * g.dtype.type(self.saved["factor"]),)


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=float(factor))


class Exp(Function):
    name = "exp"

    def forward(self, a):
        out = np.exp(a)
        self.saved["out"] = out
        return out

    def backward(self, g):
        return (g * self.saved["out"],)


class Log(Function):
    name = "log"

    def forward(self, a):
        if np.any(a <= 0):
            raise ValueError("log: non-positive input")
        self.saved["a"] = a
        return np.log(a)

    def backward(self, g):
        return (g / self.saved["a"],)


class Sqrt(Function):
    name = "sqrt"

    def forward(self, a):
        if np.any(a < 0):
            raise ValueError("sqrt: negative input")
        out = np.sqrt(a)
        self.saved["out"] = out
        return out

    def backward(self, g):
        return (g * 0.5 / self.saved["out"],)


class Relu(Function):
    name = "relu"

    def forward(self, a):
        self.saved["mask"] = a > 0
        return np.where(a > 0, a, 0).astype(a.dtype)

    def backward(self, g):
        return (g * self.saved["mask"],)


class Abs(Function):
    name = "abs"

    def forward(self, a):
        self.saved["sign"] = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (g * self.saved["sign"],)


class Softplus(Function):
    name = "softplus"

    def forward(self, a):
        self.saved["a"] = a
        return np.logaddexp(a.dtype.type(0), a)

    def backward(self, g):
        a = self.saved["a"]
        return (g * _sigmoid(a),)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


class Gelu(Function):
    """Tanh approximation of GELU."""

    name = "gelu"

    def forward(self, a):
        c = a.dtype.type(_GELU_C)
        inner = c * a * (1 + a.dtype.type(0.044715) * (a * a))
        th = np.tanh(inner)
        self.saved["a"], self.saved["th"] = a, th
        return a.dtype.type(0.5) * a * (1 + th)

    def backward(self, g):
        a, th = self.saved["a"], self.saved["th"]
        c = a.dtype.type(_GELU_C)
        dinner = c * (1 + a.dtype.type(3 * 0.044715) * a * a)
        d = 0.5 * (1 + th) + 0.5 * a * (1 - th * th) * dinner
        return (g * d,)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        out = np.tanh(a)
        self.saved["out"] = out
        return out

    def backward(self, g):
        return (g * (1 - self.saved["out"] ** 2),)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


def sqrt(a: Tensor) -> Tensor:
    return Sqrt.apply(a)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def tabs(a: Tensor) -> Tensor:
    return Abs.apply(a)


def softplus(a: Tensor) -> Tensor:
    return Softplus.apply(a)


def gelu(a: Tensor) -> Tensor:
    return Gelu.apply(a)


def tanh(a: Tensor) -> Tensor:
    return Tanh.apply(a)


def elementwise(op: str, a: TensorLike, b: TensorLike = None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, exp, relu, scale."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "div":
        return div(a, b)
    if op == "scale":
        return scale(a, b)
    unary = {"exp": exp, "relu": relu, "gelu": gelu, "softplus": softplus, "abs": tabs, "tanh": tanh}
    if op in unary:
        return unary[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# reductions and layout
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        axes = _norm_axes(axis, a.ndim)
        self.saved["shape"], self.saved["axes"], self.saved["keep"] = a.shape, axes, keepdims
        return np.asarray(a.sum(axis=axes, keepdims=keepdims))

    def backward(self, g):
        shape, axes, keep = self.saved["shape"], self.saved["axes"], self.saved["keep"]
        if not keep:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape=()):
        self.saved["shape"] = a.shape
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape: {a.shape} -> {shape}: {exc}") from None

    def backward(self, g):
        return (g.reshape(self.saved["shape"]),)


def reshape(a: Tensor, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


class Transpose(Function):
    name = "transpose"

    def forward(self, a, axes=None):
        axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
        self.saved["axes"] = axes
        return np.transpose(a, axes)

    def backward(self, g):
        return (np.transpose(g, np.argsort(self.saved["axes"])),)


def transpose(a: Tensor, axes=None) -> Tensor:
    return Transpose.apply(a, axes=axes)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis=0):
        self.saved["axis"] = axis
        self.saved["sizes"] = [x.shape[axis] for x in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        idx = np.cumsum(self.saved["sizes"])[:-1]
        return tuple(np.split(g, idx, axis=self.saved["axis"]))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


class Slice(Function):
    name = "slice"

    def forward(self, a, axis=0, start=0, stop=None):
        self.saved["shape"], self.saved["axis"] = a.shape, axis
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, stop)
        self.saved["index"] = tuple(index)
        return a[tuple(index)]

    def backward(self, g):
        out = np.zeros(self.saved["shape"], dtype=g.dtype)
        out[self.saved["index"]] = g
        return (out,)


def take_range(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    return Slice.apply(a, axis=axis, start=start, stop=stop)


class Softmax(Function):
    name = "softmax"

    def forward(self, a):
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=-1, keepdims=True)
        self.saved["s"] = s
        return s

    def backward(self, g):
        s = self.saved["s"]
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


def softmax(a: Tensor) -> Tensor:
    return Softmax.apply(a)


# ---------------------------------------------------------------------------
# linear algebra and image ops
# ---------------------------------------------------------------------------


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
        self.saved["a"], self.saved["b"] = a, b
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.saved["a"], self.saved["b"]
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, _as_tensor(b, a.dtype))


def _as_batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [B,C,H,W], got shape {x.shape}")


class Conv2d(Function):
    """Cross-correlation with zero padding; input [C,H,W] or [B,C,H,W]."""

    name = "conv2d"

    def forward(self, x, w, stride=1, padding=0):
        xb, squeeze = _as_batched(x)
        if w.ndim != 4:
            raise ShapeError(f"conv2d: kernel must be [C_out,C_in,kh,kw], got {w.shape}")
        cout, cin, kh, kw = w.shape
        if xb.shape[1] != cin:
            raise ShapeError(f"conv2d: input has {xb.shape[1]} channels, kernel expects {cin}")
        B, _, H, W = xb.shape
        Hp, Wp = H + 2 * padding, W + 2 * padding
        if kh > Hp or kw > Wp:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
        Ho = (Hp - kh) // stride + 1
        Wo = (Wp - kw) // stride + 1
        self.saved.update(stride=stride, padding=padding, squeeze=squeeze, xshape=xb.shape, w=w)
        if kh == 1 and kw == 1 and padding == 0:
            xs = xb[:, :, ::stride, ::stride]
            self.saved["cols"] = xs
            Bs, _, hs, ws = xs.shape
            out = np.matmul(w[:, :, 0, 0], xs.reshape(Bs, cin, hs * ws)).reshape(Bs, cout, hs, ws)
        else:
            xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
            win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
            win = win[:, :, : (Ho - 1) * stride + 1 : stride, : (Wo - 1) * stride + 1 : stride]
            cols = np.ascontiguousarray(win)  # [B,C,Ho,Wo,kh,kw]
            self.saved["cols"] = cols
            out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # [B,Ho,Wo,O]
            out = np.moveaxis(out, 3, 1)
        out = np.ascontiguousarray(out)
        return out[0] if squeeze else out

    def backward(self, g):
        s = self.saved
        w, stride, padding = s["w"], s["stride"], s["padding"]
        gb = g[None] if s["squeeze"] else g
        B, C, H, W = s["xshape"]
        cout, cin, kh, kw = w.shape
        cols = s["cols"]
        if kh == 1 and kw == 1 and padding == 0:
            Ho, Wo = gb.shape[2], gb.shape[3]
            g2 = gb.reshape(B, cout, Ho * Wo)
            gw = np.tensordot(g2, cols.reshape(B, cin, Ho * Wo), axes=([0, 2], [0, 2]))[:, :, None, None]
            gs = np.matmul(w[:, :, 0, 0].T, g2).reshape(B, cin, Ho, Wo)
            if stride == 1:
                gx = gs
            else:
                gx = np.zeros(s["xshape"], dtype=g.dtype)
                gx[:, :, ::stride, ::stride] = gs
        else:
            gw = np.tensordot(gb, cols, axes=([0, 2, 3], [0, 2, 3]))  # [O,C,kh,kw]
            Ho, Wo = gb.shape[2], gb.shape[3]
            gxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.einsum("bohw,oc->bchw", gb, w[:, :, i, j], optimize=True)
                    gxp[:, :, i : i + (Ho - 1) * stride + 1 : stride, j : j + (Wo - 1) * stride + 1 : stride] += contrib
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        if s["squeeze"]:
            gx = gx[0]
        return np.ascontiguousarray(gx), gw


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.  Out-of-image taps read zero (zero padding)."""
    return Conv2d.apply(x, kernel, stride=int(stride), padding=int(padding))


class PixelShuffle(Function):
    """Sub-pixel rearrangement: channel ``c*r*r + i*r + j`` lands at ``(h*r+i, w*r+j)``."""

    name = "pixel_shuffle"

    def forward(self, x, r=1):
        *lead, crr, H, W = x.shape
        if crr % (r * r):
            raise ShapeError(f"pixel_shuffle: {crr} channels not divisible by r^2={r * r}")
        c = crr // (r * r)
        self.saved["r"] = r
        y = x.reshape(*lead, c, r, r, H, W)
        n = len(lead)
        y = y.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
        return y.reshape(*lead, c, H * r, W * r)

    def backward(self, g):
        return (_pixel_unshuffle(g, self.saved["r"]),)


def _pixel_unshuffle(y: np.ndarray, r: int) -> np.ndarray:
    *lead, c, Hr, Wr = y.shape
    H, W = Hr // r, Wr // r
    n = len(lead)
    z = y.reshape(*lead, c, H, r, W, r)
    z = z.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return np.ascontiguousarray(z.reshape(*lead, c * r * r, H, W))


class PixelUnshuffle(Function):
    name = "pixel_unshuffle"

    def forward(self, y, r=1):
        *_, Hr, Wr = y.shape
        if Hr % r or Wr % r:
            raise ShapeError(f"pixel_unshuffle: extents {Hr}x{Wr} not divisible by r={r}")
        self.saved["r"] = r
        return _pixel_unshuffle(y, r)

    def backward(self, g):
        return (PixelShuffle().forward(g, r=self.saved["r"]),)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    return PixelShuffle.apply(x, r=int(r))


def pixel_unshuffle(y: Tensor, r: int) -> Tensor:
    """Inverse scatter of :func:`pixel_shuffle`."""
    return PixelUnshuffle.apply(y, r=int(r))


class UpsampleNearest(Function):
    name = "upsample_nearest"

    def forward(self, x, factor=2):
        self.saved["f"] = factor
        return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)

    def backward(self, g):
        f = self.saved["f"]
        *lead, H, W = g.shape
        return (g.reshape(*lead, H // f, f, W // f, f).sum(axis=(-3, -1)),)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    return UpsampleNearest.apply(x, factor=int(factor))


# ---------------------------------------------------------------------------
# backward traversal
# ---------------------------------------------------------------------------


def topological_order(root: Tensor) -> List[Tensor]:
    """Tape order: every tensor appears after all of its inputs."""
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in reversed(t._node.inputs):
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(loss: Tensor, params: Optional[Union[Mapping[str, Tensor], Iterable[Tensor]]] = None):
    """Reverse-mode sweep from a scalar ``loss``.

    Leaf tensors reached from ``loss`` get ``.grad`` set.  If ``params`` is a
    mapping, returns ``{name: grad}``; if a sequence, returns a list of grads
    in the same order.  Parameters not reachable from the loss get zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {}
    if loss.requires_grad:
        order = topological_order(loss)
        grads[id(loss)] = np.ones(loss.shape, dtype=loss.dtype)
        faults = _faults()
        for t in reversed(order):
            g = grads.get(id(t))
            if g is None or t._node is None:
                continue
            fn = t._node.fn
            in_grads = fn.backward(g)
            for name, factor in faults:
                if fn.name == name:
                    in_grads = tuple(None if x is None else x * factor for x in in_grads)
            for inp, ig in zip(t._node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    ig = _unbroadcast(ig, inp.shape)
                prev = grads.get(id(inp))
                grads[id(inp)] = ig.astype(inp.dtype, copy=False) if prev is None else prev + ig
            if t is not loss:
                grads.pop(id(t), None)
        for t in order:
            if t._node is None:
                t.grad = grads.get(id(t))

    def grad_of(p: Tensor) -> np.ndarray:
        g = grads.get(id(p))
        return np.zeros(p.shape, dtype=p.dtype) if g is None else g

    if params is None:
        return None
    if isinstance(params, Mapping):
        return {k: grad_of(v) for k, v in params.items()}
    return [grad_of(p) for p in params]
