"""Dense tensors with reverse-mode automatic differentiation.

A small dynamic-tape autograd engine sized for the convolutional networks in
this package.  Arrays are numpy (float32 by default, float64 for tight
gradient checks); every differentiable op records a backward closure and
``Tensor.backward`` runs one reverse-topological sweep.  Tensors are treated
as immutable values once created; graphs are rebuilt per evaluation, so
distinct graphs can be driven from distinct threads.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

DEFAULT_DTYPE = np.float32
_SUPPORTED_DTYPES = (np.float32, np.float64)

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation of every op output (slow; used by tests)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent with an op's signature."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf while finite checks are on."""


class BackwardError(RuntimeError):
    """Raised when backward is invoked in an invalid state."""


ArrayLike = Union[np.ndarray, float, int, Sequence]


def _as_array(data: ArrayLike, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if np.issubdtype(arr.dtype, np.complexfloating):
        raise TypeError(f"unsupported dtype {arr.dtype} (float32/float64 only)")
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """A dense n-d array plus the tape node that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_swept")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _op: str = "leaf"):
        self.data = _as_array(data, dtype)
        if self.data.dtype not in _SUPPORTED_DTYPES:
            raise TypeError(f"unsupported dtype {self.data.dtype} (float32/float64 only)")
        if _FINITE_CHECKS and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values produced by op '{_op}'")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = _op
        self._swept = False

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    # -- autodiff ----------------------------------------------------------

    def backward(self, seed: Optional[ArrayLike] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor
        with ``requires_grad``.

        ``seed`` is the adjoint of this tensor; it must match this tensor's
        shape.  For scalar outputs it defaults to 1.
        """
        if not self.requires_grad:
            raise BackwardError("backward on a tensor that does not require grad")
        if self._swept:
            raise BackwardError("backward already run on this graph; rebuild the expression")
        self._swept = True
        if seed is None:
            if self.size != 1:
                raise BackwardError(
                    f"backward on non-scalar output of shape {self.shape} needs an explicit seed")
            seed_arr = np.ones(self.shape, dtype=self.data.dtype)
        else:
            seed_arr = _as_array(seed, self.data.dtype)
            if seed_arr.shape != self.shape:
                raise ShapeError(
                    f"backward seed shape {seed_arr.shape} does not match output shape {self.shape}")

        order: list[Tensor] = []
        seen = set()

        def visit(node: "Tensor") -> None:
            stack = [(node, iter(node._parents))]
            seen.add(id(node))
            while stack:
                cur, it = stack[-1]
                advanced = False
                for p in it:
                    if id(p) not in seen and p.requires_grad:
                        seen.add(id(p))
                        stack.append((p, iter(p._parents)))
                        advanced = True
                        break
                if not advanced:
                    order.append(cur)
                    stack.pop()

        visit(self)

        self.grad = seed_arr if self.grad is None else self.grad + seed_arr
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_ensure_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_ensure_tensor(other, self.dtype), scale(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def flatten(self):
        return reshape(self, (self.shape[0], -1)) if self.ndim > 1 else self

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def swish(self):
        return swish(self)


def _ensure_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_dtype(op: str, a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _make(op: str, data: np.ndarray, parents: tuple, backward: Optional[Callable]) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=tuple(p for p in parents if p.requires_grad),
                 _op=op)
    if req:
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True) if g.dtype != t.data.dtype else g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and linear ops --------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _ensure_tensor(b, a.dtype)
    _check_same_dtype("add", a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not broadcastable") from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make("add", data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, float(b))
    b = _ensure_tensor(b, a.dtype)
    _check_same_dtype("mul", a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not broadcastable") from None

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make("mul", data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * a.data.dtype.type(c)

    def backward(g):
        _accum(a, g * a.data.dtype.type(c))

    return _make("scale", data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    _check_same_dtype("matmul", a, b)
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make("matmul", data, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer x @ w + b with x of shape (batch, in)."""
    if b.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine: bias shape {b.shape} does not match weight {w.shape}")
    return add(matmul(x, w), b)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    mask = a.data > 0  # subgradient 0 at the tie, first attaining branch

    def backward(g):
        _accum(a, g * mask)

    return _make("relu", data, (a,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of -|x| never overflows; both branches share it
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    z = _stable_sigmoid(a.data)

    def backward(g):
        _accum(a, g * (z * (1.0 - z)))

    return _make("sigmoid", z, (a,), backward)


def swish(a: Tensor) -> Tensor:
    """swish(x) = x * sigmoid(x)."""
    x = a.data
    s = _stable_sigmoid(x)
    data = x * s

    def backward(g):
        _accum(a, g * (s + x * (s * (1.0 - s))))

    return _make("swish", data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape))

    return _make("sum", data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from None

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make("reshape", data, (a,), backward)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"logsumexp: axis {axis} out of range for shape {a.shape}")
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s

    def backward(g):
        _accum(a, np.expand_dims(g, axis) * soft)

    return _make("logsumexp", data, (a,), backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (g - inner))

    return _make("softmax", s, (a,), backward)


def tmax(a: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max over an axis; returns (values, first-attaining indices).

    The gradient routes to the first index attaining the maximum.
    """
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"max: axis {axis} out of range for shape {a.shape}")
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gg = np.zeros_like(a.data)
        np.put_along_axis(gg, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accum(a, gg)

    return _make("max", data, (a,), backward), idx


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample cross entropy  lse(logits) - logits[label]  for (n, k) logits."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_with_logits: logits must be 2-d, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy_with_logits: labels shape {labels.shape} does not match logits {logits.shape}")
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cross_entropy_with_logits: label out of range [0, {k})")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(s)).squeeze(1)
    rows = np.arange(x.shape[0])
    data = lse - x[rows, labels]
    soft = e / s

    def backward(g):
        gg = soft * g[:, None]
        gg[rows, labels] -= g
        _accum(logits, gg)

    return _make("cross_entropy", data, (logits,), backward)


# -- convolution -------------------------------------------------------------

def conv2d_output_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    """Output size floor((H + 2p - k)/s) + 1 per side."""
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    return oh, ow


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, tuple]:
    """Patch matrix (b, oh*ow, k*k*c) built from k^2 contiguous slice copies
    of the NHWC-padded input (no index gathers)."""
    b, c, h, w = x.shape
    oh, ow = conv2d_output_hw(h, w, k, stride, pad)
    xp = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # NHWC
    if pad:
        xp = np.pad(xp, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((b, oh, ow, k, k, c), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, :, :, u, v, :] = xp[:, u:u + stride * oh:stride, v:v + stride * ow:stride, :]
    return cols.reshape(b, oh * ow, k * k * c), (oh, ow)


def _weight_kkc(w: np.ndarray) -> np.ndarray:
    # (f, c, k, k) -> (k*k*c, f) to match the im2col patch layout
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0]))


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
    b = x.shape[0]
    f, c, k, _ = w.shape
    cols, (oh, ow) = _im2col(x, k, stride, pad)
    out = cols.reshape(b * oh * ow, -1) @ _weight_kkc(w)
    return np.ascontiguousarray(out.reshape(b, oh, ow, f).transpose(0, 3, 1, 2)), cols


def _conv_backward_data(g: np.ndarray, w: np.ndarray, x_hw: tuple, stride: int, pad: int) -> np.ndarray:
    """Gradient w.r.t. conv input: one GEMM into patch space, then col2im as
    k^2 contiguous shift-adds on an NHWC accumulator."""
    b, f, oh, ow = g.shape
    _, c, k, _ = w.shape
    h, wdt = x_hw
    hp, wp = h + 2 * pad, wdt + 2 * pad
    gmat = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, f)
    dcols = (gmat @ _weight_kkc(w).T).reshape(b, oh, ow, k, k, c)
    dxp = np.zeros((b, hp, wp, c), dtype=g.dtype)
    for u in range(k):
        for v in range(k):
            dxp[:, u:u + stride * oh:stride, v:v + stride * ow:stride, :] += dcols[:, :, :, u, v, :]
    dxp = dxp.transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:pad + h, pad:pad + wdt]
    return np.ascontiguousarray(dxp)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution (cross-correlation) over (batch, c, h, w) input.

    Weight is (filters, c, k, k), bias (filters,).  Output spatial size is
    floor((H + 2*pad - k)/stride) + 1.  Implemented with im2col and GEMM; the
    input gradient is another GEMM convolution (no scatter), the filter
    gradient reuses the cached im2col matrix.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be (b, c, h, w), got {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: weight must be (f, c, k, k), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != weight channels {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} filters")
    _check_same_dtype("conv2d", x, w)
    f, c, k, _ = w.shape
    h, wdt = x.shape[2], x.shape[3]
    if h + 2 * pad < k or wdt + 2 * pad < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input ({h}+2*{pad}, {wdt}+2*{pad})")

    data, cols = _conv_forward(x.data, w.data, stride, pad)
    data += b.data[None, :, None, None]
    # the im2col matrix is only needed for the filter gradient
    cols_saved = cols if w.requires_grad else None

    def backward(g):
        bsz, _, oh, ow = g.shape
        if w.requires_grad:
            gmat = g.transpose(0, 2, 3, 1).reshape(-1, f)
            dw = gmat.T @ cols_saved.reshape(bsz * oh * ow, -1)  # (f, k*k*c)
            _accum(w, np.ascontiguousarray(
                dw.reshape(f, k, k, c).transpose(0, 3, 1, 2)))
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accum(x, _conv_backward_data(g, w.data, (h, wdt), stride, pad))

    return _make("conv2d", data, (x, w, b), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 (even spatial dims required)."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2: input must be (b, c, 2i, 2j), got {x.shape}")
    b, c, h, w = x.shape
    r = reshape(x, (b, c, h // 2, 2, w // 2, 2))
    m, _ = tmax(r, axis=3)  # (b, c, h/2, w/2, 2)
    m, _ = tmax(m, axis=4)
    return m


def gradients(output: Tensor, wrt: Sequence[Tensor], seed: Optional[ArrayLike] = None) -> list[np.ndarray]:
    """Run backward from ``output`` and collect gradients for ``wrt``."""
    for t in wrt:
        t.zero_grad()
    output.backward(seed)
    out = []
    for t in wrt:
        out.append(np.zeros_like(t.data) if t.grad is None else t.grad)
    return out
