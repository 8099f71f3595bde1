"""N-d tensors with reverse-mode automatic differentiation.

A Tensor wraps a dense numpy buffer. Every op records a vjp closure on the
produced tensor; backward() walks the recorded tape in reverse topological
order. Two precision modes exist (float64 for oracle/gradient tests,
float32 for faster training); ops never mix dtypes silently.

Forward ops validate that their outputs are finite -- a NaN/Inf is raised
as NumericError at the op that produced it, not later.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _fft
from . import _kernels as K
from .errors import (
    ContractError,
    DomainError,
    NumericError,
    PermutationError,
    ShapeError,
    UnsupportedSizeError,
)

if K.HAVE_NUMBA:
    def _ew(kernel, x, *extra):
        xc = np.ascontiguousarray(x)
        res = kernel(xc.reshape(-1), *[np.ascontiguousarray(e).reshape(-1) for e in extra])
        if isinstance(res, tuple):
            return tuple(r.reshape(x.shape) for r in res)
        return res.reshape(x.shape)

    _softplus_fwd = lambda x: _ew(K.softplus_fwd, x)
    _softplus_bwd = lambda g, x: _ew(K.softplus_bwd, g, x)
    _silu_fwd = lambda x: _ew(K.silu_fwd, x)
    _silu_bwd = lambda g, x, s: _ew(K.silu_bwd, g, x, s)
    _gelu_fwd = lambda x: _ew(K.gelu_fwd, x)
    _gelu_bwd = lambda g, x, t: _ew(K.gelu_bwd, g, x, t)
    _ln_fwd = K.layer_norm_fwd
    _ln_bwd = K.layer_norm_bwd
else:  # pragma: no cover - stripped installs only
    _softplus_fwd = K.softplus_fwd_np
    _softplus_bwd = K.softplus_bwd_np
    _silu_fwd = K.silu_fwd_np
    _silu_bwd = K.silu_bwd_np
    _gelu_fwd = K.gelu_fwd_np
    _gelu_bwd = K.gelu_bwd_np
    _ln_fwd = K.layer_norm_fwd_np
    _ln_bwd = K.layer_norm_bwd_np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(data: np.ndarray, op: str) -> None:
    # cheap screen first: a NaN/Inf anywhere poisons the sum
    with np.errstate(over="ignore", invalid="ignore"):
        if data.size and not np.isfinite(np.sum(data)):
            if not np.isfinite(data).all():
                raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._op = "leaf"

    # -- construction ------------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...],
                 vjp: Callable | None, op: str, check: bool = True) -> "Tensor":
        if check:
            _check_finite(data, op)
        t = Tensor.__new__(Tensor)
        t.data = data
        t.grad = None
        t._op = op
        if _GRAD_ENABLED and vjp is not None and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._vjp = vjp
        else:
            t.requires_grad = False
            t._parents = ()
            t._vjp = None
        return t

    # -- basic properties --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _bad_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op!r})"

    # -- autodiff ----------------------------------------------------------

    def backward(self, free_graph: bool = True) -> None:
        """Accumulate gradients of this scalar into all requires_grad leaves."""
        if self.size != 1:
            raise ContractError(f"backward() requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            contribs = node._vjp(g)
            for parent, pg in zip(node._parents, contribs):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                # never mutate in place: vjp outputs may alias upstream buffers
                grads[id(parent)] = pg if prev is None else prev + pg
            if free_graph:
                node._parents = ()
                node._vjp = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    # -- method sugar --------------------------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)


def _bad_item(t: Tensor):
    raise ContractError(f"item() requires a single-element tensor, got shape {t.shape}")


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_same_dtype(a, b, "add")
    _broadcast_check(a, b, "add")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), vjp, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_same_dtype(a, b, "sub")
    _broadcast_check(a, b, "sub")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), vjp, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_same_dtype(a, b, "mul")
    _broadcast_check(a, b, "mul")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(out, (a, b), vjp, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_same_dtype(a, b, "div")
    _broadcast_check(a, b, "div")
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        return (_unbroadcast(ga, a.shape),
                _unbroadcast(-ga * out, b.shape))

    return Tensor._from_op(out, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def _fast_pow(x: np.ndarray, p: float) -> np.ndarray:
    # np.power on float64 is an order of magnitude slower than these
    if p == 2.0:
        return x * x
    if p == 1.0:
        return x.copy()
    if p == 0.5:
        return np.sqrt(x)
    if p == -0.5:
        return 1.0 / np.sqrt(x)
    if p == -1.0:
        return 1.0 / x
    if p == 3.0:
        return x * x * x
    return x ** p


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = _fast_pow(a.data, p)

    def vjp(g):
        return (g * p * _fast_pow(a.data, p - 1.0),)

    return Tensor._from_op(out, (a,), vjp, "pow")


# -- nonlinearities -----------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")
    out = np.log(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g / a.data,), "log")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    out, s = _silu_fwd(a.data)

    def vjp(g):
        return (_silu_bwd(g, a.data, s),)

    return Tensor._from_op(out, (a,), vjp, "silu")


def softplus(a: Tensor) -> Tensor:
    out = _softplus_fwd(a.data)

    def vjp(g):
        return (_softplus_bwd(g, a.data),)

    return Tensor._from_op(out, (a,), vjp, "softplus")


def gelu(a: Tensor) -> Tensor:
    out, t = _gelu_fwd(a.data)

    def vjp(g):
        return (_gelu_bwd(g, a.data, t),)

    return Tensor._from_op(out, (a,), vjp, "gelu")


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data)
    if lo is not None:
        mask = mask * (a.data >= lo)
    if hi is not None:
        mask = mask * (a.data <= hi)

    def vjp(g):
        return (g * mask,)

    return Tensor._from_op(out, (a,), vjp, "clamp")


# -- reductions ----------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gk, a.shape),)

    return Tensor._from_op(np.asarray(out), (a,), vjp, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gk, a.shape) / count,)

    return Tensor._from_op(np.asarray(out), (a,), vjp, "mean")


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max over axes; gradient routes to the first maximal element."""
    axes = _norm_axes(axis, a.ndim)
    out = a.data.max(axis=axes, keepdims=keepdims)

    n_red = len(axes)
    tail = tuple(range(a.ndim - n_red, a.ndim))
    moved = np.moveaxis(a.data, axes, tail)
    lead_shape = moved.shape[: a.ndim - n_red]
    flat = moved.reshape(lead_shape + (-1,))
    argmax = np.argmax(flat, axis=-1)

    def vjp(g):
        gk = np.asarray(g) if keepdims else np.expand_dims(np.asarray(g), axes)
        glead = np.moveaxis(gk, axes, tail).reshape(lead_shape)
        gflat = np.zeros(flat.shape, dtype=a.data.dtype)
        np.put_along_axis(gflat, argmax[..., None], glead[..., None], axis=-1)
        ga = np.moveaxis(gflat.reshape(moved.shape), tail, axes)
        return (ga,)

    return Tensor._from_op(np.asarray(out), (a,), vjp, "max")


# -- shape ops -------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(out, (a,), vjp, "reshape", check=False)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inv = np.argsort(axes)
    out = a.data.transpose(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return Tensor._from_op(out, (a,), vjp, "transpose", check=False)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    axis = axis % ts[0].ndim
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            g[(slice(None),) * axis + (slice(offsets[i], offsets[i + 1]),)]
            for i in range(len(ts))
        )

    return Tensor._from_op(out, tuple(ts), vjp, "concat", check=False)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = axis % a.ndim
    sl = (slice(None),) * axis + (slice(start, start + length),)
    out = a.data[sl].copy()

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return Tensor._from_op(out, (a,), vjp, "narrow", check=False)


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    axis = axis % a.ndim
    total = a.shape[axis]
    if total % sections != 0:
        raise ShapeError(f"split: axis size {total} not divisible into {sections} parts")
    step = total // sections
    return [narrow(a, axis, i * step, step) for i in range(sections)]


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    axis = axis % a.ndim
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("index_select: indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(f"index_select: index out of range for axis size {a.shape[axis]}")
    out = np.take(a.data, idx, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None),) * axis + (idx,), g)
        return (ga,)

    return Tensor._from_op(out, (a,), vjp, "index_select", check=False)


# -- matmul / conv ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(b, Tensor):
        b = _coerce(b, a)
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        if b.ndim == 2:
            # [..,M,K] @ [K,N]: one flat GEMM beats batched strided matmul
            g2 = np.ascontiguousarray(g).reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = np.ascontiguousarray(a.data).reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp, "matmul")


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation, NCHW layout, zero padding."""
    _check_same_dtype(x, w, "conv2d")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input/weight, got {x.shape} and {w.shape}")
    bsz, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {x.shape} vs weight {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wid + 2 * pw - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]                                   # B,C,Ho,Wo,kh,kw
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    y = (col @ wmat.T).reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, cout)
        gw = (g2.T @ col).reshape(cout, cin, kh, kw)
        dcol = (g2 @ wmat).reshape(bsz, ho, wo, cin, kh, kw)
        # channels-last accumulation keeps the inner stride contiguous
        gxp = np.zeros((bsz, h + 2 * ph, wid + 2 * pw, cin), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += dcol[:, :, :, :, i, j]
        gx = np.ascontiguousarray(gxp[:, ph:ph + h, pw:pw + wid, :].transpose(0, 3, 1, 2))
        return gx, gw

    return Tensor._from_op(np.ascontiguousarray(y), (x, w), vjp, "conv2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling for NCHW tensors."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x: need 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op(out, (x,), vjp, "upsample2x", check=False)


# -- normalization -----------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Zero-mean/unit-variance over one axis, then per-channel affine."""
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} "
            f"do not match channel dim {c} of {x.shape}")
    moved = np.moveaxis(x.data, axis, -1)
    mshape = moved.shape
    x2 = np.ascontiguousarray(moved).reshape(-1, c)
    out2, xh2, inv = _ln_fwd(x2, gamma.data, beta.data, eps)
    out = np.ascontiguousarray(np.moveaxis(out2.reshape(mshape), -1, axis))

    def vjp(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, c)
        gx2, ggamma, gbeta = _ln_bwd(g2, xh2, inv, gamma.data)
        gx = np.ascontiguousarray(np.moveaxis(gx2.reshape(mshape), -1, axis))
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), vjp, "layer_norm")


# -- token permutations ------------------------------------------------------------


def _validate_perm(idx: np.ndarray, length: int) -> None:
    if idx.shape[-1] != length:
        raise PermutationError(f"permutation length {idx.shape[-1]} != sequence length {length}")
    flat = idx.reshape(-1, length)
    for row in flat:
        if row.min() < 0 or row.max() >= length:
            raise PermutationError("index out of range for a permutation of length %d" % length)
        if not np.all(np.bincount(row, minlength=length) == 1):
            raise PermutationError("index list is not a permutation (duplicate entry)")


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    if perm.ndim == 1:
        inv[perm] = np.arange(perm.size, dtype=np.int64)
    else:
        ar = np.arange(perm.shape[-1], dtype=np.int64)
        for i in range(perm.shape[0]):
            inv[i, perm[i]] = ar
    return inv


def gather_tokens(x: Tensor, perm) -> Tensor:
    """out[b,i,c] = x[b, perm[i], c]; perm may be [L] or per-batch [B,L]."""
    if x.ndim != 3:
        raise ShapeError(f"gather_tokens: need [B,L,C] input, got {x.shape}")
    idx = np.asarray(perm, dtype=np.int64)
    if idx.ndim not in (1, 2):
        raise PermutationError(f"permutation must be 1-D or 2-D, got ndim {idx.ndim}")
    if idx.ndim == 2 and idx.shape[0] != x.shape[0]:
        raise PermutationError(f"per-batch permutation rows {idx.shape[0]} != batch {x.shape[0]}")
    _validate_perm(idx, x.shape[1])
    inv = invert_permutation(idx)

    b, l, c = x.shape
    if idx.ndim == 1:
        out = x.data[:, idx, :]

        def vjp(g):
            return (g[:, inv, :],)
    else:
        # flat row indexing beats take_along_axis on [B,L,C] blocks
        offs = (np.arange(b, dtype=np.int64) * l)[:, None]
        flat_idx = (idx + offs).reshape(-1)
        flat_inv = (inv + offs).reshape(-1)
        out = np.ascontiguousarray(x.data).reshape(b * l, c)[flat_idx].reshape(b, l, c)

        def vjp(g):
            return (np.ascontiguousarray(g).reshape(b * l, c)[flat_inv].reshape(b, l, c),)

    return Tensor._from_op(out, (x,), vjp, "gather_tokens", check=False)


def scatter_tokens(x: Tensor, inverse_perm) -> Tensor:
    """Undo gather_tokens: scatter_tokens(gather_tokens(x, p), invert_permutation(p)) == x."""
    return gather_tokens(x, inverse_perm)


# -- FFT ----------------------------------------------------------------------------


class ComplexPair(NamedTuple):
    re: Tensor
    im: Tensor


def _complex_dtype(dtype) -> type:
    return np.complex64 if np.dtype(dtype) == np.dtype(np.float32) else np.complex128


def _fft2_pair(re: Tensor, im: Tensor, inverse: bool) -> ComplexPair:
    """Full-spectrum complex 2-D DFT as two tape ops sharing one kernel call."""
    h, w = re.shape[-2], re.shape[-1]
    if not (_fft.is_power_of_two(h) and _fft.is_power_of_two(w)):
        raise UnsupportedSizeError(f"fft2: spatial dims {(h, w)} must be powers of two")
    cdt = _complex_dtype(re.data.dtype)
    z = (re.data + 1j * im.data).astype(cdt)
    f = _fft.fft2(z, inverse=inverse, normalize=inverse)
    rdt = re.data.dtype

    def _adjoint(gre, gim):
        g = (gre + 1j * gim).astype(cdt)
        if inverse:
            gz = _fft.fft2(g, inverse=False, normalize=True)
        else:
            gz = _fft.fft2(g, inverse=True, normalize=False)
        return gz.real.astype(rdt), gz.imag.astype(rdt)

    def vjp_re(g):
        return _adjoint(g, np.zeros_like(g))

    def vjp_im(g):
        return _adjoint(np.zeros_like(g), g)

    name = "ifft2" if inverse else "fft2"
    out_re = Tensor._from_op(np.ascontiguousarray(f.real).astype(rdt), (re, im), vjp_re, name + "_re")
    out_im = Tensor._from_op(np.ascontiguousarray(f.imag).astype(rdt), (re, im), vjp_im, name + "_im")
    return ComplexPair(out_re, out_im)


def fft2_real(x: Tensor) -> ComplexPair:
    """Real 2-D DFT; returns real/imag planes over the H x (W/2+1) half spectrum."""
    h, w = x.shape[-2], x.shape[-1]
    if not (_fft.is_power_of_two(h) and _fft.is_power_of_two(w)) or w < 2:
        raise UnsupportedSizeError(f"fft2_real: spatial dims {(h, w)} must be powers of two (W >= 2)")
    zero = Tensor(np.zeros_like(x.data), dtype=x.data.dtype.type)
    full = _fft2_pair(x, zero, inverse=False)
    k = w // 2 + 1
    return ComplexPair(narrow(full.re, -1, 0, k), narrow(full.im, -1, 0, k))


def ifft2_real(f: ComplexPair) -> Tensor:
    """Inverse of fft2_real: Hermitian-extend the half spectrum, inverse DFT, real part."""
    re, im = f
    h, k = re.shape[-2], re.shape[-1]
    w = 2 * (k - 1)
    if not (_fft.is_power_of_two(h) and _fft.is_power_of_two(w)) or w < 2:
        raise UnsupportedSizeError(f"ifft2_real: implied dims {(h, w)} must be powers of two")
    if k > 2:
        rows = np.concatenate([[0], np.arange(h - 1, 0, -1)])   # u -> (H-u) % H
        cols = np.arange(k - 2, 0, -1)                          # reversed 1..K-2
        re_ext = index_select(index_select(re, -2, rows), -1, cols)
        im_ext = neg(index_select(index_select(im, -2, rows), -1, cols))
        full_re = concat([re, re_ext], axis=-1)
        full_im = concat([im, im_ext], axis=-1)
    else:
        full_re, full_im = re, im
    out = _fft2_pair(full_re, full_im, inverse=True)
    return out.re


# -- misc helpers --------------------------------------------------------------------


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, dtype=dtype)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad, dtype=dtype)


def reflect_pad2d(x: Tensor, pad: int) -> Tensor:
    """Reflect-pad (edge not repeated) the last two axes of an NCHW tensor."""
    h, w = x.shape[-2], x.shape[-1]
    if pad >= h or pad >= w:
        raise ShapeError(f"reflect_pad2d: pad {pad} too large for {x.shape}")
    rows = np.concatenate([np.arange(pad, 0, -1), np.arange(h), np.arange(h - 2, h - 2 - pad, -1)])
    cols = np.concatenate([np.arange(pad, 0, -1), np.arange(w), np.arange(w - 2, w - 2 - pad, -1)])
    return index_select(index_select(x, -2, rows), -1, cols)
