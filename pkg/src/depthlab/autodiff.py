"""Dense float64 tensors with reverse-mode automatic differentiation.

A small eager engine: every operation allocates a new Tensor that records
its parent tensors plus a closure mapping the upstream adjoint to parent
adjoints. ``backward()`` on a scalar output walks the graph in reverse
topological order and accumulates gradients into every grad-enabled tensor
reachable from the output. Repeated backward calls accumulate; use
``zero_grad`` between steps.

Values are conceptually immutable once created (gradients and explicit
leaf reassignment via ``Tensor.assign`` are the exceptions); a graph
instance belongs to a single thread. Reductions use a fixed summation
order, so reruns are bit-identical.
"""

from __future__ import annotations

import builtins
import math

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Dense row-major float64 array plus an optional gradient record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bw = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], bw) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._bw = bw
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- leaf mutation (optimizer use only) -------------------------------------

    def assign(self, new_data) -> None:
        """Replace the value of a leaf tensor (between graph builds)."""
        if self._parents:
            raise ValueError("assign is only valid on leaf tensors")
        arr = np.asarray(new_data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ValueError(f"assign shape {arr.shape} != tensor shape {self.data.shape}")
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ---------------------------------------------------------

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

    # -- method sugar ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def median(self, axis=None):
        return tmedian(self, axis=axis)

    def abs(self):
        return tabs(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        if self.ndim != 2:
            raise ValueError(f".T needs a 2-d tensor, shape is {self.shape}")
        return permute(self, (1, 0))

    # -- backward ------------------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad of every grad-enabled tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, shape is {self.shape}")
        order = _topological_order(self)
        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._bw is None:
                continue
            for parent, pg in zip(node._parents, node._bw(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    """Post-order of the DAG below root; independent of construction interleaving."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# -- elementwise binary ops ------------------------------------------------------
# Broadcast rule: equal shapes, or one side is a single element.


def _check_binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"{opname}: shapes {a.shape} and {b.shape} are not equal and neither is a scalar")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)  # the only mismatch allowed is scalar-vs-tensor


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "add")

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return Tensor._from_op(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "sub")

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return Tensor._from_op(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return (ga, gb)

    return Tensor._from_op(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes(a, b, "div")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g / bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * ad / (bd * bd), b.shape) if b.requires_grad else None
        return (ga, gb)

    return Tensor._from_op(ad / bd, (a, b), bw)


# -- elementwise unary ops ---------------------------------------------------------


def _unary(a, fwd, dfn) -> Tensor:
    a = as_tensor(a)
    out_data = fwd(a.data)

    def bw(g):
        return (g * dfn(a.data, out_data),)

    return Tensor._from_op(out_data, (a,), bw)


def texp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y)


def tlog(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def tabs(a) -> Tensor:
    # subgradient at 0 is 0 (np.sign(0) == 0)
    return _unary(a, np.abs, lambda x, y: np.sign(x))


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, fwd, lambda x, y: y * (1.0 - y))


def relu(a) -> Tensor:
    # derivative at 0 defined as 0
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def gelu(a) -> Tensor:
    def fwd(x):
        return 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))

    def dfn(x, y):
        return 0.5 * (1.0 + _erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI

    return _unary(a, fwd, dfn)


def tsin(a) -> Tensor:
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def tcos(a) -> Tensor:
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def tsqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


# -- matmul ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-d operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return (ga, gb)

    return Tensor._from_op(ad @ bd, (a, b), bw)


# -- reductions --------------------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    if len(set(axes)) != len(axes):
        raise ValueError(f"duplicate reduction axes {axis}")
    return axes


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _check_nonempty(t: Tensor, axes: tuple[int, ...], opname: str) -> None:
    n = 1
    for a in axes:
        n *= t.shape[a]
    if n == 0:
        raise ValueError(f"{opname}: empty reduction over axes {axes} of shape {t.shape}")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    _check_nonempty(a, axes, "sum")
    out_data = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        return (_expand_reduced(np.asarray(g), a.shape, axes, keepdims).copy(),)

    return Tensor._from_op(out_data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    _check_nonempty(a, axes, "mean")
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out_data = np.sum(a.data, axis=axes, keepdims=keepdims) / count

    def bw(g):
        return (_expand_reduced(np.asarray(g) / count, a.shape, axes, keepdims).copy(),)

    return Tensor._from_op(out_data, (a,), bw)


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient routes to the first maximal element in scan order."""
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    _check_nonempty(a, axes, "max")
    moved = np.moveaxis(a.data, axes, range(a.ndim - len(axes), a.ndim))
    lead_shape = moved.shape[: a.ndim - len(axes)]
    flat = moved.reshape(lead_shape + (-1,))
    idx = np.argmax(flat, axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        for ax in sorted(axes):
            out_data = np.expand_dims(out_data, ax)

    def bw(g):
        gmoved = np.zeros_like(flat)
        gval = np.asarray(g)
        if keepdims:
            gval = gval.reshape(lead_shape)
        np.put_along_axis(gmoved, idx[..., None], gval[..., None], axis=-1)
        back = np.moveaxis(gmoved.reshape(moved.shape), range(a.ndim - len(axes), a.ndim), axes)
        return (back,)

    return Tensor._from_op(out_data, (a,), bw)


def tmedian(a, axis=None) -> Tensor:
    """Median with the lower-middle rule for even counts. Not differentiable:
    the result is a fresh constant tensor outside the gradient graph."""
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    _check_nonempty(a, axes, "median")
    moved = np.moveaxis(a.data, axes, range(a.ndim - len(axes), a.ndim))
    lead_shape = moved.shape[: a.ndim - len(axes)]
    flat = np.sort(moved.reshape(lead_shape + (-1,)), axis=-1)
    n = flat.shape[-1]
    return Tensor(flat[..., (n - 1) // 2])


def lower_median(values: np.ndarray) -> float:
    """Median of a flat array under the lower-middle rule for even counts."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if flat.size == 0:
        raise ValueError("median of an empty array")
    return float(flat[(flat.size - 1) // 2])


# -- softmax / layer norm ----------------------------------------------------------------


def softmax(a) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=-1, keepdims=True)

    def bw(g):
        dot = np.sum(g * out_data, axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor._from_op(out_data, (a,), bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift.

    gain and bias are 1-d with the size of the last axis.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data

    def bw(g):
        lead_axes = tuple(range(g.ndim - 1))
        ggain = np.sum(g * xhat, axis=lead_axes) if gain.requires_grad else None
        gbias = np.sum(g, axis=lead_axes) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            m1 = np.mean(gxhat, axis=-1, keepdims=True)
            m2 = np.mean(gxhat * xhat, axis=-1, keepdims=True)
            gx = inv_std * (gxhat - m1 - xhat * m2)
        return (gx, ggain, gbias)

    return Tensor._from_op(out_data, (x, gain, bias), bw)


# -- structural ops --------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(out_data, (a,), bw)


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        grads = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(start), int(stop))
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                grads.append(None)
        return tuple(grads)

    return Tensor._from_op(out_data, tuple(tensors), bw)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bw(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return Tensor._from_op(np.ascontiguousarray(a.data[sl]), (a,), bw)


def broadcast_to(a, shape) -> Tensor:
    """Materialized broadcast; backward sums over the broadcast axes."""
    a = as_tensor(a)
    shape = tuple(shape)
    out_data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    added = len(shape) - a.ndim
    if added < 0:
        raise ValueError(f"cannot broadcast {a.shape} to smaller rank {shape}")
    expanded = (1,) * added + a.shape
    summed_axes = tuple(
        i for i, (src, dst) in enumerate(zip(expanded, shape)) if src == 1 and dst != 1
    )
    for src, dst in zip(expanded, shape):
        if src != dst and src != 1:
            raise ValueError(f"cannot broadcast {a.shape} to {shape}")

    def bw(g):
        gg = np.sum(g, axis=summed_axes, keepdims=True) if summed_axes else g
        return (gg.reshape(a.shape),)

    return Tensor._from_op(out_data, (a,), bw)


def mask_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True by a constant; their gradient is cut."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ValueError(f"mask shape {mask.shape} != tensor shape {a.shape}")
    out_data = np.where(mask, value, a.data)
    keep = ~mask

    def bw(g):
        return (g * keep,)

    return Tensor._from_op(out_data, (a,), bw)


def upsample_nearest2x(a) -> Tensor:
    """Nearest-neighbor 2x upsampling of the trailing two axes."""
    a = as_tensor(a)
    out_data = np.repeat(np.repeat(a.data, 2, axis=-2), 2, axis=-1)

    def bw(g):
        lead = g.shape[:-2]
        h2, w2 = g.shape[-2], g.shape[-1]
        return (g.reshape(lead + (h2 // 2, 2, w2 // 2, 2)).sum(axis=(-3, -1)),)

    return Tensor._from_op(out_data, (a,), bw)


# -- convolutions -------------------------------------------------------------------------------
# Forward accumulates one kernel tap at a time, in (input-channel, kernel-row,
# kernel-column) order, vectorized over output pixels. Each output element
# therefore sees the exact left-to-right float64 addition chain a naive
# per-pixel loop would produce, which keeps the forward bit-identical to a
# plain loop implementation.


def _conv_geometry(hp: int, wp: int, kh: int, kw: int, sh: int, sw: int) -> tuple[int, int]:
    if kh > hp or kw > wp:
        raise ValueError(f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})")
    return (hp - kh) // sh + 1, (wp - kw) // sw + 1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, kernel, stride=1, padding=0) -> Tensor:
    """Cross-correlation of a (C_in, H, W) input with a (C_out, C_in, kh, kw) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError(f"conv2d needs (C,H,W) input and (Co,Ci,kh,kw) kernel, got {x.shape} and {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    hp, wp = xp.shape[1], xp.shape[2]
    ho, wo = _conv_geometry(hp, wp, kh, kw, sh, sw)
    kd = kernel.data
    out = np.zeros((c_out, ho, wo))
    for ci in range(c_in):
        for i in range(kh):
            for j in range(kw):
                win = xp[ci, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]
                out += kd[:, ci, i, j][:, None, None] * win[None, :, :]

    def bw(g):
        # gradients need no fixed accumulation order; contract whole channel
        # blocks per tap for speed
        gx = None
        gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    acc = np.tensordot(kd[:, :, i, j], g, axes=(0, 0))
                    gxp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += acc
            gx = np.ascontiguousarray(gxp[:, ph : ph + x.shape[1], pw : pw + x.shape[2]])
        if kernel.requires_grad:
            gk = np.empty_like(kd)
            for i in range(kh):
                for j in range(kw):
                    win = xp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]
                    gk[:, :, i, j] = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        return (gx, gk)

    return Tensor._from_op(out, (x, kernel), bw)


def depthwise_conv2d(x, kernel, stride=1, padding=0) -> Tensor:
    """Per-channel spatial convolution: (C, H, W) input, (C, kh, kw) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ValueError(f"depthwise_conv2d needs (C,H,W) input and (C,kh,kw) kernel, got {x.shape} and {kernel.shape}")
    c, kh, kw = kernel.shape
    if x.shape[0] != c:
        raise ValueError(f"depthwise_conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"depthwise_conv2d kernel extents must be odd, got {kh}x{kw}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    hp, wp = xp.shape[1], xp.shape[2]
    ho, wo = _conv_geometry(hp, wp, kh, kw, sh, sw)
    kd = kernel.data
    out = np.zeros((c, ho, wo))
    for i in range(kh):
        for j in range(kw):
            win = xp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]
            out += kd[:, i, j][:, None, None] * win

    def bw(g):
        gx = None
        gk = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += kd[:, i, j][:, None, None] * g
            gx = np.ascontiguousarray(gxp[:, ph : ph + x.shape[1], pw : pw + x.shape[2]])
        if kernel.requires_grad:
            gk = np.zeros_like(kd)
            for i in range(kh):
                for j in range(kw):
                    win = xp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]
                    gk[:, i, j] = np.sum(g * win, axis=(1, 2))
        return (gx, gk)

    return Tensor._from_op(out, (x, kernel), bw)


# -- bilinear sampling --------------------------------------------------------------------------


def bilinear_sample(source, grid) -> tuple[Tensor, Tensor]:
    """Sample a (C, H, W) source at continuous pixel coordinates.

    grid is (2, Ho, Wo): grid[0] holds x (column) and grid[1] y (row)
    coordinates in source pixel units, integer coordinates addressing pixel
    centers. Samples outside [0, W-1] x [0, H-1] produce value 0 and
    validity 0. Gradients flow to both the source values and the grid.
    Returns (sampled (C, Ho, Wo), validity (Ho, Wo)).

    Coordinates within 1e-9 px of the integer lattice snap to it before
    interpolation, so algebraically-identity warps survive float rounding
    bit-exactly; the band is far below any finite-difference step.
    """
    source, grid = as_tensor(source), as_tensor(grid)
    if source.ndim != 3 or grid.ndim != 3 or grid.shape[0] != 2:
        raise ValueError(f"bilinear_sample needs (C,H,W) source and (2,Ho,Wo) grid, got {source.shape} and {grid.shape}")
    c, h, w = source.shape
    u = grid.data[0]
    v = grid.data[1]
    u_round = np.round(u)
    v_round = np.round(v)
    u = np.where(np.abs(u - u_round) <= 1e-9, u_round, u)
    v = np.where(np.abs(v - v_round) <= 1e-9, v_round, v)
    valid = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)

    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    wx = u - x0
    wy = v - y0

    def inb(yy, xx):
        return (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)

    corners = []
    for yy, xx, wgt in (
        (y0, x0, (1.0 - wx) * (1.0 - wy)),
        (y0, x1, wx * (1.0 - wy)),
        (y1, x0, (1.0 - wx) * wy),
        (y1, x1, wx * wy),
    ):
        ok = inb(yy, xx) & valid
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        corners.append((yc, xc, wgt * ok, ok))

    sd = source.data
    out = np.zeros((c,) + u.shape)
    vals = []
    for yc, xc, wgt, ok in corners:
        val = sd[:, yc, xc] * ok[None, :, :]
        vals.append(val)
        out += wgt[None, :, :] * val

    def bw(g):
        gsrc = None
        ggrid = None
        if source.requires_grad:
            # bincount over flattened indices is much faster than np.add.at
            acc = np.zeros((c, h * w))
            for yc, xc, wgt, ok in corners:
                idx = (yc * w + xc).ravel()
                contrib = (g * wgt[None, :, :]).reshape(c, -1)
                for ch in range(c):
                    acc[ch] += np.bincount(idx, weights=contrib[ch], minlength=h * w)
            gsrc = acc.reshape(c, h, w)
        if grid.requires_grad:
            v00, v01, v10, v11 = vals
            du = (1.0 - wy)[None] * (v01 - v00) + wy[None] * (v11 - v10)
            dv = (1.0 - wx)[None] * (v10 - v00) + wx[None] * (v11 - v01)
            gu = np.sum(g * du, axis=0) * valid
            gv = np.sum(g * dv, axis=0) * valid
            ggrid = np.stack([gu, gv], axis=0)
        return (gsrc, ggrid)

    sampled = Tensor._from_op(out, (source, grid), bw)
    return sampled, Tensor(valid.astype(np.float64))


# -- gradient checking (used by the CLI; tests carry their own oracle) -----------------------------


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Infinity-norm difference normalized by the larger magnitude (floored at 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = builtins.max(1.0, float(np.max(np.abs(a))) if a.size else 0.0, float(np.max(np.abs(b))) if b.size else 0.0)
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    return diff / scale


def numeric_gradient(f, leaf: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of the scalar f() w.r.t. every element of leaf."""
    base = leaf.data.copy()
    g = np.zeros_like(base)
    flat = base.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        leaf.assign(flat.reshape(base.shape))
        up = f().item()
        flat[i] = orig - eps
        leaf.assign(flat.reshape(base.shape))
        down = f().item()
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * eps)
    leaf.assign(base)
    return g


def gradient_check(f, leaves, eps: float = 1e-6, tol: float = 1e-5) -> tuple[bool, float]:
    """Compare autodiff and finite-difference gradients of the scalar f().

    Returns (all-within-tol, worst relative error).
    """
    zero_grads(leaves)
    out = f()
    out.backward()
    worst = 0.0
    for leaf in leaves:
        numeric = numeric_gradient(f, leaf, eps=eps)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = builtins.max(worst, max_relative_error(analytic, numeric))
    return worst <= tol, worst


# public aliases matching the operation names used elsewhere
exp = texp
log = tlog
absolute = tabs
sin = tsin
cos = tcos
sqrt = tsqrt
