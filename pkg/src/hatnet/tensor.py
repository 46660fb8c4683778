"""Dense numeric arrays with reverse-mode gradients.

The kernel set is the minimum a hierarchical-attention backbone needs:
matmul, row softmax, average pooling, convolution, layer norm, SiLU/GELU,
plus elementwise/reshape plumbing and a cross-entropy head. Each kernel is
a pure function; when a :class:`GradTape` is active it records enough to
replay the computation backwards. Values are float32 by default; gradient
checking runs in float64.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "GradTape",
    "ShapeError",
    "DivisibilityError",
    "ContractError",
    "ConfigError",
    "NumericError",
    "MacCounter",
    "backward",
    "matmul",
    "softmax_rows",
    "avg_pool2d",
    "conv2d",
    "layer_norm",
    "activation",
    "silu",
    "gelu",
    "add",
    "sub",
    "mul",
    "scale",
    "reshape",
    "transpose",
    "reduce_sum",
    "reduce_mean",
    "cross_entropy_logits",
    "finite_diff_gradient",
    "central_difference",
    "count_macs",
    "mac_scope",
    "set_finite_checks",
    "finite_checks",
]

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested kernel."""


class DivisibilityError(ValueError):
    """A grid/pooling factor does not evenly divide the spatial extent."""


class ContractError(ValueError):
    """An API contract was violated (non-scalar loss, bad argument, ...)."""


class ConfigError(ValueError):
    """A model or attention configuration is structurally invalid."""


class NumericError(ArithmeticError):
    """A kernel produced or consumed a non-finite value."""


# --------------------------------------------------------------------------
# Tensor and tape machinery
# --------------------------------------------------------------------------


class Tensor:
    """A contiguous row-major float array (last axis fastest)."""

    __slots__ = ("data", "name")

    def __init__(self, data, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype.type not in _FLOAT_DTYPES:
            raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
        arr = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d arrays to 1-d; 0-d is already contiguous
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.name = name

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), name=self.name)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _shift(self, -float(other))

    def __rsub__(self, other):
        return _shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not a supported kernel")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype.name})"


class _Record:
    """One kernel application: output, inputs, and the reverse-mode rule."""

    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op: str, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class GradTape:
    """Ordered record of kernel applications for reverse-mode replay.

    A tape is confined to one logical thread of execution. Replaying it
    backwards visits kernels in exact reverse order of the forward pass;
    gradients accumulate additively when a tensor feeds several consumers.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._watched: list[Tensor] = []

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise ContractError("only tensors can be watched")
            self._watched.append(t)

    @property
    def watched(self) -> tuple:
        return tuple(self._watched)

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        self._outer = None


_ACTIVE_TAPE: Optional[GradTape] = None
_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection after every kernel (off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


@contextlib.contextmanager
def finite_checks(enabled: bool = True):
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")
    out = Tensor(data, dtype=data.dtype)
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._records.append(_Record(op, out, tuple(inputs), vjp))
    return out


def _require_tensor(x, op: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise ContractError(f"{op} expects Tensor operands, got {type(x).__name__}")
    return x


def _join_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ContractError(f"{op} dtype mismatch: {a.dtype.name} vs {b.dtype.name}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor, tape: GradTape) -> dict:
    """Gradients of a scalar loss w.r.t. every watched parameter.

    Unused parameters receive zero tensors. The returned map is keyed by
    the watched Tensor objects (identity).
    """
    _require_tensor(loss, "backward")
    if loss.shape != ():
        raise ContractError(f"loss must be a scalar tensor, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for rec in reversed(tape._records):
        g_out = grads.get(id(rec.out))
        if g_out is None:
            continue
        partials = rec.vjp(g_out)
        for t, g in zip(rec.inputs, partials):
            if g is None:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = g if prev is None else prev + g
    out = {}
    for p in tape._watched:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros(p.shape, dtype=p.dtype)
        out[p] = Tensor(np.asarray(g, dtype=p.dtype), name=p.name)
    return out


# --------------------------------------------------------------------------
# MAC instrumentation
# --------------------------------------------------------------------------


class MacCounter:
    """Accumulates multiply-accumulate counts from matmul/conv kernels."""

    def __init__(self):
        self.entries: list[tuple[str, int]] = []

    def add(self, label: str, macs: int) -> None:
        self.entries.append((label, macs))

    def total(self) -> int:
        return sum(m for _, m in self.entries)

    def by_label(self) -> dict:
        out: dict[str, int] = {}
        for label, m in self.entries:
            out[label] = out.get(label, 0) + m
        return out


_MAC_COUNTER: Optional[MacCounter] = None
_MAC_LABELS: list[str] = []


@contextlib.contextmanager
def count_macs():
    """Measure executed multiply-accumulates within the block."""
    global _MAC_COUNTER
    prev = _MAC_COUNTER
    counter = MacCounter()
    _MAC_COUNTER = counter
    try:
        yield counter
    finally:
        _MAC_COUNTER = prev


@contextlib.contextmanager
def mac_scope(label: str):
    """Attribute enclosed MACs to `label` (innermost scope wins)."""
    _MAC_LABELS.append(label)
    try:
        yield
    finally:
        _MAC_LABELS.pop()


def _count(macs: int) -> None:
    if _MAC_COUNTER is not None:
        label = _MAC_LABELS[-1] if _MAC_LABELS else ""
        _MAC_COUNTER.add(label, macs)


# --------------------------------------------------------------------------
# Elementwise / structural kernels
# --------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, "add")
    _require_tensor(b, "add")
    _join_dtype(a, b, "add")
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add cannot broadcast {a.shape} with {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, "sub")
    _require_tensor(b, "sub")
    _join_dtype(a, b, "sub")
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub cannot broadcast {a.shape} with {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, "mul")
    _require_tensor(b, "mul")
    _join_dtype(a, b, "mul")
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul cannot broadcast {a.shape} with {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", data, (a, b), vjp)


def scale(x: Tensor, s: float) -> Tensor:
    _require_tensor(x, "scale")
    s = float(s)
    data = x.data * x.dtype.type(s)

    def vjp(g):
        return (g * x.dtype.type(s),)

    return _emit("scale", data, (x,), vjp)


def _shift(x: Tensor, s: float) -> Tensor:
    data = x.data + x.dtype.type(s)

    def vjp(g):
        return (g,)

    return _emit("shift", data, (x,), vjp)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    _require_tensor(x, "reshape")
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", data, (x,), vjp)


def transpose(x: Tensor, axes: Iterable[int]) -> Tensor:
    _require_tensor(x, "transpose")
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {x.ndim}")
    data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _emit("transpose", data, (x,), vjp)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _require_tensor(x, "sum")
    axes = _norm_axis(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)

    return _emit("sum", data, (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _require_tensor(x, "mean")
    axes = _norm_axis(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes) if axes else 1
    data = x.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        g = g / x.dtype.type(count)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)

    return _emit("mean", data, (x,), vjp)


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading dims must match (no size-1 stretching)."""
    _require_tensor(a, "matmul")
    _require_tensor(b, "matmul")
    _join_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    for da, db in zip(a.shape[-3::-1], b.shape[-3::-1]):
        if da != db:
            raise ShapeError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)
    if _MAC_COUNTER is not None:
        m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
        batch = math.prod(data.shape[:-2])
        _count(batch * m * k * n)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", data, (a, b), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by row-max subtraction."""
    _require_tensor(x, "softmax_rows")
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ShapeError(f"softmax_rows needs a non-empty last axis, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_rows", y, (x,), vjp)


# --------------------------------------------------------------------------
# Spatial kernels
# --------------------------------------------------------------------------


def _pairwise_sum_last(a: np.ndarray) -> np.ndarray:
    # Pairwise folding keeps block sums exact for power-of-two window sizes.
    while a.shape[-1] > 1:
        n = a.shape[-1]
        if n % 2 == 0:
            a = a[..., 0::2] + a[..., 1::2]
        else:
            a = np.concatenate([a[..., 0 : n - 1 : 2] + a[..., 1:n:2], a[..., n - 1 :]], axis=-1)
    return a[..., 0]


def avg_pool2d(x: Tensor, g: int) -> Tensor:
    """Mean over non-overlapping g x g windows of a [B,H,W,C] map."""
    _require_tensor(x, "avg_pool2d")
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects [B,H,W,C], got {x.shape}")
    g = int(g)
    if g < 1:
        raise ContractError(f"pool factor must be >= 1, got {g}")
    b, h, w, c = x.shape
    if h % g or w % g:
        raise DivisibilityError(f"pool factor g={g} must divide H={h} and W={w}")
    if g == 1:
        data = x.data.copy()

        def vjp_id(gr):
            return (gr,)

        return _emit("avg_pool2d", data, (x,), vjp_id)
    h2, w2 = h // g, w // g
    blocks = x.data.reshape(b, h2, g, w2, g, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h2, w2, c, g * g)
    data = _pairwise_sum_last(blocks) / x.dtype.type(g * g)

    def vjp(gr):
        spread = (gr / x.dtype.type(g * g))[:, :, None, :, None, :]
        return (np.broadcast_to(spread, (b, h2, g, w2, g, c)).reshape(b, h, w, c).copy(),)

    return _emit("avg_pool2d", data, (x,), vjp)


def _extract_patches(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = xp.shape
    patches = np.empty((b, ho, wo, k * k, c), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            patches[:, :, :, ki * k + kj, :] = xp[
                :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :
            ]
    return patches


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation.

    x: [B,H,W,Cin]; w: [K,K,Cin/groups,Cout]; output spatial size is
    floor((H + 2*pad - K)/stride) + 1. Default padding K//2 gives "same"
    behavior at stride 1.
    """
    _require_tensor(x, "conv2d")
    _require_tensor(w, "conv2d")
    _join_dtype(x, w, "conv2d")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects [B,H,W,C] and [K,K,Cin/g,Cout], got {x.shape}, {w.shape}")
    k = w.shape[0]
    if w.shape[1] != k:
        raise ShapeError(f"conv2d kernel must be square, got {w.shape}")
    b, h, wd, cin = x.shape
    groups = int(groups)
    if groups < 1 or cin % groups:
        raise ShapeError(f"input channels {cin} not divisible by groups {groups}")
    cpg = cin // groups
    if w.shape[2] != cpg:
        raise ShapeError(f"kernel expects {w.shape[2]} channels/group, input provides {cpg}")
    cout = w.shape[3]
    if cout % groups:
        raise ShapeError(f"output channels {cout} not divisible by groups {groups}")
    if bias is not None:
        _require_tensor(bias, "conv2d")
        _join_dtype(x, bias, "conv2d")
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    stride = int(stride)
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    pad = k // 2 if padding is None else int(padding)
    if pad < 0:
        raise ContractError(f"padding must be >= 0, got {pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape} with K={k}, stride={stride}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    patches = _extract_patches(xp, k, stride, ho, wo)  # [B,Ho,Wo,K*K,Cin]
    opg = cout // groups

    if groups == 1:
        pm = patches.reshape(b * ho * wo, k * k * cin)
        wm = w.data.reshape(k * k * cin, cout)
        out = pm.dot(wm).reshape(b, ho, wo, cout)
    elif cpg == 1 and opg == 1:
        # depthwise: w is [K,K,1,C]
        out = (patches * w.data.reshape(1, 1, 1, k * k, cout)).sum(axis=3)
    else:
        pg = patches.reshape(b, ho, wo, k * k, groups, cpg)
        wg = w.data.reshape(k * k, cpg, groups, opg)
        out = np.einsum("bxykgc,kcgo->bxygo", pg, wg, optimize=True).reshape(b, ho, wo, cout)
    if bias is not None:
        out = out + bias.data
    _count(b * ho * wo * k * k * cpg * cout)

    def vjp(g):
        if groups == 1:
            gm = g.reshape(b * ho * wo, cout)
            gw = patches.reshape(b * ho * wo, k * k * cin).T.dot(gm).reshape(w.shape)
            gp = gm.dot(w.data.reshape(k * k * cin, cout).T).reshape(b, ho, wo, k * k, cin)
        elif cpg == 1 and opg == 1:
            gw = (patches * g[:, :, :, None, :]).sum(axis=(0, 1, 2)).reshape(w.shape)
            gp = g[:, :, :, None, :] * w.data.reshape(1, 1, 1, k * k, cout)
        else:
            pg2 = patches.reshape(b, ho, wo, k * k, groups, cpg)
            gg = g.reshape(b, ho, wo, groups, opg)
            gw = np.einsum("bxykgc,bxygo->kcgo", pg2, gg, optimize=True).reshape(w.shape)
            gp = np.einsum("bxygo,kcgo->bxykgc", gg, w.data.reshape(k * k, cpg, groups, opg), optimize=True)
            gp = gp.reshape(b, ho, wo, k * k, cin)
        gxp = np.zeros((b, h + 2 * pad, wd + 2 * pad, cin), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                gxp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :] += gp[:, :, :, ki * k + kj, :]
        gx = gxp[:, pad : pad + h, pad : pad + wd, :] if pad else gxp
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    inputs = (x, w, bias) if bias is not None else (x, w)

    def vjp_wrapped(g):
        parts = vjp(g)
        return parts if bias is not None else parts[:2]

    return _emit("conv2d", out, inputs, vjp_wrapped)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _require_tensor(x, "layer_norm")
    _require_tensor(gamma, "layer_norm")
    _require_tensor(beta, "layer_norm")
    _join_dtype(x, gamma, "layer_norm")
    _join_dtype(x, beta, "layer_norm")
    c = x.shape[-1] if x.ndim else 0
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    eps = float(eps)
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be > 0, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xh = xc * inv
    data = xh * gamma.data + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        g_gamma = (g * xh).sum(axis=lead)
        g_beta = g.sum(axis=lead)
        gxh = g * gamma.data
        m1 = gxh.mean(axis=-1, keepdims=True)
        m2 = (gxh * xh).mean(axis=-1, keepdims=True)
        gx = inv * (gxh - m1 - xh * m2)
        return gx, g_gamma, g_beta

    return _emit("layer_norm", data, (x, gamma, beta), vjp)


# --------------------------------------------------------------------------
# Activations
# --------------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    _require_tensor(x, "silu")
    s = _sigmoid(x.data)
    data = x.data * s

    def vjp(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _emit("silu", data, (x,), vjp)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    _require_tensor(x, "gelu")
    phi_cdf = 0.5 * (1.0 + erf(x.data * x.dtype.type(_INV_SQRT2)))
    data = x.data * phi_cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * x.dtype.type(_INV_SQRT_2PI)
        return (g * (phi_cdf + x.data * pdf),)

    return _emit("gelu", data.astype(x.dtype, copy=False), (x,), vjp)


_ACTIVATIONS = {"silu": silu, "gelu": gelu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between logits [B,K] and integer labels [B]."""
    _require_tensor(logits, "cross_entropy_logits")
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects [B,K] logits, got {logits.shape}")
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("labels must be integers")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    losses = lse - z[np.arange(b), labels]
    data = np.asarray(losses.mean(), dtype=logits.dtype)

    def vjp(g):
        p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
        p[np.arange(b), labels] -= 1.0
        return (g * p / logits.dtype.type(b),)

    return _emit("cross_entropy", data, (logits,), vjp)


# --------------------------------------------------------------------------
# Finite-difference oracle (independent of the tape)
# --------------------------------------------------------------------------


def central_difference(f: Callable[[np.ndarray], float], theta: np.ndarray, index: int, h: float) -> float:
    """Central-difference derivative of f along one flat coordinate."""
    if h <= 0:
        raise ContractError(f"finite-difference step must be > 0, got {h}")
    flat = theta.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = float(f(theta))
    flat[index] = orig - h
    fm = float(f(theta))
    flat[index] = orig
    if not (math.isfinite(fp) and math.isfinite(fm)):
        raise NumericError("non-finite function value during finite differencing")
    return (fp - fm) / (2.0 * h)


def finite_diff_gradient(f: Callable[[Tensor], float], theta: Tensor, h: float = 1e-5) -> Tensor:
    """Full central-difference gradient of a scalar function of one tensor."""
    _require_tensor(theta, "finite_diff_gradient")
    work = theta.data.copy()

    def eval_at(arr: np.ndarray) -> float:
        out = f(Tensor(arr, dtype=theta.dtype))
        return out.item() if isinstance(out, Tensor) else float(out)

    grad = np.empty(theta.size, dtype=np.float64)
    for i in range(theta.size):
        grad[i] = central_difference(eval_at, work, i, h)
    return Tensor(grad.reshape(theta.shape), dtype=theta.dtype)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a-b| / max(|a|,|b|,floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))
