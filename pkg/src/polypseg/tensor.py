"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable computation in the package is expressed through the
primitives here. The design is define-by-run: each primitive that touches a
grad-requiring tensor appends one node to a thread-local tape, and
``backward(loss)`` walks that tape once in reverse. The tape is cleared by
``backward`` (or ``reset_tape``), so each forward pass builds a fresh one.

Conventions, stated once:
  * all data is float64; inputs are copied on construction (no aliasing),
  * conv2d is cross-correlation (no kernel flip),
  * gelu uses the exact erf form, not the tanh approximation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """N-dimensional float64 array, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape_node")

    # make numpy defer to our reflected operators instead of broadcasting
    # element-wise over an object array
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)  # copy: never alias
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_node: "TapeNode | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications (topological by construction)."""

    nodes: list[TapeNode] = field(default_factory=list)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)
        node.output.tape_node = node

    def clear(self) -> None:
        for node in self.nodes:
            node.output.tape_node = None
        self.nodes.clear()


_tls = threading.local()


def active_tape() -> Tape:
    tape = getattr(_tls, "tape", None)
    if tape is None:
        tape = Tape()
        _tls.tape = tape
    return tape


def reset_tape() -> None:
    active_tape().clear()


class no_grad:
    """Context manager that suspends tape recording (forward-only evaluation)."""

    def __enter__(self):
        self._prev = getattr(_tls, "grad_enabled", True)
        _tls.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _tls.grad_enabled = self._prev
        return False


def _grad_enabled() -> bool:
    return getattr(_tls, "grad_enabled", True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(op, data, inputs, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().record(TapeNode(op, tuple(inputs), out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach ``grad.shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op("add", data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op("sub", data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _from_op("mul", data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _from_op("div", data, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = a.data**p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _from_op("power", data, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def bw(g):
        return (g * data,)

    return _from_op("exp", data, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return _from_op("log", data, (a,), bw)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the range."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * mask,)

    return _from_op("clip", data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def bw(g):
        return (g * mask,)

    return _from_op("relu", data, (a,), bw)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, slope * a.data)

    def bw(g):
        return (g * np.where(mask, 1.0, slope),)

    return _from_op("leaky_relu", data, (a,), bw)


def gelu(a) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = a.data * cdf

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return _from_op("gelu", data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bw(g):
        return (g * data * (1.0 - data),)

    return _from_op("sigmoid", data, (a,), bw)


def activation(a, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(a)
    if kind == "relu":
        return relu(a)
    raise ConfigError(f"unknown activation kind {kind!r}; expected 'gelu' or 'relu'")


# ---------------------------------------------------------------------------
# reductions and softmax


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _from_op("sum", data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def softmax(a, axis: int) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    a = as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _from_op("softmax", data, (a,), bw)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    data = a.data.reshape(shape).copy()

    def bw(g):
        return (g.reshape(old),)

    return _from_op("reshape", data, (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes).copy()
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv).copy(),)

    return _from_op("transpose", data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _from_op("concat", data, tuple(tensors), bw)


def take(a, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (scatter-add backward)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def bw(g):
        gx = np.zeros_like(a.data)
        gx_view = np.moveaxis(gx, axis, 0)
        g_moved = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)),
                              tuple(range(idx.ndim)))
        np.add.at(gx_view, idx, g_moved)
        return (gx,)

    return _from_op("take", data, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _from_op("matmul", data, (a, b), bw)


def conv2d(x, w, stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """2D cross-correlation over a single sample.

    x: (C_in, H, W), w: (C_out, C_in/groups, k, k). Output spatial size is
    (H + 2*pad - k) // stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) and (O,I,k,k); got {x.shape}, {w.shape}")
    c_in, h, wi = x.shape
    c_out, c_g, kh, kw = w.shape
    if kh != kw:
        raise ConfigError(f"conv2d kernel must be square; got {kh}x{kw}")
    k = kh
    if k % 2 == 0:
        raise ConfigError(f"conv2d kernel size must be odd; got {k}")
    if pad < 0:
        raise ConfigError(f"conv2d pad must be >= 0; got {pad}")
    if groups < 1 or c_in % groups != 0 or c_out % groups != 0:
        raise ConfigError(f"conv2d groups={groups} does not divide C_in={c_in}, C_out={c_out}")
    if c_g != c_in // groups:
        raise ShapeError(f"conv2d weight expects {c_in // groups} input channels per group, got {c_g}")
    hp, wp = h + 2 * pad, wi + 2 * pad
    if hp < k or wp < k:
        raise ShapeError(f"conv2d input {h}x{wi} (pad {pad}) smaller than kernel {k}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C_in, ho, wo, k, k)

    og = c_out // groups
    out = np.empty((c_out, ho, wo))
    x_mats = []
    for g in range(groups):
        xg = win[g * c_g:(g + 1) * c_g]
        xg_mat = xg.transpose(0, 3, 4, 1, 2).reshape(c_g * k * k, ho * wo)
        wg = w.data[g * og:(g + 1) * og].reshape(og, c_g * k * k)
        out[g * og:(g + 1) * og] = (wg @ xg_mat).reshape(og, ho, wo)
        x_mats.append(xg_mat)

    def bw(grad):
        gw = np.empty_like(w.data)
        gxp = np.zeros((c_in, hp, wp))
        for g in range(groups):
            go = grad[g * og:(g + 1) * og].reshape(og, ho * wo)
            gw[g * og:(g + 1) * og] = (go @ x_mats[g].T).reshape(og, c_g, k, k)
            wg = w.data[g * og:(g + 1) * og].reshape(og, c_g * k * k)
            gcol = (wg.T @ go).reshape(c_g, k, k, ho, wo)
            for i in range(k):
                for j in range(k):
                    gxp[g * c_g:(g + 1) * c_g,
                        i:i + stride * ho:stride,
                        j:j + stride * wo:stride] += gcol[:, i, j]
        gx = gxp[:, pad:pad + h, pad:pad + wi] if pad else gxp
        return np.ascontiguousarray(gx), gw

    return _from_op("conv2d", out, (x, w), bw)


# ---------------------------------------------------------------------------
# composite ops


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis per spatial location, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0; got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 3:
        raise ShapeError(f"layer_norm expects (C,H,W); got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} do not match C={c}")
    mu = tmean(x, axis=0, keepdims=True)
    xc = x - mu
    var = tmean(xc * xc, axis=0, keepdims=True)
    xh = xc / sqrt(var + eps)
    return reshape(gamma, (c, 1, 1)) * xh + reshape(beta, (c, 1, 1))


def _resample_indices(n_in: int, n_out: int):
    """Source coordinates under the align-corners=false convention."""
    scale = n_in / n_out
    return (np.arange(n_out) + 0.5) * scale - 0.5


def resample(x, out_h: int, out_w: int, mode: str = "bilinear") -> Tensor:
    """Resize a (C,H,W) map; nearest or bilinear (align-corners=false)."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resample target {out_h}x{out_w} must be >= 1x1")
    if mode not in ("nearest", "bilinear"):
        raise ConfigError(f"unknown resample mode {mode!r}")
    c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x * 1.0  # fresh tensor, keeps grad path
    xf = reshape(x, (c, h * w))
    if mode == "nearest":
        ri = np.clip(np.floor((np.arange(out_h) + 0.5) * h / out_h), 0, h - 1).astype(np.intp)
        ci = np.clip(np.floor((np.arange(out_w) + 0.5) * w / out_w), 0, w - 1).astype(np.intp)
        flat = (ri[:, None] * w + ci[None, :]).reshape(-1)
        return reshape(take(xf, flat, axis=1), (c, out_h, out_w))

    ry = np.clip(_resample_indices(h, out_h), 0, h - 1)
    rx = np.clip(_resample_indices(w, out_w), 0, w - 1)
    y0 = np.floor(ry).astype(np.intp)
    x0 = np.floor(rx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ry - y0
    wx = rx - x0

    def flat(yi, xi):
        return (yi[:, None] * w + xi[None, :]).reshape(-1)

    w00 = ((1 - wy)[:, None] * (1 - wx)[None, :]).reshape(-1)
    w01 = ((1 - wy)[:, None] * wx[None, :]).reshape(-1)
    w10 = (wy[:, None] * (1 - wx)[None, :]).reshape(-1)
    w11 = (wy[:, None] * wx[None, :]).reshape(-1)
    out = (take(xf, flat(y0, x0), axis=1) * w00
           + take(xf, flat(y0, x1), axis=1) * w01
           + take(xf, flat(y1, x0), axis=1) * w10
           + take(xf, flat(y1, x1), axis=1) * w11)
    return reshape(out, (c, out_h, out_w))


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss; populates .grad on requires_grad leaves.

    Consumes the active tape.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss; got shape {loss.shape}")
    if loss.tape_node is None:
        raise ValueError("loss is not on the active tape (no recorded operations)")
    tape = active_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gin in zip(node.inputs, node.backward(g)):
            if gin is None or not inp.requires_grad:
                continue
            if inp.tape_node is None:  # leaf
                inp.grad = gin.copy() if inp.grad is None else inp.grad + gin
            else:
                key = id(inp)
                grads[key] = gin if key not in grads else grads[key] + gin
    tape.clear()


@dataclass
class GradCheckEntry:
    index: int
    skipped: bool
    max_rel_err: float = 0.0


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def max_rel_err(self) -> float:
        checked = [e.max_rel_err for e in self.entries if not e.skipped]
        return max(checked) if checked else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(f, inputs: Sequence[Tensor], h: float = 1e-5, tol: float = 1e-4,
               max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of scalar f(*inputs) with central differences.

    Inputs with requires_grad=False are reported as skipped. The relative
    error uses a small absolute floor so near-zero gradients are compared
    absolutely.
    """
    if h <= 0:
        raise ConfigError(f"grad_check step h must be > 0; got {h}")
    for t in inputs:
        t.zero_grad()
    reset_tape()
    loss = f(*inputs)
    backward(loss)
    analytic = [None if not t.requires_grad else
                (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for t in inputs]

    rng = np.random.default_rng(seed)
    entries = []
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            entries.append(GradCheckEntry(index=i, skipped=True))
            continue
        n = t.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        worst = 0.0
        flat = t.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + h
                lp = f(*inputs).item()
                flat[c] = orig - h
                lm = f(*inputs).item()
            flat[c] = orig
            fd = (lp - lm) / (2.0 * h)
            a = analytic[i].reshape(-1)[c]
            err = abs(fd - a) / max(abs(fd), abs(a), 1e-2)
            worst = max(worst, err)
        entries.append(GradCheckEntry(index=i, skipped=False, max_rel_err=worst))
    return GradCheckReport(entries=entries, tol=tol)
