"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive returns a :class:`Tensor` that remembers its operands and a
backward rule. :func:`backward` linearises the reachable graph into a
:class:`Tape` (ordered by creation sequence, hence topological) and walks it
in reverse, accumulating gradients into leaves.

Conventions: ReLU has subgradient 0 at 0, and max-reductions route the
gradient to the first (lowest-index) arg-max.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are invalid for a primitive."""


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run primitives without recording backward rules."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class _KinkLog:
    def __init__(self):
        self.signatures: list[bytes] = []


@contextlib.contextmanager
def record_kinks():
    """Collect the branch pattern of every ReLU/max primitive evaluated inside.

    Two evaluations whose logs differ straddle a non-smooth point.
    """
    log = _KinkLog()
    prev = getattr(_state, "kinks", None)
    _state.kinks = log
    try:
        yield log
    finally:
        _state.kinks = prev


def _log_kink(pattern: np.ndarray) -> None:
    log = getattr(_state, "kinks", None)
    if log is not None:
        log.signatures.append(np.ascontiguousarray(pattern).tobytes())


# Multiply-accumulate counter for convolutions and affine maps.
_macs = {"count": 0}


def mac_count() -> int:
    return _macs["count"]


def reset_mac_count() -> None:
    _macs["count"] = 0


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: index(self, idx)

    def __pow__(self, exponent: float) -> Tensor:
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return _result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _result(a.data ** exponent, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    _log_kink(mask)
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    _log_kink(inside)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ----------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _result(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), bw, "mean")


def tmax(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient goes to the first arg-max only."""
    a = as_tensor(a)
    if axis is None:
        flat = a.data.reshape(-1)
        arg = int(np.argmax(flat))
        _log_kink(np.array([arg]))
        out = flat[arg].reshape((1,) * a.ndim if keepdims else ())

        def bw(g):
            grad = np.zeros(a.size)
            grad[arg] = np.sum(g)
            return (grad.reshape(a.shape),)

        return _result(np.array(out), (a,), bw, "max")

    arg = np.argmax(a.data, axis=axis)
    _log_kink(arg)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(arg, axis), g, axis=axis)
        return (grad,)

    return _result(out if keepdims else np.squeeze(out, axis), (a,), bw, "max")


# ------------------------------------------------------------- shape plumbing


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return _result(np.array(out), (a,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        parts = np.split(g, bounds, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(as_tensor, tensors)], axis)


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    _macs["count"] += a.shape[0] * a.shape[1] * b.shape[1]

    def bw(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight of shape (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def weighted_sum(coeffs, tensors: Sequence[Tensor]) -> Tensor:
    """``sum_m coeffs[m] * tensors[m]`` for a 1-D coefficient vector.

    Accumulates left to right so equal inputs give bit-identical results.
    """
    coeffs = as_tensor(coeffs)
    tensors = [as_tensor(t) for t in tensors]
    if coeffs.ndim != 1 or coeffs.shape[0] != len(tensors) or not tensors:
        raise ShapeError(f"weighted_sum: {coeffs.shape} coefficients for {len(tensors)} tensors")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"weighted_sum: operand shapes {shape} and {t.shape} differ")
    c = coeffs.data
    out = c[0] * tensors[0].data
    for m in range(1, len(tensors)):
        out = out + c[m] * tensors[m].data

    def bw(g):
        gc = None
        if coeffs.requires_grad:
            gc = np.array([np.vdot(g, t.data) for t in tensors])
        return (gc,) + tuple(g * c[m] if t.requires_grad else None for m, t in enumerate(tensors))

    return _result(out, (coeffs, *tensors), bw, "weighted_sum")


def normalize(x, axes=(1, 2, 3), eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance rescaling over ``axes`` (no affine part)."""
    x = as_tensor(x)
    xc = x.data - x.data.mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    out = xc * inv

    def bw(g):
        return (inv * (g - g.mean(axis=axes, keepdims=True) - out * (g * out).mean(axis=axes, keepdims=True)),)

    return _result(out, (x,), bw, "normalize")


# ------------------------------------------------------------------ softmaxes


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _result(out, (a,), bw, "log_softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    return neg(mean(index(logp, (np.arange(n), labels))))


# ------------------------------------------------------------- convolutions


def _conv_geometry(kind, h, w, kh, kw, stride, padding, dilation):
    ho = (h + 2 * padding[0] - dilation[0] * (kh - 1) - 1) // stride[0] + 1
    wo = (w + 2 * padding[1] - dilation[1] * (kw - 1) - 1) // stride[1] + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"{kind}: kernel {kh}x{kw} (dilation {dilation}, padding {padding}) "
            f"does not fit input {h}x{w}"
        )
    return ho, wo


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, weight, stride=1, padding=0, dilation=1, groups: int = 1) -> Tensor:
    """Direct 2-D convolution of (N, C, H, W) input with (O, C/groups, kh, kw) kernels."""
    x, weight = as_tensor(x), as_tensor(weight)
    stride, padding, dilation = _pair(stride), _pair(padding), _pair(dilation)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups or cg != c // groups:
        raise ShapeError(f"conv2d: input channels {c} and kernel {weight.shape} incompatible with groups={groups}")
    ho, wo = _conv_geometry("conv2d", h, w, kh, kw, stride, padding, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2)) if any(padding) else x.data
    depthwise = groups == c and o == c
    og = o // groups
    _macs["count"] += n * o * ho * wo * cg * kh * kw

    def window(arr, ki, kj):
        r0, c0 = ki * dilation[0], kj * dilation[1]
        return (slice(None), slice(None),
                slice(r0, r0 + stride[0] * (ho - 1) + 1, stride[0]),
                slice(c0, c0 + stride[1] * (wo - 1) + 1, stride[1]))

    wd = weight.data
    out = np.zeros((n, o, ho, wo))
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[window(xp, ki, kj)]
            if depthwise:
                out += patch * wd[:, 0, ki, kj][None, :, None, None]
            elif groups == 1:
                out += np.einsum("nchw,oc->nohw", patch, wd[:, :, ki, kj], optimize=True)
            else:
                pg = patch.reshape(n, groups, cg, ho, wo)
                wg = wd[:, :, ki, kj].reshape(groups, og, cg)
                out += np.einsum("ngchw,goc->ngohw", pg, wg).reshape(n, o, ho, wo)

    def bw(g):
        gx = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wd) if weight.requires_grad else None
        for ki in range(kh):
            for kj in range(kw):
                sl = window(xp, ki, kj)
                if depthwise:
                    if gx is not None:
                        gx[sl] += g * wd[:, 0, ki, kj][None, :, None, None]
                    if gw is not None:
                        gw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", g, xp[sl])
                elif groups == 1:
                    if gx is not None:
                        gx[sl] += np.einsum("nohw,oc->nchw", g, wd[:, :, ki, kj], optimize=True)
                    if gw is not None:
                        gw[:, :, ki, kj] = np.einsum("nohw,nchw->oc", g, xp[sl], optimize=True)
                else:
                    gg = g.reshape(n, groups, og, ho, wo)
                    wg = wd[:, :, ki, kj].reshape(groups, og, cg)
                    if gx is not None:
                        gx[sl] += np.einsum("ngohw,goc->ngchw", gg, wg).reshape(n, c, ho, wo)
                    if gw is not None:
                        pg = xp[sl].reshape(n, groups, cg, ho, wo)
                        gw[:, :, ki, kj] = np.einsum("ngohw,ngchw->goc", gg, pg).reshape(o, cg)
        if gx is not None and any(padding):
            gx = gx[:, :, padding[0]:padding[0] + h, padding[1]:padding[1] + w]
        return gx, gw

    return _result(out, (x, weight), bw, "conv2d")


def _pool_windows(kind, x, kernel, stride, padding, fill):
    n, c, h, w = x.shape
    ho, wo = _conv_geometry(kind, h, w, kernel, kernel, (stride, stride), (padding, padding), (1, 1))
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2), constant_values=fill)
    slices = [
        (slice(None), slice(None),
         slice(ki, ki + stride * (ho - 1) + 1, stride),
         slice(kj, kj + stride * (wo - 1) + 1, stride))
        for ki in range(kernel) for kj in range(kernel)
    ]
    return xp, slices, (ho, wo)


def max_pool2d(x, kernel: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d: expected 4-D input, got {x.shape}")
    xp, slices, _ = _pool_windows("max_pool2d", x, kernel, stride, padding, -np.inf)
    windows = np.stack([xp[s] for s in slices])
    arg = np.argmax(windows, axis=0)
    _log_kink(arg)
    out = np.take_along_axis(windows, arg[None], axis=0)[0]
    h, w = x.shape[2:]

    def bw(g):
        gx = np.zeros_like(xp)
        for m, s in enumerate(slices):
            gx[s] += np.where(arg == m, g, 0.0)
        return (gx[:, :, padding:padding + h, padding:padding + w],)

    return _result(out, (x,), bw, "max_pool2d")


def avg_pool2d(x, kernel: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    """Average pooling that excludes padded cells from the divisor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: expected 4-D input, got {x.shape}")
    xp, slices, (ho, wo) = _pool_windows("avg_pool2d", x, kernel, stride, padding, 0.0)
    ones = np.pad(np.ones(x.shape[2:]), padding)
    count = sum(ones[s[2:]] for s in slices)
    out = sum(xp[s] for s in slices) / count
    h, w = x.shape[2:]

    def bw(g):
        gx = np.zeros_like(xp)
        gc = g / count
        for s in slices:
            gx[s] += gc
        return (gx[:, :, padding:padding + h, padding:padding + w],)

    return _result(out, (x,), bw, "avg_pool2d")


# ------------------------------------------------------------------- backward


@dataclass
class TapeRecord:
    output: Tensor
    operands: tuple[Tensor, ...]
    rule: Callable


@dataclass
class Tape:
    """Primitive applications reachable from a loss, in creation order."""

    records: list[TapeRecord] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        seen: dict[int, Tensor] = {}
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._backward is None:
                continue
            seen[id(t)] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        ordered = sorted(seen.values(), key=lambda t: t._seq)
        return cls([TapeRecord(t, t._parents, t._backward) for t in ordered])

    def is_topological(self) -> bool:
        position = {id(r.output): k for k, r in enumerate(self.records)}
        return all(
            position.get(id(p), -1) < k for k, r in enumerate(self.records) for p in r.operands
        )


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._backward is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for parent, pg in zip(rec.operands, rec.rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ------------------------------------------------------------ gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    checked: int
    skipped: list[tuple[int, str]]
    analytic: np.ndarray
    numeric: np.ndarray


def _compare(analytic: np.ndarray, evaluate, base_sig, x0: np.ndarray, eps, tol, floor, coords) -> GradCheckReport:
    numeric = np.full(x0.size, np.nan)
    skipped: list[tuple[int, str]] = []
    worst, checked = 0.0, 0
    flat_a = analytic.reshape(-1)
    for i in range(x0.size) if coords is None else coords:
        plus, minus = x0.copy().reshape(-1), x0.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        fp, sig_p = evaluate(plus.reshape(x0.shape))
        fm, sig_m = evaluate(minus.reshape(x0.shape))
        if sig_p != base_sig or sig_m != base_sig:
            skipped.append((i, "skipped: nonsmooth point"))
            continue
        numeric[i] = (fp - fm) / (2 * eps)
        err = abs(flat_a[i] - numeric[i]) / max(abs(flat_a[i]), abs(numeric[i]), floor)
        worst = max(worst, err)
        checked += 1
    return GradCheckReport(worst, worst < tol, checked, skipped, analytic, numeric.reshape(x0.shape))


def grad_check(
    f: Callable[[Tensor], Tensor],
    at: Tensor | np.ndarray,
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-4,
    coords: Iterable[int] | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Coordinates whose +/-eps evaluations change any ReLU mask or arg-max are
    reported as skipped instead of compared.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    x0 = np.array(at.data if isinstance(at, Tensor) else at, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    with record_kinks() as base_log:
        loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x0) if x.grad is None else x.grad.copy()

    def evaluate(values):
        with no_grad(), record_kinks() as log:
            val = f(Tensor(values)).item()
        return val, log.signatures

    return _compare(analytic, evaluate, base_log.signatures, x0, eps, tol, floor, coords)


def grad_check_param(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-4,
    coords: Iterable[int] | None = None,
) -> GradCheckReport:
    """Like :func:`grad_check` for a leaf that ``loss_fn`` already closes over.

    The leaf is perturbed in place and restored afterwards.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    x0 = param.data.copy()
    saved_grad, param.grad = param.grad, None
    try:
        with record_kinks() as base_log:
            loss = loss_fn()
        backward(loss)
        analytic = np.zeros_like(x0) if param.grad is None else param.grad.copy()

        def evaluate(values):
            param.data = values
            with no_grad(), record_kinks() as log:
                val = loss_fn().item()
            return val, log.signatures

        return _compare(analytic, evaluate, base_log.signatures, x0, eps, tol, floor, coords)
    finally:
        param.data, param.grad = x0, saved_grad
