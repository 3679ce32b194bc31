"""Dense tensors with a reverse-mode tape.

Every op is a plain function. When a :class:`Tape` is active and any input
requires a gradient, the op appends one :class:`TapeNode` holding the saved
activations and a backward closure. ``Tape.backward`` then walks the nodes in
reverse order and accumulates gradients into the leaf tensors.

There is no broadcasting beyond :func:`add_bias`; shape mismatches raise
:class:`ShapeError`.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError", "Tensor", "Param", "Tape", "TapeNode",
    "matmul", "add", "sub", "mul", "elementwise_mul", "add_bias", "relu",
    "reshape", "concat_channels", "gather_rows", "mean_rows", "sum",
    "conv2d", "bilinear_upsample", "softmax_cross_entropy",
    "grad_check", "sgdm_step", "zero_grad",
]

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "galseg_active_tape", default=None)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    """A dense real-valued array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 4")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Param(Tensor):
    """A learnable tensor carrying a momentum buffer alongside its gradient."""

    __slots__ = ("velocity", "name")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.velocity = np.zeros_like(self.data)
        self.name = name

    def astype(self, dtype) -> "Param":
        return Param(self.data.astype(dtype), name=self.name)


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    saved: dict = field(default_factory=dict)


class Tape:
    """Append-only record of differentiable ops.

    Use as a context manager; ops executed inside the block are recorded.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable, **saved) -> None:
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward, saved))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        """Propagate from ``loss`` and add the results into leaf ``.grad`` buffers."""
        if grad is None:
            if loss.data.size != 1:
                raise ShapeError(f"backward needs a scalar or an explicit grad, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.backward(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        # whatever remains belongs to leaves (tensors no node produced)
        leaves = {}
        for node in self.nodes:
            for inp in node.inputs:
                leaves[id(inp)] = inp
        leaves[id(loss)] = loss
        for key, g in grads.items():
            t = leaves.get(key)
            if t is not None and t.grad is not None:
                t.grad += g.astype(t.grad.dtype, copy=False)


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward: Callable, **saved) -> Tensor:
    tape = _active_tape.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.requires_grad = needs
    result.grad = None
    if needs:
        tape.record(op, inputs, result, backward, **saved)
    return result


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("elementwise_mul", a, b)
    x, y = a.data, b.data
    return _emit("elementwise_mul", (a, b), x * y, lambda g: (g * y, g * x))


mul = elementwise_mul


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype, copy=False),
                 lambda g: (g * mask,), mask=mask)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector along the last axis of ``x``."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.data.ndim - 1))
    return _emit("add_bias", (x, b), x.data + b.data, lambda g: (g, g.sum(axis=lead)))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _emit("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype).reshape(1),
                 lambda g: (np.full(shape, g.reshape(-1)[0], dtype=g.dtype),))


# ---------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    x, y = a.data, b.data
    return _emit("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def concat_channels(*xs: Tensor) -> Tensor:
    """Concatenate along the last axis; leading dimensions must agree."""
    if not xs:
        raise ShapeError("concat_channels: nothing to concatenate")
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat_channels: leading shapes {lead} and {t.shape[:-1]} differ")
    splits = np.cumsum([t.shape[-1] for t in xs])[:-1]
    return _emit("concat_channels", xs, np.concatenate([t.data for t in xs], axis=-1),
                 lambda g: tuple(np.split(g, splits, axis=-1)))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; repeated indices accumulate in backward."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected a matrix, got {x.shape}")
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")
    n = x.shape[0]

    def backward(g):
        out = np.zeros((n, g.shape[1]), dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _emit("gather_rows", (x,), x.data[index], backward, index=index)


def mean_rows(x: Tensor, group: int) -> Tensor:
    """Average consecutive blocks of ``group`` rows: (M*group)xN -> MxN."""
    if x.data.ndim != 2 or x.shape[0] % group:
        raise ShapeError(f"mean_rows: {x.shape} rows not divisible into groups of {group}")
    m, n = x.shape[0] // group, x.shape[1]
    out = x.data.reshape(m, group, n).mean(axis=1)
    return _emit("mean_rows", (x,), out,
                 lambda g: (np.repeat(g / group, group, axis=0),))


# ---------------------------------------------------------------- conv / resample

def _im2col(xp: np.ndarray, ho: int, wo: int, stride: int) -> np.ndarray:
    taps = [xp[di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride, :]
            for di in range(3) for dj in range(3)]
    return np.stack(taps, axis=2)  # ho x wo x 9 x cin


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution (cross-correlation) with zero padding 1 and no bias."""
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 3 or kernel.data.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d: expected HxWxCin input and 3x3xCinxCout kernel, got {x.shape}, {kernel.shape}")
    h, w, cin = x.shape
    if kernel.shape[2] != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel {kernel.shape} expects {kernel.shape[2]}")
    cout = kernel.shape[3]
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    cols = _im2col(xp, ho, wo, stride).reshape(ho * wo, 9 * cin)
    kmat = kernel.data.reshape(9 * cin, cout)
    out = (cols @ kmat).reshape(ho, wo, cout)

    def backward(g):
        g2 = g.reshape(ho * wo, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gcols = (g2 @ kmat.T).reshape(ho, wo, 3, 3, cin)
        gxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                gxp[di:di + stride * (ho - 1) + 1:stride,
                    dj:dj + stride * (wo - 1) + 1:stride, :] += gcols[:, :, di, dj, :]
        return gxp[1:h + 1, 1:w + 1, :], gk

    return _emit("conv2d", (x, kernel), out, backward, stride=stride)


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    # half-pixel centres, clamped at the borders; rows sum to one
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if x.data.ndim != 3 or factor < 1:
        raise ShapeError(f"bilinear_upsample: expected HxWxC and factor >= 1, got {x.shape}, {factor}")
    h, w, _ = x.shape
    mh = _interp_matrix(h, factor, x.dtype)
    mw = _interp_matrix(w, factor, x.dtype)
    out = np.einsum("ah,hwc->awc", mh, x.data)
    out = np.einsum("bw,awc->abc", mw, out)

    def backward(g):
        gx = np.einsum("abc,bw->awc", g, mw)
        return (np.einsum("awc,ah->hwc", gx, mh),)

    return _emit("bilinear_upsample", (x,), out, backward, factor=factor)


# ---------------------------------------------------------------- loss

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    if logits.data.ndim != 3 or labels.shape != logits.shape[:2]:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[2]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=2, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=2, keepdims=True))
    logp = z - lse
    n = labels.size
    lab = labels.astype(np.intp)[..., None]
    loss = -np.take_along_axis(logp, lab, axis=2).sum() / n

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, lab, np.take_along_axis(p, lab, axis=2) - 1, axis=2)
        return (p * (g.reshape(-1)[0] / n),)

    return _emit("softmax_cross_entropy", (logits,),
                 np.asarray([loss], dtype=logits.dtype), backward)


# ---------------------------------------------------------------- checking / optimisation

def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` receives the ``inputs`` and must return a one-element tensor. The
    relative error of one coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 inputs, got {t.dtype}")
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        out = f(*inputs)
    if out.data.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {out.shape}")
    tape.backward(out)
    worst = 0.0
    for t in inputs:
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f(*inputs).data.reshape(-1)[0])
            flat[j] = orig - eps
            fm = float(f(*inputs).data.reshape(-1)[0])
            flat[j] = orig
            num = (fp - fm) / (2 * eps)
            a = float(analytic[j])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
    return worst


def zero_grad(params: Sequence[Param]) -> None:
    for p in params:
        p.grad[...] = 0


def sgdm_step(params: Sequence[Param], lr: float, momentum: float) -> None:
    """velocity <- momentum*velocity + grad; value <- value - lr*velocity; grad <- 0."""
    for p in params:
        p.velocity *= momentum
        p.velocity += p.grad
        p.data -= lr * p.velocity
        p.grad[...] = 0
