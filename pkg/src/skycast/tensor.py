"""Small dense-array engine with reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
closure that pushes the upstream gradient back to them. Tensors receive a
monotonically increasing id at creation, so sorting the reachable nodes by id
gives a valid reverse topological order without an explicit tape.

Storage defaults to float32. Passing float64 arrays with ``dtype=np.float64``
keeps the whole computation in double precision, which is what the
finite-difference checks rely on.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "conv2d",
    "dense",
    "relu",
    "add",
    "concat",
    "combine",
    "mul",
    "flatten",
    "select_channel",
    "mean",
    "mse",
    "reduce",
    "backward",
    "AdamState",
    "adam_step",
    "sgd_step",
]

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    return Tensor(arr, dtype=arr.dtype if arr.dtype == np.float64 else np.float32)


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data  # keep the producer's memory layout
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._id = next(_ids)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = np.array(g, order="K")
    else:
        t.grad += g


# --------------------------------------------------------------------------
# convolution


def _conv_out(n: int, stride: int) -> int:
    return -(-n // stride)


def _im2col(xp: np.ndarray, ho: int, wo: int, stride: int) -> np.ndarray:
    # xp is padded NHWC; columns are ordered (ki, kj, c)
    n, c = xp.shape[0], xp.shape[3]
    cols = np.empty((n, ho, wo, 3, 3, c), dtype=xp.dtype)
    hi, wi = stride * ho, stride * wo
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = xp[:, i : i + hi : stride, j : j + wi : stride, :]
    return cols.reshape(n * ho * wo, 9 * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution with zero padding 1 and stride 1 or 2.

    Input is NCHW, weight is (F, C, 3, 3). Output spatial size is
    ``ceil(H / stride)``. Internally the work is done channel-last; the
    returned array is an NCHW view of channel-last memory.
    """
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"kernel must be 3x3, got {kh}x{kw}")
    if cw != c:
        raise ShapeError(f"input has {c} channels but weight expects {cw}")
    if bias.shape != (f,):
        raise ShapeError(f"bias shape {bias.shape} does not match {f} filters")

    ho, wo = _conv_out(h, stride), _conv_out(w, stride)
    dtype = np.result_type(x.data, weight.data)
    xp = np.zeros((n, h + 2, w + 2, c), dtype=dtype)
    xp[:, 1 : h + 1, 1 : w + 1, :] = x.data.transpose(0, 2, 3, 1)
    cols = _im2col(xp, ho, wo, stride)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(f, 9 * c)
    out = cols @ wmat.T
    out += bias.data
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def _backward(g: np.ndarray) -> None:
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        if weight.requires_grad:
            dw = (g2.T @ cols).reshape(f, 3, 3, c).transpose(0, 3, 1, 2)
            _accumulate(weight, dw)
        if bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, 3, 3, c)
            dxp = np.zeros(xp.shape, dtype=g2.dtype)
            hi, wi = stride * ho, stride * wo
            for i in range(3):
                for j in range(3):
                    dxp[:, i : i + hi : stride, j : j + wi : stride, :] += dcols[:, :, :, i, j, :]
            _accumulate(x, dxp[:, 1 : h + 1, 1 : w + 1, :].transpose(0, 3, 1, 2))

    return _result(out, "conv2d", (x, weight, bias), _backward)


# --------------------------------------------------------------------------
# dense / elementwise


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``y = x @ W.T + b`` for x of shape (N, D_in), W of shape (D_out, D_in)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"dense expects 2-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input width {x.shape[1]} does not match weight width {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    out = x.data @ weight.data.T + bias.data

    def _backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, g.T @ x.data)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return _result(out, "dense", (x, weight, bias), _backward)


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    out = np.maximum(x.data, x.data.dtype.type(0))

    def _backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _result(out, "relu", (x,), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, "add", (a, b), _backward)


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat needs equal rank, got {a.shape} and {b.shape}")
    axis = axis % a.data.ndim
    sa, sb = list(a.shape), list(b.shape)
    sa.pop(axis)
    sb.pop(axis)
    if sa != sb:
        raise ShapeError(f"concat shapes {a.shape} and {b.shape} differ off axis {axis}")
    split = a.shape[axis]

    def _backward(g: np.ndarray) -> None:
        ga, gb = np.split(g, [split], axis=axis)
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _result(np.concatenate([a.data, b.data], axis=axis), "concat", (a, b), _backward)


def combine(kind: str, a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "concat":
        return concat(a, b, axis)
    raise ValueError(f"unknown combine kind {kind!r}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, "mul", (a, b), _backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading axis."""
    shape = x.shape

    def _backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(shape))

    return _result(x.data.reshape(shape[0], -1), "flatten", (x,), _backward)


def select_channel(x: Tensor, k: int) -> Tensor:
    """Channel ``k`` of an NCHW tensor, keeping the channel axis (N, 1, H, W)."""

    def _backward(g: np.ndarray) -> None:
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, k : k + 1] = g
        _accumulate(x, full)

    return _result(np.ascontiguousarray(x.data[:, k : k + 1]), "select", (x,), _backward)


# --------------------------------------------------------------------------
# reductions


def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("mean of an empty tensor")
    n = x.size

    def _backward(g: np.ndarray) -> None:
        _accumulate(x, np.full(x.shape, g.reshape(()) / n, dtype=x.data.dtype))

    return _result(np.asarray(x.data.mean(dtype=np.float64), dtype=x.data.dtype), "mean", (x,), _backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse needs equal shapes, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ShapeError("mse of empty tensors")
    diff = a.data - b.data
    n = a.size

    def _backward(g: np.ndarray) -> None:
        d = (2.0 / n) * g.reshape(()) * diff
        _accumulate(a, d)
        _accumulate(b, -d)

    val = np.mean(np.square(diff, dtype=np.float64))
    return _result(np.asarray(val, dtype=diff.dtype), "mse", (a, b), _backward)


def reduce(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    if kind == "mean":
        return mean(a)
    if kind == "mse":
        if b is None:
            raise ValueError("mse needs two operands")
        return mse(a, b)
    raise ValueError(f"unknown reduction {kind!r}")


# --------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in seen:
            continue
        seen.add(t._id)
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    # ids increase with creation, so descending id is reverse topological order
    nodes.sort(key=lambda t: t._id, reverse=True)

    _accumulate(loss, np.ones(loss.shape, dtype=loss.data.dtype))
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# --------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _check_finite(grads) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter #{i}")


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    _check_finite(grads)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= (state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.data.dtype)
    return state


def sgd_step(params: list[Tensor], grads: list[np.ndarray], learning_rate: float) -> None:
    _check_finite(grads)
    for p, g in zip(params, grads):
        p.data -= (learning_rate * g).astype(p.data.dtype)
