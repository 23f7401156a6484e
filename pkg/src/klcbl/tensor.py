"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array plus an optional gradient. Every
differentiable operation records its inputs and a local backward rule on
the output node; ``backward`` on a scalar loss topologically orders the
recorded operations (the gradient tape) and walks them once in reverse.

Two build profiles exist: float32 (training default) and float64 (used by
gradient checks so central differences have meaningful tolerances). Select
one with ``set_default_dtype`` or the ``precision`` context manager.

Broadcasting is deliberately restricted to scalar-with-tensor; all other
shape mismatches raise ``ShapeError``. Operations whose output contains a
NaN/Inf raise ``NumericError`` instead of propagating silent garbage.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """An operation produced NaN/Inf on finite inputs."""


_DEFAULT_DTYPE = np.float32
_THREAD_STATE = threading.local()


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}, expected float32 or float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (f32 training / f64 checking)."""
    global _DEFAULT_DTYPE
    saved = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = saved


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference).

    The flag is thread-local: parallel workers on disjoint tapes do not
    observe each other's inference blocks.
    """
    saved = grad_enabled()
    _THREAD_STATE.grad_enabled = False
    try:
        yield
    finally:
        _THREAD_STATE.grad_enabled = saved


def grad_enabled() -> bool:
    return getattr(_THREAD_STATE, "grad_enabled", True)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"operation '{op}' produced non-finite values")


class Tensor:
    """n-dimensional float array participating in the gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[], None]] = None
        self._op = ""

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- structural helpers ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op!r})"

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.data.dtype != self.data.dtype:
                raise ValueError(
                    f"mixed dtypes {self.data.dtype} vs {other.data.dtype}; "
                    "stay inside one build profile"
                )
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @staticmethod
    def _binary_shapes(a: "Tensor", b: "Tensor", op: str) -> None:
        # scalar-with-tensor is the only permitted broadcast
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise ShapeError(f"'{op}' needs equal shapes or a scalar, got {a.shape} and {b.shape}")

    @staticmethod
    def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
        # collapse a broadcast gradient back onto a scalar operand
        return g if g.shape == shape else np.asarray(g.sum(), dtype=g.dtype).reshape(shape)

    def __add__(self, other):
        other = self._coerce(other)
        Tensor._binary_shapes(self, other, "add")
        out = Tensor._from_op(self.data + other.data, (self, other), "add")

        def backward():
            if self.requires_grad:
                self.accumulate_grad(Tensor._reduce_to(out.grad, self.shape))
            if other.requires_grad:
                other.accumulate_grad(Tensor._reduce_to(out.grad, other.shape))

        out._backward = backward if out._parents else None
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        Tensor._binary_shapes(self, other, "sub")
        out = Tensor._from_op(self.data - other.data, (self, other), "sub")

        def backward():
            if self.requires_grad:
                self.accumulate_grad(Tensor._reduce_to(out.grad, self.shape))
            if other.requires_grad:
                other.accumulate_grad(Tensor._reduce_to(-out.grad, other.shape))

        out._backward = backward if out._parents else None
        return out

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        Tensor._binary_shapes(self, other, "mul")
        out = Tensor._from_op(self.data * other.data, (self, other), "mul")

        def backward():
            if self.requires_grad:
                self.accumulate_grad(Tensor._reduce_to(out.grad * other.data, self.shape))
            if other.requires_grad:
                other.accumulate_grad(Tensor._reduce_to(out.grad * self.data, other.shape))

        out._backward = backward if out._parents else None
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor._from_op(-self.data, (self,), "neg")

        def backward():
            self.accumulate_grad(-out.grad)

        out._backward = backward if out._parents else None
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    # -- unary nonlinearities -----------------------------------------------

    def _unary(self, y: np.ndarray, dy: np.ndarray, op: str) -> "Tensor":
        out = Tensor._from_op(y, (self,), op)

        def backward():
            self.accumulate_grad(dy * out.grad)

        out._backward = backward if out._parents else None
        return out

    def tanh(self):
        y = np.tanh(self.data)
        return self._unary(y, 1.0 - y * y, "tanh")

    def sigmoid(self):
        y = _sigmoid(self.data)
        return self._unary(y, y * (1.0 - y), "sigmoid")

    def silu(self):
        s = _sigmoid(self.data)
        y = self.data * s
        # d/dx x*sig(x) = sig(x) (1 + x (1 - sig(x)))
        return self._unary(y, s * (1.0 + self.data * (1.0 - s)), "silu")

    def relu(self):
        y = np.maximum(self.data, 0.0)
        return self._unary(y, (self.data > 0).astype(self.data.dtype), "relu")

    def exp(self):
        with np.errstate(over="ignore"):
            y = np.exp(self.data)
        _check_finite(y, "exp")
        return self._unary(y, y, "exp")

    def log(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(self.data)
        _check_finite(y, "log")
        return self._unary(y, 1.0 / self.data, "log")

    # -- reductions -----------------------------------------------------------

    def sum(self):
        out = Tensor._from_op(np.asarray(self.data.sum(), dtype=self.data.dtype), (self,), "sum")

        def backward():
            self.accumulate_grad(np.broadcast_to(out.grad, self.shape).astype(self.data.dtype))

        out._backward = backward if out._parents else None
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def backward(self):
        backward(self)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch keeps exp from overflowing for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,k)@(k,n) -> (m,n), or (m,k)@(k,) -> (m,)."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 2-D @ 1-or-2-D, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"mixed dtypes {a.data.dtype} vs {b.data.dtype}")
    out = Tensor._from_op(a.data @ b.data, (a, b), "matmul")

    def backward():
        g = out.grad
        if b.data.ndim == 1:
            if a.requires_grad:
                a.accumulate_grad(np.outer(g, b.data))
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)
        else:
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)

    out._backward = backward if out._parents else None
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the gradient."""
    if not parts:
        raise ShapeError("concat of an empty list")
    ndim = parts[0].data.ndim
    for p in parts[1:]:
        if p.data.ndim != ndim or any(
            i != axis % ndim and p.shape[i] != parts[0].shape[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat parts disagree off-axis: {[tuple(q.shape) for q in parts]} on axis {axis}"
            )
    out = Tensor._from_op(
        np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat"
    )
    sizes = [p.shape[axis % ndim] for p in parts]

    def backward():
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * ndim
                index[axis % ndim] = slice(offset, offset + size)
                p.accumulate_grad(out.grad[tuple(index)])
            offset += size

    out._backward = backward if out._parents else None
    return out


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not parts:
        raise ShapeError("stack of an empty list")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise ShapeError(f"stack parts disagree: {[tuple(q.shape) for q in parts]}")
    out = Tensor._from_op(np.stack([p.data for p in parts]), tuple(parts), "stack")

    def backward():
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.accumulate_grad(out.grad[i])

    out._backward = backward if out._parents else None
    return out


def row(x: Tensor, i: int) -> Tensor:
    """Select row i of a 2-D tensor (copying; gradients scatter back)."""
    if x.data.ndim != 2:
        raise ShapeError(f"row() needs a 2-D tensor, got shape {x.shape}")
    out = Tensor._from_op(x.data[i].copy(), (x,), "row")

    def backward():
        g = np.zeros_like(x.data)
        g[i] = out.grad
        x.accumulate_grad(g)

    out._backward = backward if out._parents else None
    return out


_UNARY_KINDS = ("neg", "tanh", "sigmoid", "silu", "relu", "exp", "log")
_BINARY_KINDS = ("add", "sub", "mul")


def elementwise(op_kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Pointwise operation dispatch by name.

    Unary kinds: neg, tanh, sigmoid, silu, relu, exp, log.
    Binary kinds: add, sub, mul (equal shapes, or scalar-with-tensor).
    """
    if op_kind in _UNARY_KINDS:
        if b is not None:
            raise ValueError(f"'{op_kind}' is unary but a second operand was given")
        if op_kind == "neg":
            return -a
        return getattr(a, op_kind)()
    if op_kind in _BINARY_KINDS:
        if b is None:
            raise ValueError(f"'{op_kind}' is binary but only one operand was given")
        return {"add": a.__add__, "sub": a.__sub__, "mul": a.__mul__}[op_kind](b)
    raise ValueError(f"unknown op_kind {op_kind!r}; expected one of {_UNARY_KINDS + _BINARY_KINDS}")


class GradTape:
    """Topologically ordered record of the operations feeding one output.

    Built by depth-first traversal of the recorded graph, so inputs always
    precede the operations that consume them; a backward pass walks the
    list once in reverse.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.nodes = order
        self.ops = [n for n in order if n._backward is not None]

    def run_backward(self, root: Tensor) -> None:
        # intermediates start clean so a repeated pass over the same graph
        # adds exactly one more gradient unit to the leaves
        for node in self.ops:
            node.grad = None
        root.grad = np.ones_like(root.data)
        for node in reversed(self.ops):
            if node.grad is not None:
                node._backward()


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    Leaf gradients are added to whatever they already hold, so repeated
    passes without ``zero_grad`` accumulate; op intermediates are reset at
    the start of each pass.
    """
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any requires_grad tensor (nothing on tape)")
    GradTape(loss).run_backward(loss)


def check_gradients(f, x: Tensor, eps: float = 1e-4) -> float:
    """Compare analytic gradients of ``f`` at ``x`` to central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    ``f`` must map the tensor to a scalar and be deterministic. Meaningful
    tolerances require the float64 profile. Near a kink (relu zero, max-pool
    tie) the two sides disagree by construction and the returned error is
    large; that is the documented flag telling the caller to perturb the
    input away from the degenerate point.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if not isinstance(out, Tensor) or out.shape != ():
        raise ShapeError("check_gradients needs f to produce a scalar Tensor")
    backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            hi = f(x).item()
            flat[i] = saved - eps
            lo = f(x).item()
            flat[i] = saved
            nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
