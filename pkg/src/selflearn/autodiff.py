"""Small dense-array autodiff engine.

Values are float64 numpy arrays wrapped in :class:`Tensor`. Operations are
recorded on the innermost active :class:`Tape` whenever one of their inputs
requires a gradient; ``Tape.gradient`` replays the recording backwards.

    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        y = ad.sum(x * x)
    (gx,) = tape.gradient(y, [x])   # [2, 4, 6]

Outside a tape, the same functions simply evaluate.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, TapeUsageError

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor.__rop__

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Records primitive operations for reverse-mode differentiation.

    Nodes are appended in execution order, which is a topological order of
    the computation, so walking them backwards visits every node after all
    of its consumers.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def _record(self, inputs, output, vjp) -> None:
        self.nodes.append(_Node(inputs, output, vjp))
        self._produced.add(id(output))

    def gradient(self, output: Tensor, inputs: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        """Return d(output)/d(input) for each input, contracted with ``seed``.

        ``seed`` defaults to ones shaped like ``output``. Inputs that do not
        influence the output receive zero arrays.
        """
        if id(output) not in self._produced and not any(output is x for x in inputs):
            raise TapeUsageError("backward called for a value that was not computed on this tape")
        if seed is None:
            seed = np.ones_like(output.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != output.shape:
                raise ShapeError(f"seed shape {seed.shape} != output shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            for x, gx in zip(node.inputs, node.vjp(g)):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        return [grads.get(id(x), np.zeros_like(x.data)) for x in inputs]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A tensor that never carries gradient (detached copy of ``x``'s data)."""
    return Tensor(x.data if isinstance(x, Tensor) else x)


def _finish(name: str, out: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name} produced a non-finite value")
    needs = any(x.requires_grad for x in inputs)
    t = Tensor(out, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1]._record(inputs, t, vjp)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _finish("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _finish("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _finish("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data
    return _finish("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _finish("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _finish("matmul", a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


# -- elementwise unary -------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _finish("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _finish("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive argument")
    return _finish("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt: negative argument")
    out = np.sqrt(x.data)

    def vjp(g):
        # subgradient 0 at the origin
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _finish("sqrt", out, (x,), vjp)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _finish("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _finish("cos", np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def arccos(x) -> Tensor:
    x = as_tensor(x)
    if np.any(np.abs(x.data) >= 1.0):
        raise NumericError("arccos: argument must lie strictly inside (-1, 1)")
    return _finish("arccos", np.arccos(x.data), (x,),
                   lambda g: (-g / np.sqrt(1.0 - x.data * x.data),))


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _finish("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# -- reductions --------------------------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish("sum", out, (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    if count == 0:
        raise ShapeError("mean of an empty array")
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def max(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Reduce-max. Gradient is split evenly between tied maxima."""
    x = as_tensor(x)
    out = np.max(x.data, axis=axis, keepdims=True)
    mask = x.data == out
    mask = mask / mask.sum(axis=axis, keepdims=True)
    result = out if keepdims else np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * x.ndim)
        return (g * mask,)

    return _finish("max", result, (x,), vjp)


# -- indexing ----------------------------------------------------------------

def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _finish("take_rows", x.data[index], (x,), vjp)


def take_elements(x, rows, cols) -> Tensor:
    """``out[k] = x[rows[k], cols[k]]`` for a 2-D ``x``."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2:
        raise ShapeError(f"take_elements expects a 2-D array, got {x.shape}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return _finish("take_elements", x.data[rows, cols], (x,), vjp)


# -- geometry ----------------------------------------------------------------

def pairwise_sq_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances between rows, no expansion trick."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def pairwise_distances(a, b=None) -> Tensor:
    """Euclidean distance matrix between rows of ``a`` (N x d) and ``b`` (M x d).

    The gradient at a zero distance is taken to be zero.
    """
    a = as_tensor(a)
    b = a if b is None else as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_distances: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def vjp(g):
        scale = np.divide(g, out, out=np.zeros_like(out), where=out > 0)
        contrib = scale[:, :, None] * diff
        ga = contrib.sum(axis=1)
        gb = -contrib.sum(axis=0)
        if b is a:
            return (ga + gb, None)
        return (ga, gb)

    if b is a:
        return _finish("pairwise_distances", out, (a, _DUMMY), vjp)
    return _finish("pairwise_distances", out, (a, b), vjp)


_DUMMY = Tensor(0.0)


def euclidean_distance(x, y) -> Tensor:
    """Distance between two vectors (or row-wise between two N x d arrays)."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"euclidean_distance: shapes {x.shape} and {y.shape} differ")
    return sqrt(sum(square(x - y), axis=-1))


def l2_normalize(x, axis: int = -1, return_mask: bool = False):
    """Scale vectors along ``axis`` to unit Euclidean norm.

    Zero vectors are returned unchanged (as zeros). With ``return_mask`` the
    boolean mask of such degenerate vectors is returned alongside.
    """
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    zero = norm == 0
    safe = np.where(zero, 1.0, norm)
    out = x.data / safe

    def vjp(g):
        proj = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(zero, 0.0, (g - out * proj) / safe),)

    result = _finish("l2_normalize", out, (x,), vjp)
    if return_mask:
        return result, np.squeeze(zero, axis=axis)
    return result


# -- composites --------------------------------------------------------------

def log_softmax(logits, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax (the row max is subtracted first)."""
    logits = as_tensor(logits)
    shifted = logits - constant(np.max(logits.data, axis=axis, keepdims=True))
    return shifted - log(sum(exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis: int = -1) -> Tensor:
    return exp(log_softmax(logits, axis=axis))


def forward(fn: Callable[..., Tensor], *inputs, tape: Tape | None = None):
    """Evaluate ``fn(*inputs)`` on a tape that watches every input.

    Returns ``(output, tape, watched_inputs)``; pass the tape and inputs to
    :func:`backward` to obtain gradients.
    """
    watched = [Tensor(as_tensor(x).data, requires_grad=True) for x in inputs]
    tape = tape or Tape()
    with tape:
        out = fn(*watched)
    return out, tape, watched


def backward(tape: Tape, output: Tensor, inputs: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    return tape.gradient(output, inputs, seed=seed)


def value_and_grad(fn: Callable[..., Tensor], *inputs):
    """Convenience: value of scalar ``fn`` and its gradient per input."""
    out, tape, watched = forward(fn, *inputs)
    return out.data, backward(tape, out, watched)
