"""Dense float64 tensors with a reverse-mode tape.

Every op takes and returns :class:`Tensor` objects. Binary ops require equal
shapes; there is no implicit broadcasting, so bias rows and repeated vectors
go through :func:`add_rowvec` and :func:`repeat_rows` explicitly.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class ContractError(ValueError):
    """A caller broke a precondition (non-scalar root, missing grad, ...)."""


class Tensor:
    """A node in the computation graph.

    ``data`` holds the values (row-major, float64). ``grad`` is filled by
    :func:`backward` for every tensor with ``requires_grad`` that the root
    depends on.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data buffer."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same buffer, no graph history, no gradient."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Operations reachable from a root, in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
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
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable ``t``."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    tape = Tape.from_root(root)
    upstream: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in upstream:
                upstream[key] = upstream[key] + pg
            else:
                upstream[key] = pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Linear algebra and elementwise ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _node(ad @ bd, (a, b), bw, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    # np.maximum (not np.where) so NaN inputs stay NaN and divergence is seen
    mask = a.data > 0.0
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """ln(max(a, floor)); zero gradient where the floor is active."""
    clipped = np.maximum(a.data, floor)
    live = a.data > floor

    def bw(g):
        return (np.where(live, g / clipped, 0.0),)

    return _node(np.log(clipped), (a,), bw, "log")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    live = a.data > floor
    return _node(np.maximum(a.data, floor), (a,), lambda g: (g * live,), "clamp_min")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


# ---------------------------------------------------------------------------
# Shape plumbing and reductions


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add the vector ``v`` (length m) to every row of ``x`` (n×m)."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: cannot add {v.shape} to rows of {x.shape}")
    return _node(x.data + v.data, (x, v), lambda g: (g, g.sum(axis=0)), "add_rowvec")


def repeat_rows(v: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of the vector ``v`` into an n×m matrix."""
    if v.data.ndim != 1:
        raise DimensionError(f"repeat_rows: expected a vector, got {v.shape}")
    out = np.tile(v.data, (n, 1))
    return _node(out, (v,), lambda g: (g.sum(axis=0),), "repeat_rows")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row counts of {a.shape} and {b.shape} differ")
    k = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _node(out, (a, b), lambda g: (g[:, :k], g[:, k:]), "concat_cols")


def take_rows(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[0]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"take_rows: [{start}:{stop}] out of range for {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _node(a.data[start:stop], (a,), bw, "take_rows")


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    shape = a.shape
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def row_sums(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"row_sums: expected a matrix, got {a.shape}")
    return _node(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], a.shape[1], axis=1),),
                 "row_sums")


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows: n×m -> m."""
    if a.data.ndim != 2:
        raise DimensionError(f"mean_rows: expected a matrix, got {a.shape}")
    n = a.shape[0]
    return _node(a.data.mean(axis=0), (a,), lambda g: (np.tile(g / n, (n, 1)),), "mean_rows")


# ---------------------------------------------------------------------------
# Softmax family and distances


def log_softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"log_softmax: need an n×K matrix with K >= 2, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _node(out, (logits,), bw, "log_softmax")


def softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax: need an n×K matrix with K >= 2, got {logits.shape}")
    z = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _node(out, (logits,), bw, "softmax")


def l1_distance(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean over rows of the per-row L1 distance."""
    _same_shape("l1_distance", x, x_hat)
    if x.data.ndim != 2:
        raise DimensionError(f"l1_distance: expected matrices, got {x.shape}")
    diff = x.data - x_hat.data
    n = x.shape[0]
    sign = np.sign(diff) / n

    def bw(g):
        gs = float(g) * sign
        return (gs, -gs)

    return _node(np.asarray(np.abs(diff).sum() / n), (x, x_hat), bw, "l1_distance")


# ---------------------------------------------------------------------------
# Finite-difference checking


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is called with ``inputs`` and must return a scalar tensor. The
    inputs' ``grad`` fields are overwritten.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    backward(f(*inputs))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a_grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(a_flat[i] - numeric) / max(1e-8, abs(a_flat[i]) + abs(numeric))
            if math.isnan(err):
                return math.inf
            worst = max(worst, err)
    return worst
