"""Dense-matrix reverse-mode automatic differentiation.

The engine is deliberately small: 2-D float64 matrices only, a define-by-run
tape that is rebuilt for every optimization step, and exactly the operations
the distillation losses and MLP models need. Broadcasting is restricted to
scalars and a row-vector bias in ``add``; everything else must match shapes
exactly, which keeps the backward rules short and hard to get wrong.

Numerical guards: ``sqrt`` and ``log`` clamp their inputs below at ``EPS``,
and the norm-based operations divide by ``max(norm, EPS)``, so forward values
and gradients stay finite on degenerate inputs (duplicate points, zero rows).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, TapeStateError

EPS = 1e-12


def as_matrix(value) -> np.ndarray:
    """Coerce to a 2-D float64 array; raise DimensionError otherwise."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


class Node:
    """One tape entry: a forward value plus a gradient accumulator.

    The accumulator is allocated lazily on first contribution; until then
    ``grad`` is None, meaning "all zeros". Use :meth:`gradient` for an
    always-materialized array.
    """

    __slots__ = ("tape", "id", "op", "value", "grad", "parents", "_backward", "is_leaf")

    def __init__(self, tape: "Tape", op: str, value: np.ndarray,
                 parents: tuple = (), backward: Callable[[], None] | None = None,
                 is_leaf: bool = False):
        self.tape = tape
        self.op = op
        self.value = value
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.is_leaf = is_leaf
        self.id = tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    def gradient(self) -> np.ndarray:
        """The accumulated gradient, zeros if nothing reached this node."""
        return self.grad if self.grad is not None else np.zeros_like(self.value)

    def accumulate(self, delta) -> None:
        """Add ``delta`` (broadcastable to this node's shape) into ``grad``."""
        if self.grad is None:
            self.grad = np.empty_like(self.value)
            self.grad[...] = delta
        else:
            self.grad += delta

    def backward(self) -> None:
        """Run the reverse sweep of the owning tape from this node."""
        self.tape.backward(self)

    # Arithmetic sugar; scalars are only accepted where the op set allows.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of Nodes; creation order is the topological order.

    A tape supports one backward sweep; call :meth:`reset_grads` to run
    another one over the same graph. Tapes are single-threaded; independent
    tapes may live on different threads.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._swept = False

    def _register(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, value) -> Node:
        """Create a parameter/input node whose gradient callers care about."""
        return Node(self, "leaf", as_matrix(value), is_leaf=True)

    def constant(self, value) -> Node:
        """Create an input node treated as a constant (gradient ignored)."""
        return Node(self, "constant", as_matrix(value))

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf]

    def backward(self, root: Node) -> None:
        """Reverse-accumulate gradients of the scalar ``root`` into ``.grad``.

        The seed gradient is 1. Raises DimensionError if root is not 1x1 and
        TapeStateError on a second sweep without :meth:`reset_grads`, or if
        ``root`` lives on another tape.
        """
        if root.tape is not self:
            raise TapeStateError("root node belongs to a different tape")
        if root.value.shape != (1, 1):
            raise DimensionError(
                f"backward root must be 1x1, got shape {root.value.shape}")
        if self._swept:
            raise TapeStateError(
                "backward already ran on this tape; call reset_grads() first")
        self._swept = True
        root.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: root.id + 1]):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def reset_grads(self) -> None:
        """Clear every gradient accumulator and allow another backward sweep."""
        for node in self.nodes:
            node.grad = None
        self._swept = False


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise TapeStateError("operands belong to different tapes")
    return tape


def _require_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(
            f"{op}: operand shapes {a.value.shape} and {b.value.shape} differ")


# ---------------------------------------------------------------------------
# Binary operations


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may be a 1 x cols row vector (bias broadcast)."""
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    bias = bv.shape != av.shape
    if bias and not (bv.shape == (1, av.shape[1])):
        raise DimensionError(
            f"add: operand shapes {av.shape} and {bv.shape} differ")
    out = Node(tape, "add", av + bv, (a, b))

    def backward():
        a.accumulate(out.grad)
        if bias:
            b.accumulate(out.grad.sum(axis=0, keepdims=True))
        else:
            b.accumulate(out.grad)

    out._backward = backward
    return out


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _require_same_shape(a, b, "sub")
    out = Node(tape, "sub", a.value - b.value, (a, b))

    def backward():
        a.accumulate(out.grad)
        b.accumulate(-out.grad)

    out._backward = backward
    return out


def mul(a: Node, b: Node) -> Node:
    """Hadamard product."""
    tape = _same_tape(a, b)
    _require_same_shape(a, b, "mul")
    out = Node(tape, "mul", a.value * b.value, (a, b))

    def backward():
        a.accumulate(out.grad * b.value)
        b.accumulate(out.grad * a.value)

    out._backward = backward
    return out


def div(a: Node, b: Node) -> Node:
    """Elementwise quotient; ``b`` may be 1x1 (scalar broadcast).

    The caller is responsible for keeping the denominator away from zero
    (compose with :func:`maximum` for a guarded divide).
    """
    tape = _same_tape(a, b)
    scalar = b.value.shape == (1, 1)
    if not scalar:
        _require_same_shape(a, b, "div")
    out = Node(tape, "div", a.value / b.value, (a, b))

    def backward():
        a.accumulate(out.grad / b.value)
        gb = -out.grad * a.value / (b.value * b.value)
        b.accumulate(gb.sum().reshape(1, 1) if scalar else gb)

    out._backward = backward
    return out


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions of {a.value.shape} and {b.value.shape} differ")
    out = Node(tape, "matmul", a.value @ b.value, (a, b))

    def backward():
        a.accumulate(out.grad @ b.value.T)
        b.accumulate(a.value.T @ out.grad)

    out._backward = backward
    return out


def huber(a: Node, b: Node) -> Node:
    """Elementwise Huber penalty of the residual a - b, unit transition.

    0.5*(a-b)^2 where |a-b| <= 1, |a-b| - 0.5 beyond; C1 at the transition.
    """
    tape = _same_tape(a, b)
    _require_same_shape(a, b, "huber")
    r = a.value - b.value
    quad = np.abs(r) <= 1.0
    value = np.where(quad, 0.5 * r * r, np.abs(r) - 0.5)
    out = Node(tape, "huber", value, (a, b))

    def backward():
        d = np.where(quad, r, np.sign(r)) * out.grad
        a.accumulate(d)
        b.accumulate(-d)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Unary elementwise operations


def _unary(op: str, x: Node, value: np.ndarray, dvalue: np.ndarray) -> Node:
    out = Node(x.tape, op, value, (x,))

    def backward():
        x.accumulate(out.grad * dvalue)

    out._backward = backward
    return out


def square(x: Node) -> Node:
    return _unary("square", x, x.value * x.value, 2.0 * x.value)


def sqrt(x: Node) -> Node:
    """Square root with the input clamped below at EPS."""
    v = np.sqrt(np.maximum(x.value, EPS))
    return _unary("sqrt", x, v, np.where(x.value > EPS, 0.5 / v, 0.0))


def exp(x: Node) -> Node:
    v = np.exp(x.value)
    return _unary("exp", x, v, v)


def log(x: Node) -> Node:
    """Natural log with the input clamped below at EPS."""
    clamped = np.maximum(x.value, EPS)
    return _unary("log", x, np.log(clamped),
                  np.where(x.value > EPS, 1.0 / clamped, 0.0))


def maximum(x: Node, floor: float) -> Node:
    """Elementwise max with a scalar; the subgradient at the tie is 0."""
    return _unary("maximum", x, np.maximum(x.value, floor),
                  (x.value > floor).astype(np.float64))


def scale(x: Node, factor: float) -> Node:
    return _unary("scale", x, x.value * factor,
                  np.full_like(x.value, factor))


def shift(x: Node, offset: float) -> Node:
    return _unary("shift", x, x.value + offset, np.ones_like(x.value))


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp to [lo, hi]; gradient flows only strictly inside the interval."""
    inside = ((x.value > lo) & (x.value < hi)).astype(np.float64)
    return _unary("clip", x, np.clip(x.value, lo, hi), inside)


def transpose(x: Node) -> Node:
    out = Node(x.tape, "transpose", x.value.T.copy(), (x,))

    def backward():
        x.accumulate(out.grad.T)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Structural and reduction operations


def take_rows(x: Node, indices) -> Node:
    """Gather rows by index; backward scatter-adds (repeats accumulate)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError(f"take_rows: indices must be 1-D, got {idx.shape}")
    n = x.value.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DomainError(f"take_rows: index out of range for {n} rows")
    out = Node(x.tape, "take_rows", x.value[idx], (x,))

    def backward():
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.add.at(x.grad, idx, out.grad)

    out._backward = backward
    return out


def row_sum(x: Node) -> Node:
    """Sum along each row -> N x 1."""
    out = Node(x.tape, "row_sum", x.value.sum(axis=1, keepdims=True), (x,))

    def backward():
        x.accumulate(out.grad)  # broadcasts over columns

    out._backward = backward
    return out


def reduce_sum(x: Node) -> Node:
    """Sum of all entries -> 1 x 1."""
    if x.value.size == 0:
        raise DomainError("reduce_sum: empty matrix")
    out = Node(x.tape, "reduce_sum", x.value.sum().reshape(1, 1), (x,))

    def backward():
        x.accumulate(out.grad)

    out._backward = backward
    return out


def reduce_mean(x: Node) -> Node:
    """Mean of all entries -> 1 x 1."""
    if x.value.size == 0:
        raise DomainError("reduce_mean: empty matrix")
    out = Node(x.tape, "reduce_mean", x.value.mean().reshape(1, 1), (x,))
    denom = float(x.value.size)

    def backward():
        x.accumulate(out.grad / denom)

    out._backward = backward
    return out


def row_l2_norms(x: Node) -> Node:
    """Euclidean norm of each row -> N x 1; exact forward, guarded backward.

    Zero rows yield norm 0 with zero gradient, so degenerate pairs of
    identical points stay differentiable.
    """
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    out = Node(x.tape, "row_l2_norms", norms, (x,))
    safe = np.maximum(norms, EPS)

    def backward():
        x.accumulate(out.grad * x.value / safe)

    out._backward = backward
    return out


def row_l2_normalize(x: Node) -> Node:
    """Divide each row by max(||row||, EPS)."""
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, EPS)
    y = x.value / safe
    out = Node(x.tape, "row_l2_normalize", y, (x,))
    active = norms > EPS

    def backward():
        g = out.grad
        # d(x/||x||) = (g - y (g.y)) / ||x|| where the norm is live; rows at
        # or below the guard keep the plain g/EPS of a constant divisor.
        dots = (g * y).sum(axis=1, keepdims=True)
        if active.all():
            x.accumulate((g - y * dots) / safe)
        else:
            x.accumulate((g - np.where(active, y * dots, 0.0)) / safe)

    out._backward = backward
    return out


def softmax_rows(x: Node, temperature: float) -> Node:
    """Row-wise softmax of x/temperature, max-subtracted for stability."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    y = softmax_values(x.value, temperature)
    out = Node(x.tape, "softmax_rows", y, (x,))

    def backward():
        g = out.grad
        dots = (g * y).sum(axis=1, keepdims=True)
        x.accumulate(y * (g - dots) / temperature)

    out._backward = backward
    return out


def softmax_values(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Plain-array softmax sharing the exact kernel of :func:`softmax_rows`."""
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Gradient checking


def finite_difference_check(f: Callable[[list[Node]], Node],
                            params: Sequence[np.ndarray],
                            h: float = 1e-3) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` receives one leaf Node per parameter array and must return a scalar
    (1x1) Node. Returns the max over all coordinates of
    |ad - fd| / max(1e-8, |ad| + |fd|).
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    params = [as_matrix(p).copy() for p in params]

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    root = f(leaves)
    tape.backward(root)
    analytic = [leaf.gradient() for leaf in leaves]

    def value_at(arrays) -> float:
        probe = Tape()
        return float(f([probe.leaf(a) for a in arrays]).value[0, 0])

    worst = 0.0
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = value_at(params)
            flat[j] = orig - h
            down = value_at(params)
            flat[j] = orig
            fd = (up - down) / (2.0 * h)
            ad = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(ad - fd) / max(1e-8, abs(ad) + abs(fd)))
    return worst
