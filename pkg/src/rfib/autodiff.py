"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tape`` records ``Node`` objects in creation order, which is a valid
topological order because an op's inputs always exist before its output.
``backward`` walks that order in reverse once, accumulating adjoints.

Design constraints:
  * every value is a float64 ndarray (row-major), checked finite after
    each forward op -- a NaN/Inf raises ``NonFiniteError`` immediately;
  * binary elementwise ops take equal shapes, or a scalar (size-1 array
    or Python number) on one side;
  * the only array broadcast is ``broadcast(row, n)``, which stacks a
    bias row over ``n`` matrix rows.

The primitive set (add, sub, mul, matmul, exp, log, tanh, relu, sigmoid,
sum, mean, square, broadcast) is fixed; clamps and divisions by positive
quantities are composed from it (``min(x, c) = c - relu(c - x)``,
``1/y = exp(-log y)``).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "AutodiffError",
    "ShapeError",
    "NonFiniteError",
    "Node",
    "Tape",
    "as_tensor",
    "forward_op",
    "backward",
    "grad_check",
    "exp",
    "log",
    "tanh",
    "relu",
    "sigmoid",
    "square",
    "broadcast",
]


class AutodiffError(Exception):
    """Base class for graph construction and backward-pass failures."""


class ShapeError(AutodiffError):
    """Operand shapes incompatible for the requested op."""


class NonFiniteError(AutodiffError):
    """A forward op produced (or was fed) NaN or Inf."""


def as_tensor(value) -> np.ndarray:
    """Coerce ``value`` to a float64 ndarray, the engine's tensor type."""
    return np.asarray(value, dtype=np.float64)


class Node:
    """One value in the differentiation graph.

    ``value`` and ``adjoint`` are float64 arrays of identical shape;
    ``parents`` are the input nodes and ``_rule`` the local backward rule
    that scatters this node's adjoint into them.
    """

    __slots__ = ("value", "adjoint", "parents", "op", "tape", "_rule")

    # Defer ndarray <op> Node to our reflected operators instead of letting
    # numpy build an object array.
    __array_ufunc__ = None

    def __init__(self, value, tape, op="leaf", parents=(), rule=None):
        self.value = as_tensor(value)
        self.adjoint = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self.tape = tape
        self._rule = rule
        tape._record(self)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # -- operator sugar (lifts plain numbers/arrays onto the same tape) --

    def _lift(self, other):
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise AutodiffError("operands live on different tapes")
            return other
        return self.tape.leaf(other)

    def __add__(self, other):
        return _add(self, self._lift(other))

    def __radd__(self, other):
        return _add(self._lift(other), self)

    def __sub__(self, other):
        return _sub(self, self._lift(other))

    def __rsub__(self, other):
        return _sub(self._lift(other), self)

    def __mul__(self, other):
        return _mul(self, self._lift(other))

    def __rmul__(self, other):
        return _mul(self._lift(other), self)

    def __matmul__(self, other):
        return _matmul(self, self._lift(other))

    def __neg__(self):
        return _mul(self, self.tape.leaf(-1.0))

    def sum(self):
        return _reduce(self, "sum")

    def mean(self):
        return _reduce(self, "mean")

    def square(self):
        return square(self)


class Tape:
    """Topologically ordered record of every Node created on it.

    Single-threaded by design; independent tapes are fully independent.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, node: Node) -> None:
        self.nodes.append(node)

    def leaf(self, value) -> Node:
        """Create an input node (parameter or constant) on this tape.

        The node owns a copy, so later in-place mutation of ``value`` (an
        optimizer step, say) cannot silently change recorded forwards.
        """
        node = Node(np.array(value, dtype=np.float64), self)
        _check_finite(node.value, "leaf")
        return node

    def zero_adjoints(self) -> None:
        for node in self.nodes:
            node.adjoint = np.zeros_like(node.value)


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite result in op '{op}'")


def _make(op, value, parents, rule):
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise AutodiffError("operands live on different tapes")
    _check_finite(value, op)
    return Node(value, tape, op, parents, rule)


def _elementwise_shapes(op, a: Node, b: Node) -> None:
    if a.value.shape == b.value.shape:
        return
    if a.value.size == 1 or b.value.size == 1:
        return
    raise ShapeError(
        f"{op}: shapes {a.value.shape} and {b.value.shape} are neither equal "
        "nor scalar-vs-array"
    )


def _accum(node: Node, grad: np.ndarray) -> None:
    # Scalar operands collect the sum of their elementwise contributions.
    if grad.shape != node.value.shape:
        grad = np.asarray(np.sum(grad)).reshape(node.value.shape)
    node.adjoint += grad


# -- primitives -------------------------------------------------------------


def _add(a: Node, b: Node) -> Node:
    _elementwise_shapes("add", a, b)
    out_value = a.value + b.value

    def rule():
        _accum(a, out.adjoint)
        _accum(b, out.adjoint)

    out = _make("add", out_value, (a, b), rule)
    return out


def _sub(a: Node, b: Node) -> Node:
    _elementwise_shapes("sub", a, b)
    out_value = a.value - b.value

    def rule():
        _accum(a, out.adjoint)
        _accum(b, -out.adjoint)

    out = _make("sub", out_value, (a, b), rule)
    return out


def _mul(a: Node, b: Node) -> Node:
    _elementwise_shapes("mul", a, b)
    out_value = a.value * b.value

    def rule():
        _accum(a, out.adjoint * b.value)
        _accum(b, out.adjoint * a.value)

    out = _make("mul", out_value, (a, b), rule)
    return out


def _matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("matmul requires 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions {a.value.shape} @ {b.value.shape} differ"
        )
    out_value = a.value @ b.value

    def rule():
        a.adjoint += out.adjoint @ b.value.T
        b.adjoint += a.value.T @ out.adjoint

    out = _make("matmul", out_value, (a, b), rule)
    return out


def exp(x: Node) -> Node:
    with np.errstate(over="ignore"):  # overflow becomes NonFiniteError below
        out_value = np.exp(x.value)

    def rule():
        x.adjoint += out.adjoint * out.value

    out = _make("exp", out_value, (x,), rule)
    return out


def log(x: Node) -> Node:
    if np.any(x.value <= 0.0):
        raise NonFiniteError("log of non-positive value")
    out_value = np.log(x.value)

    def rule():
        x.adjoint += out.adjoint / x.value

    out = _make("log", out_value, (x,), rule)
    return out


def tanh(x: Node) -> Node:
    out_value = np.tanh(x.value)

    def rule():
        x.adjoint += out.adjoint * (1.0 - out.value**2)

    out = _make("tanh", out_value, (x,), rule)
    return out


def relu(x: Node) -> Node:
    out_value = np.maximum(x.value, 0.0)

    def rule():
        x.adjoint += out.adjoint * (x.value > 0.0)

    out = _make("relu", out_value, (x,), rule)
    return out


def sigmoid(x: Node) -> Node:
    out_value = expit(x.value)

    def rule():
        x.adjoint += out.adjoint * out.value * (1.0 - out.value)

    out = _make("sigmoid", out_value, (x,), rule)
    return out


def square(x: Node) -> Node:
    out_value = x.value**2

    def rule():
        x.adjoint += out.adjoint * 2.0 * x.value

    out = _make("square", out_value, (x,), rule)
    return out


def _reduce(x: Node, kind: str) -> Node:
    scale = 1.0 if kind == "sum" else 1.0 / x.value.size
    out_value = np.asarray(np.sum(x.value) * scale)

    def rule():
        x.adjoint += out.adjoint * scale

    out = _make(kind, out_value, (x,), rule)
    return out


def broadcast(row: Node, n: int) -> Node:
    """Stack a bias row (shape ``(k,)`` or ``(1, k)``) over ``n`` matrix rows."""
    shape = row.value.shape
    if not (row.value.ndim == 1 or (row.value.ndim == 2 and shape[0] == 1)):
        raise ShapeError(f"broadcast expects a row vector, got shape {shape}")
    if n < 1:
        raise ShapeError("broadcast row count must be positive")
    width = shape[-1]
    out_value = np.broadcast_to(row.value.reshape(1, width), (n, width)).copy()

    def rule():
        row.adjoint += out.adjoint.sum(axis=0).reshape(shape)

    out = _make("broadcast", out_value, (row,), rule)
    return out


_DISPATCH = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "matmul": _matmul,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "sum": lambda x: _reduce(x, "sum"),
    "mean": lambda x: _reduce(x, "mean"),
    "square": square,
    "broadcast": broadcast,
}


def forward_op(kind: str, *inputs):
    """Apply a primitive by name; ``broadcast`` takes (row_node, n)."""
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise AutodiffError(f"unknown op kind {kind!r}") from None
    return fn(*inputs)


def backward(root: Node) -> None:
    """Fill ``adjoint`` of every node reachable from ``root`` with d root / d node.

    Resets all adjoints on the tape first, so repeated calls from the same
    root yield identical results.
    """
    if root.value.size != 1:
        raise ShapeError("backward root must be scalar-valued")
    tape = root.tape
    tape.zero_adjoints()
    root.adjoint = np.ones_like(root.value)

    reachable = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in reachable:
            continue
        reachable.add(id(node))
        stack.extend(node.parents)

    for node in reversed(tape.nodes):
        if id(node) in reachable and node._rule is not None:
            node._rule()


def grad_check(f, params, step: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` maps a list of leaf Nodes (built on a fresh tape from ``params``)
    to a scalar Node. Returns the max over all coordinates of
    ``|analytic - central_difference| / max(1, |analytic|)``.
    """
    if step <= 0.0:
        raise ValueError("grad_check step must be positive")
    params = [as_tensor(p).copy() for p in params]

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    root = f(leaves)
    if root.value.size != 1:
        raise ShapeError("grad_check target must be scalar-valued")
    backward(root)
    analytic = [leaf.adjoint.copy() for leaf in leaves]

    def value_at() -> float:
        probe_tape = Tape()
        probe = [probe_tape.leaf(p) for p in params]
        return float(f(probe).value)

    worst = 0.0
    for i, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            saved = p[idx]
            p[idx] = saved + step
            f_plus = value_at()
            p[idx] = saved - step
            f_minus = value_at()
            p[idx] = saved
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[i][idx] - fd) / max(1.0, abs(analytic[i][idx]))
            worst = max(worst, err)
    return worst
