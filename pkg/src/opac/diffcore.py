"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Tape` records every forward operation as a node.  Nodes are
appended in evaluation order, so parents always have smaller indices than
their children and the backward sweep is a single reverse pass over the
node list.

Only the handful of operations needed by the actor/critic networks and the
losses built on top of them are provided.  Broadcasting is limited to adding
or multiplying a row vector (bias) against a matrix, and to scalars.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DiffArray = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = ", ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DomainError(ValueError):
    """Raised when an operation is applied outside its mathematical domain."""


class Node:
    """Handle to a value recorded on a tape.

    Supports the arithmetic operators so that network code reads naturally
    (``(x @ w + b).relu()``).
    """

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.id = idx

    @property
    def value(self) -> DiffArray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tape.values[self.id].shape

    def __repr__(self) -> str:
        return f"Node(id={self.id}, shape={self.shape})"

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise ValueError("cannot combine nodes from different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.apply("scale", self, c=float(other))
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.apply("scale", self, c=float(other))
        return self.tape.apply("mul", self._lift(other), self)

    def __neg__(self):
        return self.tape.apply("scale", self, c=-1.0)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", self._lift(other), self)

    def tanh(self):
        return self.tape.apply("tanh", self)

    def relu(self):
        return self.tape.apply("relu", self)

    def exp(self):
        return self.tape.apply("exp", self)

    def log(self):
        return self.tape.apply("log", self)

    def softplus(self):
        return self.tape.apply("softplus", self)

    def square(self):
        return self.tape.apply("square", self)

    def sum(self, axis: int | None = None):
        return self.tape.apply("sum", self, axis=axis)

    def mean(self, axis: int | None = None):
        return self.tape.apply("mean", self, axis=axis)

    def clamp(self, lo: float, hi: float):
        return self.tape.apply("clamp", self, lo=float(lo), hi=float(hi))

    def reshape(self, *shape: int):
        return self.tape.apply("reshape", self, shape=tuple(shape))


# ---------------------------------------------------------------------------
# shape rules


def _broadcast_ok(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    if a == b or a == () or b == ():
        return True
    for x, y in ((a, b), (b, a)):
        if len(y) == 2 and (x == (y[1],) or x == (1, y[1])):
            return True
    return False


def _unbroadcast(g: DiffArray, shape: tuple[int, ...]) -> DiffArray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # row vector against a matrix
    return g.sum(axis=0).reshape(shape)


def _binary_shape(op: str, a: DiffArray, b: DiffArray) -> None:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(op, a.shape, b.shape)


# ---------------------------------------------------------------------------
# forward rules: (input values, params) -> output value


def _fwd_matmul(xs, p):
    a, b = xs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def _fwd_add(xs, p):
    _binary_shape("add", *xs)
    return xs[0] + xs[1]


def _fwd_sub(xs, p):
    _binary_shape("sub", *xs)
    return xs[0] - xs[1]


def _fwd_mul(xs, p):
    _binary_shape("mul", *xs)
    return xs[0] * xs[1]


def _fwd_log(xs, p):
    x = xs[0]
    if np.any(x <= 0.0):
        raise DomainError(f"log: non-positive input (min {x.min():.3g})")
    return np.log(x)


def _fwd_softplus(xs, p):
    x = xs[0]
    return np.logaddexp(0.0, x)


def _fwd_sum(xs, p):
    return np.asarray(xs[0].sum(axis=p.get("axis")))


def _fwd_mean(xs, p):
    return np.asarray(xs[0].mean(axis=p.get("axis")))


def _fwd_clamp(xs, p):
    return np.clip(xs[0], p["lo"], p["hi"])


def _fwd_concat(xs, p):
    axis = p.get("axis")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(
            x.shape[k] != ref[k] for k in range(len(ref)) if k != axis % len(ref)
        ):
            raise ShapeError("concat", *(y.shape for y in xs))
    return np.concatenate(xs, axis=axis)


def _fwd_reshape(xs, p):
    x = xs[0]
    try:
        return x.reshape(p["shape"])
    except ValueError:
        raise ShapeError("reshape", x.shape, p["shape"]) from None


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "scale": lambda xs, p: xs[0] * p["c"],
    "tanh": lambda xs, p: np.tanh(xs[0]),
    "relu": lambda xs, p: np.maximum(xs[0], 0.0),
    "exp": lambda xs, p: np.exp(xs[0]),
    "log": _fwd_log,
    "softplus": _fwd_softplus,
    "square": lambda xs, p: xs[0] * xs[0],
    "sum": _fwd_sum,
    "mean": _fwd_mean,
    "clamp": _fwd_clamp,
    "concat": _fwd_concat,
    "reshape": _fwd_reshape,
}

OPS = frozenset(_FORWARD)


# ---------------------------------------------------------------------------
# backward rules: (upstream grad, input values, output value, params, need mask)
#                 -> sequence of input grads (None where not needed)


def _bwd_matmul(g, xs, y, p, need):
    a, b = xs
    return (g @ b.T if need[0] else None, a.T @ g if need[1] else None)


def _bwd_add(g, xs, y, p, need):
    return tuple(
        _unbroadcast(g, x.shape) if n else None for x, n in zip(xs, need)
    )


def _bwd_sub(g, xs, y, p, need):
    a, b = xs
    return (
        _unbroadcast(g, a.shape) if need[0] else None,
        _unbroadcast(-g, b.shape) if need[1] else None,
    )


def _bwd_mul(g, xs, y, p, need):
    a, b = xs
    return (
        _unbroadcast(g * b, a.shape) if need[0] else None,
        _unbroadcast(g * a, b.shape) if need[1] else None,
    )


def _bwd_reduce(g, xs, y, p, need, mean):
    x = xs[0]
    axis = p.get("axis")
    if axis is None:
        out = np.broadcast_to(g, x.shape)
        n = x.size
    else:
        out = np.broadcast_to(np.expand_dims(g, axis), x.shape)
        n = x.shape[axis]
    out = out / n if mean else np.array(out)
    return (out,)


def _bwd_concat(g, xs, y, p, need):
    axis = p.get("axis")
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    parts = np.split(g, bounds, axis=axis)
    return tuple(part if n else None for part, n in zip(parts, need))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


_BACKWARD: dict[str, Callable] = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "scale": lambda g, xs, y, p, n: (g * p["c"],),
    "tanh": lambda g, xs, y, p, n: (g * (1.0 - y * y),),
    "relu": lambda g, xs, y, p, n: (g * (xs[0] > 0.0),),
    "exp": lambda g, xs, y, p, n: (g * y,),
    "log": lambda g, xs, y, p, n: (g / xs[0],),
    "softplus": lambda g, xs, y, p, n: (g * _sigmoid(xs[0]),),
    "square": lambda g, xs, y, p, n: (2.0 * g * xs[0],),
    "sum": lambda g, xs, y, p, n: _bwd_reduce(g, xs, y, p, n, mean=False),
    "mean": lambda g, xs, y, p, n: _bwd_reduce(g, xs, y, p, n, mean=True),
    # straight-zero: no gradient where the clamp is active
    "clamp": lambda g, xs, y, p, n: (
        g * ((xs[0] >= p["lo"]) & (xs[0] <= p["hi"])),
    ),
    "concat": _bwd_concat,
    "reshape": lambda g, xs, y, p, n: (g.reshape(xs[0].shape),),
}


class Tape:
    """Append-only record of a forward computation."""

    def __init__(self):
        self.values: list[DiffArray] = []
        self.parents: list[tuple[int, ...]] = []
        self.rules: list[tuple[str, dict] | None] = []
        self.needs_grad: list[bool] = []

    def __len__(self) -> int:
        return len(self.values)

    def _append(self, value, parents, rule, needs) -> Node:
        self.values.append(value)
        self.parents.append(parents)
        self.rules.append(rule)
        self.needs_grad.append(needs)
        return Node(self, len(self.values) - 1)

    def leaf(self, value, requires_grad: bool = True) -> Node:
        """Record an input array.  The array is not copied."""
        arr = np.asarray(value, dtype=np.float64)
        return self._append(arr, (), None, requires_grad)

    def constant(self, value) -> Node:
        return self.leaf(value, requires_grad=False)

    def apply(self, op: str, *inputs: Node, **params) -> Node:
        try:
            fwd = _FORWARD[op]
        except KeyError:
            raise ValueError(f"unknown op {op!r}") from None
        ids = tuple(x.id for x in inputs)
        out = fwd([self.values[i] for i in ids], params)
        out = np.asarray(out, dtype=np.float64)
        out.flags.writeable = False
        needs = any(self.needs_grad[i] for i in ids)
        return self._append(out, ids, (op, params), needs)

    def concat(self, nodes: Sequence[Node], axis: int = 1) -> Node:
        return self.apply("concat", *nodes, axis=axis)

    def backward(self, root: Node | int) -> dict[int, DiffArray]:
        """Gradients of a scalar ``root`` with respect to every node feeding it."""
        r = root.id if isinstance(root, Node) else int(root)
        if self.values[r].shape != ():
            raise ValueError(
                f"backward: root must be scalar-shaped, got {self.values[r].shape}"
            )
        grads: list[DiffArray | None] = [None] * (r + 1)
        grads[r] = np.ones(())
        for i in range(r, -1, -1):
            g = grads[i]
            if g is None or self.rules[i] is None:
                continue
            op, params = self.rules[i]
            pids = self.parents[i]
            need = [self.needs_grad[j] for j in pids]
            if not any(need):
                continue
            xs = [self.values[j] for j in pids]
            pgs = _BACKWARD[op](g, xs, self.values[i], params, need)
            for j, pg in zip(pids, pgs):
                if pg is None or not self.needs_grad[j]:
                    continue
                # out-of-place: the same array may be routed to several parents
                grads[j] = pg if grads[j] is None else grads[j] + pg
        return {i: g for i, g in enumerate(grads) if g is not None}

    def grad(self, root: Node, wrt: Iterable[Node]) -> list[DiffArray]:
        """Gradients for ``wrt``, with zeros for nodes the root does not reach."""
        table = self.backward(root)
        return [
            np.asarray(table[n.id]) if n.id in table else np.zeros_like(n.value)
            for n in wrt
        ]


def forward_op(tape: Tape, op: str, inputs: Sequence[int], **params) -> int:
    """Apply ``op`` to tape nodes given by id; return the new node id."""
    return tape.apply(op, *(Node(tape, i) for i in inputs), **params).id


def backward(tape: Tape, root: int) -> dict[int, DiffArray]:
    return tape.backward(root)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], params: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    out = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + step
        hi = float(f(p.copy()))
        p[i] = orig - step
        lo = float(f(p.copy()))
        p[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return out
