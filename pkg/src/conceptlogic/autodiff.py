"""Small reverse-mode autodiff engine over float64 numpy arrays.

Graphs are built eagerly (define-by-run): every op returns a :class:`Node`
holding its value and a closure that pushes the upstream gradient to its
parents. :func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

OP_KINDS = (
    "input",
    "matmul",
    "add",
    "mul",
    "relu",
    "sigmoid",
    "concat",
    "neg-affine",
    "reduce-min",
    "reduce-max",
    "maximum",
    "bce",
    "ce",
    "ce-prob",
    "scale",
    "sum",
    "mean",
    "reshape",
)

PROB_EPS = 1e-7


class ShapeError(ValueError):
    """Raised when an op receives operands with incompatible shapes."""

    def __init__(self, op: str, lhs: Tuple[int, ...], rhs: Tuple[int, ...], detail: str = ""):
        self.op = op
        self.lhs = tuple(lhs)
        self.rhs = tuple(rhs)
        msg = f"{op}: incompatible shapes {self.lhs} and {self.rhs}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Node:
    """A value in the computation graph plus its gradient accumulator."""

    __slots__ = ("op", "value", "grad", "parents", "name", "_backward")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        op: str = "input",
        name: Optional[str] = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self.name = name
        self._backward = backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    # operator sugar, used sparingly by the model code
    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)


def leaf(value, name: Optional[str] = None) -> Node:
    return Node(value, op="input", name=name)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Node, b: Node) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape, "not broadcastable") from None


def matmul(a: Node, b: Node) -> Node:
    """``a @ b`` where ``b`` is a 2-D matrix and ``a`` has any leading batch dims."""
    if b.value.ndim != 2 or a.value.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, "inner dimensions differ")
    k, n = b.shape

    def _backward(g: np.ndarray) -> None:
        a.grad += g @ b.value.T
        b.grad += a.value.reshape(-1, k).T @ g.reshape(-1, n)

    out = Node(a.value @ b.value, (a, b), None, "matmul")
    out._backward = _backward
    return out


def add(a: Node, b: Node) -> Node:
    _broadcast_shape("add", a, b)

    def _backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return Node(a.value + b.value, (a, b), _backward, "add")


def mul(a: Node, b: Node) -> Node:
    """Elementwise product with numpy broadcasting."""
    _broadcast_shape("mul", a, b)

    def _backward(g):
        a.grad += _unbroadcast(g * b.value, a.shape)
        b.grad += _unbroadcast(g * a.value, b.shape)

    return Node(a.value * b.value, (a, b), _backward, "mul")


def scale(x: Node, k: float) -> Node:
    k = float(k)

    def _backward(g):
        x.grad += k * g

    return Node(k * x.value, (x,), _backward, "scale")


def neg_affine(x: Node, c: float = 1.0) -> Node:
    """``c - x``; with the default this is fuzzy strong negation."""

    def _backward(g):
        x.grad -= g

    return Node(c - x.value, (x,), _backward, "neg-affine")


def relu(x: Node) -> Node:
    mask = x.value > 0

    def _backward(g):
        x.grad += g * mask

    return Node(np.where(mask, x.value, 0.0), (x,), _backward, "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Node) -> Node:
    s = _sigmoid(x.value)

    def _backward(g):
        x.grad += g * s * (1.0 - s)

    return Node(s, (x,), _backward, "sigmoid")


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ValueError("concat: need at least one input")
    ref = nodes[0]
    ax = axis % ref.value.ndim
    for other in nodes[1:]:
        if other.value.ndim != ref.value.ndim or any(
            s != t for i, (s, t) in enumerate(zip(ref.shape, other.shape)) if i != ax
        ):
            raise ShapeError("concat", ref.shape, other.shape, f"axis {axis}")
    bounds = np.cumsum([n.shape[ax] for n in nodes])[:-1]

    def _backward(g):
        for node, piece in zip(nodes, np.split(g, bounds, axis=ax)):
            node.grad += piece

    return Node(np.concatenate([n.value for n in nodes], axis=ax), nodes, _backward, "concat")


def reshape(x: Node, shape: Tuple[int, ...]) -> Node:
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None

    def _backward(g):
        x.grad += g.reshape(x.shape)

    return Node(value, (x,), _backward, "reshape")


def _reduce_extremum(x: Node, axis: Optional[int], op: str) -> Node:
    pick = np.argmin if op == "reduce-min" else np.argmax
    # np.argmin/argmax return the first occurrence, so ties go to the lowest index
    if axis is None:
        idx = int(pick(x.value))
        value = x.value.reshape(-1)[idx]

        def _backward(g):
            flat = x.grad.reshape(-1)
            flat[idx] += float(np.asarray(g).reshape(()))

        return Node(value, (x,), _backward, op)

    ax = axis % x.value.ndim
    idx = np.expand_dims(pick(x.value, axis=ax), ax)
    value = np.take_along_axis(x.value, idx, axis=ax).squeeze(ax)

    def _backward(g):
        routed = np.zeros_like(x.value)
        np.put_along_axis(routed, idx, np.expand_dims(g, ax), axis=ax)
        x.grad += routed

    return Node(value, (x,), _backward, op)


def reduce_min(x: Node, axis: Optional[int] = None) -> Node:
    return _reduce_extremum(x, axis, "reduce-min")


def reduce_max(x: Node, axis: Optional[int] = None) -> Node:
    return _reduce_extremum(x, axis, "reduce-max")


def maximum(a: Node, b: Node) -> Node:
    """Elementwise max; on ties the gradient goes to ``a``."""
    if a.shape != b.shape:
        raise ShapeError("maximum", a.shape, b.shape)
    take_a = a.value >= b.value

    def _backward(g):
        a.grad += g * take_a
        b.grad += g * ~take_a

    return Node(np.where(take_a, a.value, b.value), (a, b), _backward, "maximum")


def minimum(a: Node, b: Node) -> Node:
    return neg_affine(maximum(neg_affine(a, 0.0), neg_affine(b, 0.0)), 0.0)


def sum(x: Node, axis: Optional[int] = None) -> Node:  # noqa: A001 - mirrors numpy
    def _backward(g):
        if axis is None:
            x.grad += float(g)
        else:
            x.grad += np.expand_dims(g, axis)

    return Node(x.value.sum(axis=axis), (x,), _backward, "sum")


def mean(x: Node) -> Node:
    n = x.value.size

    def _backward(g):
        x.grad += float(g) / n

    return Node(x.value.mean(), (x,), _backward, "mean")


def bce(p: Node, target) -> Node:
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 ``target``.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``; clamped entries get no
    gradient.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError("bce", p.shape, t.shape)
    q = np.clip(p.value, PROB_EPS, 1.0 - PROB_EPS)
    inside = (p.value >= PROB_EPS) & (p.value <= 1.0 - PROB_EPS)
    n = q.size
    loss = -np.mean(t * np.log(q) + (1.0 - t) * np.log1p(-q))

    def _backward(g):
        dq = -(t / q - (1.0 - t) / (1.0 - q)) / n
        p.grad += float(g) * dq * inside

    return Node(loss, (p,), _backward, "bce")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ce(logits: Node, labels) -> Node:
    """Mean categorical cross-entropy of softmax(``logits``) for integer labels."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError("ce", logits.shape, y.shape)
    logp = _log_softmax(logits.value)
    rows = np.arange(len(y))
    loss = -logp[rows, y].mean()

    def _backward(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        logits.grad += float(g) * d / len(y)

    return Node(loss, (logits,), _backward, "ce")


def ce_prob(p: Node, labels, eps: float = PROB_EPS) -> Node:
    """Cross-entropy of non-negative scores renormalized to a distribution.

    Each row of ``p`` is floored at ``eps`` and divided by its sum before
    taking ``-log`` of the labelled entry.
    """
    y = np.asarray(labels, dtype=np.int64)
    if p.value.ndim != 2 or y.shape != (p.shape[0],):
        raise ShapeError("ce-prob", p.shape, y.shape)
    floored = np.maximum(p.value, eps)
    live = p.value >= eps
    total = floored.sum(axis=1)
    rows = np.arange(len(y))
    loss = -np.mean(np.log(floored[rows, y]) - np.log(total))

    def _backward(g):
        d = np.broadcast_to((1.0 / total)[:, None], floored.shape).copy()
        d[rows, y] -= 1.0 / floored[rows, y]
        p.grad += float(g) * d * live / len(y)

    return Node(loss, (p,), _backward, "ce-prob")


def topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    seen = set()
    stack: List[Tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> Dict[str, np.ndarray]:
    """Accumulate ``d root / d node`` into every node reachable from ``root``.

    Returns the gradients of named leaves. Gradients are reset first, so
    calling this twice on the same graph gives the same result.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = topological_order(root)
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    return {n.name: n.grad for n in order if n.op == "input" and n.name is not None}


def evaluate_graph(
    build: Callable[[Dict[str, Node]], Node], inputs: Mapping[str, np.ndarray]
) -> Tuple[Node, Dict[str, Node]]:
    """Bind ``inputs`` to named leaves, run ``build`` on them and return the root.

    The returned mapping holds the leaves so callers can read their gradients
    after :func:`backward`.
    """
    leaves = {name: leaf(np.array(value, dtype=np.float64), name) for name, value in inputs.items()}
    root = build(leaves)
    if not isinstance(root, Node):
        raise TypeError(f"graph builder returned {type(root).__name__}, expected Node")
    return root, leaves


@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    tol: float
    h: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise relative error, falling back to absolute error near zero."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(denom > floor, diff / np.where(denom > floor, denom, 1.0), diff)


def check_gradients(
    build: Callable[[Dict[str, Node]], Node],
    inputs: Mapping[str, np.ndarray],
    wrt: Optional[Iterable[str]] = None,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare :func:`backward` against central finite differences."""
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    root, leaves = evaluate_graph(build, base)
    backward(root)
    names = list(wrt) if wrt is not None else list(base)
    errors = {}
    for name in names:
        analytic = leaves[name].grad.copy()
        numeric = np.zeros_like(analytic)
        flat = base[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(evaluate_graph(build, base)[0].value)
            flat[i] = orig - h
            down = float(evaluate_graph(build, base)[0].value)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * h)
        errors[name] = float(relative_error(analytic, numeric).max()) if analytic.size else 0.0
    return GradCheckReport(errors=errors, tol=tol, h=h)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


@dataclass
class AdamState:
    """Per-parameter moment estimates for Adam."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != np.shape(g):
            raise ShapeError("adam", params[name].shape, np.shape(g))
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
