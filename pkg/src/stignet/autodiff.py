"""A small reverse-mode automatic differentiation engine.

Graphs are built explicitly: every builder method on :class:`Graph`
appends a node and returns its integer id. Values are float64 numpy
arrays; elementwise kinds broadcast numpy-style and their gradients are
summed back to the operand shape.

    g = Graph()
    x = g.input((None, 3), name="x")
    w = g.parameter(np.zeros((3, 2)), name="w")
    loss = g.sum(g.square(g.matmul(x, w)))
    forward(g, {x: batch})
    grads = backward(g, loss)
"""

from dataclasses import dataclass, field

import numpy as np

from .stigmergy import soft_clamp, soft_clamp_grad, _sigmoid


class Kind:
    INPUT = "Input"
    PARAMETER = "Parameter"
    CONSTANT = "Constant"
    ADD = "Add"
    SUB = "Sub"
    MUL = "Mul"
    MATMUL = "MatMul"
    SIGMOID = "Sigmoid"
    SOFT_CLAMP = "SoftClamp"
    SUM = "Sum"
    MAX = "Max"
    MIN = "Min"
    SOFTMAX_CE = "SoftmaxCrossEntropy"
    SQUARE = "Square"
    SCALE = "Scale"
    RESHAPE = "Reshape"
    SLICE = "Slice"
    CONCAT = "Concat"
    HEAVISIDE = "Heaviside"
    HARD_CLAMP = "HardClamp"


# None means variadic (at least one input)
ARITY = {
    Kind.INPUT: 0, Kind.PARAMETER: 0, Kind.CONSTANT: 0,
    Kind.ADD: 2, Kind.SUB: 2, Kind.MUL: 2, Kind.MATMUL: 2,
    Kind.SIGMOID: 1, Kind.SOFT_CLAMP: 1, Kind.SUM: 1,
    Kind.MAX: 2, Kind.MIN: 2, Kind.SOFTMAX_CE: 2,
    Kind.SQUARE: 1, Kind.SCALE: 1, Kind.RESHAPE: 1, Kind.SLICE: 1,
    Kind.CONCAT: None, Kind.HEAVISIDE: 1, Kind.HARD_CLAMP: 1,
}

NON_DIFFERENTIABLE = frozenset({Kind.HEAVISIDE, Kind.HARD_CLAMP})

# kinds that are checked against finite differences
DIFFERENTIABLE_KINDS = tuple(
    k for k, n in ARITY.items() if n != 0 and k not in NON_DIFFERENTIABLE
)


class GraphError(ValueError):
    pass


class ShapeError(GraphError):
    pass


class NotDifferentiableError(GraphError):
    pass


class Node:
    __slots__ = ("id", "kind", "inputs", "attrs", "name", "value", "grad")

    def __init__(self, id, kind, inputs, attrs, name=None):
        self.id = id
        self.kind = kind
        self.inputs = tuple(inputs)
        self.attrs = attrs
        self.name = name
        self.value = None
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.id}, {self.kind}{label}, inputs={list(self.inputs)})"


class Graph:
    """Append-only store of nodes; inputs always precede their consumers."""

    def __init__(self):
        self.nodes = []
        self.parameters = {}
        self.names = {}

    def __len__(self):
        return len(self.nodes)

    def _add(self, kind, inputs=(), name=None, **attrs):
        arity = ARITY[kind]
        if arity is None:
            if len(inputs) < 1:
                raise GraphError(f"{kind} needs at least one input")
        elif len(inputs) != arity:
            raise GraphError(f"{kind} takes {arity} inputs, got {len(inputs)}")
        for i in inputs:
            if not (isinstance(i, (int, np.integer)) and 0 <= i < len(self.nodes)):
                raise GraphError(f"{kind}: unknown input node {i!r}")
        node = Node(len(self.nodes), kind, inputs, attrs, name)
        self.nodes.append(node)
        if name is not None:
            if name in self.names:
                raise GraphError(f"duplicate node name {name!r}")
            self.names[name] = node.id
        return node.id

    def __getitem__(self, key):
        if isinstance(key, str):
            key = self.names[key]
        return self.nodes[key]

    # leaves

    def input(self, shape, name=None):
        return self._add(Kind.INPUT, name=name, shape=tuple(shape))

    def parameter(self, value, name=None):
        value = np.array(value, dtype=float)
        nid = self._add(Kind.PARAMETER, name=name, shape=value.shape)
        self.parameters[nid] = value
        return nid

    def constant(self, value):
        return self._add(Kind.CONSTANT, value=np.array(value, dtype=float))

    # operations

    def add(self, a, b):
        return self._add(Kind.ADD, (a, b))

    def sub(self, a, b):
        return self._add(Kind.SUB, (a, b))

    def mul(self, a, b):
        return self._add(Kind.MUL, (a, b))

    def matmul(self, a, b, transpose_b=False):
        return self._add(Kind.MATMUL, (a, b), transpose_b=transpose_b)

    def sigmoid(self, a):
        return self._add(Kind.SIGMOID, (a,))

    def soft_clamp(self, a, lo, hi, steepness):
        if not steepness > 0:
            raise GraphError("SoftClamp steepness must be positive")
        if np.isfinite(lo) and np.isfinite(hi) and lo >= hi:
            raise GraphError("SoftClamp needs lo < hi")
        return self._add(Kind.SOFT_CLAMP, (a,), lo=float(lo), hi=float(hi),
                         steepness=float(steepness))

    def sum(self, a, axis=None):
        return self._add(Kind.SUM, (a,), axis=axis)

    def maximum(self, a, b):
        return self._add(Kind.MAX, (a, b))

    def minimum(self, a, b):
        return self._add(Kind.MIN, (a, b))

    def softmax_cross_entropy(self, logits, targets):
        """Mean over the batch of ``-sum(targets * log_softmax(logits))``."""
        return self._add(Kind.SOFTMAX_CE, (logits, targets))

    def square(self, a):
        return self._add(Kind.SQUARE, (a,))

    def scale(self, a, factor):
        return self._add(Kind.SCALE, (a,), factor=float(factor))

    def reshape(self, a, shape):
        return self._add(Kind.RESHAPE, (a,), shape=tuple(shape))

    def slice(self, a, start, stop):
        """Columns ``[start, stop)`` of the last axis."""
        return self._add(Kind.SLICE, (a,), start=int(start), stop=int(stop))

    def concat(self, parts):
        """Join along the last axis."""
        return self._add(Kind.CONCAT, tuple(parts))

    def heaviside(self, a):
        return self._add(Kind.HEAVISIDE, (a,))

    def hard_clamp(self, a, lo, hi):
        return self._add(Kind.HARD_CLAMP, (a,), lo=float(lo), hi=float(hi))

    def parameter_count(self):
        return sum(v.size for v in self.parameters.values())


def _reshape_target(shape, x):
    # a leading -1 stands for the batch dimension of the operand
    if shape and shape[0] == -1:
        return (x.shape[0],) + tuple(shape[1:])
    return shape


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _matmul_operand(b, attrs):
    return b.T if attrs["transpose_b"] else b


def _eval(node, args):
    k, at = node.kind, node.attrs
    if k == Kind.ADD:
        return args[0] + args[1]
    if k == Kind.SUB:
        return args[0] - args[1]
    if k == Kind.MUL:
        return args[0] * args[1]
    if k == Kind.MATMUL:
        a, b = args
        if a.ndim < 2 or b.ndim != 2:
            raise ShapeError(f"MatMul needs a of rank >= 2 and b of rank 2, got {a.shape} and {b.shape}")
        return a @ _matmul_operand(b, at)
    if k == Kind.SIGMOID:
        return _sigmoid(args[0])
    if k == Kind.SOFT_CLAMP:
        return np.asarray(soft_clamp(args[0], at["lo"], at["hi"], at["steepness"]))
    if k == Kind.SUM:
        return np.asarray(np.sum(args[0], axis=at["axis"]))
    if k == Kind.MAX:
        return np.maximum(args[0], args[1])
    if k == Kind.MIN:
        return np.minimum(args[0], args[1])
    if k == Kind.SOFTMAX_CE:
        logits, targets = args
        if logits.shape != targets.shape or logits.ndim != 2:
            raise ShapeError(f"SoftmaxCrossEntropy needs matching (batch, classes), got {logits.shape} and {targets.shape}")
        return np.asarray(-np.sum(targets * _log_softmax(logits)) / logits.shape[0])
    if k == Kind.SQUARE:
        return args[0] * args[0]
    if k == Kind.SCALE:
        return at["factor"] * args[0]
    if k == Kind.RESHAPE:
        return args[0].reshape(_reshape_target(at["shape"], args[0]))
    if k == Kind.SLICE:
        x = args[0]
        if at["stop"] > x.shape[-1] or at["start"] < 0 or at["start"] >= at["stop"]:
            raise ShapeError(f"Slice [{at['start']}, {at['stop']}) out of range for width {x.shape[-1]}")
        return x[..., at["start"]:at["stop"]]
    if k == Kind.CONCAT:
        return np.concatenate(args, axis=-1)
    if k == Kind.HEAVISIDE:
        return (args[0] >= 0).astype(float)
    if k == Kind.HARD_CLAMP:
        return np.clip(args[0], at["lo"], at["hi"])
    raise GraphError(f"cannot evaluate node kind {k}")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _vjp(node, g, args, out):
    """Gradients of the node's output w.r.t. each input, given upstream ``g``."""
    k, at = node.kind, node.attrs
    if k == Kind.ADD:
        return [_unbroadcast(g, args[0].shape), _unbroadcast(g, args[1].shape)]
    if k == Kind.SUB:
        return [_unbroadcast(g, args[0].shape), _unbroadcast(-g, args[1].shape)]
    if k == Kind.MUL:
        a, b = args
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if k == Kind.MATMUL:
        a, b = args
        bt = _matmul_operand(b, at)
        ga = g @ bt.T
        gbt = np.swapaxes(a, -1, -2) @ g
        gbt = gbt.reshape(-1, *bt.shape).sum(axis=0)
        return [ga, gbt.T if at["transpose_b"] else gbt]
    if k == Kind.SIGMOID:
        return [g * out * (1.0 - out)]
    if k == Kind.SOFT_CLAMP:
        return [g * soft_clamp_grad(args[0], at["lo"], at["hi"], at["steepness"])]
    if k == Kind.SUM:
        x = args[0]
        if at["axis"] is None:
            return [np.broadcast_to(g, x.shape).copy()]
        return [np.broadcast_to(np.expand_dims(g, at["axis"]), x.shape).copy()]
    if k == Kind.MAX:
        a, b = args
        pick = a >= b
        return [_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)]
    if k == Kind.MIN:
        a, b = args
        pick = a <= b
        return [_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)]
    if k == Kind.SOFTMAX_CE:
        logits, targets = args
        n = logits.shape[0]
        logp = _log_softmax(logits)
        p = np.exp(logp)
        gl = g * (p * targets.sum(axis=-1, keepdims=True) - targets) / n
        return [gl, -g * logp / n]
    if k == Kind.SQUARE:
        return [2.0 * g * args[0]]
    if k == Kind.SCALE:
        return [at["factor"] * g]
    if k == Kind.RESHAPE:
        return [g.reshape(args[0].shape)]
    if k == Kind.SLICE:
        gx = np.zeros_like(args[0])
        gx[..., at["start"]:at["stop"]] = g
        return [gx]
    if k == Kind.CONCAT:
        edges = np.cumsum([a.shape[-1] for a in args])[:-1]
        return np.split(g, edges, axis=-1)
    raise NotDifferentiableError(f"node kind {k} has no gradient")


def _shape_ok(declared, actual):
    if len(declared) != len(actual):
        return False
    return all(d is None or d == a for d, a in zip(declared, actual))


def forward(graph, input_bindings):
    """Evaluate every node in insertion order.

    ``input_bindings`` maps node ids (or names) to arrays. Every Input must
    be bound; a bound Parameter overrides its stored value for this pass.
    Returns a dict ``id -> value``.
    """
    bindings = {}
    for key, value in input_bindings.items():
        nid = graph.names[key] if isinstance(key, str) else key
        bindings[nid] = np.asarray(value, dtype=float)
    values = {}
    for node in graph.nodes:
        node.grad = None
        if node.kind == Kind.INPUT:
            if node.id not in bindings:
                raise GraphError(f"input {node!r} is unbound")
            v = bindings[node.id]
            if not _shape_ok(node.attrs["shape"], v.shape):
                raise ShapeError(f"{node!r}: expected shape {node.attrs['shape']}, got {v.shape}")
        elif node.kind == Kind.PARAMETER:
            v = bindings.get(node.id, graph.parameters[node.id])
            if v.shape != node.attrs["shape"]:
                raise ShapeError(f"{node!r}: expected shape {node.attrs['shape']}, got {v.shape}")
        elif node.kind == Kind.CONSTANT:
            v = node.attrs["value"]
        else:
            args = [values[i] for i in node.inputs]
            try:
                v = _eval(node, args)
            except ShapeError as exc:
                raise ShapeError(f"{node!r}: {exc}") from None
            except ValueError as exc:
                shapes = [a.shape for a in args]
                raise ShapeError(f"{node!r}: incompatible operand shapes {shapes} ({exc})") from None
        node.value = v
        values[node.id] = v
    return values


def backward(graph, loss_node):
    """Reverse-mode pass from a scalar ``loss_node``.

    Returns ``parameter id -> gradient`` for every parameter of the graph
    (zeros where the loss does not depend on it).
    """
    loss = graph.nodes[loss_node]
    if loss.value is None:
        raise GraphError("backward called before forward")
    if np.size(loss.value) != 1:
        raise GraphError(f"loss must be scalar, got shape {np.shape(loss.value)}")

    # nodes that depend on some parameter
    live = set(graph.parameters)
    for node in graph.nodes:
        if any(i in live for i in node.inputs):
            live.add(node.id)

    grads = {loss_node: np.ones_like(loss.value)}
    for node in reversed(graph.nodes[: loss_node + 1]):
        g = grads.pop(node.id, None)
        if g is None or node.id not in live:
            continue
        node.grad = g
        if not node.inputs:
            continue
        if node.kind in NON_DIFFERENTIABLE:
            raise NotDifferentiableError(
                f"{node!r} is not differentiable; train with the soft relaxation")
        args = [graph.nodes[i].value for i in node.inputs]
        for i, gi in zip(node.inputs, _vjp(node, g, args, node.value)):
            if i not in live:
                continue
            grads[i] = grads[i] + gi if i in grads else gi
    return {
        pid: (graph.nodes[pid].grad if graph.nodes[pid].grad is not None else np.zeros_like(value))
        for pid, value in graph.parameters.items()
    }


def grad_check(graph, loss_node, bindings, epsilon=1e-6):
    """Largest relative error between reverse-mode and central differences.

    The error for one scalar is ``|a - n| / max(|a|, |n|, 1e-8)``. Raises
    :class:`NotDifferentiableError` if the loss depends on a hard node.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    bindings = dict(bindings)
    forward(graph, bindings)
    analytic = backward(graph, loss_node)
    worst = 0.0
    for pid, base in graph.parameters.items():
        base = bindings.get(pid, base)
        for idx in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[idx] = base[idx] + epsilon
            up = float(forward(graph, {**bindings, pid: shifted})[loss_node])
            shifted[idx] = base[idx] - epsilon
            down = float(forward(graph, {**bindings, pid: shifted})[loss_node])
            numeric = (up - down) / (2 * epsilon)
            a = float(analytic[pid][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    forward(graph, bindings)
    return worst


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("Adam epsilon must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns ``(new_params, state)``.

    ``state`` is advanced in place; parameter arrays are not mutated.
    """
    missing = set(params) - set(grads)
    if missing:
        raise KeyError(f"missing gradients for parameters {sorted(missing, key=str)}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    new = {}
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=float)
        if g.shape != np.shape(p):
            raise ShapeError(f"gradient for {key!r} has shape {g.shape}, parameter {np.shape(p)}")
        m = state.first_moment.get(key, np.zeros_like(g))
        v = state.second_moment.get(key, np.zeros_like(g))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.first_moment[key] = m
        state.second_moment[key] = v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new[key] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, state
