"""Finite-difference checks of every differentiable node kind and of unfolded layers."""

import numpy as np

from .autodiff import Graph, Kind, forward, grad_check
from .layers import (Dense, NetworkSpec, S2T, StigFull, StigThreshold, T2S, init_params,
                     run_stepwise, unfold)


def _signed(rng, shape, low=0.5, high=2.0):
    # magnitudes bounded away from zero: a relative error against central
    # differences is meaningless for gradients at the roundoff level
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, high, size=shape)


def _reduce(g, node, shape, rng):
    # random linear read-out so every output element carries its own weight
    weights = g.constant(_signed(rng, shape))
    return g.sum(g.mul(node, weights))


def primitive_case(kind, rng):
    """``(graph, loss, bindings)`` exercising a single node kind."""
    g = Graph()
    p = lambda *shape: g.parameter(_signed(rng, shape))
    if kind in (Kind.ADD, Kind.SUB, Kind.MUL, Kind.MAX, Kind.MIN):
        a, b = p(3, 4), p(1, 4)  # second operand broadcasts
        op = {Kind.ADD: g.add, Kind.SUB: g.sub, Kind.MUL: g.mul,
              Kind.MAX: g.maximum, Kind.MIN: g.minimum}[kind]
        node, shape = op(a, b), (3, 4)
    elif kind == Kind.MATMUL:
        # positive operands: signed ones let the row sums cancel towards zero
        q = lambda *shape: g.parameter(rng.uniform(0.5, 2.0, size=shape))
        node = g.add(g.matmul(q(3, 4), q(4, 2)), g.matmul(q(3, 4), q(2, 4), transpose_b=True))
        return g, g.sum(g.mul(node, g.constant(rng.uniform(0.5, 2.0, size=(3, 2))))), {}
    elif kind == Kind.SIGMOID:
        node, shape = g.sigmoid(p(3, 4)), (3, 4)
    elif kind == Kind.SOFT_CLAMP:
        x = g.parameter(_signed(rng, (3, 4), 0.0, 1.0))
        parts = [g.soft_clamp(x, -0.5, 0.5, 8.0), g.soft_clamp(x, -0.3, np.inf, 5.0),
                 g.soft_clamp(x, -np.inf, 0.2, 12.0)]
        node, shape = g.add(g.add(parts[0], parts[1]), parts[2]), (3, 4)
    elif kind == Kind.SUM:
        x = p(3, 4)
        # column sums plus the total, reached through a row-sum first
        total = g.reshape(g.sum(g.sum(x, axis=1)), (1,))
        node, shape = g.add(g.sum(x, axis=0), total), (4,)
    elif kind == Kind.SOFTMAX_CE:
        targets = g.parameter(np.eye(5)[rng.integers(0, 5, size=4)])
        return g, g.softmax_cross_entropy(p(4, 5), targets), {}
    elif kind == Kind.SQUARE:
        node, shape = g.square(p(3, 4)), (3, 4)
    elif kind == Kind.SCALE:
        node, shape = g.scale(p(3, 4), -1.7), (3, 4)
    elif kind == Kind.RESHAPE:
        node, shape = g.reshape(p(4, 6), (-1, 2, 3)), (4, 2, 3)
    elif kind == Kind.SLICE:
        node, shape = g.slice(p(3, 7), 2, 5), (3, 3)
    elif kind == Kind.CONCAT:
        node, shape = g.concat([p(3, 2), p(3, 1), p(3, 4)]), (3, 7)
    else:
        raise ValueError(f"no test case for node kind {kind}")
    return g, _reduce(g, node, shape, rng), {}


def primitive_gradcheck(kinds, epsilon=1e-6, rng=None):
    """``{kind: max relative error}``."""
    rng = np.random.default_rng(0) if rng is None else rng
    errors = {}
    for kind in kinds:
        g, loss, bindings = primitive_case(kind, rng)
        errors[kind] = grad_check(g, loss, bindings, epsilon)
    return errors


def random_stig_full_case(rng, steps=5, max_width=4, batch=3, bounded=None):
    """Soft S_whLP layer unfolded over ``steps`` with random shape, parameters and inputs."""
    n_in, n_out = rng.integers(1, max_width + 1, size=2)
    bounded = rng.random() < 0.5 if bounded is None else bounded
    bounds = dict(weight_floor=-1.5, weight_ceiling=1.5, threshold_floor=-1.0,
                  threshold_ceiling=1.0) if bounded else {}
    spec = NetworkSpec(int(n_in) * steps, [S2T(int(n_in), steps), StigFull(int(n_out), **bounds)])
    params = init_params(spec, rng)
    # nudge deltas away from their initialisation range so they are not all small
    for name in params:
        if name.endswith(("weaken", "reinforce")):
            params[name] = rng.uniform(-0.3, 0.3, params[name].shape)
    g = Graph()
    out = unfold(spec, g, params)
    target = g.input((None, int(n_out)), name="target")
    loss = g.sum(g.square(g.sub(out, target)))
    bindings = {"x": rng.uniform(size=(batch, spec.input_size)),
                "target": rng.uniform(size=(batch, int(n_out)))}
    return g, loss, bindings


def layer_gradcheck(trials=100, steps=5, epsilon=1e-6, rng=None):
    """Max relative error over ``trials`` random unfolded S_whLP layers."""
    rng = np.random.default_rng(1) if rng is None else rng
    worst = 0.0
    for _ in range(trials):
        g, loss, bindings = random_stig_full_case(rng, steps)
        worst = max(worst, grad_check(g, loss, bindings, epsilon))
    return worst


def random_network(rng, max_steps=10, max_width=8):
    """Random valid soft spec with one or two stigmergic layers and random parameters.

    Deltas are drawn with either sign and bounds are finite about half the time.
    """
    steps, chunk = int(rng.integers(1, max_steps + 1)), int(rng.integers(1, max_width + 1))
    stack = [S2T(chunk, steps)]
    for _ in range(int(rng.integers(1, 3))):
        width = int(rng.integers(1, max_width + 1))
        bounds = {}
        if rng.random() < 0.5:
            bounds = dict(threshold_floor=-1.0, threshold_ceiling=1.0, steepness=float(rng.uniform(2, 20)))
        if rng.random() < 0.5:
            stack.append(StigThreshold(width, **bounds))
        else:
            if rng.random() < 0.5:
                bounds.update(weight_floor=-1.5, weight_ceiling=1.5)
            stack.append(StigFull(width, **bounds))
    tail = rng.integers(0, 3)
    if tail >= 1:
        if tail == 2:
            stack.append(T2S())
        stack.append(Dense(int(rng.integers(1, max_width + 1)), str(rng.choice(["sigmoid", "linear"]))))
    spec = NetworkSpec(chunk * steps, stack)
    params = init_params(spec, rng)
    for name in params:
        if name.endswith(("weaken", "reinforce")):
            params[name] = rng.uniform(-0.3, 0.3, params[name].shape)
    return spec, params


def unfold_vs_stepwise(spec, params, inputs):
    """Max elementwise difference between the unfolded graph and the stepwise evaluator."""
    g = Graph()
    out = unfold(spec, g, params)
    batched = forward(g, {"x": inputs})[out]
    stepwise = np.array([run_stepwise(spec, params, x, check_signs=False) for x in inputs])
    return float(np.max(np.abs(batched - stepwise)))
