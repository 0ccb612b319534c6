import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stignet.autodiff import (DIFFERENTIABLE_KINDS, AdamState, Graph, GraphError, Kind,
                              NotDifferentiableError, ShapeError, adam_step, backward,
                              forward, grad_check)
from stignet.checks import primitive_case


def scalar_graph(kind):
    g = Graph()
    a = g.parameter(2.0, name="a")
    b = g.parameter(3.0, name="b")
    return g, a, b


def test_forward_mul():
    g, a, b = scalar_graph(Kind.MUL)
    c = g.mul(a, b)
    assert forward(g, {})[c] == 6.0


def test_forward_sigmoid_midpoint():
    g = Graph()
    c = g.input((), name="c")
    s = g.sigmoid(c)
    assert forward(g, {c: 0.0})[s] == 0.5


def test_forward_add_zero_constant_is_identity():
    g = Graph()
    a = g.input((2,), name="a")
    out = g.add(a, g.constant(0.0))
    np.testing.assert_array_equal(forward(g, {"a": [1.0, 2.0]})[out], [1.0, 2.0])


def test_forward_unbound_input():
    g = Graph()
    g.input((2,), name="a")
    with pytest.raises(GraphError, match="unbound"):
        forward(g, {})


def test_forward_shape_mismatch_names_node():
    g = Graph()
    a = g.input((None, 3), name="a")
    w = g.parameter(np.zeros((4, 2)), name="w")
    g.matmul(a, w)
    with pytest.raises(ShapeError, match="'a'"):
        forward(g, {a: np.zeros((2, 4))})
    with pytest.raises(ShapeError, match="MatMul"):
        forward(g, {a: np.zeros((2, 3))})


def test_arity_is_enforced():
    g = Graph()
    a = g.parameter(1.0)
    with pytest.raises(GraphError):
        g._add(Kind.ADD, (a,))
    with pytest.raises(GraphError):
        g._add(Kind.SIGMOID, (a, a))
    with pytest.raises(GraphError):
        g.add(a, 7)  # node 7 does not exist yet


def test_backward_product_rule():
    g, a, b = scalar_graph(Kind.MUL)
    loss = g.mul(a, b)
    forward(g, {})
    grads = backward(g, loss)
    assert grads[a] == 3.0 and grads[b] == 2.0


def test_backward_sigmoid_at_zero():
    g = Graph()
    c = g.parameter(0.0)
    loss = g.sigmoid(c)
    forward(g, {})
    assert backward(g, loss)[c] == 0.25


def test_backward_requires_forward_and_scalar_loss():
    g = Graph()
    a = g.parameter(np.ones(3))
    sq = g.square(a)
    with pytest.raises(GraphError, match="before forward"):
        backward(g, sq)
    forward(g, {})
    with pytest.raises(GraphError, match="scalar"):
        backward(g, sq)


def test_backward_rejects_hard_nodes():
    g = Graph()
    a = g.parameter(np.array([0.3, -0.2]))
    loss = g.sum(g.heaviside(a))
    forward(g, {})
    with pytest.raises(NotDifferentiableError):
        backward(g, loss)
    clamp_loss = g.sum(g.hard_clamp(a, -0.1, 0.1))
    with pytest.raises(NotDifferentiableError):
        grad_check(g, clamp_loss, {})


def test_hard_nodes_still_evaluate():
    g = Graph()
    a = g.input((3,), name="a")
    h, c = g.heaviside(a), g.hard_clamp(a, -1.0, 1.0)
    values = forward(g, {a: [-2.0, 0.0, 3.0]})
    np.testing.assert_array_equal(values[h], [0.0, 1.0, 1.0])
    np.testing.assert_array_equal(values[c], [-1.0, 0.0, 1.0])


def test_unconnected_parameter_gets_zero_gradient():
    g = Graph()
    a, b = g.parameter(np.ones(2)), g.parameter(np.ones(3))
    loss = g.sum(g.square(a))
    forward(g, {})
    grads = backward(g, loss)
    np.testing.assert_array_equal(grads[b], np.zeros(3))


def test_grad_check_linear_graph_is_exact():
    g = Graph()
    x = g.input((1, 4), name="x")
    w = g.parameter(np.array([[0.75], [-1.5], [0.125], [3.0]]))
    loss = g.sum(g.matmul(x, w))
    # dyadic values and a power-of-two step keep the differences exact
    assert grad_check(g, loss, {x: np.array([[0.5, -1.0, 2.0, 0.25]])}, 2.0 ** -20) < 1e-10


def _random_three_layer(rng):
    g = Graph()
    x = g.input((None, 4), name="x")
    h = x
    for n_in, n_out in ((4, 5), (5, 3)):
        h = g.sigmoid(g.add(g.matmul(h, g.parameter(rng.normal(size=(n_in, n_out)))),
                            g.parameter(rng.normal(size=n_out))))
    logits = g.matmul(h, g.parameter(rng.normal(size=(3, 2))))
    t = g.constant(np.eye(2)[rng.integers(0, 2, size=6)])
    return g, g.softmax_cross_entropy(logits, t), {x: rng.normal(size=(6, 4))}


def test_random_three_layer_graph_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        g, loss, bindings = _random_three_layer(rng)
        assert grad_check(g, loss, bindings, 1e-6) < 1e-4


@pytest.mark.parametrize("kind", DIFFERENTIABLE_KINDS)
def test_every_kind_against_finite_differences_at_100_points(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = max(grad_check(*primitive_case(kind, rng), epsilon=1e-6) for _ in range(100))
    assert worst < 1e-4


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    g, loss, bindings = _random_three_layer(rng)
    first = {k: v.copy() for k, v in forward(g, bindings).items()}
    second = forward(g, bindings)
    for k in first:
        assert first[k].tobytes() == second[k].tobytes()


def test_gradient_is_linear_in_the_loss():
    rng = np.random.default_rng(6)
    g = Graph()
    p = g.parameter(rng.normal(size=(3, 2)))
    q = g.parameter(rng.normal(size=2))
    l1 = g.sum(g.sigmoid(g.add(p, q)))
    l2 = g.sum(g.square(g.mul(p, q)))
    total = g.add(l1, l2)
    forward(g, {})
    g1, g2, gt = backward(g, l1), backward(g, l2), backward(g, total)
    for pid in (p, q):
        np.testing.assert_allclose(gt[pid], g1[pid] + g2[pid], rtol=0, atol=1e-12)


def test_softmax_cross_entropy_value():
    g = Graph()
    z = g.input((1, 3), name="z")
    t = g.input((1, 3), name="t")
    loss = g.softmax_cross_entropy(z, t)
    v = forward(g, {z: [[1.0, 2.0, 3.0]], t: [[0.0, 0.0, 1.0]]})[loss]
    expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    assert v == pytest.approx(expected, rel=1e-14)


# ---------------------------------------------------------------- Adam

def adam_scalar_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_defaults():
    s = AdamState()
    assert (s.learning_rate, s.beta1, s.beta2, s.epsilon) == (1e-3, 0.9, 0.999, 1e-8)


@settings(max_examples=50, deadline=None)
@given(steps=st.integers(1, 30), values=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5))
def test_adam_zero_gradient_is_identity(steps, values):
    params = {"p": np.array(values)}
    state = AdamState(learning_rate=0.1)
    for _ in range(steps):
        params, state = adam_step(params, {"p": np.zeros(len(values))}, state)
    np.testing.assert_array_equal(params["p"], values)
    assert state.step_count == steps


@pytest.mark.parametrize("g", [0.37, -2.5, 1e-3])
def test_adam_first_step_moves_by_learning_rate(g):
    params, state = adam_step({"w": np.array(1.0)}, {"w": np.array(g)}, AdamState(learning_rate=0.01))
    # bias-corrected first step: lr * g / (|g| + eps)
    assert params["w"] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-7)
    assert state.step_count == 1


def test_adam_two_constant_steps_match_scalar_oracle():
    params, state = {"w": np.array(0.0)}, AdamState(learning_rate=0.1)
    for _ in range(2):
        params, state = adam_step(params, {"w": np.array(1.0)}, state)
    assert abs(params["w"] - adam_scalar_oracle(0.0, [1.0, 1.0], 0.1)) < 1e-12
    # both bias-corrected steps have m_hat = v_hat = 1
    assert abs(params["w"] - (-0.2 / (1 + 1e-8))) < 1e-12


def test_adam_missing_gradient():
    with pytest.raises(KeyError):
        adam_step({"a": np.zeros(2), "b": np.zeros(1)}, {"a": np.zeros(2)}, AdamState())


def test_adam_state_validation():
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)
    with pytest.raises(ValueError):
        AdamState(epsilon=0.0)
