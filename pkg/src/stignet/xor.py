"""XOR with one stigmergic neuron (one input, one output, two steps).

With zero bias and unbounded marks the neuron's second output is

    y1 = [(w0 - dw + x0*Dw) * x1 >= h0 - dh + y0*Dh],   y0 = [w0 * x0 >= h0]

which depends on x0 through the moved weight and threshold, so y1 can
equal x0 xor x1 although a static perceptron cannot.
"""

from dataclasses import astuple, dataclass, fields
import itertools

import numpy as np

from .data import xor_as_dataset
from .layers import StigFullLayer, sp_run, xor_spec
from .stigmergy import MarkParams
from .train import TrainConfig, train

XOR_CASES = ((0, 0), (0, 1), (1, 0), (1, 1))
XOR_TARGETS = tuple(a ^ b for a, b in XOR_CASES)


@dataclass(frozen=True, order=True)
class XorParams:
    w_init: float
    w_weaken: float
    w_reinforce: float
    h_init: float
    h_weaken: float
    h_reinforce: float

    def __post_init__(self):
        if not all(np.isfinite(astuple(self))):
            raise ValueError("XOR parameters must be finite")


AXES = tuple(f.name for f in fields(XorParams))
DYNAMIC_AXES = ("w_weaken", "w_reinforce", "h_weaken", "h_reinforce")


def xor_closed_form(p, x0, x1):
    y0 = int(p.w_init * x0 >= p.h_init)
    w1 = p.w_init - p.w_weaken + x0 * p.w_reinforce
    h1 = p.h_init - p.h_weaken + y0 * p.h_reinforce
    return y0, int(w1 * x1 >= h1)


def xor_sp_run(p, x0, x1):
    """The same neuron through the generic hard-mode stepwise evaluator."""
    layer = StigFullLayer(
        MarkParams(np.array([[p.w_init]]), np.array([[p.w_weaken]]), np.array([[p.w_reinforce]])),
        np.zeros(1),
        MarkParams(np.array([p.h_init]), np.array([p.h_weaken]), np.array([p.h_reinforce])),
        mode="hard", check_signs=False)
    ys = sp_run(layer, [[x0], [x1]])
    return int(ys[0, 0]), int(ys[1, 0])


def truth_table(p, evaluator=xor_closed_form):
    return tuple(evaluator(p, a, b)[1] for a, b in XOR_CASES)


def default_grid(points=9, low=-2.0, high=2.0):
    return {axis: np.linspace(low, high, points) for axis in AXES}


def frozen_grid(points=9, low=-2.0, high=2.0):
    grid = default_grid(points, low, high)
    grid.update({axis: np.zeros(1) for axis in DYNAMIC_AXES})
    return grid


def xor_oracle(grid=None):
    """Every grid point whose hard neuron computes XOR, sorted.

    ``grid`` maps each field of :class:`XorParams` to its candidate values.
    The whole grid is evaluated at once by broadcasting the closed form.
    """
    grid = default_grid() if grid is None else grid
    if set(grid) != set(AXES):
        raise ValueError(f"grid needs exactly the axes {AXES}")
    values = [np.unique(np.asarray(grid[axis], dtype=float)) for axis in AXES]
    if any(v.size == 0 for v in values):
        raise ValueError("grid has an empty axis")
    w0, dw, Dw, h0, dh, Dh = np.ix_(*values)
    ok = np.ones(tuple(v.size for v in values), dtype=bool)
    for (x0, x1), target in zip(XOR_CASES, XOR_TARGETS):
        y0 = (w0 * x0 >= h0)
        y1 = (w0 - dw + x0 * Dw) * x1 >= h0 - dh + y0 * Dh
        ok &= (y1 == bool(target))
    hits = np.argwhere(ok)
    return [XorParams(*(float(values[a][i]) for a, i in enumerate(idx))) for idx in hits]


def xor_param_dict(p):
    """Network parameters of :func:`~stignet.layers.xor_spec` for these values."""
    return {
        "1.w_m0": np.array([[p.w_init]]), "1.w_weaken": np.array([[p.w_weaken]]),
        "1.w_reinforce": np.array([[p.w_reinforce]]), "1.bias": np.zeros(1),
        "1.h_m0": np.array([p.h_init]), "1.h_weaken": np.array([p.h_weaken]),
        "1.h_reinforce": np.array([p.h_reinforce]),
    }


def train_xor(seed, steps=5000, learning_rate=0.05, steepness=None):
    """Fit the soft neuron to the four XOR sequences with full-batch Adam on MSE.

    Returns ``(params, metrics)``; ``metrics.correct`` counts solved cases.
    """
    config = TrainConfig(epochs=steps, batch_size=4, learning_rate=learning_rate,
                         seed=seed, steepness=steepness, loss="mse")
    return train(xor_spec(), xor_as_dataset(), config)
