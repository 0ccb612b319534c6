"""Training loop, evaluation, confidence intervals and checkpoints."""

from dataclasses import dataclass, field, replace
import json
import logging
import time

import numpy as np
from scipy import stats

from .autodiff import AdamState, Graph, adam_step, backward, forward
from .data import iterate_batches, one_hot
from .layers import NetworkSpec, TEMPORAL, init_params, param_shapes, unfold

log = logging.getLogger(__name__)

LOSSES = ("softmax_ce", "mse")
CHECKPOINT_FORMAT = "stignet-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    steepness: float = None  # overrides the soft-clamp steepness of every stigmergic layer
    loss: str = "softmax_ce"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("need epochs >= 0, batch_size >= 1, learning_rate >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")


@dataclass
class RunMetrics:
    classification_rate: float
    correct: int
    total: int
    loss_curve: list = field(default_factory=list)
    wall_time: float = 0.0


def with_steepness(spec, steepness):
    if steepness is None:
        return spec
    layers = [replace(l, steepness=steepness) if isinstance(l, TEMPORAL) else l
              for l in spec.layers]
    return NetworkSpec(spec.input_size, layers, spec.mode)


def targets_for(labels, output_size):
    """One-hot rows for a multi-class output, the raw label for a single output."""
    labels = np.asarray(labels)
    if output_size == 1:
        return labels.reshape(-1, 1).astype(float)
    return one_hot(labels, output_size)


def predict(outputs):
    """Class indices: argmax, or ``output >= 0.5`` for a single sigmoid output."""
    outputs = np.asarray(outputs)
    if outputs.shape[1] == 1:
        return (outputs[:, 0] >= 0.5).astype(int)
    return outputs.argmax(axis=1)


class Model:
    """An unfolded network plus its loss, ready for repeated forward/backward passes."""

    def __init__(self, spec, params, loss="softmax_ce"):
        self.spec = spec
        self.graph = Graph()
        self.output = unfold(spec, self.graph, params)
        g = self.graph
        self.target = g.input((None, spec.output_size), name="target")
        if loss == "softmax_ce":
            self.loss = g.softmax_cross_entropy(self.output, self.target)
        else:
            self.batch_weight = g.input((), name="batch_weight")
            sq = g.sum(g.square(g.sub(self.output, self.target)))
            self.loss = g.mul(sq, self.batch_weight)
        self.loss_kind = loss
        self.ids = {name: g.names[name] for name in param_shapes(spec)}

    @property
    def params(self):
        return {name: self.graph.parameters[nid] for name, nid in self.ids.items()}

    def set_params(self, params):
        for name, nid in self.ids.items():
            self.graph.parameters[nid] = params[name]

    def _bindings(self, inputs, labels):
        b = {"x": inputs, "target": targets_for(labels, self.spec.output_size)}
        if self.loss_kind == "mse":
            b["batch_weight"] = np.array(1.0 / len(inputs))
        return b

    def loss_and_grads(self, inputs, labels):
        values = forward(self.graph, self._bindings(inputs, labels))
        grads = backward(self.graph, self.loss)
        return float(values[self.loss]), {name: grads[nid] for name, nid in self.ids.items()}

    def outputs(self, inputs, batch_size=1000):
        chunks = []
        for start in range(0, len(inputs), batch_size):
            batch = inputs[start:start + batch_size]
            values = forward(self.graph, self._bindings(batch, np.zeros(len(batch), dtype=int)))
            chunks.append(values[self.output])
        return np.concatenate(chunks) if chunks else np.zeros((0, self.spec.output_size))


def _rate(model, dataset):
    pred = predict(model.outputs(dataset.inputs))
    correct = int(np.sum(pred == dataset.labels))
    return correct, len(dataset)


def train(spec, train_set, config, params=None):
    """Mini-batch Adam on the unfolded soft network.

    Returns ``(params, RunMetrics)``; the metrics' classification rate is
    measured on ``train_set``. The loss curve has one entry per batch.
    """
    if len(train_set) == 0:
        raise ValueError("cannot train on an empty dataset")
    spec = with_steepness(spec, config.steepness)
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, rng)
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    model = Model(spec, params, config.loss)
    state = AdamState(learning_rate=config.learning_rate)
    curve = []
    start = time.perf_counter()
    for epoch in range(config.epochs):
        for inputs, labels in iterate_batches(train_set, config.batch_size, rng):
            loss, grads = model.loss_and_grads(inputs, labels)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, step {state.step_count}")
            curve.append(loss)
            params, state = adam_step(params, grads, state)
            model.set_params(params)
        log.debug("epoch %d: last loss %.6f", epoch, curve[-1] if curve else float("nan"))
    correct, total = _rate(model, train_set)
    metrics = RunMetrics(correct / total, correct, total, curve, time.perf_counter() - start)
    return params, metrics


def evaluate(params, spec, test_set):
    start = time.perf_counter()
    model = Model(spec, params)
    correct, total = _rate(model, test_set)
    rate = correct / total if total else 0.0
    return RunMetrics(rate, correct, total, [], time.perf_counter() - start)


def confidence_interval_99(rates, method="t"):
    """``(mean, half_width)`` of a 99% interval; Student-t by default, ``method='z'`` for normal."""
    rates = np.asarray(rates, dtype=float)
    n = len(rates)
    if n < 2:
        raise ValueError("need at least two runs for a confidence interval")
    if method == "t":
        q = stats.t.ppf(0.995, n - 1)
    elif method == "z":
        q = stats.norm.ppf(0.995)
    else:
        raise ValueError("method must be 't' or 'z'")
    return float(rates.mean()), float(q * rates.std(ddof=1) / np.sqrt(n))


# checkpoint: JSON with the network description in text form and one flat array per parameter

def save_checkpoint(params, spec, path):
    shapes = param_shapes(spec)
    if set(params) != set(shapes):
        raise CheckpointError("parameters do not match the network description")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_text(),
        "params": {name: {"shape": list(shapes[name]),
                          "data": np.asarray(params[name], dtype=float).ravel().tolist()}
                   for name in shapes},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    spec = NetworkSpec.from_text(doc["spec"])
    shapes = param_shapes(spec)
    params = {}
    for name, shape in shapes.items():
        entry = doc["params"].get(name)
        if entry is None or tuple(entry["shape"]) != shape:
            raise CheckpointError(f"{path}: parameter {name} missing or misshapen")
        data = np.array(entry["data"], dtype=float)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: parameter {name} has {data.size} values")
        params[name] = data.reshape(shape)
    return params, spec
