"""Layers of a stigmergic network and their unfolding into a static graph.

Two evaluation paths exist on purpose:

* a stepwise numpy evaluator (``cp_forward``, ``sp_step``, ``sp_run``,
  ``run_stepwise``) working on single samples, in hard or soft mode;
* ``unfold``, which writes the soft network for all time steps into an
  autodiff :class:`~stignet.autodiff.Graph` so it can be trained.

Parameters live in a flat ``{name: array}`` dict keyed by
``"<layer index>.<field>"`` (see :func:`param_shapes`).
"""

from dataclasses import dataclass, field, fields, replace
import math

import numpy as np

from .stigmergy import (DEFAULT_STEEPNESS, INF, MarkParams, hard_update,
                        soft_update, _sigmoid)

ACTIVATIONS = ("heaviside", "sigmoid", "linear")
MODES = ("hard", "soft")


class SpecError(ValueError):
    pass


# ---------------------------------------------------------------- codecs

@dataclass(frozen=True)
class S2TCoder:
    chunk_size: int
    steps: int

    def __post_init__(self):
        if self.chunk_size < 1 or self.steps < 1:
            raise SpecError("S2T needs chunk_size >= 1 and steps >= 1")


def s2t_encode(x, coder):
    """Split the last axis of ``x`` into ``coder.steps`` consecutive chunks.

    A vector of length N*T becomes an array of shape (T, N); with leading
    batch axes the time axis comes first: (T, ..., N).
    """
    x = np.asarray(x, dtype=float)
    n, steps = coder.chunk_size, coder.steps
    if x.shape[-1] != n * steps:
        raise ValueError(f"S2T expects length {n * steps}, got {x.shape[-1]}")
    chunks = x.reshape(*x.shape[:-1], steps, n)
    return np.moveaxis(chunks, -2, 0)


def t2s_decode(seq):
    """Concatenate a sequence of equal-length chunks in time order."""
    seq = [np.asarray(c, dtype=float) for c in seq]
    if not seq:
        raise ValueError("T2S needs at least one chunk")
    if any(c.shape != seq[0].shape for c in seq):
        raise ValueError("T2S got a ragged sequence")
    return np.concatenate(seq, axis=-1)


# ---------------------------------------------------------------- layers

def _activate(z, activation):
    if activation == "heaviside":
        return (z >= 0).astype(float)
    if activation == "sigmoid":
        return _sigmoid(z)
    return z


class StaticDenseLayer:
    """Conventional perceptron layer, ``y = act(bias + W x - threshold)``."""

    def __init__(self, weights, bias, threshold=None, activation="sigmoid"):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        out = self.weights.shape[0]
        self.threshold = np.zeros(out) if threshold is None else np.asarray(threshold, dtype=float)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        if self.weights.ndim != 2 or self.bias.shape != (out,) or self.threshold.shape != (out,):
            raise ValueError("inconsistent dense layer dimensions")

    @property
    def inputs(self):
        return self.weights.shape[1]


def cp_forward(layer, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.inputs:
        raise ValueError(f"dense layer expects {layer.inputs} inputs, got {x.shape[-1]}")
    u = layer.bias + x @ layer.weights.T
    return _activate(u - layer.threshold, layer.activation)


class _StigLayer:
    def __init__(self, bias, threshold_marks, mode, steepness, check_signs):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.bias = np.asarray(bias, dtype=float)
        self.threshold_marks = threshold_marks
        self.mode = mode
        self.steepness = steepness
        if np.shape(threshold_marks.m0) != self.bias.shape:
            raise ValueError("need one threshold mark per output neuron")
        if mode == "hard" and check_signs:
            threshold_marks.validate_hard()

    def _update(self, value, stimulus, marks):
        if self.mode == "hard":
            return hard_update(value, stimulus, marks.weaken, marks.reinforce,
                               marks.floor, marks.ceiling)
        return soft_update(value, stimulus, marks.weaken, marks.reinforce,
                           marks.floor, marks.ceiling, self.steepness)

    def _fire(self, u, h):
        return _activate(u - h, "heaviside" if self.mode == "hard" else "sigmoid")


class StigThresholdLayer(_StigLayer):
    """Static weights and bias; each neuron's threshold is a mark driven by its own output."""

    def __init__(self, weights, bias, threshold_marks, mode="soft",
                 steepness=DEFAULT_STEEPNESS, check_signs=True):
        super().__init__(bias, threshold_marks, mode, steepness, check_signs)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("inconsistent layer dimensions")

    @property
    def inputs(self):
        return self.weights.shape[1]


class StigFullLayer(_StigLayer):
    """Every weight is a mark driven by its input; thresholds as in :class:`StigThresholdLayer`."""

    def __init__(self, weight_marks, bias, threshold_marks, mode="soft",
                 steepness=DEFAULT_STEEPNESS, check_signs=True):
        super().__init__(bias, threshold_marks, mode, steepness, check_signs)
        self.weight_marks = weight_marks
        shape = np.shape(weight_marks.m0)
        if len(shape) != 2 or shape[0] != self.bias.shape[0]:
            raise ValueError("need one weight mark per (output, input) connection")
        if mode == "hard" and check_signs:
            weight_marks.validate_hard()

    @property
    def inputs(self):
        return np.shape(self.weight_marks.m0)[1]


@dataclass
class SPState:
    weights: object  # current weight marks, or None when weights are static
    threshold: np.ndarray
    t: int = 0


def sp_reset(layer):
    weights = None
    if isinstance(layer, StigFullLayer):
        weights = np.array(layer.weight_marks.m0, dtype=float)
    return SPState(weights, np.array(layer.threshold_marks.m0, dtype=float), 0)


def sp_step(layer, state, x_t):
    """One time step: fire with the current marks, then advance them.

    Returns ``(y_t, next_state)``; ``state`` is left untouched.
    """
    if not isinstance(state, SPState):
        raise ValueError("sp_step needs a state from sp_reset")
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != (layer.inputs,):
        raise ValueError(f"expected an input chunk of length {layer.inputs}, got shape {x_t.shape}")
    weights = layer.weights if state.weights is None else state.weights
    u = layer.bias + weights @ x_t
    y = layer._fire(u, state.threshold)
    new_weights = None
    if state.weights is not None:
        stim = np.broadcast_to(x_t, state.weights.shape)
        new_weights = layer._update(state.weights, stim, layer.weight_marks)
    new_h = layer._update(state.threshold, y, layer.threshold_marks)
    return y, SPState(new_weights, new_h, state.t + 1)


def sp_run(layer, chunks):
    """Reset, then step through ``chunks``; returns all T outputs, shape (T, outputs)."""
    state = sp_reset(layer)
    outputs = []
    for x_t in chunks:
        y, state = sp_step(layer, state, x_t)
        outputs.append(y)
    return np.array(outputs)


# ---------------------------------------------------------------- network spec

@dataclass(frozen=True)
class S2T:
    chunk_size: int
    steps: int


@dataclass(frozen=True)
class T2S:
    pass


@dataclass(frozen=True)
class Dense:
    outputs: int
    activation: str = "sigmoid"


@dataclass(frozen=True)
class StigThreshold:
    outputs: int
    threshold_floor: float = -INF
    threshold_ceiling: float = INF
    steepness: float = DEFAULT_STEEPNESS


@dataclass(frozen=True)
class StigFull:
    outputs: int
    weight_floor: float = -INF
    weight_ceiling: float = INF
    threshold_floor: float = -INF
    threshold_ceiling: float = INF
    steepness: float = DEFAULT_STEEPNESS


TEMPORAL = (StigThreshold, StigFull)
_KEYWORDS = {"s2t": S2T, "t2s": T2S, "dense": Dense,
             "stig_threshold": StigThreshold, "stig_full": StigFull}
_NAMES = {cls: key for key, cls in _KEYWORDS.items()}


@dataclass
class NetworkSpec:
    """Declarative layer stack.

    Temporal layers must sit between an ``S2T`` at the front and either a
    ``T2S`` (all steps concatenated) or the first non-temporal layer / the
    end of the stack, which then sees only the final step's output.
    """

    input_size: int
    layers: list = field(default_factory=list)
    mode: str = "soft"

    def __post_init__(self):
        self.layers = list(self.layers)
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {MODES}")
        self._plan = self._validate()

    def _validate(self):
        plan = []  # (layer, input width, output width)
        width, steps = self.input_size, 1
        if width < 1:
            raise SpecError("input_size must be positive")
        temporal = False
        for i, layer in enumerate(self.layers):
            if isinstance(layer, S2T):
                if i != 0:
                    raise SpecError("S2T is only allowed as the first layer")
                if layer.chunk_size * layer.steps != width:
                    raise SpecError(f"S2T {layer.chunk_size}x{layer.steps} does not match input size {width}")
                steps, temporal, out = layer.steps, True, layer.chunk_size
            elif isinstance(layer, T2S):
                if not temporal:
                    raise SpecError("T2S needs a preceding S2T")
                temporal, out = False, width * steps
            elif isinstance(layer, TEMPORAL):
                if not temporal:
                    raise SpecError(f"layer {i} is temporal but not inside an S2T/T2S section")
                out = layer.outputs
            elif isinstance(layer, Dense):
                if layer.activation not in ACTIVATIONS:
                    raise SpecError(f"unknown activation {layer.activation!r}")
                temporal, out = False, layer.outputs
            else:
                raise SpecError(f"unknown layer {layer!r}")
            if out < 1:
                raise SpecError(f"layer {i} has no outputs")
            plan.append((layer, width, out))
            width = out
        return plan

    @property
    def steps(self):
        first = self.layers[0] if self.layers else None
        return first.steps if isinstance(first, S2T) else 1

    @property
    def output_size(self):
        return self._plan[-1][2] if self._plan else self.input_size

    def layer_io(self):
        """``(index, layer, input width, output width)`` per layer."""
        return [(i, layer, w_in, w_out) for i, (layer, w_in, w_out) in enumerate(self._plan)]

    # text form: "key = value" lines, one "layer = ..." line per layer

    def to_text(self):
        lines = [f"input = {self.input_size}", f"mode = {self.mode}"]
        for layer in self.layers:
            words = [_NAMES[type(layer)]]
            if isinstance(layer, S2T):
                words += [str(layer.chunk_size), str(layer.steps)]
            elif not isinstance(layer, T2S):
                words.append(str(layer.outputs))
                defaults = type(layer)(layer.outputs)
                for f in fields(layer):
                    if f.name != "outputs" and getattr(layer, f.name) != getattr(defaults, f.name):
                        words.append(f"{f.name}={getattr(layer, f.name)}")
            lines.append("layer = " + " ".join(words))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        input_size, mode, layers = None, "soft", []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise SpecError(f"line {lineno}: expected 'key = value'")
            if key == "input":
                input_size = int(value)
            elif key == "mode":
                mode = value
            elif key == "layer":
                layers.append(_parse_layer(value, lineno))
            else:
                raise SpecError(f"line {lineno}: unknown key {key!r}")
        if input_size is None:
            raise SpecError("missing 'input = <size>'")
        return cls(input_size, layers, mode)


def _parse_layer(value, lineno):
    words = value.split()
    if not words or words[0] not in _KEYWORDS:
        raise SpecError(f"line {lineno}: unknown layer {value!r}")
    cls = _KEYWORDS[words[0]]
    positional = [w for w in words[1:] if "=" not in w]
    options = dict(w.split("=", 1) for w in words[1:] if "=" in w)
    try:
        if cls is S2T:
            return S2T(int(positional[0]), int(positional[1]))
        if cls is T2S:
            return T2S()
        kwargs = {"outputs": int(positional[0])}
        if cls is Dense and len(positional) > 1:
            kwargs["activation"] = positional[1]
        for k, v in options.items():
            kwargs[k] = v if k == "activation" else float(v)
        return cls(**kwargs)
    except (IndexError, TypeError, ValueError) as exc:
        raise SpecError(f"line {lineno}: bad layer {value!r} ({exc})") from None


def stigmergic_spec(mode="soft", **stig_options):
    """28x28 image, one row per step: S2T, 28->10 S_hLP, 10->10 S_whLP, T2S, 280->10."""
    th_opts = {k: v for k, v in stig_options.items() if k.startswith("threshold") or k == "steepness"}
    return NetworkSpec(784, [S2T(28, 28), StigThreshold(10, **th_opts), StigFull(10, **stig_options),
                             T2S(), Dense(10, "linear")], mode)


def static_spec():
    """Static baseline 784 -> 300 -> 300 -> 10."""
    return NetworkSpec(784, [Dense(300), Dense(300), Dense(10, "linear")])


def xor_spec(mode="soft", steepness=DEFAULT_STEEPNESS):
    """One stigmergic neuron with one input and one output over two steps."""
    return NetworkSpec(2, [S2T(1, 2), StigFull(1, steepness=steepness)], mode)


# ---------------------------------------------------------------- parameters

def param_shapes(spec):
    """Ordered ``{name: shape}`` of every trainable array."""
    shapes = {}
    for i, layer, n_in, n_out in spec.layer_io():
        if isinstance(layer, Dense):
            shapes[f"{i}.weights"] = (n_out, n_in)
            shapes[f"{i}.bias"] = (n_out,)
        elif isinstance(layer, StigThreshold):
            shapes[f"{i}.weights"] = (n_out, n_in)
            shapes[f"{i}.bias"] = (n_out,)
        elif isinstance(layer, StigFull):
            for part in ("w_m0", "w_weaken", "w_reinforce"):
                shapes[f"{i}.{part}"] = (n_out, n_in)
            shapes[f"{i}.bias"] = (n_out,)
        if isinstance(layer, TEMPORAL):
            for part in ("h_m0", "h_weaken", "h_reinforce"):
                shapes[f"{i}.{part}"] = (n_out,)
    return shapes


def count_parameters(spec):
    total = 0
    for _, layer, n_in, n_out in spec.layer_io():
        if isinstance(layer, Dense):
            total += n_in * n_out + n_out
        elif isinstance(layer, StigThreshold):
            total += n_in * n_out + n_out + 3 * n_out
        elif isinstance(layer, StigFull):
            total += 3 * n_in * n_out + n_out + 3 * n_out
    return total


def init_params(spec, rng):
    """Uniform(+-1/sqrt(fan_in)) for weights, biases and initial marks; deltas Uniform[0, 0.1]."""
    params = {}
    fan_in = {i: n_in for i, _, n_in, _ in spec.layer_io()}
    for name, shape in param_shapes(spec).items():
        idx, part = name.split(".")
        layer = spec.layers[int(idx)]
        if part.endswith(("weaken", "reinforce")):
            value = rng.uniform(0.0, 0.1, shape)
        else:
            bound = 1.0 / math.sqrt(fan_in[int(idx)])
            value = rng.uniform(-bound, bound, shape)
        if part == "w_m0":
            value = np.clip(value, layer.weight_floor, layer.weight_ceiling)
        elif part == "h_m0":
            value = np.clip(value, layer.threshold_floor, layer.threshold_ceiling)
        params[name] = value
    return params


def build_layers(spec, params, mode=None, check_signs=True):
    """Layer objects for the stepwise evaluator; codecs are passed through."""
    mode = mode or spec.mode
    built = []
    for i, layer, _, _ in spec.layer_io():
        p = lambda part: params[f"{i}.{part}"]
        if isinstance(layer, Dense):
            act = layer.activation
            if mode == "hard" and act == "sigmoid":
                act = "heaviside"
            built.append(StaticDenseLayer(p("weights"), p("bias"), activation=act))
        elif isinstance(layer, TEMPORAL):
            h_marks = MarkParams(p("h_m0"), p("h_weaken"), p("h_reinforce"),
                                 layer.threshold_floor, layer.threshold_ceiling)
            if isinstance(layer, StigThreshold):
                built.append(StigThresholdLayer(p("weights"), p("bias"), h_marks, mode,
                                                layer.steepness, check_signs))
            else:
                w_marks = MarkParams(p("w_m0"), p("w_weaken"), p("w_reinforce"),
                                     layer.weight_floor, layer.weight_ceiling)
                built.append(StigFullLayer(w_marks, p("bias"), h_marks, mode,
                                           layer.steepness, check_signs))
        else:
            built.append(layer)
    return built


def run_stepwise(spec, params, x, mode=None, check_signs=True):
    """Evaluate one sample step by step. Returns the network output vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_size,):
        raise ValueError(f"expected a vector of length {spec.input_size}, got shape {x.shape}")
    signal, seq = x, None
    for layer in build_layers(spec, params, mode, check_signs):
        if isinstance(layer, S2T):
            seq = s2t_encode(signal, S2TCoder(layer.chunk_size, layer.steps))
        elif isinstance(layer, T2S):
            signal, seq = t2s_decode(seq), None
        elif isinstance(layer, _StigLayer):
            seq = sp_run(layer, seq)
        else:
            if seq is not None:
                signal, seq = seq[-1], None
            signal = cp_forward(layer, signal)
    return seq[-1] if seq is not None else signal


# ---------------------------------------------------------------- unfolding

def _mark_next(graph, value, weaken, stim, reinforce, lo, hi, steepness):
    raw = graph.add(graph.sub(value, weaken), graph.mul(stim, reinforce))
    if math.isinf(lo) and math.isinf(hi):
        return raw
    return graph.soft_clamp(raw, lo, hi, steepness)


def dense_nodes(graph, x, weights, bias, threshold=None, activation="sigmoid"):
    """``act(x W^T + bias - threshold)`` for a batch ``x`` of shape (B, inputs)."""
    u = graph.add(graph.matmul(x, weights, transpose_b=True), bias)
    if threshold is not None:
        u = graph.sub(u, threshold)
    if activation == "sigmoid":
        return graph.sigmoid(u)
    if activation == "heaviside":
        return graph.heaviside(u)
    return u


def _unfold_stig(graph, layer, ids, xs, n_in):
    h = ids["h_m0"]
    full = isinstance(layer, StigFull)
    w = ids["w_m0"] if full else ids["weights"]
    ys = []
    for t, x in enumerate(xs):
        if full and t > 0:
            # per-sample weights (B, out, in) once the marks have moved
            x3 = graph.reshape(x, (-1, 1, n_in))
            u = graph.add(graph.sum(graph.mul(w, x3), axis=-1), ids["bias"])
            y = graph.sigmoid(graph.sub(u, h))
        else:
            y = dense_nodes(graph, x, w, ids["bias"], h)
        ys.append(y)
        if t == len(xs) - 1:
            break
        if full:
            stim = x3 if t > 0 else graph.reshape(x, (-1, 1, n_in))
            w = _mark_next(graph, w, ids["w_weaken"], stim, ids["w_reinforce"],
                           layer.weight_floor, layer.weight_ceiling, layer.steepness)
        h = _mark_next(graph, h, ids["h_weaken"], y, ids["h_reinforce"],
                       layer.threshold_floor, layer.threshold_ceiling, layer.steepness)
    return ys


def unfold(spec, graph, params=None, input_name="x"):
    """Write the soft network, unrolled over all time steps, into ``graph``.

    Creates an Input named ``input_name`` of shape (batch, input_size) and
    one Parameter per entry of :func:`param_shapes`, shared by all steps.
    Returns the id of the output node, shape (batch, output_size).
    """
    if spec.mode != "soft":
        raise SpecError("only soft-mode networks can be unfolded into a differentiable graph")
    if params is None:
        params = init_params(spec, np.random.default_rng(0))
    node_ids = {name: graph.parameter(params[name], name=name) for name in param_shapes(spec)}
    signal = graph.input((None, spec.input_size), name=input_name)
    seq = None
    for i, layer, n_in, _ in spec.layer_io():
        ids = {name.split(".", 1)[1]: nid for name, nid in node_ids.items()
               if name.split(".", 1)[0] == str(i)}
        if isinstance(layer, S2T):
            n = layer.chunk_size
            seq = [graph.slice(signal, t * n, (t + 1) * n) for t in range(layer.steps)]
        elif isinstance(layer, T2S):
            signal, seq = graph.concat(seq), None
        elif isinstance(layer, TEMPORAL):
            seq = _unfold_stig(graph, layer, ids, seq, n_in)
        else:
            if seq is not None:
                signal, seq = seq[-1], None
            signal = dense_nodes(graph, signal, ids["weights"], ids["bias"],
                                 activation=layer.activation)
    return seq[-1] if seq is not None else signal


# ---------------------------------------------------------------- reference sizes

def lstm_layer_params(inputs, outputs):
    return 4 * outputs * (inputs + outputs + 1)


def recurrent_param_count(inputs=28, hidden=28, outputs=10):
    # two parallel input layers, feedback of one layer into both, readout
    parallel = 2 * inputs * hidden + 2 * hidden
    feedback = hidden * 2 * hidden
    readout = hidden * outputs + outputs
    return parallel + feedback + readout


def lstm_param_count(inputs=28, width=10):
    # 28x10, 10x10, 10x10 LSTM layers and a 10x10 feed-forward head, whose
    # term is enumerated as 10*10 + 10 + 10
    head = width * width + width + width
    return lstm_layer_params(inputs, width) + 2 * lstm_layer_params(width, width) + head


def baseline_param_counts():
    return {
        "static": count_parameters(static_spec()),
        "stigmergic": count_parameters(stigmergic_spec()),
        "recurrent": recurrent_param_count(),
        "lstm": lstm_param_count(),
    }
