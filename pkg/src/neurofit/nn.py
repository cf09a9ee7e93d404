"""Fully connected tanh network and the Adam optimizer."""

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Dual, Tape
from .errors import NumericFailure


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 1
    hidden_layers: int = 3
    hidden_width: int = 40
    output_dim: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def n_params(self):
        sizes = self.layer_sizes
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


@dataclass
class NetworkParams:
    spec: NetworkSpec
    weights: list
    biases: list
    seed: int = None

    def named(self):
        """Flat ``{name: array}`` view sharing memory with the layers."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.named().values()])

    def copy(self):
        return NetworkParams(self.spec, [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.seed)

    def attach(self, tape):
        """Register every weight and bias as a trainable leaf on ``tape``."""
        return [(tape.variable(w), tape.variable(b)) for w, b in zip(self.weights, self.biases)]

    def to_json(self):
        header = {"spec": self.spec.__dict__, "seed": self.seed}
        return json.dumps({"header": header, "values": self.flat().tolist()})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        spec = NetworkSpec(**doc["header"]["spec"])
        values = np.asarray(doc["values"], dtype=float)
        if values.size != spec.n_params:
            raise ValueError(f"expected {spec.n_params} values, got {values.size}")
        weights, biases, pos = [], [], 0
        sizes = spec.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(values[pos:pos + fan_out].copy())
            pos += fan_out
        return cls(spec, weights, biases, doc["header"]["seed"])


def init_glorot(spec, seed):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(spec, weights, biases, seed)


def forward(params, t):
    """Evaluate the network at time input ``t``.

    ``params`` is either a :class:`NetworkParams` (weights enter as constants)
    or the list returned by :meth:`NetworkParams.attach`.  ``t`` is a
    :class:`Dual` holding a scalar or a 1-d batch of times; the result has
    shape ``(output_dim,)`` or ``(batch, output_dim)`` and its tangent holds
    the time derivative of each output.
    """
    scalar = t.value.ndim == 0
    if t.value.ndim > 1:
        raise ValueError(f"time input must be scalar or 1-d, got shape {t.value.shape}")
    tape = t.primal.tape
    if isinstance(params, NetworkParams):
        layers = [(tape.constant(w), tape.constant(b)) for w, b in zip(params.weights, params.biases)]
    else:
        layers = params
    if layers[0][0].shape[0] != 1:
        raise ValueError("network input dimension must be 1 (time)")
    h = t.reshape(1, 1) if scalar else t.reshape(-1, 1)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        h = z if i == last else z.tanh()
    return h.reshape(-1) if scalar else h


def predict(params, times):
    """Plain numpy evaluation: values and time derivatives, shape (N, out)."""
    times = np.asarray(times, dtype=float).reshape(-1, 1)
    h, dh = times, np.ones_like(times)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z, dz = h @ w + b, dh @ w
        if i == last:
            h, dh = z, dz
        else:
            h = np.tanh(z)
            dh = (1.0 - h * h) * dz
    return h, dh


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(trainables, grads, state):
    """One bias-corrected Adam update, applied in place to ``trainables``.

    All gradients are validated before any parameter moves, so a failure
    leaves the trainables at their last good values.
    """
    for name in trainables:
        if name not in grads:
            raise KeyError(f"no gradient for trainable {name!r}")
        if not np.isfinite(grads[name]).all():
            raise NumericFailure(f"non-finite gradient for {name}", where=name)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, x in trainables.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(x)
            state.v[name] = np.zeros_like(x)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        x -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return trainables, state


def tape_forward(params, times, with_tangent=True):
    """Convenience: fresh tape, lifted times, attached params, forward pass."""
    tape = Tape()
    t = tape.lift_input(np.asarray(times, dtype=float), is_time=with_tangent)
    leaves = params.attach(tape)
    return tape, leaves, forward(leaves, t)


__all__ = [
    "NetworkSpec",
    "NetworkParams",
    "AdamState",
    "init_glorot",
    "forward",
    "predict",
    "adam_step",
    "tape_forward",
    "Dual",
]
