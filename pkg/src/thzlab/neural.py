"""Fully connected network with hand-written reverse mode.

Layers compute ``act(W @ x + b)``.  The output layer uses a scaled sigmoid
``theta * sigmoid(z)`` with a per-neuron scale, which keeps every output
inside ``[0, theta]``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidConfig


class Activation(enum.Enum):
    RELU = "relu"
    SCALED_SIGMOID = "scaled_sigmoid"
    IDENTITY = "identity"


class InitScheme(enum.Enum):
    PAPER_GAUSSIAN = "paper_gaussian"
    SCALED = "scaled"


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: Activation = Activation.RELU
    theta: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.width < 1:
            raise InvalidConfig("layer width must be >= 1")
        if self.activation is Activation.SCALED_SIGMOID:
            theta = np.asarray(self.theta, dtype=float)
            if theta.shape != (self.width,) or np.any(theta <= 0):
                raise InvalidConfig("scaled sigmoid needs one positive scale per neuron")
            object.__setattr__(self, "theta", tuple(float(t) for t in theta))


def sigmoid(z):
    """Logistic function; the two branches avoid overflow in exp."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(spec, z):
    if spec.activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if spec.activation is Activation.SCALED_SIGMOID:
        return np.asarray(spec.theta) * sigmoid(z)
    return z


def _act_grad(spec, z):
    if spec.activation is Activation.RELU:
        return (z > 0).astype(float)
    if spec.activation is Activation.SCALED_SIGMOID:
        s = sigmoid(z)
        return np.asarray(spec.theta) * s * (1.0 - s)
    return np.ones_like(z)


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (width, fan_in)
    bias: np.ndarray  # (width,)
    spec: LayerSpec


@dataclass(frozen=True)
class Network:
    layers: tuple
    input_dim: int
    input_scale: float = 1.0
    seed: int = None
    scheme: InitScheme = InitScheme.PAPER_GAUSSIAN

    def __post_init__(self):
        layers = tuple(self.layers)
        fan_in = self.input_dim
        for i, layer in enumerate(layers):
            if layer.weights.shape != (layer.spec.width, fan_in) or layer.bias.shape != (layer.spec.width,):
                raise DimensionMismatch(f"layer {i} has shape {layer.weights.shape}, expected "
                                        f"({layer.spec.width}, {fan_in})")
            fan_in = layer.spec.width
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "scheme", InitScheme(self.scheme))

    @property
    def output_dim(self):
        return self.layers[-1].spec.width

    @property
    def n_params(self):
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def params(self):
        return [a for l in self.layers for a in (l.weights, l.bias)]

    def with_params(self, arrays):
        arrays = list(arrays)
        layers = tuple(Layer(np.array(arrays[2 * i], dtype=float), np.array(arrays[2 * i + 1], dtype=float), l.spec)
                       for i, l in enumerate(self.layers))
        return replace(self, layers=layers)

    def step(self, grads, lr):
        """Plain gradient-descent update ``theta - lr * grad``."""
        return self.with_params(p - lr * g for p, g in zip(self.params(), grads))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.params()])

    def unflat(self, vec):
        out, i = [], 0
        for a in self.params():
            out.append(np.asarray(vec[i:i + a.size]).reshape(a.shape))
            i += a.size
        return self.with_params(out)


def init(arch, input_dim, seed, scheme=InitScheme.PAPER_GAUSSIAN, input_scale=1.0):
    """Random weights, zero biases.

    ``PAPER_GAUSSIAN`` draws N(0, 1) weights; ``SCALED`` draws N(0, 2 / fan_in).
    """
    scheme = InitScheme(scheme)
    rng = np.random.default_rng(seed)
    layers, fan_in = [], input_dim
    for spec in arch:
        std = 1.0 if scheme is InitScheme.PAPER_GAUSSIAN else np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((spec.width, fan_in)) * std
        layers.append(Layer(w, np.zeros(spec.width), spec))
        fan_in = spec.width
    return Network(tuple(layers), input_dim, input_scale, seed, scheme)


def paper_architecture(n_s, p_max, b_max, hidden=(100, 100, 50, 25)):
    """Four ReLU layers and a 2 n_s scaled-sigmoid output split into (p, b)."""
    theta = (p_max,) * n_s + (b_max,) * n_s
    return [LayerSpec(w, Activation.RELU) for w in hidden] + [
        LayerSpec(2 * n_s, Activation.SCALED_SIGMOID, theta)]


def forward(net, x):
    """Evaluate the network on ``x`` of shape (input_dim,) or (batch, input_dim).

    Inputs are divided by ``net.input_scale`` first.  Returns ``(y, tape)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (net.input_dim,):
        raise DimensionMismatch(f"input must have trailing length {net.input_dim}, got {x.shape}")
    a = x / net.input_scale
    tape = []
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        tape.append((a, z))
        a = _act(layer.spec, z)
    return a, tape


def backward(net, tape, dL_dy):
    """Vector-Jacobian product: gradients of ``sum(dL_dy * y)`` for every (W, b).

    Batched tapes sum contributions over the batch axis.
    """
    if len(tape) != len(net.layers):
        raise DimensionMismatch("tape does not match network depth")
    g = np.asarray(dL_dy, dtype=float)
    if g.shape != tape[-1][1].shape:
        raise DimensionMismatch(f"dL_dy has shape {g.shape}, expected {tape[-1][1].shape}")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in, z = tape[i]
        dz = g * _act_grad(layer.spec, z)
        if dz.ndim == 1:
            grads[2 * i] = np.outer(dz, a_in)
            grads[2 * i + 1] = dz.copy()
        else:
            grads[2 * i] = dz.T @ a_in
            grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ layer.weights
    return grads


# --- checkpoints -------------------------------------------------------------


def to_dict(net):
    return {
        "input_dim": net.input_dim,
        "input_scale": net.input_scale,
        "seed": net.seed,
        "scheme": net.scheme.value,
        "layers": [
            {
                "width": l.spec.width,
                "fan_in": l.weights.shape[1],
                "activation": l.spec.activation.value,
                "theta": list(l.spec.theta) if l.spec.theta is not None else None,
                "weights": l.weights.ravel().tolist(),  # row-major
                "bias": l.bias.tolist(),
            }
            for l in net.layers
        ],
    }


def from_dict(doc):
    layers = []
    for ld in doc["layers"]:
        spec = LayerSpec(ld["width"], Activation(ld["activation"]),
                         tuple(ld["theta"]) if ld.get("theta") is not None else None)
        w = np.asarray(ld["weights"], dtype=float).reshape(ld["width"], ld["fan_in"])
        layers.append(Layer(w, np.asarray(ld["bias"], dtype=float), spec))
    return Network(tuple(layers), doc["input_dim"], doc.get("input_scale", 1.0), doc.get("seed"),
                   InitScheme(doc.get("scheme", "paper_gaussian")))


def save(net, path, extra=None):
    doc = to_dict(net)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load(path):
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
