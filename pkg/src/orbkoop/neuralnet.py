"""Feed-forward SELU network with hand-written backprop and Adam.

Batches are column-major: an input batch has shape ``(n_in, batch)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def selu(z):
    z = np.asarray(z, dtype=float)
    return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _selu_with_slope(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # one exp serves both the activation and its derivative
    pos = z > 0
    e = np.exp(np.minimum(z, 0.0))
    act = np.where(pos, SELU_LAMBDA * z, (SELU_LAMBDA * SELU_ALPHA) * (e - 1.0))
    slope = np.where(pos, SELU_LAMBDA, (SELU_LAMBDA * SELU_ALPHA) * e)
    return act, slope


def selu_prime(z):
    z = np.asarray(z, dtype=float)
    return SELU_LAMBDA * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


@dataclass
class Network:
    """Dense layers; SELU on every hidden layer, identity on the output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weights {w.shape}, biases {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[1]} != previous output")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class Tape:
    """Per-layer inputs and pre-activations cached by :func:`forward`."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    slopes: list[np.ndarray] = field(default_factory=list)
    used: bool = False


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None

    def __iadd__(self, other: "Gradients") -> "Gradients":
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def scaled(self, c: float) -> "Gradients":
        return Gradients([c * w for w in self.weights], [c * b for b in self.biases])

    @classmethod
    def zeros_like(cls, net: Network) -> "Gradients":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


def init_lecun(sizes, seed: int | np.random.Generator) -> Network:
    """LeCun-normal weights (variance 1/fan_in), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(weights, biases)


def forward(net: Network, batch) -> tuple[np.ndarray, Tape]:
    x = np.asarray(batch, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] != net.n_in:
        raise ShapeError(f"batch has {x.shape[0]} rows, network expects {net.n_in}")
    inputs, pre, slopes = [], [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(x)
        z = w @ x + b[:, None]
        pre.append(z)
        if i == last:
            x = z
        else:
            x, d = _selu_with_slope(z)
            slopes.append(d)
    return (x[:, 0] if squeeze else x), Tape(inputs, pre, slopes)


def backward(net: Network, tape: Tape, output_gradient, need_input: bool = False) -> Gradients:
    """Chain rule through the cached pass; ``output_gradient`` is dL/d(output)."""
    if tape.used:
        raise RuntimeError("tape already consumed by a backward pass")
    if len(tape.pre) != len(net.weights):
        raise ShapeError("tape does not belong to this network")
    g = np.asarray(output_gradient, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != tape.pre[-1].shape:
        raise ShapeError(f"output gradient {g.shape} != output {tape.pre[-1].shape}")
    tape.used = True
    n_layers = len(net.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        if i != n_layers - 1:
            g = g * (tape.slopes[i] if tape.slopes else selu_prime(tape.pre[i]))
        gw[i] = g @ tape.inputs[i].T
        gb[i] = g.sum(axis=1)
        if i or need_input:
            g = net.weights[i].T @ g
    return Gradients(gw, gb, g if need_input else None)


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = field(default=0)

    @classmethod
    def for_network(cls, net: Network, **kwargs) -> "AdamState":
        z = lambda arrs: [np.zeros_like(a) for a in arrs]  # noqa: E731
        return cls(z(net.weights), z(net.weights), z(net.biases), z(net.biases), **kwargs)


def adam_step(net: Network, grads: Gradients, state: AdamState) -> tuple[Network, AdamState]:
    """In-place Adam update with decoupled weight decay on the weight matrices."""
    state.step += 1
    t = state.step
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    shrink = 1.0 - lr * state.weight_decay
    groups = (
        (net.weights, grads.weights, state.m_w, state.v_w, True),
        (net.biases, grads.biases, state.m_b, state.v_b, False),
    )
    for params, gs, ms, vs, decay in groups:
        for p, g, m, v in zip(params, gs, ms, vs):
            if p.shape != g.shape:
                raise ShapeError(f"gradient {g.shape} != parameter {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if decay:
                p *= shrink
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state
