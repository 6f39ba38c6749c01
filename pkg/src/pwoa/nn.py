"""Dense feed-forward network with a hand-written reverse-mode pass.

Weights are stored ``(in, out)`` so a layer computes ``x @ W + b``. Every
array is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2:
            raise ShapeError("layer weight must be 2-D")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ShapeError(f"bias length {self.bias.shape[0]} != weight width {self.weight.shape[1]}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkModel:
    layers: list[Layer]

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].weight.shape[1] != self.layers[i].weight.shape[0]:
                raise ShapeError(f"layer {i - 1} output width does not match layer {i} input width")
        if self.layers and self.layers[-1].activation != "identity":
            raise ShapeError("final layer must be identity (logits)")

    @classmethod
    def init(cls, sizes: Sequence[int], seed: int = 0) -> "NetworkModel":
        """He-uniform weights, zero biases; relu on hidden layers."""
        rng = np.random.default_rng(seed)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / fan_in)
            act = "identity" if i == len(sizes) - 2 else "relu"
            layers.append(Layer(rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[1] for layer in self.layers]

    @property
    def weights(self) -> list[np.ndarray]:
        return [layer.weight for layer in self.layers]

    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def copy(self) -> "NetworkModel":
        return NetworkModel([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])


@dataclass
class ForwardTrace:
    """Activations of one forward pass.

    ``outputs[l]`` is the post-activation output of layer ``l``; the last
    entry is the logits. ``hidden`` are the intermediate representations
    Z_1..Z_L that feed the logits.
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    outputs: list[np.ndarray]

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]

    @property
    def hidden(self) -> list[np.ndarray]:
        return self.outputs[:-1]

    @property
    def last_hidden(self) -> np.ndarray:
        # a single-layer model has no hidden layer; its logits stand in
        return self.outputs[-2] if len(self.outputs) > 1 else self.outputs[-1]


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, model: NetworkModel) -> "GradientSet":
        return cls([np.zeros_like(l.weight) for l in model.layers], [np.zeros_like(l.bias) for l in model.layers])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        inputs = None
        if self.inputs is not None or other.inputs is not None:
            inputs = (0.0 if self.inputs is None else self.inputs) + (0.0 if other.inputs is None else other.inputs)
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)], inputs)

    def scale(self, c: float) -> "GradientSet":
        return GradientSet([c * g for g in self.weights], [c * g for g in self.biases],
                           None if self.inputs is None else c * self.inputs)

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts) if parts else np.empty(0)


def forward(model: NetworkModel, batch: np.ndarray) -> ForwardTrace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"batch of shape {x.shape} does not match input_dim {model.input_dim}")
    pre, outputs = [], []
    h = x
    for layer in model.layers:
        a = h @ layer.weight + layer.bias
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
        pre.append(a)
        outputs.append(h)
    return ForwardTrace(x, pre, outputs)


def predict(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    return forward(model, batch).logits.argmax(axis=1)


def softmax_tempered(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ParameterError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_tempered(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ParameterError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def backward(model: NetworkModel, trace: ForwardTrace, loss_grad_at_logits: np.ndarray,
             want_input_grad: bool = False,
             hidden_grads: Optional[Sequence[Optional[np.ndarray]]] = None,
             want_param_grads: bool = True) -> GradientSet:
    """Reverse pass. ``hidden_grads[l]`` injects dLoss/dZ_l for hidden layer ``l``.

    The relu subgradient at zero is zero. With ``want_param_grads=False`` the
    weight and bias gradients are skipped (returned as ``None``), which is all
    an attack needs.
    """
    g = np.asarray(loss_grad_at_logits, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match logits {trace.logits.shape}")
    n_layers = len(model.layers)
    if hidden_grads is not None and len(hidden_grads) != n_layers - 1:
        raise ShapeError("hidden_grads must have one entry per hidden layer")
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        layer = model.layers[i]
        if i < n_layers - 1 and hidden_grads is not None and hidden_grads[i] is not None:
            g = g + hidden_grads[i]
        if layer.activation == "relu":
            g = g * (trace.pre[i] > 0.0)
        h_in = trace.inputs if i == 0 else trace.outputs[i - 1]
        if want_param_grads:
            gw[i] = h_in.T @ g
            gb[i] = g.sum(axis=0)
        if i > 0 or want_input_grad:
            g = g @ layer.weight.T
    return GradientSet(gw, gb, g if want_input_grad else None)


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay (PyTorch semantics).

    Momentum buffers live here, not on the model. When ``masks`` is given the
    update direction is multiplied element-wise by the mask and masked
    weights are re-zeroed after the step.
    """

    def __init__(self, model: NetworkModel, momentum: float = 0.9, weight_decay: float = 1e-4):
        if not 0.0 <= momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf_w = [np.zeros_like(l.weight) for l in model.layers]
        self.buf_b = [np.zeros_like(l.bias) for l in model.layers]

    def step(self, model: NetworkModel, grads: GradientSet, lr: float,
             masks: Optional[Sequence[np.ndarray]] = None) -> NetworkModel:
        if not lr >= 0:
            raise ParameterError("learning rate must be non-negative")
        for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise NumericError(f"non-finite gradient in layer {i}", layer=i)
        for i, layer in enumerate(model.layers):
            dw = grads.weights[i] + self.weight_decay * layer.weight
            db = grads.biases[i] + self.weight_decay * layer.bias
            if self.momentum:
                self.buf_w[i] = self.momentum * self.buf_w[i] + dw
                self.buf_b[i] = self.momentum * self.buf_b[i] + db
                dw, db = self.buf_w[i], self.buf_b[i]
            if masks is not None:
                dw = dw * masks[i]
            layer.weight -= lr * dw
            layer.bias -= lr * db
            if masks is not None:
                layer.weight[masks[i] == 0] = 0.0
        return model


def sgd_step(model: NetworkModel, grads: GradientSet, beta: float, momentum: float = 0.9,
             weight_decay: float = 1e-4, optimizer: Optional[SGD] = None) -> NetworkModel:
    """One SGD update; pass ``optimizer`` to carry momentum across calls."""
    if not beta > 0:
        raise ParameterError("learning rate must be positive")
    opt = optimizer or SGD(model, momentum, weight_decay)
    return opt.step(model, grads, beta)


class Adam:
    """Adam with bias correction and coupled L2 weight decay (PyTorch semantics).

    Used for teacher training only; the pruning stages run :class:`SGD`.
    """

    def __init__(self, model: NetworkModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ParameterError("Adam betas must lie in [0, 1)")
        if eps <= 0 or weight_decay < 0:
            raise ParameterError("Adam eps must be positive and weight_decay non-negative")
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for l in model.layers for p in (l.weight, l.bias)]
        self.v = [np.zeros_like(p) for p in self.m]

    def step(self, model: NetworkModel, grads: GradientSet, lr: float) -> NetworkModel:
        if not lr >= 0:
            raise ParameterError("learning rate must be non-negative")
        params = [p for l in model.layers for p in (l.weight, l.bias)]
        flat = [g for pair in zip(grads.weights, grads.biases) for g in pair]
        for i, g in enumerate(flat):
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in layer {i // 2}", layer=i // 2)
        self.t += 1
        c1, c2 = 1.0 - self.beta1 ** self.t, 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, flat)):
            if self.weight_decay:
                g = g + self.weight_decay * p
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
        return model
