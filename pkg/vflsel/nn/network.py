from copy import deepcopy
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from ..errors import ConsistencyError, ShapeError
from ..utils import check_finite


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    RELU = "relu"


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.TANH:
        return np.tanh(z)
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    # derivative w.r.t. the pre-activation, evaluated from the cached forward values
    if activation == Activation.TANH:
        return 1.0 - a * a
    if activation == Activation.RELU:
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


class DenseLayer:
    """One affine map followed by an element-wise activation.

    Attributes:
        weights: (n_outputs, n_inputs)
        bias: (n_outputs, )
        activation: activation tag
    """

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: Union[str, Activation]):
        self.weights = np.array(weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(bias, dtype=np.float64).reshape(-1)
        self.activation = Activation(activation)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                "Bias length {} does not match weight rows {}.".format(self.bias.shape[0], self.weights.shape[0])
            )

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[0]


class DenseNetwork:
    """Feed-forward network of dense layers; the last layer is always affine (identity activation).

    Party models, server models and the composed VFL model are all instances of this class. The first
    layer's weight matrix holds the input groups penalized by group lasso (one column per input).
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        if len(layers) == 0:
            raise ShapeError("A network needs at least one layer.")
        self.layers = list(layers)
        for idx in range(1, len(self.layers)):
            if self.layers[idx].n_inputs != self.layers[idx - 1].n_outputs:
                raise ShapeError(
                    "Layer {} expects {} inputs but layer {} produces {}.".format(
                        idx + 1, self.layers[idx].n_inputs, idx, self.layers[idx - 1].n_outputs
                    )
                )
        if self.layers[-1].activation != Activation.IDENTITY:
            raise ShapeError("The output layer must use the identity activation.")
        for idx, layer in enumerate(self.layers):
            check_finite(layer.weights, "weights of layer {}".format(idx + 1))
            check_finite(layer.bias, "bias of layer {}".format(idx + 1))

    @classmethod
    def initialize(
        cls,
        layer_sizes: Sequence[int],
        activation: Union[str, Activation] = Activation.TANH,
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "DenseNetwork":
        """Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)), zero biases.

        Args:
            layer_sizes: [input_dim, hidden_1, ..., output_dim]
            activation: activation of the hidden layers; the output layer is identity
        """
        if len(layer_sizes) < 2:
            raise ShapeError("layer_sizes needs at least input and output sizes.")
        if any(int(x) < 1 for x in layer_sizes):
            raise ShapeError("All layer sizes must be positive; got {}.".format(list(layer_sizes)))
        if rng is None:
            rng = np.random.default_rng(seed)
        layers = list()
        n_layers = len(layer_sizes) - 1
        for idx in range(n_layers):
            fan_in, fan_out = int(layer_sizes[idx]), int(layer_sizes[idx + 1])
            a = np.sqrt(6.0 / (fan_in + fan_out))
            weights = rng.uniform(-a, a, size=(fan_out, fan_in))
            act = Activation.IDENTITY if idx == n_layers - 1 else Activation(activation)
            layers.append(DenseLayer(weights, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_inputs

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_outputs

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def first_layer_weights(self) -> np.ndarray:
        return self.layers[0].weights

    def layer_sizes(self) -> List[int]:
        return [self.input_dim] + [x.n_outputs for x in self.layers]

    def parameters(self) -> List[np.ndarray]:
        """Views on all parameter arrays, ordered (W1, b1, W2, b2, ...)."""
        out = list()
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "DenseNetwork":
        return deepcopy(self)

    def compose(self, upper: "DenseNetwork") -> "DenseNetwork":
        """Network computing upper(self(x)); layers are copied."""
        if upper.input_dim != self.output_dim:
            raise ShapeError(
                "Cannot compose: lower network outputs {} but upper expects {}.".format(
                    self.output_dim, upper.input_dim
                )
            )
        return DenseNetwork([deepcopy(x) for x in self.layers + upper.layers])

    def __repr__(self) -> str:
        acts = [x.activation.value for x in self.layers]
        return "DenseNetwork(sizes={}, activations={})".format(self.layer_sizes(), acts)


@dataclass
class ForwardTrace:
    """Per-layer caches of one forward pass; consumed by `backward`."""

    input: np.ndarray
    pre_activations: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)

    @property
    def outputs(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class GradientSet:
    """Gradients mirroring a DenseNetwork's parameters, plus the gradient w.r.t. the input batch."""

    weight_grads: List[np.ndarray]
    bias_grads: List[np.ndarray]
    input_grad: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        out = list()
        for w, b in zip(self.weight_grads, self.bias_grads):
            out += [w, b]
        return out

    def matches(self, net: DenseNetwork) -> bool:
        if len(self.weight_grads) != net.n_layers or len(self.bias_grads) != net.n_layers:
            return False
        return all(g.shape == p.shape for g, p in zip(self.arrays(), net.parameters()))

    def scale(self, factor: float) -> "GradientSet":
        return GradientSet(
            weight_grads=[w * factor for w in self.weight_grads],
            bias_grads=[b * factor for b in self.bias_grads],
            input_grad=self.input_grad * factor,
        )


def _as_batch(net: DenseNetwork, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(
            "Layer 1 expects a batch with {} columns; got shape {}.".format(net.input_dim, tuple(np.shape(batch)))
        )
    check_finite(x, "input batch")
    return x


def forward(net: DenseNetwork, batch: np.ndarray):
    """Evaluate the network on a batch (rows are samples).

    Returns:
        outputs: (n_rows, output_dim)
        trace: ForwardTrace holding the caches needed by `backward`
    """
    x = _as_batch(net, batch)
    trace = ForwardTrace(input=x)
    a = x
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = _activate(z, layer.activation)
        trace.pre_activations.append(z)
        trace.activations.append(a)
    return a, trace


def backward(net: DenseNetwork, trace: ForwardTrace, output_grad: np.ndarray) -> GradientSet:
    """Exact gradients of sum(outputs * output_grad) over the batch.

    The input gradient lets a party chain the server's embedding gradient into its own parameters.
    """
    if len(trace.pre_activations) != net.n_layers or len(trace.activations) != net.n_layers:
        raise ConsistencyError(
            "Trace holds {} layers but the network has {}.".format(len(trace.activations), net.n_layers)
        )
    if trace.input.ndim != 2 or trace.input.shape[1] != net.input_dim:
        raise ConsistencyError("Trace input has shape {}; network input_dim is {}.".format(
            trace.input.shape, net.input_dim))
    n_rows = trace.input.shape[0]
    for idx, layer in enumerate(net.layers):
        if trace.activations[idx].shape != (n_rows, layer.n_outputs):
            raise ConsistencyError(
                "Trace activations of layer {} have shape {}; expected {}.".format(
                    idx + 1, trace.activations[idx].shape, (n_rows, layer.n_outputs)
                )
            )

    delta = np.asarray(output_grad, dtype=np.float64)
    if delta.shape != trace.outputs.shape:
        raise ShapeError(
            "Output gradient has shape {}; layer {} produced {}.".format(delta.shape, net.n_layers, trace.outputs.shape)
        )
    check_finite(delta, "output gradient")

    weight_grads = [None] * net.n_layers
    bias_grads = [None] * net.n_layers
    for idx in reversed(range(net.n_layers)):
        layer = net.layers[idx]
        delta = delta * _activate_grad(trace.pre_activations[idx], trace.activations[idx], layer.activation)
        a_prev = trace.input if idx == 0 else trace.activations[idx - 1]
        weight_grads[idx] = delta.T @ a_prev
        bias_grads[idx] = delta.sum(axis=0)
        delta = delta @ layer.weights

    return GradientSet(weight_grads=weight_grads, bias_grads=bias_grads, input_grad=delta)


def finite_diff_grad(
    net: DenseNetwork,
    batch: np.ndarray,
    scalar_loss: Callable[[np.ndarray], float],
    h: float = 1e-6,
) -> GradientSet:
    """Central-difference estimate of d scalar_loss(forward(net, batch)) / d parameter.

    Every parameter and every input entry is perturbed by +/- h in turn. Meant as a verification oracle
    on small networks; the cost is two forward passes per scalar.
    """
    if not h > 0:
        raise ValueError("Finite-difference step must be positive; got {}.".format(h))
    probe = net.copy()
    x = _as_batch(net, batch).copy()

    def _loss() -> float:
        out, _ = forward(probe, x)
        return float(scalar_loss(out))

    def _central(arr: np.ndarray) -> np.ndarray:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus = _loss()
            arr[idx] = orig - h
            f_minus = _loss()
            arr[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        return g

    weight_grads = [_central(layer.weights) for layer in probe.layers]
    bias_grads = [_central(layer.bias) for layer in probe.layers]
    input_grad = _central(x)
    return GradientSet(weight_grads=weight_grads, bias_grads=bias_grads, input_grad=input_grad)
