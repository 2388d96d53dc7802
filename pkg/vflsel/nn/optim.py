from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple, Union

import numpy as np

from ..errors import DomainError, ShapeError
from .network import DenseNetwork, GradientSet


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class OptimizerState:
    """Update rule U(theta, g) of one network plus its running state.

    Adam moments are lists of arrays ordered like `DenseNetwork.parameters()`.
    """

    kind: OptimizerKind
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(cls, kind: Union[str, OptimizerKind], net: DenseNetwork, learning_rate: float = 0.01, **kwargs):
        if not np.isfinite(learning_rate) or learning_rate < 0:
            raise DomainError("Learning rate must be finite and non-negative; got {}.".format(learning_rate))
        state = cls(kind=OptimizerKind(kind), learning_rate=float(learning_rate), **kwargs)
        state.reset(net)
        return state

    def reset(self, net: DenseNetwork) -> None:
        self.step_count = 0
        if self.kind == OptimizerKind.ADAM:
            self.first_moments = [np.zeros_like(p) for p in net.parameters()]
            self.second_moments = [np.zeros_like(p) for p in net.parameters()]
        else:
            self.first_moments = list()
            self.second_moments = list()


def optimizer_step(state: OptimizerState, net: DenseNetwork, grads: GradientSet) -> Tuple[DenseNetwork, OptimizerState]:
    """Apply one update in place and return (net, state).

    A gradient containing NaN/inf is rejected before any parameter is touched.
    """
    params = net.parameters()
    garrs = grads.arrays()
    if not grads.matches(net):
        raise ShapeError(
            "Gradient shapes {} do not mirror network shapes {}.".format(
                [g.shape for g in garrs], [p.shape for p in params]
            )
        )
    for idx, g in enumerate(garrs):
        if not np.all(np.isfinite(g)):
            raise DomainError(
                "Rejected update: non-finite gradient in layer {} {}.".format(idx // 2 + 1, "bias" if idx % 2 else "weights")
            )

    state.step_count += 1
    lr = state.learning_rate
    if state.kind == OptimizerKind.SGD:
        for p, g in zip(params, garrs):
            p -= lr * g
        return net, state

    if len(state.first_moments) != len(params):
        raise ShapeError("Adam accumulators do not mirror the network; call reset(net) first.")
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, garrs, state.first_moments, state.second_moments):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return net, state
