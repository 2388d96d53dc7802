from .network import (
    Activation,
    DenseLayer,
    DenseNetwork,
    ForwardTrace,
    GradientSet,
    backward,
    finite_diff_grad,
    forward,
)
from .losses import LossKind, loss_and_grad
from .optim import OptimizerKind, OptimizerState, optimizer_step
